use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rhizoflow"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn mesh_command_writes_vtu() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mesh.vtu");
    let o = run(bin().args(["mesh", "--config"]).arg(config("tp2.toml")).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("cells"));
    assert!(std::fs::read_to_string(&out).unwrap().contains("<VTKFile"));
}

#[test]
fn simulate_steady_root() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().args(["simulate", "--config"]).arg(config("steady-root.toml")).arg("--out").arg(dir.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("log.csv").exists());
    assert!(dir.path().join("config.toml").exists());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("1 tips"), "{stdout}");
}

#[test]
fn preset_output_loads_back() {
    let o = run(bin().args(["preset", "tp3", "--days", "5"]));
    assert!(o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tp3.toml");
    std::fs::write(&path, &o.stdout).unwrap();
    let out = dir.path().join("m.vtu");
    let o = run(bin().args(["mesh", "--config"]).arg(&path).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_config_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\nbogus = 1\n").unwrap();
    let o = run(bin().args(["simulate", "--config"]).arg(&path).arg("--out").arg(dir.path().join("o")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn too_many_levels_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().args(["converge", "--case", "tp1", "--levels", "5", "--out"]).arg(dir.path()));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn converge_two_levels() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(bin().args(["converge", "--case", "tp1", "--levels", "2", "--out"]).arg(dir.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("eoc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("levels.json").exists());
}
