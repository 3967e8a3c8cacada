//! Lowest-order virtual elements on polyhedra.
//!
//! For k = 1 the local space is fixed by vertex values. Face integrals come from
//! the face projector, the cell projector from boundary integrals only, and the
//! L2 projector coincides with the energy one (enhanced space).

use nalgebra::{DMatrix, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::linalg::Csr;
use crate::mesh::PolyMesh;
use crate::quad::{integrate_tet, tet_second_moment};
use crate::soil::SoilModel;

#[derive(Clone, Debug)]
pub struct CellVem {
    /// Global vertex ids, sorted.
    pub verts: Vec<usize>,
    /// Π∇φ_i(x) = cst[i] + grad[i]·(x - centroid).
    pub cst: Vec<f64>,
    pub grad: Vec<Vec3>,
    /// |E| GᵀG + h_E (I - DΠ)ᵀ(I - DΠ)
    pub stiff: DMatrix<f64>,
    /// ΠᵀHΠ + |E| (I - DΠ)ᵀ(I - DΠ)
    pub mass: DMatrix<f64>,
    pub volume: f64,
    pub centroid: Vec3,
    pub h: f64,
}

impl CellVem {
    pub fn build(mesh: &PolyMesh, c: usize) -> Result<CellVem> {
        let cell = &mesh.cells[c];
        let verts = cell.verts.clone();
        let n = verts.len();
        let lid = |v: usize| verts.binary_search(&v).expect("cell vertex");
        let (vol, xe, h) = (cell.volume, cell.centroid, cell.diameter);
        let mut face_int = vec![0.0; n];
        let mut grad = vec![Vec3::zeros(); n];
        let mut surf = 0.0;
        let mut tmom = Vec3::zeros();
        for k in 0..cell.faces.len() {
            let f = &mesh.faces[cell.faces[k]];
            let nf = mesh.face_normal(c, k);
            let lp = mesh.face_loop(c, k);
            let m = lp.len();
            let pts: Vec<Vec3> = lp.iter().map(|&v| mesh.vertices[v]).collect();
            let (af, xf) = (f.area, f.centroid);
            if !(af > 0.0) {
                return Err(Error::DegenerateCell(c));
            }
            let len: Vec<f64> = (0..m).map(|j| (pts[(j + 1) % m] - pts[j]).norm()).collect();
            let nu: Vec<Vec3> = (0..m).map(|j| (pts[(j + 1) % m] - pts[j]).cross(&nf) / len[j]).collect();
            let per: f64 = len.iter().sum();
            let s: Vec3 = (0..m).map(|j| len[j] * (0.5 * (pts[j] + pts[(j + 1) % m]) - xf)).sum();
            for j in 0..m {
                let p = (j + m - 1) % m;
                let b = (0.5 * len[p] * nu[p] + 0.5 * len[j] * nu[j]) / af;
                let a = (0.5 * (len[p] + len[j]) - b.dot(&s)) / per;
                let i = lid(lp[j]);
                face_int[i] += af * a;
                grad[i] += nf * (af * a);
            }
            surf += af;
            tmom += af * (xf - xe);
        }
        for g in grad.iter_mut() {
            *g /= vol;
        }
        let cst: Vec<f64> = (0..n).map(|i| (face_int[i] - grad[i].dot(&tmom)) / surf).collect();
        // I - DΠ
        let mut r = DMatrix::<f64>::identity(n, n);
        for k in 0..n {
            let dx = mesh.vertices[verts[k]] - xe;
            for j in 0..n {
                r[(k, j)] -= cst[j] + grad[j].dot(&dx);
            }
        }
        let rtr = r.transpose() * &r;
        let mut stiff = rtr.clone() * h;
        for i in 0..n {
            for j in 0..n {
                stiff[(i, j)] += vol * grad[i].dot(&grad[j]);
            }
        }
        // Scaled monomials {1, (x - x_E)/h}.
        let mut hm = Matrix4::<f64>::zeros();
        hm[(0, 0)] = vol;
        for t in mesh.cell_tets(c) {
            for a in 0..3 {
                for b in 0..3 {
                    hm[(a + 1, b + 1)] += tet_second_moment(&t, &xe, a, b) / (h * h);
                }
            }
        }
        let p: Vec<Vector4<f64>> =
            (0..n).map(|j| Vector4::new(cst[j], h * grad[j].x, h * grad[j].y, h * grad[j].z)).collect();
        let mut mass = rtr * vol;
        for i in 0..n {
            for j in 0..n {
                mass[(i, j)] += p[i].dot(&(hm * p[j]));
            }
        }
        Ok(CellVem { verts, cst, grad, stiff, mass, volume: vol, centroid: xe, h })
    }

    pub fn gather(&self, z: &[f64]) -> Vec<f64> {
        self.verts.iter().map(|&v| z[v]).collect()
    }

    /// Value of the projected field at the centroid (its cell mean).
    pub fn mean(&self, z: &[f64]) -> f64 {
        self.verts.iter().zip(&self.cst).map(|(&v, c)| c * z[v]).sum()
    }

    pub fn proj_grad(&self, z: &[f64]) -> Vec3 {
        self.verts.iter().zip(&self.grad).map(|(&v, g)| g * z[v]).sum()
    }

    pub fn proj_value(&self, z: &[f64], x: &Vec3) -> f64 {
        self.mean(z) + self.proj_grad(z).dot(&(x - self.centroid))
    }

    /// Π∇φ_i(x) for every local basis function.
    pub fn basis_values(&self, x: &Vec3) -> Vec<f64> {
        let dx = x - self.centroid;
        self.cst.iter().zip(&self.grad).map(|(c, g)| c + g.dot(&dx)).collect()
    }

    pub fn local_stiffness(&self, k: f64) -> Result<DMatrix<f64>> {
        if !(k > 0.0) {
            return Err(Error::Param(format!("conductivity must be positive, got {k}")));
        }
        Ok(&self.stiff * k)
    }

    pub fn local_mass(&self, c: f64) -> Result<DMatrix<f64>> {
        if !(c >= 0.0) {
            return Err(Error::Param(format!("capacity must be non-negative, got {c}")));
        }
        Ok(&self.mass * c)
    }
}

/// Assembled soil operators for one coefficient state.
#[derive(Clone, Debug)]
pub struct SoilOperators {
    pub a: Csr,
    pub c: Csr,
    /// Gravity load.
    pub f: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub psi: f64,
    pub theta: f64,
    pub grad_theta: Vec3,
}

#[derive(Clone, Debug)]
pub struct Vem {
    pub cells: Vec<CellVem>,
    pub ndof: usize,
    pattern: Csr,
    slots: Vec<Vec<usize>>,
}

impl Vem {
    pub fn new(mesh: &PolyMesh) -> Result<Vem> {
        let cells = (0..mesh.num_cells()).map(|c| CellVem::build(mesh, c)).collect::<Result<Vec<_>>>()?;
        let ndof = mesh.num_vertices();
        let mut t = Vec::new();
        for e in &cells {
            for &i in &e.verts {
                for &j in &e.verts {
                    t.push((i, j, 0.0));
                }
            }
        }
        let pattern = Csr::from_triplets(ndof, ndof, &t);
        let slots = cells
            .iter()
            .map(|e| {
                let mut s = Vec::with_capacity(e.verts.len() * e.verts.len());
                for &i in &e.verts {
                    for &j in &e.verts {
                        s.push(pattern.slot(i, j).expect("pattern"));
                    }
                }
                s
            })
            .collect();
        Ok(Vem { cells, ndof, pattern, slots })
    }

    pub fn cell_means(&self, z: &[f64]) -> Vec<f64> {
        self.cells.iter().map(|e| e.mean(z)).collect()
    }

    /// A(Z), C(Z) and the gravity load with coefficients frozen at the cell means of Z.
    pub fn assemble(&self, model: &SoilModel, z: &[f64], gravity: bool) -> Result<SoilOperators> {
        let mut kc = Vec::with_capacity(self.cells.len());
        let mut cc = Vec::with_capacity(self.cells.len());
        for (i, m) in self.cell_means(z).into_iter().enumerate() {
            let (k, c) = (model.conductivity(m), model.capacity(m));
            if !k.is_finite() || !c.is_finite() {
                return Err(Error::Solver(format!("non-finite soil coefficient in cell {i} at psi = {m}")));
            }
            kc.push(k);
            cc.push(c);
        }
        self.assemble_with(&kc, &cc, gravity)
    }

    pub fn assemble_with(&self, kc: &[f64], cc: &[f64], gravity: bool) -> Result<SoilOperators> {
        let mut a = self.pattern.clone();
        let mut c = self.pattern.clone();
        let mut f = vec![0.0; self.ndof];
        for (e, cell) in self.cells.iter().enumerate() {
            let ka = cell.local_stiffness(kc[e])?;
            let ma = cell.local_mass(cc[e])?;
            let n = cell.verts.len();
            for i in 0..n {
                for j in 0..n {
                    let s = self.slots[e][i * n + j];
                    a.data[s] += ka[(i, j)];
                    c.data[s] += ma[(i, j)];
                }
                if gravity {
                    f[cell.verts[i]] -= kc[e] * cell.volume * cell.grad[i].z;
                }
            }
        }
        Ok(SoilOperators { a, c, f })
    }

    /// (S, Π0 φ_i) by quadrature on the cell tetrahedra.
    pub fn load<F: Fn(&Vec3) -> f64>(&self, mesh: &PolyMesh, rule: &[([f64; 3], f64)], src: F) -> Vec<f64> {
        let mut out = vec![0.0; self.ndof];
        for (c, cell) in self.cells.iter().enumerate() {
            let n = cell.verts.len();
            let mut loc = vec![0.0; n];
            for t in mesh.cell_tets(c) {
                for (i, li) in loc.iter_mut().enumerate() {
                    *li += integrate_tet(&t, rule, |x| src(x) * (cell.cst[i] + cell.grad[i].dot(&(x - cell.centroid))));
                }
            }
            for i in 0..n {
                out[cell.verts[i]] += loc[i];
            }
        }
        out
    }

    /// Weights w_i with Σ w_i z_i the |E|-weighted projected value at x.
    pub fn trace_weights(&self, mesh: &PolyMesh, x: &Vec3) -> Result<Vec<(usize, f64)>> {
        let cells = mesh.locate_point(x);
        if cells.is_empty() {
            return Err(Error::Outside(x.x, x.y, x.z));
        }
        let wsum: f64 = cells.iter().map(|&c| self.cells[c].volume).sum();
        let mut out: Vec<(usize, f64)> = Vec::new();
        for &c in &cells {
            let e = &self.cells[c];
            let w = e.volume / wsum;
            for (v, b) in e.verts.iter().zip(e.basis_values(x)) {
                out.push((*v, w * b));
            }
        }
        out.sort_unstable_by_key(|p| p.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(out.len());
        for (v, w) in out {
            match merged.last_mut() {
                Some(l) if l.0 == v => l.1 += w,
                _ => merged.push((v, w)),
            }
        }
        Ok(merged)
    }

    /// Weighted pressure head, water content and its gradient at x.
    pub fn eval_field(&self, mesh: &PolyMesh, psi: &[f64], x: &Vec3, model: &SoilModel) -> Result<FieldSample> {
        let cells = mesh.locate_point(x);
        if cells.is_empty() {
            return Err(Error::Outside(x.x, x.y, x.z));
        }
        let wsum: f64 = cells.iter().map(|&c| self.cells[c].volume).sum();
        let mut s = FieldSample { psi: 0.0, theta: 0.0, grad_theta: Vec3::zeros() };
        for &c in &cells {
            let e = &self.cells[c];
            let w = e.volume / wsum;
            let p = e.proj_value(psi, x);
            s.psi += w * p;
            s.theta += w * model.theta(p);
            s.grad_theta += w * model.capacity(p) * e.proj_grad(psi);
        }
        Ok(s)
    }

    /// Per-cell Darcy velocity -K(Π0ψ)(Π0∇ψ + e_z).
    pub fn cell_velocity(&self, psi: &[f64], model: &SoilModel, gravity: bool) -> Vec<Vec3> {
        self.cells
            .iter()
            .map(|e| {
                let k = model.conductivity(e.mean(psi));
                let mut g = e.proj_grad(psi);
                if gravity {
                    g.z += 1.0;
                }
                -k * g
            })
            .collect()
    }

    /// Squared errors and norms (‖ψ - Π0ψ_h‖², ‖ψ‖², ‖∇ψ - Π0∇ψ_h‖², ‖∇ψ‖²).
    pub fn errors<F, G>(&self, mesh: &PolyMesh, psi: &[f64], rule: &[([f64; 3], f64)], exact: F, grad: G) -> [f64; 4]
    where
        F: Fn(&Vec3) -> f64,
        G: Fn(&Vec3) -> Vec3,
    {
        let mut out = [0.0; 4];
        for (c, e) in self.cells.iter().enumerate() {
            let g = e.proj_grad(psi);
            let m = e.mean(psi);
            for t in mesh.cell_tets(c) {
                out[0] += integrate_tet(&t, rule, |x| (exact(x) - m - g.dot(&(x - e.centroid))).powi(2));
                out[1] += integrate_tet(&t, rule, |x| exact(x).powi(2));
                out[2] += integrate_tet(&t, rule, |x| (grad(x) - g).norm_squared());
                out[3] += integrate_tet(&t, rule, |x| grad(x).norm_squared());
            }
        }
        out
    }
}

/// Splits soil DOFs into free and Dirichlet sets.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub to_free: Vec<Option<usize>>,
    pub free: Vec<usize>,
    pub dirichlet: Vec<usize>,
}

impl DofMap {
    pub fn new(ndof: usize, dirichlet: &[usize]) -> DofMap {
        let mut is_d = vec![false; ndof];
        for &d in dirichlet {
            is_d[d] = true;
        }
        let mut to_free = vec![None; ndof];
        let mut free = Vec::new();
        let mut dir = Vec::new();
        for i in 0..ndof {
            if is_d[i] {
                dir.push(i);
            } else {
                to_free[i] = Some(free.len());
                free.push(i);
            }
        }
        DofMap { to_free, free, dirichlet: dir }
    }

    pub fn nfree(&self) -> usize {
        self.free.len()
    }

    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| v[i]).collect()
    }

    /// Full vector with free values from `vf` and Dirichlet values from `base`.
    pub fn expand(&self, vf: &[f64], base: &[f64]) -> Vec<f64> {
        let mut out = base.to_vec();
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = vf[k];
        }
        out
    }

    /// Full vector with zero Dirichlet values.
    pub fn expand_zero(&self, vf: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.to_free.len()];
        for (k, &i) in self.free.iter().enumerate() {
            out[i] = vf[k];
        }
        out
    }

    /// Free-free block of a square operator.
    pub fn free_block(&self, a: &Csr) -> Csr {
        let n = self.nfree();
        a.select(&self.to_free, n, &self.to_free, n)
    }

    /// Free rows of A z_D where z_D is `z` restricted to Dirichlet DOFs.
    pub fn lifting(&self, a: &Csr, z: &[f64]) -> Vec<f64> {
        let mut zd = vec![0.0; z.len()];
        for &d in &self.dirichlet {
            zd[d] = z[d];
        }
        self.restrict(&a.matvec(&zd))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Cholesky;
    use crate::mesh::{build_hex_grid, build_structured_hex, carve_spheres, Sphere, BoundaryTag};

    fn cube() -> PolyMesh {
        build_hex_grid([0.0; 3], [1.0; 3], [1, 1, 1]).unwrap()
    }

    #[test]
    fn projector_reproduces_linears() {
        let m = cube();
        let e = CellVem::build(&m, 0).unwrap();
        let f = |x: &Vec3| 1.0 + 2.0 * x.x - 3.0 * x.y + 0.5 * x.z;
        let z: Vec<f64> = m.vertices.iter().map(f).collect();
        let p = Vec3::new(0.3, 0.7, 0.1);
        assert!((e.proj_value(&z, &p) - f(&p)).abs() < 1e-14);
        assert!((e.proj_grad(&z) - Vec3::new(2.0, -3.0, 0.5)).norm() < 1e-14);
        let ones = vec![1.0; 8];
        assert!((e.mean(&ones) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stiffness_kernel_and_energy() {
        let m = cube();
        let e = CellVem::build(&m, 0).unwrap();
        let a = e.local_stiffness(1.0).unwrap();
        for i in 0..8 {
            assert!(a.row(i).sum().abs() < 1e-12);
        }
        let z = DMatrix::from_iterator(8, 1, e.verts.iter().map(|&v| m.vertices[v].x));
        assert!(((z.transpose() * &a * &z)[(0, 0)] - 1.0).abs() < 1e-13);
        let mm = e.local_mass(1.0).unwrap();
        let one = DMatrix::from_element(8, 1, 1.0);
        assert!(((one.transpose() * &mm * &one)[(0, 0)] - 1.0).abs() < 1e-13);
        assert!(e.local_stiffness(0.0).is_err());
        assert!(e.local_mass(-1.0).is_err());
    }

    fn patch(mesh: &PolyMesh) -> f64 {
        let vem = Vem::new(mesh).unwrap();
        let n = vem.ndof;
        let ops = vem.assemble_with(&vec![1.0; mesh.num_cells()], &vec![0.0; mesh.num_cells()], false).unwrap();
        let bnd = mesh.tagged_vertices(&BoundaryTag::ALL);
        let dm = DofMap::new(n, &bnd);
        let u = |x: &Vec3| 0.3 - x.x + 2.0 * x.y + 0.7 * x.z;
        let exact: Vec<f64> = mesh.vertices.iter().map(u).collect();
        let aff = dm.free_block(&ops.a);
        let rhs: Vec<f64> = dm.lifting(&ops.a, &exact).iter().map(|v| -v).collect();
        let xf = Cholesky::new(&aff).unwrap().solve(&rhs);
        let sol = dm.expand(&xf, &exact);
        sol.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn patch_test_hex_and_carved() {
        let m = build_structured_hex([0.0; 3], [1.0; 3], 0.2).unwrap();
        assert!(patch(&m) < 1e-10);
        let s = Sphere { center: [0.45, 0.55, 0.5], radius: 0.27, meridians: 8, parallels: 6 };
        let c = carve_spheres(&m, &[s]).unwrap();
        assert!(patch(&c) < 1e-10);
    }

    #[test]
    fn hydrostatic_state_is_discrete_solution() {
        let m = build_structured_hex([0.0; 3], [1.0; 3], 0.25).unwrap();
        let vem = Vem::new(&m).unwrap();
        let ops = vem.assemble_with(&vec![1.0; m.num_cells()], &vec![0.0; m.num_cells()], true).unwrap();
        let z: Vec<f64> = m.vertices.iter().map(|x| -x.z + 3.0).collect();
        let r = ops.a.matvec(&z);
        for i in 0..vem.ndof {
            assert!((r[i] - ops.f[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_evaluation_on_shared_face() {
        let m = build_hex_grid([0.0; 3], [3.0, 1.0, 1.0], [2, 1, 1]).unwrap();
        let vem = Vem::new(&m).unwrap();
        let z: Vec<f64> = m.vertices.iter().map(|x| x.x * x.x).collect();
        let x = Vec3::new(1.5, 0.5, 0.5);
        let s = vem.eval_field(&m, &z, &x, &SoilModel::Manufactured).unwrap();
        let (a, b) = (&vem.cells[0], &vem.cells[1]);
        let expect = (a.volume * a.proj_value(&z, &x) + b.volume * b.proj_value(&z, &x)) / (a.volume + b.volume);
        assert!((s.psi - expect).abs() < 1e-14);
    }
}
