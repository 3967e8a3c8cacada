//! Constitutive laws: van Genuchten-Mualem retention and conductivity, soil
//! strength and the two growth impedance factors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Van Genuchten-Mualem parameters; `m = 1 - 1/n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VanGenuchten {
    /// Inverse air-entry value (1/cm).
    pub a: f64,
    pub n: f64,
    pub theta_r: f64,
    pub theta_s: f64,
    /// Saturated conductivity (cm/day).
    pub ks: f64,
    /// Soil strength scale (MPa).
    #[serde(default = "one")]
    pub sigma_max: f64,
}

fn one() -> f64 {
    1.0
}

/// Switch to the asymptotic form of the powers once `a|psi|` exceeds this.
const LOG_SPACE: f64 = 1e3;

impl VanGenuchten {
    pub fn tp2() -> Self {
        VanGenuchten { a: 0.03, n: 2.5, theta_r: 0.06, theta_s: 0.41, ks: 10.24, sigma_max: 1.0 }
    }

    pub fn tp3() -> Self {
        VanGenuchten { a: 0.02, n: 1.2, ..Self::tp2() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.n > 1.0
            && self.a > 0.0
            && self.ks > 0.0
            && self.sigma_max > 0.0
            && 0.0 <= self.theta_r
            && self.theta_r < self.theta_s
            && self.theta_s <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Param(format!("invalid van Genuchten parameters {self:?}")))
        }
    }

    #[inline]
    pub fn m(&self) -> f64 {
        1.0 - 1.0 / self.n
    }

    /// ln(1 + y^n) for y = a|psi| > 0.
    fn ln_1p_yn(&self, y: f64) -> f64 {
        if y > LOG_SPACE {
            self.n * y.ln() + (-self.n * y.ln()).exp().ln_1p()
        } else {
            y.powf(self.n).ln_1p()
        }
    }

    pub fn theta(&self, psi: f64) -> f64 {
        if psi >= 0.0 {
            return self.theta_s;
        }
        let y = self.a * -psi;
        self.theta_r + (self.theta_s - self.theta_r) * (-self.m() * self.ln_1p_yn(y)).exp()
    }

    /// Effective saturation clamped to [0, 1].
    pub fn saturation(&self, psi: f64) -> f64 {
        ((self.theta(psi) - self.theta_r) / (self.theta_s - self.theta_r)).clamp(0.0, 1.0)
    }

    pub fn conductivity(&self, psi: f64) -> f64 {
        if psi >= 0.0 {
            return self.ks;
        }
        let y = self.a * -psi;
        let m = self.m();
        let l = self.ln_1p_yn(y);
        // 1 - y^{n-1}(1+y^n)^{-m}; for y > 1 use the exact rewrite
        // 1 - (1 + y^{-n})^{-m}, which avoids cancellation.
        let bracket = if y > 1.0 {
            -(-m * (-self.n * y.ln()).exp().ln_1p()).exp_m1()
        } else {
            1.0 - ((self.n - 1.0) * y.ln() - m * l).exp()
        };
        self.ks * bracket * bracket * (-0.5 * m * l).exp()
    }

    pub fn capacity(&self, psi: f64) -> f64 {
        if psi >= 0.0 {
            return 0.0;
        }
        let y = self.a * -psi;
        let m = self.m();
        let l = self.ln_1p_yn(y);
        self.a
            * self.n
            * m
            * (self.theta_s - self.theta_r)
            * ((self.n - 1.0) * y.ln() - (m + 1.0) * l).exp()
    }

    /// sigma = sigma_max (1 - Theta)^3 from the volumetric water content.
    pub fn soil_strength(&self, theta: f64) -> Result<f64> {
        let s = (theta - self.theta_r) / (self.theta_s - self.theta_r);
        if !(-1e-12..=1.0 + 1e-12).contains(&s) {
            return Err(Error::Param(format!("effective saturation {s} outside [0, 1]")));
        }
        Ok(self.strength_from_saturation(s))
    }

    pub fn strength_from_saturation(&self, s: f64) -> f64 {
        self.sigma_max * (1.0 - s.clamp(0.0, 1.0)).powi(3)
    }

    pub fn imp_sigma(&self, sigma: f64) -> f64 {
        if sigma >= self.sigma_max {
            0.0
        } else {
            1.0 - sigma / self.sigma_max
        }
    }
}

/// Pressure-head magnitudes |psi_1| < |psi_2| <= |psi_3| < |psi_4| (cm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpedanceThresholds {
    pub psi1: f64,
    pub psi2: f64,
    pub psi3: f64,
    pub psi4: f64,
}

impl ImpedanceThresholds {
    pub fn tp3() -> Self {
        ImpedanceThresholds { psi1: 1.0, psi2: 510.0, psi3: 920.0, psi4: 1.6e4 }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c, d) = (self.psi1.abs(), self.psi2.abs(), self.psi3.abs(), self.psi4.abs());
        if a < b && b <= c && c < d {
            Ok(())
        } else {
            Err(Error::Param(format!("impedance thresholds not ordered: {self:?}")))
        }
    }

    /// Trapezoidal stress factor: zero when too wet or too dry, one in the optimal band.
    pub fn imp_psi(&self, psi: f64) -> f64 {
        let p = psi.abs();
        let (p1, p2, p3, p4) = (self.psi1.abs(), self.psi2.abs(), self.psi3.abs(), self.psi4.abs());
        if p <= p1 {
            0.0
        } else if p <= p2 {
            (p - p1) / (p2 - p1)
        } else if p <= p3 {
            1.0
        } else if p <= p4 {
            (p4 - p) / (p4 - p3)
        } else {
            0.0
        }
    }
}

/// Retention/conductivity model used by the soil solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SoilModel {
    VanGenuchten(VanGenuchten),
    /// Smooth synthetic law of the convergence benchmark:
    /// c(psi) = -psi/(1+psi^2)^{3/2} + 4, K = 1.
    Manufactured,
}

impl SoilModel {
    pub fn theta(&self, psi: f64) -> f64 {
        match self {
            SoilModel::VanGenuchten(v) => v.theta(psi),
            SoilModel::Manufactured => 1.0 / (1.0 + psi * psi).sqrt() + 4.0 * psi,
        }
    }

    pub fn capacity(&self, psi: f64) -> f64 {
        match self {
            SoilModel::VanGenuchten(v) => v.capacity(psi),
            SoilModel::Manufactured => -psi / (1.0 + psi * psi).powf(1.5) + 4.0,
        }
    }

    pub fn conductivity(&self, psi: f64) -> f64 {
        match self {
            SoilModel::VanGenuchten(v) => v.conductivity(psi),
            SoilModel::Manufactured => 1.0,
        }
    }

    /// theta_s - theta_r, used to turn water-content gradients into saturation gradients.
    pub fn theta_range(&self) -> f64 {
        match self {
            SoilModel::VanGenuchten(v) => v.theta_s - v.theta_r,
            SoilModel::Manufactured => 1.0,
        }
    }

    /// Effective saturation (the raw water content for the synthetic law).
    pub fn saturation(&self, psi: f64) -> f64 {
        match self {
            SoilModel::VanGenuchten(v) => v.saturation(psi),
            SoilModel::Manufactured => self.theta(psi),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SoilModel::VanGenuchten(v) => v.validate(),
            SoilModel::Manufactured => Ok(()),
        }
    }
}

/// Named parameter sets shipped with the crate.
pub fn preset(name: &str) -> Option<VanGenuchten> {
    match name.to_ascii_lowercase().as_str() {
        "tp2" | "pot" => Some(VanGenuchten::tp2()),
        "tp3" | "stony" => Some(VanGenuchten::tp3()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_branch() {
        let p = VanGenuchten::tp2();
        assert_eq!(p.theta(0.0), 0.41);
        assert_eq!(p.conductivity(5.0), 10.24);
        assert_eq!(p.capacity(5.0), 0.0);
        assert_eq!(p.imp_sigma(p.soil_strength(p.theta_s).unwrap()), 1.0);
    }

    #[test]
    fn dry_limit_and_large_heads() {
        let p = VanGenuchten::tp3();
        let t = p.theta(-1e9);
        assert!((t - p.theta_r) < 0.02);
        for psi in [-1e3, -5e4, -1.6e4, -1e7] {
            let k = p.conductivity(psi);
            assert!(k.is_finite() && k > 0.0 && k <= p.ks, "K({psi}) = {k}");
            assert!(p.capacity(psi).is_finite());
        }
        // Both sides of the log-space switch agree.
        let psi = -LOG_SPACE / p.a;
        let (l, r) = (p.conductivity(psi * (1.0 - 1e-12)), p.conductivity(psi * (1.0 + 1e-12)));
        assert!((l - r).abs() <= 1e-9 * l);
    }

    #[test]
    fn impedance_trapezoid() {
        let t = ImpedanceThresholds::tp3();
        assert_eq!(t.imp_psi(-700.0), 1.0);
        assert!((t.imp_psi(-(920.0 + 1.6e4) / 2.0) - 0.5).abs() < 1e-15);
        assert_eq!(t.imp_psi(-0.5), 0.0);
        assert_eq!(t.imp_psi(-2e4), 0.0);
    }
}
