//! Model configuration: horizon, discretization, noise, initial datum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::SolverConfig;
use crate::noise::NoiseFamily;
use crate::spectral::{eigenvalue, SpectralField};

/// Grid-to-mode ratio used for collocation unless overridden. Strictly above
/// two so that `ceil(ratio · N) ≥ 2N + 1`, the alias-free bound for the cubic.
pub const DEFAULT_DEALIAS: f64 = 2.25;

/// Deterministic initial datum as a sparse list of `(mode, coefficient)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDatum {
    pub modes: Vec<(usize, f64)>,
}

impl Default for InitialDatum {
    fn default() -> Self {
        Self {
            modes: vec![(1, 1.0)],
        }
    }
}

impl InitialDatum {
    pub fn validate(&self) -> Result<()> {
        for &(j, c) in &self.modes {
            if j == 0 {
                return Err(Error::Assumption(
                    "initial datum: mode 0 (the mean) is not part of the mean-zero state space".into(),
                ));
            }
            if !c.is_finite() {
                return Err(Error::Assumption(format!(
                    "initial datum regularity |X0|_4 < inf violated: coefficient of mode {j} is not finite"
                )));
            }
        }
        Ok(())
    }

    /// `|X_0|_4`.
    pub fn h4_norm(&self) -> f64 {
        self.field(self.max_mode()).sobolev_norm(4.0)
    }

    pub fn max_mode(&self) -> usize {
        self.modes.iter().map(|m| m.0).max().unwrap_or(1)
    }

    /// Warnings for coefficients decaying slower than `λ_j^{-2}` relative to
    /// the lowest listed mode.
    pub fn decay_warnings(&self) -> Vec<String> {
        let mut listed: Vec<(usize, f64)> = self.modes.iter().copied().filter(|m| m.1 != 0.0).collect();
        listed.sort_by_key(|m| m.0);
        let Some(&(j0, c0)) = listed.first() else {
            return Vec::new();
        };
        let envelope = c0.abs() * eigenvalue(j0).powi(2);
        listed
            .iter()
            .skip(1)
            .filter(|(j, c)| c.abs() > envelope * eigenvalue(*j).powi(-2) * (1.0 + 1e-12))
            .map(|(j, c)| {
                format!("initial datum: coefficient {c} of mode {j} decays slower than lambda_j^-2")
            })
            .collect()
    }

    /// `P_N X_0`.
    pub fn field(&self, n: usize) -> SpectralField {
        let mut f = SpectralField::zeros(n);
        for &(j, c) in &self.modes {
            if j >= 1 && j <= n {
                f.coeffs_mut()[j - 1] += c;
            }
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Horizon `T`.
    #[serde(rename = "T", default = "default_horizon")]
    pub t_end: f64,
    #[serde(rename = "N", default = "default_modes")]
    pub n: usize,
    #[serde(rename = "M", default = "default_steps")]
    pub m: usize,
    #[serde(default)]
    pub noise: NoiseFamily,
    #[serde(default)]
    pub initial: InitialDatum,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Disables the nonlinearity (`F ≡ 0`).
    #[serde(default)]
    pub linear_mode: bool,
    #[serde(default = "default_dealias")]
    pub dealias: f64,
}

fn default_horizon() -> f64 {
    1.0
}
fn default_modes() -> usize {
    32
}
fn default_steps() -> usize {
    128
}
fn default_dealias() -> f64 {
    DEFAULT_DEALIAS
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            t_end: default_horizon(),
            n: default_modes(),
            m: default_steps(),
            noise: NoiseFamily::default(),
            initial: InitialDatum::default(),
            solver: SolverConfig::default(),
            linear_mode: false,
            dealias: DEFAULT_DEALIAS,
        }
    }
}

impl ModelConfig {
    pub fn tau(&self) -> f64 {
        self.t_end / self.m as f64
    }

    /// Checks every modelling assumption; returns one OK line per check.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut lines = Vec::new();
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::Assumption(format!("horizon T must be positive, got {}", self.t_end)));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::Assumption(format!(
                "N and M must be positive, got N={}, M={}",
                self.n, self.m
            )));
        }
        if !(self.dealias.is_finite() && self.dealias >= 1.0) {
            return Err(Error::Config(format!("dealias factor must be >= 1, got {}", self.dealias)));
        }
        lines.push("operator: Neumann Laplacian on (0,1), lambda_j = (j pi)^2: OK".to_string());
        lines.push("nonlinearity: F(v) = v^3 - v: OK".to_string());
        lines.push(self.noise.check_admissible()?);
        self.initial.validate()?;
        lines.push(format!(
            "initial datum regularity |X0|_4 < inf: OK (|X0|_4 = {:.6e})",
            self.initial.h4_norm()
        ));
        self.solver.validate()?;
        Ok(lines)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ModelConfig::default();
        let lines = c.validate().unwrap();
        assert!(lines.iter().any(|l| l.contains("OK (r=2 > 3/2)")));
        assert_eq!(c.initial.field(3).coeffs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn violations_are_named() {
        let c = ModelConfig {
            noise: NoiseFamily::PowerLaw { r: 1.2 },
            ..Default::default()
        };
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("1.2 <= 3/2"), "{e}");
        let c = ModelConfig {
            m: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn slow_decay_warns() {
        let ok = InitialDatum {
            modes: vec![(1, 1.0), (2, 0.01)],
        };
        assert!(ok.decay_warnings().is_empty());
        let slow = InitialDatum {
            modes: vec![(1, 1.0), (2, 0.5)],
        };
        assert_eq!(slow.decay_warnings().len(), 1);
    }
}
