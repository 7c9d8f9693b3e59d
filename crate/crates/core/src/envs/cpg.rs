use serde::{Deserialize, Serialize};

/// Which oscillators are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CpgTopology {
    /// Nearest neighbours along the body.
    #[default]
    Chain,
    AllToAll,
}

/// Form of the coupling term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CpgCoupling {
    /// Phase-difference coupling `alpha sin(zeta_j - zeta_i - (i - j) u_eta)`:
    /// neighbours lock to a constant lag of `u_eta` per joint, head to tail.
    #[default]
    PhaseLag,
    /// `alpha (zeta_j + zeta_i - u_eta)` taken verbatim. The phases grow
    /// geometrically under this rule; kept only for comparison.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CpgConfig {
    pub alpha: f64,
    pub u_r: f64,
    pub u_eta: f64,
    pub u_a: f64,
    pub dt: f64,
    pub topology: CpgTopology,
    pub coupling: CpgCoupling,
}

impl Default for CpgConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            u_r: 10.0,
            u_eta: 1.0,
            u_a: std::f64::consts::FRAC_PI_4,
            dt: 0.02,
            topology: CpgTopology::Chain,
            coupling: CpgCoupling::PhaseLag,
        }
    }
}

/// Coupled phase oscillators; oscillator `i` sets the reference angle of joint `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpg {
    cfg: CpgConfig,
    zeta: Vec<f64>,
}

impl Cpg {
    pub fn new(cfg: CpgConfig, n: usize) -> Self {
        Self {
            cfg,
            zeta: vec![0.0; n],
        }
    }

    pub fn config(&self) -> &CpgConfig {
        &self.cfg
    }

    pub fn phases(&self) -> &[f64] {
        &self.zeta
    }

    pub fn set_phases(&mut self, zeta: &[f64]) {
        self.zeta.copy_from_slice(zeta);
    }

    pub fn reset(&mut self) {
        self.zeta.iter_mut().for_each(|z| *z = 0.0);
    }

    fn neighbours(&self, i: usize) -> Vec<usize> {
        let n = self.zeta.len();
        match self.cfg.topology {
            CpgTopology::Chain => {
                let mut v = Vec::with_capacity(2);
                if i > 0 {
                    v.push(i - 1);
                }
                if i + 1 < n {
                    v.push(i + 1);
                }
                v
            }
            CpgTopology::AllToAll => (0..n).filter(|j| *j != i).collect(),
        }
    }

    pub fn references(&self) -> Vec<f64> {
        self.zeta.iter().map(|z| self.cfg.u_a * z.sin()).collect()
    }

    /// Advances every phase by one Euler step and returns the new joint references.
    pub fn step(&mut self) -> Vec<f64> {
        let c = self.cfg;
        let rates: Vec<f64> = (0..self.zeta.len())
            .map(|i| {
                let zi = self.zeta[i];
                let coupling: f64 = self
                    .neighbours(i)
                    .into_iter()
                    .map(|j| {
                        let zj = self.zeta[j];
                        match c.coupling {
                            CpgCoupling::PhaseLag => {
                                let lag = (i as f64 - j as f64) * c.u_eta;
                                c.alpha * (zj - zi - lag).sin()
                            }
                            CpgCoupling::Literal => c.alpha * (zj + zi - c.u_eta),
                        }
                    })
                    .sum();
                c.u_r + coupling
            })
            .collect();
        for (z, r) in self.zeta.iter_mut().zip(rates) {
            *z += r * c.dt;
        }
        self.references()
    }
}
