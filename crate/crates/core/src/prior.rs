//! Joint priors `ω(θ_s, θ_t) = ω(θ_s) · ω(θ_t | θ_s)` and the source-free
//! prior `ω̂(θ_t)`, plus the positivity (properness) validator.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::family::{NormalLaw, ParamBox, ParamPoint};
use crate::math::log_sum_exp;

/// Absolute slack on the hard-window edge so that grid points lying exactly
/// on the window boundary are not lost to rounding.
pub const WINDOW_TOLERANCE: f64 = 1e-9;

/// Default properness neighborhood radii.
pub const DEFAULT_NEIGHBORHOOD: f64 = 0.05;

/// Density over the source parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal {
    UniformBox,
    /// Normal law truncated to the support box and renormalized.
    TruncatedGaussian { law: NormalLaw, log_mass: f64 },
}

/// Density over the target parameter given the source parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conditional {
    /// Untruncated `N(θ_s, c² I)` over the task-specific coordinates.
    GaussianAround { c: f64 },
    /// Uniform on `{θ_t : ‖θ_t − θ_s‖∞ ≤ δ} ∩ Λ`.
    HardWindow { delta: f64 },
    /// Uniform over Λ, ignoring θ_s.
    IndependentUniform,
}

impl Conditional {
    pub fn ignores_source(&self) -> bool {
        matches!(self, Conditional::IndependentUniform)
    }

    /// `log ω(θ_t | θ_s)` for the task-specific block. With `shared > 0`
    /// the first `shared` coordinates are tied and any mismatch gives `-inf`.
    pub fn log_density(&self, theta_t: &[f64], theta_s: &[f64], support: &ParamBox, shared: usize) -> f64 {
        if theta_t[..shared] != theta_s[..shared] {
            return f64::NEG_INFINITY;
        }
        let t = &theta_t[shared..];
        let s = &theta_s[shared..];
        match *self {
            Conditional::GaussianAround { c } => {
                let k = t.len() as f64;
                let sq: f64 = t.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
                -0.5 * k * (2.0 * std::f64::consts::PI * c * c).ln() - 0.5 * sq / (c * c)
            }
            Conditional::HardWindow { delta } => {
                let mut log_vol = 0.0;
                for (i, (tv, sv)) in t.iter().zip(s).enumerate() {
                    let axis = shared + i;
                    let lo = support.lower()[axis];
                    let hi = support.upper()[axis];
                    if (tv - sv).abs() > delta + WINDOW_TOLERANCE || *tv < lo || *tv > hi {
                        return f64::NEG_INFINITY;
                    }
                    let width = (sv + delta).min(hi) - (sv - delta).max(lo);
                    if width <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    log_vol += width.ln();
                }
                -log_vol
            }
            Conditional::IndependentUniform => {
                let mut log_vol = 0.0;
                for (i, tv) in t.iter().enumerate() {
                    let axis = shared + i;
                    if *tv < support.lower()[axis] || *tv > support.upper()[axis] {
                        return f64::NEG_INFINITY;
                    }
                    log_vol += support.width(axis).ln();
                }
                -log_vol
            }
        }
    }
}

/// The joint prior over `(θ_s, θ_t)` on a common support box Λ.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    marginal: Marginal,
    conditional: Conditional,
    support: ParamBox,
    shared: usize,
}

impl PriorSpec {
    pub fn new(marginal: Marginal, conditional: Conditional, support: ParamBox) -> Result<Self> {
        match conditional {
            Conditional::GaussianAround { c } if !(c > 0.0 && c.is_finite()) => {
                return Err(Error::InvalidValue(format!("prior scale c must be > 0, got {c}")))
            }
            Conditional::HardWindow { delta } if !(delta > 0.0 && delta.is_finite()) => {
                return Err(Error::InvalidValue(format!(
                    "window half-width must be > 0, got {delta}"
                )))
            }
            _ => {}
        }
        Ok(Self {
            marginal,
            conditional,
            support,
            shared: 0,
        })
    }

    /// Uniform marginal over Λ with the given conditional.
    pub fn uniform(conditional: Conditional, support: ParamBox) -> Result<Self> {
        Self::new(Marginal::UniformBox, conditional, support)
    }

    /// `ω̂(θ_t)` uniform over Λ, expressed as a prior whose conditional
    /// ignores the source.
    pub fn source_free(support: ParamBox) -> Self {
        Self {
            marginal: Marginal::UniformBox,
            conditional: Conditional::IndependentUniform,
            support,
            shared: 0,
        }
    }

    /// Normal marginal truncated to Λ; the truncation mass is found by
    /// midpoint quadrature.
    pub fn truncated_gaussian_marginal(mean: Vec<f64>, cov: DMatrix<f64>, support: &ParamBox) -> Result<Marginal> {
        let law = NormalLaw::new(mean, cov)?;
        if law.dim() != support.dim() {
            return Err(Error::Precondition("marginal dimension does not match support".into()));
        }
        let per_axis = match support.dim() {
            1 => 4001,
            2 => 401,
            _ => 61,
        };
        let grid = crate::posterior::GridSpec::regular(support, per_axis)?;
        let mean_v: Vec<f64> = law.mean().iter().copied().collect();
        let logs: Vec<f64> = grid
            .nodes()
            .chunks_exact(grid.dim())
            .map(|p| {
                let off: Vec<f64> = p.iter().zip(&mean_v).map(|(a, b)| a - b).collect();
                law.log_density_offset(&off)
            })
            .collect();
        let log_mass = log_sum_exp(&logs) + grid.log_cell_volume();
        Ok(Marginal::TruncatedGaussian { law, log_mass })
    }

    /// Ties the first `shared` coordinates of θ_t to those of θ_s.
    pub fn with_shared(mut self, shared: usize) -> Result<Self> {
        if shared > self.support.dim() {
            return Err(Error::Precondition(format!(
                "shared count {shared} exceeds dimension {}",
                self.support.dim()
            )));
        }
        self.shared = shared;
        Ok(self)
    }

    pub fn marginal(&self) -> &Marginal {
        &self.marginal
    }

    pub fn conditional(&self) -> Conditional {
        self.conditional
    }

    pub fn support(&self) -> &ParamBox {
        &self.support
    }

    pub fn shared(&self) -> usize {
        self.shared
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    /// `log ω(θ_s)`; `-inf` outside the support.
    pub fn marginal_log_density(&self, theta_s: &ParamPoint) -> f64 {
        self.marginal_log_density_at(theta_s.coords())
    }

    pub(crate) fn marginal_log_density_at(&self, theta_s: &[f64]) -> f64 {
        if !self.support.contains(theta_s) {
            return f64::NEG_INFINITY;
        }
        match &self.marginal {
            Marginal::UniformBox => -self.support.volume().ln(),
            Marginal::TruncatedGaussian { law, log_mass } => {
                let off: Vec<f64> = theta_s.iter().zip(law.mean().iter()).map(|(a, b)| a - b).collect();
                law.log_density_offset(&off) - log_mass
            }
        }
    }

    /// `log ω(θ_t | θ_s)`.
    pub fn conditional_log_density(&self, theta_t: &ParamPoint, theta_s: &ParamPoint) -> f64 {
        self.conditional_log_density_at(theta_t.coords(), theta_s.coords())
    }

    pub(crate) fn conditional_log_density_at(&self, theta_t: &[f64], theta_s: &[f64]) -> f64 {
        self.conditional
            .log_density(theta_t, theta_s, &self.support, self.shared)
    }

    /// Checks positivity of the marginal over Λ and of the conditional over
    /// the `∞`-norm neighborhoods of radius `delta_s`, `delta_t` around the
    /// true pair, on a `resolution`-point-per-axis grid.
    pub fn validate_properness(
        &self,
        theta_s_star: &ParamPoint,
        theta_t_star: &ParamPoint,
        delta_s: f64,
        delta_t: f64,
        resolution: usize,
    ) -> Result<PropernessReport> {
        if !(delta_s > 0.0 && delta_t > 0.0) {
            return Err(Error::Precondition("neighborhood radii must be > 0".into()));
        }
        if resolution < 3 {
            return Err(Error::Precondition("resolution must be at least 3".into()));
        }
        let d = self.dim();
        if theta_s_star.dim() != d || theta_t_star.dim() != d {
            return Err(Error::Precondition("true parameters do not match prior dimension".into()));
        }

        let mut witness = None;
        let marginal_proper = {
            let pts = closed_grid(&self.support, resolution);
            match pts
                .chunks_exact(d)
                .find(|p| self.marginal_log_density_at(p) == f64::NEG_INFINITY)
            {
                Some(p) => {
                    witness = Some(Witness {
                        theta_s: p.to_vec(),
                        theta_t: None,
                    });
                    false
                }
                None => true,
            }
        };

        let s_ball = self.support.clip_ball(theta_s_star.coords(), delta_s);
        let t_ball = self.support.clip_ball(theta_t_star.coords(), delta_t);
        let clipped = [(&s_ball, theta_s_star, delta_s), (&t_ball, theta_t_star, delta_t)]
            .iter()
            .any(|(ball, center, r)| match ball {
                None => true,
                Some(b) => (0..d).any(|i| {
                    b.lower()[i] > center.coords()[i] - r || b.upper()[i] < center.coords()[i] + r
                }),
            });
        let (Some(s_ball), Some(t_ball)) = (s_ball, t_ball) else {
            return Err(Error::Precondition(
                "true parameters lie outside the prior support".into(),
            ));
        };

        let s_pts = closed_grid(&s_ball, resolution);
        let t_pts = closed_grid(&t_ball, resolution);
        let j = self.shared;
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let mut theta_t = vec![0.0; d];
        for s in s_pts.chunks_exact(d) {
            for t in t_pts.chunks_exact(d) {
                theta_t[..j].copy_from_slice(&s[..j]);
                theta_t[j..].copy_from_slice(&t[j..]);
                if self.conditional_log_density_at(&theta_t, s) == f64::NEG_INFINITY {
                    let dist = linf(s, theta_s_star.coords()).max(linf(&theta_t, theta_t_star.coords()));
                    if best.as_ref().is_none_or(|(b, _, _)| dist < *b) {
                        best = Some((dist, s.to_vec(), theta_t.clone()));
                    }
                }
            }
        }
        let conditional_proper = best.is_none();
        if let Some((_, s, t)) = best {
            if witness.is_none() {
                witness = Some(Witness {
                    theta_s: s,
                    theta_t: Some(t),
                });
            }
        }
        Ok(PropernessReport {
            marginal_proper,
            conditional_proper,
            witness,
            delta_s,
            delta_t,
            clipped,
        })
    }
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Flattened closed grid including the box edges.
fn closed_grid(bounds: &ParamBox, resolution: usize) -> Vec<f64> {
    let d = bounds.dim();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let lo = bounds.lower()[i];
            let hi = bounds.upper()[i];
            (0..resolution)
                .map(|k| match k {
                    _ if k + 1 == resolution => hi,
                    _ => lo + (hi - lo) * k as f64 / (resolution - 1) as f64,
                })
                .collect()
        })
        .collect();
    crate::posterior::cartesian(&axes)
}

/// A parameter pair where positivity fails.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub theta_s: Vec<f64>,
    /// `None` when the marginal itself vanishes at `theta_s`.
    pub theta_t: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropernessReport {
    pub marginal_proper: bool,
    pub conditional_proper: bool,
    pub witness: Option<Witness>,
    pub delta_s: f64,
    pub delta_t: f64,
    /// A neighborhood was cut by the support box.
    pub clipped: bool,
}

impl PropernessReport {
    pub fn is_proper(&self) -> bool {
        self.marginal_proper && self.conditional_proper
    }
}
