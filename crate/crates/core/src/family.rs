//! Parametric data families: sampling, log-densities and Fisher information.
//!
//! Three kinds are supported:
//!
//! - `Bernoulli`: scalar success probability, samples are bits.
//! - `GaussianMean`: mean vector of a normal law with fixed known covariance.
//! - `LogisticRegression`: weight vector; a sample is a covariate vector
//!   drawn from a fixed normal law plus a label `y ~ Bernoulli(sigmoid(θᵀx))`.
//!   Only the conditional label density enters the likelihood, the covariate
//!   law does not depend on θ.
//!
//! Every family carries an axis-aligned parameter box Λ; checked entry
//! points reject parameters outside it.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid};

/// Default Bernoulli box keeps log-densities finite at the grid edges.
pub const BERNOULLI_EDGE: f64 = 1e-4;

/// Default number of covariate draws for the logistic Fisher information.
pub const DEFAULT_FISHER_DRAWS: usize = 1_000_000;

const DEFAULT_FISHER_SEED: u64 = 0x6f74_6c5f_6669_7368;

/// Axis-aligned box `[lower_i, upper_i]` in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Precondition(
                "box bounds must be non-empty and of equal length".into(),
            ));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Precondition(format!(
                "box lower {lower:?} must lie strictly below upper {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 1]^d`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn cube(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    /// Closed-box membership.
    pub fn contains(&self, coords: &[f64]) -> bool {
        coords.len() == self.dim()
            && coords
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(c, (l, u))| *c >= *l && *c <= *u)
    }

    /// Intersection with `[center - radius, center + radius]` per axis, or
    /// `None` when empty.
    pub fn clip_ball(&self, center: &[f64], radius: f64) -> Option<ParamBox> {
        let lower: Vec<f64> = center
            .iter()
            .zip(&self.lower)
            .map(|(c, l)| (c - radius).max(*l))
            .collect();
        let upper: Vec<f64> = center
            .iter()
            .zip(&self.upper)
            .map(|(c, u)| (c + radius).min(*u))
            .collect();
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return None;
        }
        Some(ParamBox { lower, upper })
    }
}

/// A parameter vector whose first `common` coordinates are shared between
/// the source and target tasks; the rest are task specific.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    coords: Vec<f64>,
    common: usize,
}

impl ParamPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords, common: 0 }
    }

    pub fn with_common(coords: Vec<f64>, common: usize) -> Result<Self> {
        if common > coords.len() {
            return Err(Error::Precondition(format!(
                "common count {common} exceeds dimension {}",
                coords.len()
            )));
        }
        Ok(Self { coords, common })
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(vec![value])
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn common_count(&self) -> usize {
        self.common
    }

    pub fn common(&self) -> &[f64] {
        &self.coords[..self.common]
    }

    pub fn specific(&self) -> &[f64] {
        &self.coords[self.common..]
    }
}

impl From<Vec<f64>> for ParamPoint {
    fn from(coords: Vec<f64>) -> Self {
        Self::new(coords)
    }
}

/// One observation from a family.
#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Bit(bool),
    Point(Vec<f64>),
    Labeled { x: Vec<f64>, label: bool },
}

impl Sample {
    /// Stable 64-bit fingerprint used to verify that paired arms consume the
    /// same data stream.
    pub fn fold_checksum(&self, mut acc: u64) -> u64 {
        let mut mix = |bits: u64| {
            acc ^= bits;
            acc = acc.wrapping_mul(0x0000_0100_0000_01b3);
        };
        match self {
            Sample::Bit(b) => mix(*b as u64),
            Sample::Point(v) => v.iter().for_each(|x| mix(x.to_bits())),
            Sample::Labeled { x, label } => {
                x.iter().for_each(|v| mix(v.to_bits()));
                mix(*label as u64);
            }
        }
        acc
    }
}

/// FNV-style checksum over a sample sequence.
pub fn data_checksum(samples: &[Sample]) -> u64 {
    samples
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |acc, s| s.fold_checksum(acc))
}

/// Fixed multivariate normal law with cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalLaw {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl NormalLaw {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Precondition(format!(
                "covariance must be {d}x{d}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::Singular {
            block: "covariance",
        })?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
            chol: l,
            precision,
            log_det,
        })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], DMatrix::identity(dim, dim)).expect("identity is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample(StandardNormal)));
        (&self.mean + &self.chol * eps).iter().copied().collect()
    }

    /// Log density of `mean + offset`.
    pub fn log_density_offset(&self, offset: &[f64]) -> f64 {
        let d = self.dim();
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                quad += offset[i] * self.precision[(i, j)] * offset[j];
            }
        }
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det + quad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyKind {
    Bernoulli,
    /// Noise law centered at zero; the parameter is the mean.
    GaussianMean { noise: NormalLaw },
    LogisticRegression {
        covariates: NormalLaw,
        fisher_draws: usize,
        fisher_seed: u64,
    },
}

/// A parametric family `P_θ` restricted to a parameter box.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyModel {
    kind: FamilyKind,
    bounds: ParamBox,
}

impl FamilyModel {
    /// Bernoulli on `[1e-4, 1 - 1e-4]`.
    pub fn bernoulli() -> Self {
        Self {
            kind: FamilyKind::Bernoulli,
            bounds: ParamBox::cube(1, BERNOULLI_EDGE, 1.0 - BERNOULLI_EDGE).expect("valid box"),
        }
    }

    /// Gaussian mean family with the given known covariance, on `[0, 1]^d`.
    pub fn gaussian_mean(cov: DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        Ok(Self {
            kind: FamilyKind::GaussianMean {
                noise: NormalLaw::new(vec![0.0; d], cov)?,
            },
            bounds: ParamBox::unit(d),
        })
    }

    /// Logistic regression with covariates `N(mean, cov)`, on `[0, 1]^d`.
    pub fn logistic(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let covariates = NormalLaw::new(mean, cov)?;
        let d = covariates.dim();
        Ok(Self {
            kind: FamilyKind::LogisticRegression {
                covariates,
                fisher_draws: DEFAULT_FISHER_DRAWS,
                fisher_seed: DEFAULT_FISHER_SEED,
            },
            bounds: ParamBox::unit(d),
        })
    }

    /// Covariates `N((5, -5), I)`.
    pub fn logistic_reference() -> Self {
        Self::logistic(vec![5.0, -5.0], DMatrix::identity(2, 2)).expect("identity covariance")
    }

    pub fn with_box(mut self, bounds: ParamBox) -> Result<Self> {
        if bounds.dim() != self.dim() {
            return Err(Error::Precondition(format!(
                "box dimension {} does not match family dimension {}",
                bounds.dim(),
                self.dim()
            )));
        }
        self.bounds = bounds;
        Ok(self)
    }

    /// Overrides the Monte-Carlo budget of the logistic Fisher information.
    pub fn with_fisher_draws(mut self, draws: usize, seed: u64) -> Self {
        if let FamilyKind::LogisticRegression {
            fisher_draws,
            fisher_seed,
            ..
        } = &mut self.kind
        {
            *fisher_draws = draws;
            *fisher_seed = seed;
        }
        self
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn bounds(&self) -> &ParamBox {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            FamilyKind::Bernoulli => 1,
            FamilyKind::GaussianMean { noise } => noise.dim(),
            FamilyKind::LogisticRegression { covariates, .. } => covariates.dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::Bernoulli => "bernoulli",
            FamilyKind::GaussianMean { .. } => "gaussian",
            FamilyKind::LogisticRegression { .. } => "logistic",
        }
    }

    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if self.bounds.contains(theta) {
            Ok(())
        } else {
            Err(Error::Domain {
                coords: theta.to_vec(),
            })
        }
    }

    /// `log P_θ(z)` in nats; for logistic regression the conditional
    /// `log P_θ(y | x)`.
    pub fn log_density(&self, theta: &ParamPoint, z: &Sample) -> Result<f64> {
        self.check(theta.coords())?;
        self.log_density_unchecked(theta.coords(), z)
    }

    /// As [`log_density`](Self::log_density) but without the box check, for
    /// grid loops and finite-difference probes.
    pub fn log_density_unchecked(&self, theta: &[f64], z: &Sample) -> Result<f64> {
        match (&self.kind, z) {
            (FamilyKind::Bernoulli, Sample::Bit(b)) => Ok(if *b {
                theta[0].ln()
            } else {
                (1.0 - theta[0]).ln()
            }),
            (FamilyKind::GaussianMean { noise }, Sample::Point(v)) if v.len() == theta.len() => {
                let offset: Vec<f64> = v.iter().zip(theta).map(|(a, b)| a - b).collect();
                Ok(noise.log_density_offset(&offset))
            }
            (FamilyKind::LogisticRegression { .. }, Sample::Labeled { x, label })
                if x.len() == theta.len() =>
            {
                let score: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                Ok(if *label {
                    log_sigmoid(score)
                } else {
                    log_sigmoid(-score)
                })
            }
            _ => Err(self.sample_mismatch(z)),
        }
    }

    fn sample_mismatch(&self, z: &Sample) -> Error {
        Error::Precondition(format!(
            "sample {z:?} does not belong to the {} family of dimension {}",
            self.name(),
            self.dim()
        ))
    }

    /// Adds `log P_θ(z)` to `out[g]` for every node `g` of a flattened
    /// node array (`nodes.len() == out.len() * dim`).
    pub fn accumulate_log_likelihood(&self, nodes: &[f64], z: &Sample, out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        debug_assert_eq!(nodes.len(), out.len() * d);
        match (&self.kind, z) {
            (FamilyKind::Bernoulli, Sample::Bit(b)) => {
                for (o, theta) in out.iter_mut().zip(nodes) {
                    *o += if *b { theta.ln() } else { (1.0 - theta).ln() };
                }
            }
            (FamilyKind::GaussianMean { noise }, Sample::Point(v)) if v.len() == d => {
                let mut offset = vec![0.0; d];
                for (o, theta) in out.iter_mut().zip(nodes.chunks_exact(d)) {
                    for i in 0..d {
                        offset[i] = v[i] - theta[i];
                    }
                    *o += noise.log_density_offset(&offset);
                }
            }
            (FamilyKind::LogisticRegression { .. }, Sample::Labeled { x, label }) if x.len() == d => {
                let sign = if *label { 1.0 } else { -1.0 };
                for (o, theta) in out.iter_mut().zip(nodes.chunks_exact(d)) {
                    let score: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                    *o += log_sigmoid(sign * score);
                }
            }
            _ => return Err(self.sample_mismatch(z)),
        }
        Ok(())
    }

    /// Draws `count` i.i.d. samples from `P_θ`.
    pub fn sample<R: Rng + ?Sized>(&self, theta: &ParamPoint, rng: &mut R, count: usize) -> Result<Vec<Sample>> {
        self.check(theta.coords())?;
        Ok((0..count).map(|_| self.draw_one(theta.coords(), rng)).collect())
    }

    fn draw_one<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Sample {
        match &self.kind {
            FamilyKind::Bernoulli => Sample::Bit(rng.random::<f64>() < theta[0]),
            FamilyKind::GaussianMean { noise } => {
                let eps = noise.draw(rng);
                Sample::Point(eps.iter().zip(theta).map(|(e, t)| e + t).collect())
            }
            FamilyKind::LogisticRegression { covariates, .. } => {
                let x = covariates.draw(rng);
                let score: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                let label = rng.random::<f64>() < sigmoid(score);
                Sample::Labeled { x, label }
            }
        }
    }

    /// Per-sample `-∇²_θ log P_θ(z)`.
    pub fn neg_hessian(&self, theta: &[f64], z: &Sample) -> Result<DMatrix<f64>> {
        let d = self.dim();
        match (&self.kind, z) {
            (FamilyKind::Bernoulli, Sample::Bit(b)) => {
                let t = theta[0];
                let v = if *b { 1.0 / (t * t) } else { 1.0 / ((1.0 - t) * (1.0 - t)) };
                Ok(DMatrix::from_element(1, 1, v))
            }
            (FamilyKind::GaussianMean { noise }, Sample::Point(_)) => Ok(noise.precision().clone()),
            (FamilyKind::LogisticRegression { .. }, Sample::Labeled { x, .. }) if x.len() == d => {
                let score: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                let s = sigmoid(score);
                let w = s * (1.0 - s);
                let xv = DVector::from_column_slice(x);
                Ok(&xv * xv.transpose() * w)
            }
            _ => Err(self.sample_mismatch(z)),
        }
    }

    /// `E_θ[-∇² log P_θ(Z)]`: closed form for Bernoulli and Gaussian, a
    /// seeded Monte-Carlo average of the per-sample Hessian for logistic
    /// regression.
    pub fn fisher_information(&self, theta: &ParamPoint) -> Result<DMatrix<f64>> {
        self.check(theta.coords())?;
        let theta = theta.coords();
        match &self.kind {
            FamilyKind::Bernoulli => {
                let t = theta[0];
                if t <= 0.0 || t >= 1.0 {
                    return Err(Error::InvalidValue(format!(
                        "Bernoulli Fisher information undefined at boundary θ = {t}"
                    )));
                }
                Ok(DMatrix::from_element(1, 1, 1.0 / (t * (1.0 - t))))
            }
            FamilyKind::GaussianMean { noise } => Ok(noise.precision().clone()),
            FamilyKind::LogisticRegression {
                covariates,
                fisher_draws,
                fisher_seed,
            } => {
                let d = covariates.dim();
                let mut rng = ChaCha8Rng::seed_from_u64(*fisher_seed);
                let mut acc = DMatrix::<f64>::zeros(d, d);
                for _ in 0..*fisher_draws {
                    let x = covariates.draw(&mut rng);
                    let score: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
                    let s = sigmoid(score);
                    let w = s * (1.0 - s);
                    for i in 0..d {
                        for j in i..d {
                            acc[(i, j)] += w * x[i] * x[j];
                        }
                    }
                }
                acc.fill_lower_triangle_with_upper_triangle();
                Ok(acc / (*fisher_draws).max(1) as f64)
            }
        }
    }
}

/// Block partition of source and target Fisher information over common and
/// task-specific coordinates, with the Schur complements of the common
/// blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherBlocks {
    pub common: usize,
    /// Source Fisher restricted to the common coordinates (`j x j`).
    pub common_source: DMatrix<f64>,
    /// Target Fisher restricted to the common coordinates (`j x j`).
    pub common_target: DMatrix<f64>,
    /// Source task-specific block (`(d-j) x (d-j)`).
    pub specific_source: DMatrix<f64>,
    /// Target task-specific block (`(d-j) x (d-j)`).
    pub specific_target: DMatrix<f64>,
    /// Source common/specific cross block (`j x (d-j)`).
    pub cross_source: DMatrix<f64>,
    /// Target common/specific cross block (`j x (d-j)`).
    pub cross_target: DMatrix<f64>,
    /// `common_source - cross_source * specific_source⁻¹ * cross_sourceᵀ`.
    pub delta_source: DMatrix<f64>,
    /// `common_target - cross_target * specific_target⁻¹ * cross_targetᵀ`.
    pub delta_target: DMatrix<f64>,
}

impl FisherBlocks {
    /// Partitions two full `d x d` Fisher matrices at `common`.
    pub fn from_matrices(source: &DMatrix<f64>, target: &DMatrix<f64>, common: usize) -> Result<Self> {
        let d = source.nrows();
        if target.nrows() != d || common > d {
            return Err(Error::Precondition(format!(
                "Fisher matrices of size {d} and {} cannot be split at {common}",
                target.nrows()
            )));
        }
        let r = d - common;
        let split = |m: &DMatrix<f64>| {
            (
                m.view((0, 0), (common, common)).into_owned(),
                m.view((common, common), (r, r)).into_owned(),
                m.view((0, common), (common, r)).into_owned(),
            )
        };
        let (cs, s, xs) = split(source);
        let (ct, t, xt) = split(target);
        let delta_source = schur(&cs, &s, &xs, "I_s")?;
        let delta_target = schur(&ct, &t, &xt, "I_t")?;
        Ok(Self {
            common,
            common_source: cs,
            common_target: ct,
            specific_source: s,
            specific_target: t,
            cross_source: xs,
            cross_target: xt,
            delta_source,
            delta_target,
        })
    }

    pub fn identity(dim: usize, common: usize) -> Self {
        let i = DMatrix::identity(dim, dim);
        Self::from_matrices(&i, &i, common).expect("identity blocks are regular")
    }

    /// `Delta_t * Delta_s⁻¹`.
    pub fn shared_ratio(&self) -> Result<DMatrix<f64>> {
        if self.common == 0 {
            return Ok(DMatrix::zeros(0, 0));
        }
        let inv = self
            .delta_source
            .clone()
            .try_inverse()
            .ok_or(Error::Singular { block: "Delta_s" })?;
        Ok(&self.delta_target * inv)
    }
}

fn schur(
    common: &DMatrix<f64>,
    specific: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    block: &'static str,
) -> Result<DMatrix<f64>> {
    if specific.nrows() == 0 {
        return Ok(common.clone());
    }
    if common.nrows() == 0 {
        // still reject a singular task-specific block
        Cholesky::new(specific.clone()).ok_or(Error::Singular { block })?;
        return Ok(common.clone());
    }
    let chol = Cholesky::new(specific.clone()).ok_or(Error::Singular { block })?;
    let solved = chol.solve(&cross.transpose());
    let delta = common - cross * solved;
    Ok((&delta + delta.transpose()) * 0.5)
}

/// Fisher blocks for a source/target pair sharing their
/// first `common` coordinates.
pub fn fisher_blocks(
    family_s: &FamilyModel,
    family_t: &FamilyModel,
    theta_s: &ParamPoint,
    theta_t: &ParamPoint,
    common: usize,
) -> Result<FisherBlocks> {
    let d = family_t.dim();
    if family_s.dim() != d || theta_s.dim() != d || theta_t.dim() != d || common > d {
        return Err(Error::Precondition(format!(
            "dimension mismatch or common count {common} > {d}"
        )));
    }
    if theta_s.coords()[..common] != theta_t.coords()[..common] {
        return Err(Error::Precondition(format!(
            "first {common} coordinates of {:?} and {:?} must be equal",
            theta_s.coords(),
            theta_t.coords()
        )));
    }
    let fs = family_s.fisher_information(theta_s)?;
    let ft = family_t.fisher_information(theta_t)?;
    FisherBlocks::from_matrices(&fs, &ft, common)
}
