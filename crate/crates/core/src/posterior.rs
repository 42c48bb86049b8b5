//! Midpoint-rule grid quadrature for the mixture strategy.
//!
//! The source posterior `Q(θ_s | D_s)` is computed once, then collapsed into
//! an induced target prior `π(θ_t) = ∫ ω(θ_t | θ_s) Q(θ_s | D_s) dθ_s`.
//! Target likelihoods never involve θ_s, so every later predictive density,
//! posterior update and evidence evaluation works on the target grid only.
//! All accumulation happens in log space.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::family::{FamilyKind, FamilyModel, ParamBox, Sample};
use crate::math::{log_sum_exp, log_sum_exp_pair, xlogy};
use crate::prior::{Conditional, PriorSpec, WINDOW_TOLERANCE};

pub const DEFAULT_RESOLUTION_1D: usize = 201;
pub const DEFAULT_RESOLUTION_2D: usize = 61;
pub const DEFAULT_RESOLUTION_3D: usize = 31;

pub fn default_resolution(dim: usize) -> usize {
    match dim {
        1 => DEFAULT_RESOLUTION_1D,
        2 => DEFAULT_RESOLUTION_2D,
        _ => DEFAULT_RESOLUTION_3D,
    }
}

/// Row-major cartesian product (last axis fastest), flattened.
pub(crate) fn cartesian(axes: &[Vec<f64>]) -> Vec<f64> {
    let d = axes.len();
    let count: usize = axes.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(count * d);
    let mut idx = vec![0usize; d];
    for _ in 0..count {
        out.extend(idx.iter().enumerate().map(|(a, &i)| axes[a][i]));
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < axes[a].len() {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}

/// Tensor grid of quadrature nodes with per-axis cell widths.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    axes: Vec<Vec<f64>>,
    widths: Vec<f64>,
    nodes: Vec<f64>,
}

impl GridSpec {
    /// Midpoint nodes: `resolution` cells per axis spanning the box.
    pub fn regular(bounds: &ParamBox, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Precondition("grid resolution must be positive".into()));
        }
        if bounds.dim() > 3 {
            return Err(Error::Unsupported(format!(
                "grid quadrature supports d <= 3, got {}",
                bounds.dim()
            )));
        }
        let mut axes = Vec::with_capacity(bounds.dim());
        let mut widths = Vec::with_capacity(bounds.dim());
        for i in 0..bounds.dim() {
            let h = bounds.width(i) / resolution as f64;
            let lo = bounds.lower()[i];
            axes.push((0..resolution).map(|k| lo + (k as f64 + 0.5) * h).collect());
            widths.push(h);
        }
        Ok(Self::build(axes, widths))
    }

    /// Arbitrary sorted axes with explicit cell widths; a single node per
    /// axis collapses the grid to a point mass.
    pub fn from_axes(axes: Vec<Vec<f64>>, widths: Vec<f64>) -> Result<Self> {
        if axes.len() != widths.len() || axes.iter().any(Vec::is_empty) {
            return Err(Error::Precondition("each axis needs nodes and a cell width".into()));
        }
        if widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Precondition("cell widths must be positive".into()));
        }
        if axes.iter().any(|a| a.windows(2).any(|w| w[0] >= w[1])) {
            return Err(Error::Precondition("axis nodes must be strictly increasing".into()));
        }
        Ok(Self::build(axes, widths))
    }

    /// One node at `point` with unit cell volume.
    pub fn point(point: &[f64]) -> Self {
        Self::build(point.iter().map(|p| vec![*p]).collect(), vec![1.0; point.len()])
    }

    fn build(axes: Vec<Vec<f64>>, widths: Vec<f64>) -> Self {
        let nodes = cartesian(&axes);
        Self { axes, widths, nodes }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len() / self.dim().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Flattened node coordinates, `len() * dim()` values.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, index: usize) -> &[f64] {
        let d = self.dim();
        &self.nodes[index * d..(index + 1) * d]
    }

    pub fn log_cell_volume(&self) -> f64 {
        self.widths.iter().map(|w| w.ln()).sum()
    }
}

/// Normalized log density over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    grid: Arc<GridSpec>,
    log_weights: Vec<f64>,
    log_norm: f64,
}

impl GridPosterior {
    /// Normalizes `log_weights` so that the quadrature mass is one.
    pub fn from_log_weights(grid: Arc<GridSpec>, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != grid.len() {
            return Err(Error::Precondition(format!(
                "{} weights for {} grid nodes",
                log_weights.len(),
                grid.len()
            )));
        }
        let mut p = Self {
            grid,
            log_weights,
            log_norm: 0.0,
        };
        p.normalize()?;
        Ok(p)
    }

    /// Uniform density over the grid.
    pub fn uniform(grid: Arc<GridSpec>) -> Self {
        let n = grid.len();
        Self::from_log_weights(grid, vec![0.0; n]).expect("uniform weights are finite")
    }

    /// Rescales to unit mass; `log_norm` records the log mass removed.
    pub fn normalize(&mut self) -> Result<()> {
        if self.log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::InvalidValue("posterior log weight is NaN or +inf".into()));
        }
        let log_mass = log_sum_exp(&self.log_weights) + self.grid.log_cell_volume();
        if log_mass == f64::NEG_INFINITY {
            return Err(degenerate());
        }
        for w in &mut self.log_weights {
            *w -= log_mass;
        }
        self.log_norm = log_mass;
        Ok(())
    }

    /// In-place Bayes update with one sample; returns the log predictive
    /// density of `z` before the update.
    pub fn observe(&mut self, family: &FamilyModel, z: &Sample) -> Result<f64> {
        check_family_grid(family, &self.grid)?;
        family.accumulate_log_likelihood(self.grid.nodes(), z, &mut self.log_weights)?;
        self.normalize()?;
        Ok(self.log_norm)
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    /// Log density at each node.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Log mass of the weights before the last normalization. After
    /// [`update_target`] this is the one-step log predictive density.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Quadrature mass (one after normalization).
    pub fn mass(&self) -> f64 {
        (log_sum_exp(&self.log_weights) + self.grid.log_cell_volume()).exp()
    }

    fn node_probabilities(&self) -> impl Iterator<Item = f64> + '_ {
        let lv = self.grid.log_cell_volume();
        self.log_weights.iter().map(move |w| (w + lv).exp())
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let mut m = vec![0.0; d];
        for (p, x) in self.node_probabilities().zip(self.grid.nodes().chunks_exact(d)) {
            for i in 0..d {
                m[i] += p * x[i];
            }
        }
        m
    }

    /// Posterior covariance, row-major `d x d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let mean = self.mean();
        let mut c = vec![0.0; d * d];
        for (p, x) in self.node_probabilities().zip(self.grid.nodes().chunks_exact(d)) {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += p * (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        c
    }

    pub fn covariance_trace(&self) -> f64 {
        let d = self.grid.dim();
        let c = self.covariance();
        (0..d).map(|i| c[i * d + i]).sum()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.log_weights.iter().enumerate() {
            if *w > self.log_weights[best] {
                best = i;
            }
        }
        best
    }
}

fn degenerate() -> Error {
    Error::DegeneratePosterior {
        scenario: String::new(),
        seed: None,
        trial: None,
    }
}

fn check_family_grid(family: &FamilyModel, grid: &GridSpec) -> Result<()> {
    if family.dim() != grid.dim() {
        return Err(Error::Precondition(format!(
            "family dimension {} does not match grid dimension {}",
            family.dim(),
            grid.dim()
        )));
    }
    Ok(())
}

/// Sum of `log P_θ(z)` over `data` at every grid node.
pub fn grid_log_likelihood(family: &FamilyModel, grid: &GridSpec, data: &[Sample]) -> Result<Vec<f64>> {
    check_family_grid(family, grid)?;
    let mut out = vec![0.0; grid.len()];
    if let FamilyKind::Bernoulli = family.kind() {
        // sufficient statistic: number of ones
        let mut ones = 0usize;
        for z in data {
            match z {
                Sample::Bit(b) => ones += *b as usize,
                other => {
                    return Err(Error::Precondition(format!(
                        "sample {other:?} does not belong to the bernoulli family"
                    )))
                }
            }
        }
        let k = ones as f64;
        let rest = (data.len() - ones) as f64;
        for (o, t) in out.iter_mut().zip(grid.nodes()) {
            *o = xlogy(k, *t) + xlogy(rest, 1.0 - t);
        }
        return Ok(out);
    }
    for z in data {
        family.accumulate_log_likelihood(grid.nodes(), z, &mut out)?;
    }
    Ok(out)
}

/// Source posterior on `source_grid` and the induced target prior on
/// `target_grid`.
///
/// With shared coordinates the first `prior.shared()` axes of both grids
/// must coincide: the conditional is a point mass on those coordinates.
pub fn condition_on_source(
    prior: &PriorSpec,
    family_s: &FamilyModel,
    source_data: &[Sample],
    source_grid: &Arc<GridSpec>,
    target_grid: &Arc<GridSpec>,
) -> Result<(GridPosterior, GridPosterior)> {
    check_family_grid(family_s, source_grid)?;
    if prior.dim() != source_grid.dim() || prior.dim() != target_grid.dim() {
        return Err(Error::Precondition("prior, source grid and target grid dimensions differ".into()));
    }
    let shared = prior.shared();

    let mut log_w = grid_log_likelihood(family_s, source_grid, source_data)?;
    for (w, x) in log_w.iter_mut().zip(source_grid.nodes().chunks_exact(source_grid.dim())) {
        *w += prior.marginal_log_density_at(x);
    }
    let source = GridPosterior::from_log_weights(source_grid.clone(), log_w)?;
    let induced = induced_prior(prior.conditional(), prior.support(), shared, &source, target_grid)?;
    Ok((source, induced))
}

/// `π(θ_t) = ∫ ω(θ_t | θ) Q(θ) dθ` on `target_grid` for a mixing density
/// `mixing` (source posterior, or the previous segment's target posterior).
///
/// Every conditional kind factorizes over the task-specific axes and is a
/// point mass on the shared ones, so the integral is computed one axis at a
/// time: `O(G·r)` for `r` nodes per axis, with no truncation of the mixing
/// density.
pub fn induced_prior(
    conditional: Conditional,
    support: &ParamBox,
    shared: usize,
    mixing: &GridPosterior,
    target_grid: &Arc<GridSpec>,
) -> Result<GridPosterior> {
    let d = target_grid.dim();
    if mixing.grid.dim() != d || support.dim() != d || shared > d {
        return Err(Error::Precondition("mixing grid, target grid and support dimensions differ".into()));
    }
    if mixing.grid.axes()[..shared] != target_grid.axes()[..shared] {
        return Err(Error::Precondition(
            "source and target grids must coincide on shared axes".into(),
        ));
    }
    let mut shape: Vec<usize> = mixing.grid.axes().iter().map(Vec::len).collect();
    let mut cur = mixing.log_weights.clone();
    let mut column = Vec::new();
    for axis in shared..d {
        let src_axis = &mixing.grid.axes()[axis];
        let tgt_axis = &target_grid.axes()[axis];
        let log_h = mixing.grid.widths[axis].ln();
        let (lo, hi) = (support.lower()[axis], support.upper()[axis]);
        let kernel: Vec<f64> = tgt_axis
            .iter()
            .flat_map(|&t| src_axis.iter().map(move |&s| axis_log_kernel(conditional, t, s, lo, hi) + log_h))
            .collect();

        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let (ns, nt) = (src_axis.len(), tgt_axis.len());
        let mut next = vec![f64::NEG_INFINITY; outer * nt * inner];
        column.resize(ns, 0.0);
        for o in 0..outer {
            for r in 0..inner {
                for (k, c) in column.iter_mut().enumerate() {
                    *c = cur[(o * ns + k) * inner + r];
                }
                for ti in 0..nt {
                    next[(o * nt + ti) * inner + r] = log_sum_exp_pair(&column, &kernel[ti * ns..(ti + 1) * ns]);
                }
            }
        }
        cur = next;
        shape[axis] = nt;
    }
    GridPosterior::from_log_weights(target_grid.clone(), cur)
}

/// One-axis factor of the conditional density at target coordinate `t`
/// given source coordinate `s`, on a support axis `[lo, hi]`.
fn axis_log_kernel(conditional: Conditional, t: f64, s: f64, lo: f64, hi: f64) -> f64 {
    match conditional {
        Conditional::GaussianAround { c } => {
            let z = (t - s) / c;
            -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI * c * c).ln()
        }
        Conditional::HardWindow { delta } => {
            if (t - s).abs() > delta + WINDOW_TOLERANCE || t < lo || t > hi {
                return f64::NEG_INFINITY;
            }
            let width = (s + delta).min(hi) - (s - delta).max(lo);
            if width <= 0.0 {
                f64::NEG_INFINITY
            } else {
                -width.ln()
            }
        }
        Conditional::IndependentUniform => -(hi - lo).ln(),
    }
}

/// Bayes update with one target sample; the input is left untouched.
pub fn update_target(posterior: &GridPosterior, family_t: &FamilyModel, z: &Sample) -> Result<GridPosterior> {
    check_family_grid(family_t, &posterior.grid)?;
    let mut log_w = posterior.log_weights.clone();
    family_t.accumulate_log_likelihood(posterior.grid.nodes(), z, &mut log_w)?;
    let mut next = GridPosterior {
        grid: posterior.grid.clone(),
        log_weights: log_w,
        log_norm: 0.0,
    };
    next.normalize()?;
    Ok(next)
}

/// `log ∫ P_θ(z) dQ(θ)` for a normalized posterior.
pub fn predictive_log_density(posterior: &GridPosterior, family_t: &FamilyModel, z: &Sample) -> Result<f64> {
    check_family_grid(family_t, &posterior.grid)?;
    let mut lik = vec![0.0; posterior.grid.len()];
    family_t.accumulate_log_likelihood(posterior.grid.nodes(), z, &mut lik)?;
    Ok(log_sum_exp_pair(&posterior.log_weights, &lik) + posterior.grid.log_cell_volume())
}

/// Posterior-predictive probability of label 1 at covariate `x`.
pub fn predictive_label_probability(posterior: &GridPosterior, family_t: &FamilyModel, x: &[f64]) -> Result<f64> {
    let z = Sample::Labeled {
        x: x.to_vec(),
        label: true,
    };
    Ok(predictive_log_density(posterior, family_t, &z)?.exp())
}

/// Batch `log Q(D_t | D_s)`: one pass over the target data, no sequential
/// renormalization.
pub fn log_evidence(
    prior: &PriorSpec,
    family_s: &FamilyModel,
    family_t: &FamilyModel,
    source_data: &[Sample],
    target_data: &[Sample],
    source_grid: &Arc<GridSpec>,
    target_grid: &Arc<GridSpec>,
) -> Result<f64> {
    if target_data.is_empty() {
        return Ok(0.0);
    }
    let (_, induced) = condition_on_source(prior, family_s, source_data, source_grid, target_grid)?;
    let lik = grid_log_likelihood(family_t, target_grid, target_data)?;
    Ok(log_sum_exp_pair(induced.log_weights(), &lik) + target_grid.log_cell_volume())
}

/// Log evidence `log Q(D_t^k | ·)` for every prefix `k = 1..=n` under a
/// fixed starting density, using running per-node log-likelihood sums.
pub fn prefix_log_evidence(start: &GridPosterior, family_t: &FamilyModel, target_data: &[Sample]) -> Result<Vec<f64>> {
    check_family_grid(family_t, &start.grid)?;
    let lv = start.grid.log_cell_volume();
    let mut running = vec![0.0; start.grid.len()];
    let mut out = Vec::with_capacity(target_data.len());
    for z in target_data {
        family_t.accumulate_log_likelihood(start.grid.nodes(), z, &mut running)?;
        out.push(log_sum_exp_pair(&start.log_weights, &running) + lv);
    }
    Ok(out)
}

/// Tag attached to exported posterior grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotTag {
    SourcePosterior,
    TargetPosteriorWithSource,
    TargetPosteriorNoSource,
}

impl SnapshotTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SnapshotTag::SourcePosterior => "source_posterior",
            SnapshotTag::TargetPosteriorWithSource => "target_posterior_with_source",
            SnapshotTag::TargetPosteriorNoSource => "target_posterior_no_source",
        }
    }
}

/// Writes `theta_1,…,theta_d,density,tag` rows for each posterior.
pub fn write_snapshot<W: Write>(out: W, posteriors: &[(SnapshotTag, &GridPosterior)]) -> Result<()> {
    let d = posteriors.first().map(|(_, p)| p.grid.dim()).unwrap_or(0);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header: Vec<String> = (1..=d).map(|i| format!("theta_{i}")).collect();
    header.push("density".into());
    header.push("tag".into());
    w.write_record(&header)?;
    for (tag, post) in posteriors {
        for (i, lw) in post.log_weights.iter().enumerate() {
            let mut row: Vec<String> = post.grid.node(i).iter().map(|v| crate::experiments::format_sig(*v)).collect();
            row.push(crate::experiments::format_sig(lw.exp()));
            row.push(tag.as_str().into());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::ParamPoint;
    use crate::math::sigmoid;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bern_unit() -> FamilyModel {
        FamilyModel::bernoulli().with_box(ParamBox::unit(1)).unwrap()
    }

    fn unit_grid(res: usize) -> Arc<GridSpec> {
        Arc::new(GridSpec::regular(&ParamBox::unit(1), res).unwrap())
    }

    fn beta_moments(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (a / s, a * b / (s * s * (s + 1.0)))
    }

    #[test]
    fn empty_source_gives_uniform_prior_and_target() {
        let fam = bern_unit();
        let grid = unit_grid(201);
        let prior = PriorSpec::source_free(ParamBox::unit(1));
        let (src, tgt) = condition_on_source(&prior, &fam, &[], &grid, &grid).unwrap();
        for p in [&src, &tgt] {
            assert!(p.log_weights().iter().all(|w| w.abs() < 1e-12));
            assert!((p.mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_source_one_matches_beta_2_1() {
        let fam = bern_unit();
        let grid = unit_grid(201);
        let prior = PriorSpec::source_free(ParamBox::unit(1));
        let (src, _) = condition_on_source(&prior, &fam, &[Sample::Bit(true)], &grid, &grid).unwrap();
        assert!((src.mean()[0] - 2.0 / 3.0).abs() < 1e-3);
        for (i, w) in src.log_weights().iter().enumerate() {
            let t = grid.node(i)[0];
            assert!((w.exp() - 2.0 * t).abs() < 1e-3);
        }
    }

    #[test]
    fn update_with_one_gives_density_two_theta() {
        let fam = bern_unit();
        let post = GridPosterior::uniform(unit_grid(201));
        let next = update_target(&post, &fam, &Sample::Bit(true)).unwrap();
        for (i, w) in next.log_weights().iter().enumerate() {
            assert!((w.exp() - 2.0 * next.grid().node(i)[0]).abs() < 1e-3);
        }
        // predictive of the prior is the log normalizer of the update
        assert!((next.log_norm() - 0.5f64.ln()).abs() < 1e-4);
        // input untouched
        assert!(post.log_weights().iter().all(|w| w.abs() < 1e-12));
    }

    #[test]
    fn update_order_does_not_matter() {
        let fam = bern_unit();
        let post = GridPosterior::uniform(unit_grid(101));
        let a = update_target(&update_target(&post, &fam, &Sample::Bit(true)).unwrap(), &fam, &Sample::Bit(false)).unwrap();
        let b = update_target(&update_target(&post, &fam, &Sample::Bit(false)).unwrap(), &fam, &Sample::Bit(true)).unwrap();
        for (x, y) in a.log_weights().iter().zip(b.log_weights()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn point_mass_is_not_moved() {
        let fam = bern_unit();
        let grid = unit_grid(101);
        let mut w = vec![-1e4; grid.len()];
        w[70] = 0.0;
        let post = GridPosterior::from_log_weights(grid, w).unwrap();
        let mut cur = post.clone();
        for z in [true, false, false, false, false] {
            cur = update_target(&cur, &fam, &Sample::Bit(z)).unwrap();
            assert_eq!(cur.argmax(), 70);
        }
    }

    #[test]
    fn predictive_reference_values() {
        let fam = bern_unit();
        let post = GridPosterior::uniform(unit_grid(201));
        let v = predictive_log_density(&post, &fam, &Sample::Bit(true)).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-9);
        let beta21 = update_target(&post, &fam, &Sample::Bit(true)).unwrap();
        let v = predictive_log_density(&beta21, &fam, &Sample::Bit(true)).unwrap();
        assert!((v - (2.0f64 / 3.0).ln()).abs() < 1e-4);
    }

    #[test]
    fn concentrated_logistic_predictive_matches_oracle() {
        let fam = FamilyModel::logistic_reference();
        let truth = [0.3, 0.5];
        let grid = Arc::new(GridSpec::point(&truth));
        let post = GridPosterior::uniform(grid);
        let x = vec![4.2, -5.5];
        let v = predictive_log_density(&post, &fam, &Sample::Labeled { x: x.clone(), label: true }).unwrap();
        let oracle = sigmoid(0.3 * x[0] + 0.5 * x[1]).ln();
        assert!((v - oracle).abs() < 1e-3);
    }

    #[test]
    fn evidence_examples() {
        let fam = bern_unit();
        let grid = unit_grid(201);
        let prior = PriorSpec::source_free(ParamBox::unit(1));
        assert_eq!(log_evidence(&prior, &fam, &fam, &[], &[], &grid, &grid).unwrap(), 0.0);
        let v = log_evidence(&prior, &fam, &fam, &[], &[Sample::Bit(true), Sample::Bit(false)], &grid, &grid).unwrap();
        assert!((v - (1.0f64 / 6.0).ln()).abs() < 1e-4, "{v}");
    }

    #[test]
    fn degenerate_prior_is_reported() {
        let fam = bern_unit();
        let grid = Arc::new(GridSpec::point(&[1.0]));
        let prior = PriorSpec::source_free(ParamBox::unit(1));
        let err = condition_on_source(&prior, &fam, &[Sample::Bit(false)], &grid, &grid).unwrap_err();
        assert!(matches!(err, Error::DegeneratePosterior { .. }));
    }

    #[test]
    fn shared_axes_must_coincide() {
        let fam = FamilyModel::gaussian_mean(nalgebra::DMatrix::identity(2, 2)).unwrap();
        let prior = PriorSpec::uniform(Conditional::GaussianAround { c: 0.2 }, ParamBox::unit(2))
            .unwrap()
            .with_shared(1)
            .unwrap();
        let a = Arc::new(GridSpec::regular(&ParamBox::unit(2), 11).unwrap());
        let b = Arc::new(GridSpec::regular(&ParamBox::unit(2), 13).unwrap());
        assert!(condition_on_source(&prior, &fam, &[], &a, &b).is_err());
        assert!(condition_on_source(&prior, &fam, &[], &a, &a).is_ok());
    }

    #[test]
    fn separable_mixture_matches_brute_force() {
        // brute-force O(G^2) mixture over the full conditional density
        let fam = FamilyModel::logistic_reference();
        let support = ParamBox::unit(2);
        let res = 15;
        let grid = Arc::new(GridSpec::regular(&support, res).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = fam.sample(&ParamPoint::new(vec![0.2, 0.4]), &mut rng, 300).unwrap();
        let conditionals = [
            Conditional::GaussianAround { c: 0.1 },
            Conditional::HardWindow { delta: 0.15 },
            Conditional::IndependentUniform,
        ];
        for cond in conditionals {
            for shared in 0..=2 {
                let prior = PriorSpec::uniform(cond, support.clone()).unwrap().with_shared(shared).unwrap();
                let (src, induced) = condition_on_source(&prior, &fam, &data, &grid, &grid).unwrap();
                let log_h_specific = (2 - shared) as f64 * (1.0 / res as f64).ln();
                let brute: Vec<f64> = (0..grid.len())
                    .map(|t| {
                        let terms: Vec<f64> = (0..grid.len())
                            .map(|s| {
                                src.log_weights()[s]
                                    + log_h_specific
                                    + prior.conditional_log_density_at(grid.node(t), grid.node(s))
                            })
                            .collect();
                        log_sum_exp(&terms)
                    })
                    .collect();
                let brute = GridPosterior::from_log_weights(grid.clone(), brute).unwrap();
                for (a, b) in induced.log_weights().iter().zip(brute.log_weights()) {
                    assert!((a - b).abs() < 1e-10 || (*a == f64::NEG_INFINITY && *b == f64::NEG_INFINITY), "{cond:?} j={shared}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn snapshot_rows_and_header() {
        let grid = Arc::new(GridSpec::regular(&ParamBox::unit(2), 2).unwrap());
        let post = GridPosterior::uniform(grid);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &[(SnapshotTag::SourcePosterior, &post)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "theta_1,theta_2,density,tag");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "0.25,0.25,1,source_posterior");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn grid_posterior_matches_beta_moments(bits in proptest::collection::vec(any::<bool>(), 0..60)) {
            let fam = bern_unit();
            let grid = unit_grid(201);
            let mut post = GridPosterior::uniform(grid);
            for b in &bits {
                post = update_target(&post, &fam, &Sample::Bit(*b)).unwrap();
            }
            let ones = bits.iter().filter(|b| **b).count() as f64;
            let (m, v) = beta_moments(1.0 + ones, 1.0 + bits.len() as f64 - ones);
            prop_assert!((post.mean()[0] - m).abs() < 1e-3);
            prop_assert!((post.covariance()[0] - v).abs() < 1e-3);
            prop_assert!((post.mass() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn label_predictive_sums_to_one(x1 in -10.0..10.0f64, x2 in -10.0..10.0f64, seed in 0u64..1000) {
            let fam = FamilyModel::logistic_reference();
            let grid = Arc::new(GridSpec::regular(&ParamBox::unit(2), 9).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..grid.len()).map(|_| rand::Rng::random::<f64>(&mut rng) * 10.0 - 5.0).collect();
            let post = GridPosterior::from_log_weights(grid, w).unwrap();
            let p1 = predictive_log_density(&post, &fam, &Sample::Labeled { x: vec![x1, x2], label: true }).unwrap().exp();
            let p0 = predictive_log_density(&post, &fam, &Sample::Labeled { x: vec![x1, x2], label: false }).unwrap().exp();
            prop_assert!((p0 + p1 - 1.0).abs() < 1e-10);
        }
    }
}
