//! Closed-form regret asymptotes and bounds.
//!
//! Every asymptote is reported at finite `n` (growth term included) so it can
//! be overlaid on Monte-Carlo regret curves.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::family::FisherBlocks;
use crate::math::ln_two_pi_e;

/// One named additive contribution to an asymptote.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub name: &'static str,
    pub value: f64,
}

/// Asymptotic regret value and its additive breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoteResult {
    pub value: f64,
    pub breakdown: Vec<Term>,
}

impl AsymptoteResult {
    fn from_terms(breakdown: Vec<Term>) -> Self {
        let value = breakdown.iter().map(|t| t.value).sum();
        Self { value, breakdown }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.breakdown.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

pub const GROWTH: &str = "growth";
pub const FISHER: &str = "fisher";
pub const PRIOR: &str = "prior";
pub const SHARED: &str = "shared";

/// `0.5·log(n/2πe) + 0.5·log I − log ω` for a one-dimensional parameter.
///
/// `prior_log_density_at_truth` is `log ω(θ*_t | θ*_s)`, or `log ω̂(θ*_t)`
/// for the target-only learner.
pub fn asymptote_scalar(fisher_t: f64, prior_log_density_at_truth: f64, n: u64) -> Result<AsymptoteResult> {
    if !(fisher_t > 0.0) || !fisher_t.is_finite() {
        return Err(Error::InvalidValue(format!("fisher information must be positive, got {fisher_t}")));
    }
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    Ok(AsymptoteResult::from_terms(vec![
        Term {
            name: GROWTH,
            value: 0.5 * ((n as f64).ln() - ln_two_pi_e()),
        },
        Term {
            name: FISHER,
            value: 0.5 * fisher_t.ln(),
        },
        Term {
            name: PRIOR,
            value: -prior_log_density_at_truth,
        },
    ]))
}

/// `log det` of a symmetric positive definite matrix; empty matrices give 0.
fn log_det_spd(m: &DMatrix<f64>, block: &'static str) -> Result<f64> {
    match m.nrows() {
        0 => return Ok(0.0),
        1 if m[(0, 0)] > 0.0 => return Ok(m[(0, 0)].ln()),
        _ => {}
    }
    let chol = m.clone().cholesky().ok_or(Error::Singular { block })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// `log det(I + ratio·A)` for a general square matrix with positive
/// determinant (`A` is a product of SPD matrices, so its eigenvalues are
/// real and nonnegative).
fn log_det_identity_plus(a: &DMatrix<f64>, ratio: f64, block: &'static str) -> Result<f64> {
    let k = a.nrows();
    if k == 0 {
        return Ok(0.0);
    }
    if k == 1 {
        let x = ratio * a[(0, 0)];
        if !(x > -1.0) {
            return Err(Error::Singular { block });
        }
        return Ok(x.ln_1p());
    }
    let m = DMatrix::identity(k, k) + a * ratio;
    let det = m.lu().determinant();
    if !(det > 0.0) {
        return Err(Error::Singular { block });
    }
    Ok(det.ln())
}

/// Shared-parameter cost `0.5·log det(I + (n/m)·Δ_t·Δ_s⁻¹)`; zero when
/// there are no common coordinates.
pub fn shared_cost(blocks: &FisherBlocks, n: u64, m: u64) -> Result<f64> {
    if blocks.common == 0 {
        return Ok(0.0);
    }
    if m == 0 {
        return Err(Error::Precondition("m must be at least 1 with shared parameters".into()));
    }
    let ratio = blocks.shared_ratio()?;
    Ok(0.5 * log_det_identity_plus(&ratio, n as f64 / m as f64, "I + (n/m) Delta_t Delta_s^-1")?)
}

/// Asymptote with `j` common coordinates:
/// `0.5·log det(I + (n/m)Δ_tΔ_s⁻¹) + 0.5·log det(n·I_t) + ((d−j)/2)·log(1/2πe) − log ω`.
pub fn asymptote_general(
    blocks: &FisherBlocks,
    prior_log_density_at_truth: f64,
    n: u64,
    m: u64,
    d: usize,
    j: usize,
) -> Result<AsymptoteResult> {
    if n == 0 {
        return Err(Error::Precondition("n must be at least 1".into()));
    }
    if j > d || blocks.common != j || blocks.specific_target.nrows() != d - j {
        return Err(Error::Precondition(format!(
            "fisher blocks with {} common and {} specific coordinates do not match d={d}, j={j}",
            blocks.common,
            blocks.specific_target.nrows()
        )));
    }
    let k = (d - j) as f64;
    let nf = n as f64;
    let fisher = log_det_spd(&blocks.specific_target, "I_t")?;
    Ok(AsymptoteResult::from_terms(vec![
        Term {
            name: SHARED,
            value: shared_cost(blocks, n, m)?,
        },
        Term {
            name: GROWTH,
            value: 0.5 * k * (nf.ln() - ln_two_pi_e()),
        },
        Term {
            name: FISHER,
            value: 0.5 * fisher,
        },
        Term {
            name: PRIOR,
            value: -prior_log_density_at_truth,
        },
    ]))
}

/// How the source sample size grows with `n` in a rate sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    /// `m = ⌈√n⌉`
    Sublinear,
    /// `m = n`
    Linear,
    /// `m = n²`
    Superlinear,
}

impl Growth {
    pub fn source_size(&self, n: u64) -> u64 {
        match self {
            Growth::Sublinear => {
                let mut r = (n as f64).sqrt().ceil() as u64;
                // guard against rounding in the float square root
                while r > 0 && (r - 1) * (r - 1) >= n {
                    r -= 1;
                }
                while r * r < n {
                    r += 1;
                }
                r
            }
            Growth::Linear => n,
            Growth::Superlinear => n.saturating_mul(n),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Growth::Sublinear => "sublinear",
            Growth::Linear => "linear",
            Growth::Superlinear => "superlinear",
        }
    }
}

/// Shared-parameter cost along one source-growth schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub n: u64,
    pub m: u64,
    pub cost: f64,
}

pub fn rate_regime_sweep(blocks: &FisherBlocks, growth: Growth, n_list: &[u64]) -> Result<Vec<RateRow>> {
    if blocks.common == 0 {
        return Err(Error::Precondition("rate sweep needs at least one common coordinate".into()));
    }
    n_list
        .iter()
        .map(|&n| {
            let m = growth.source_size(n);
            Ok(RateRow {
                n,
                m,
                cost: shared_cost(blocks, n, m)?,
            })
        })
        .collect()
}

/// Checks the qualitative behavior of a sweep: sublinear cost grows while
/// its offset from `0.5·j·log(n/m)` settles, linear is constant, superlinear
/// decreases toward zero.
pub fn verify_regime(rows: &[RateRow], growth: Growth, j: usize, tolerance: f64) -> bool {
    if rows.len() < 2 {
        return false;
    }
    match growth {
        Growth::Sublinear => {
            let offsets: Vec<f64> = rows
                .iter()
                .map(|r| r.cost - 0.5 * j as f64 * (r.n as f64 / r.m as f64).ln())
                .collect();
            let steps: Vec<f64> = offsets.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
            rows.windows(2).all(|w| w[1].cost >= w[0].cost - tolerance)
                && rows.last().unwrap().cost > rows[0].cost
                && offsets.iter().all(|o| o.is_finite())
                && steps.windows(2).all(|w| w[1] <= w[0] + tolerance)
        }
        Growth::Linear => rows.iter().all(|r| (r.cost - rows[0].cost).abs() <= tolerance),
        Growth::Superlinear => {
            rows.windows(2).all(|w| w[1].cost <= w[0].cost + tolerance)
                && rows.last().unwrap().cost < rows[0].cost
                && rows.iter().all(|r| r.cost >= 0.0)
        }
    }
}

/// `M·√(2·n·cmi)` for losses bounded by `M`.
pub fn general_loss_bound(bound: f64, n: u64, cmi: f64) -> Result<f64> {
    if !(bound > 0.0) {
        return Err(Error::InvalidValue(format!("loss bound must be positive, got {bound}")));
    }
    if cmi < 0.0 || cmi.is_nan() {
        return Err(Error::InvalidValue(format!("mutual information must be nonnegative, got {cmi}")));
    }
    Ok(bound * (2.0 * n as f64 * cmi).sqrt())
}

/// Fisher blocks for one segment of a time-variant target. Any field may be
/// left out; a block the formula needs but which is missing is an error.
#[derive(Debug, Clone, Default)]
pub struct SegmentBlocks {
    /// Schur complement over coordinates shared with the source, target side.
    pub delta_ct: Option<DMatrix<f64>>,
    /// Same coordinates, source side.
    pub delta_cst: Option<DMatrix<f64>>,
    /// Schur complement over coordinates shared with the previous segment.
    pub delta_t: Option<DMatrix<f64>>,
    /// Same coordinates, previous-segment side.
    pub delta_t_prev: Option<DMatrix<f64>>,
    /// Fisher information over the segment's free coordinates.
    pub fisher_t: Option<DMatrix<f64>>,
}

/// Per-segment sizes for the time-variant bound.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentShape {
    pub n: u64,
    /// Coordinates shared with the previous segment's target.
    pub common_with_previous: usize,
}

fn require<'a>(block: &'a Option<DMatrix<f64>>, name: &str, segment: usize) -> Result<&'a DMatrix<f64>> {
    block
        .as_ref()
        .ok_or_else(|| Error::Unsupported(format!("segment {} is missing block {name}", segment + 1)))
}

fn ratio_logdet(num: &DMatrix<f64>, den: &DMatrix<f64>, scale: f64, block: &'static str) -> Result<f64> {
    if num.nrows() != den.nrows() || num.nrows() != num.ncols() || den.nrows() != den.ncols() {
        return Err(Error::Precondition(format!("block shapes disagree for {block}")));
    }
    if num.nrows() == 0 {
        return Ok(0.0);
    }
    let inv = den.clone().try_inverse().ok_or(Error::Singular { block })?;
    log_det_identity_plus(&(num * inv), scale, block)
}

/// Regret bound for a target whose parameter changes across segments:
///
/// `M·√( k·Σ_l n_l·[ log det(I + n_l/(m+n_{l−1})·Δ_ct Δ_cst⁻¹)
///   + log det(I + (n_l/n_{l−1})·Δ_t Δ_{t−1}⁻¹) + log det(n_l·I_{t,l})
///   + (d−j−c_l)·log(1/2πe) + 2·(−log ω_l) ] )`
///
/// The previous-segment term is absent for the first segment. With `j = 0`
/// the source term is absent.
pub fn time_variant_bound(
    segment_blocks: &[SegmentBlocks],
    shapes: &[SegmentShape],
    prior_log_densities: &[f64],
    bound: f64,
    m: u64,
    d: usize,
    j: usize,
) -> Result<f64> {
    let k = shapes.len();
    if k == 0 || segment_blocks.len() != k || prior_log_densities.len() != k {
        return Err(Error::Unsupported(format!(
            "time-variant bound needs one block set and prior density per segment ({} segments, {} block sets, {} densities)",
            k,
            segment_blocks.len(),
            prior_log_densities.len()
        )));
    }
    if !(bound > 0.0) {
        return Err(Error::InvalidValue(format!("loss bound must be positive, got {bound}")));
    }
    let mut sum = 0.0;
    let mut prev_n = 0u64;
    for (l, ((blocks, shape), log_prior)) in segment_blocks.iter().zip(shapes).zip(prior_log_densities).enumerate() {
        if shape.n == 0 {
            return Err(Error::Precondition(format!("segment {} has no samples", l + 1)));
        }
        if j + shape.common_with_previous > d {
            return Err(Error::Precondition(format!("segment {} shares more than d coordinates", l + 1)));
        }
        let nl = shape.n as f64;
        let mut inner = 0.0;
        if j > 0 {
            let num = require(&blocks.delta_ct, "Delta_ct", l)?;
            let den = require(&blocks.delta_cst, "Delta_cst", l)?;
            inner += ratio_logdet(num, den, nl / (m as f64 + prev_n as f64), "Delta_cst")?;
        }
        if l > 0 && shape.common_with_previous > 0 {
            let num = require(&blocks.delta_t, "Delta_t", l)?;
            let den = require(&blocks.delta_t_prev, "Delta_t-1", l)?;
            inner += ratio_logdet(num, den, nl / prev_n as f64, "Delta_t-1")?;
        }
        let free = d - j - if l > 0 { shape.common_with_previous } else { 0 };
        if free > 0 {
            let fisher = require(&blocks.fisher_t, "I_t", l)?;
            if fisher.nrows() != free {
                return Err(Error::Precondition(format!(
                    "segment {} fisher block is {}x{}, expected {free}x{free}",
                    l + 1,
                    fisher.nrows(),
                    fisher.ncols()
                )));
            }
            inner += free as f64 * nl.ln() + log_det_spd(fisher, "I_t")?;
            inner -= free as f64 * ln_two_pi_e();
        }
        inner += 2.0 * (-log_prior);
        sum += nl * inner;
        prev_n = shape.n;
    }
    let radicand = k as f64 * sum;
    if radicand < 0.0 {
        return Err(Error::InvalidValue(format!(
            "time-variant bound radicand is negative ({radicand}); sample sizes are too small for the asymptotic expression"
        )));
    }
    Ok(bound * radicand.sqrt())
}
