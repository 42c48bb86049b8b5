//! Sequential prediction: per-step mixture predictors, oracle comparison,
//! regret accumulation and the Monte-Carlo mutual-information estimator.
//!
//! Each trial owns private random streams. The stream for trial `i` and
//! purpose `p` is ChaCha20 seeded with the master seed, on stream number
//! `(i << 2) | p`. Source and target data use different purposes, so both
//! arms of an experiment see identical target data.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::{data_checksum, ParamPoint, Sample};
use crate::math::mean_stderr;
use crate::posterior::{condition_on_source, induced_prior, prefix_log_evidence, GridPosterior};
use crate::prior::Conditional;
use crate::scenario::{LossKind, ScenarioConfig};

const PURPOSE_SOURCE: u64 = 0;
const PURPOSE_TARGET: u64 = 1;

/// Random streams of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialStreams {
    pub master_seed: u64,
    pub trial: u64,
}

impl TrialStreams {
    pub fn new(master_seed: u64, trial: u64) -> Self {
        Self { master_seed, trial }
    }

    fn stream(&self, purpose: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master_seed);
        rng.set_stream((self.trial << 2) | purpose);
        rng
    }
}

/// Which learner a trial simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    /// Mixture strategy with the joint prior, conditioned on source data.
    WithSource,
    /// Source-free prior, no source data.
    TargetOnly,
}

/// Cumulative regret of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    /// Cumulative regret after steps `1..=n`.
    pub per_step: Vec<f64>,
    pub loss_kind: LossKind,
    pub trial_seed: u64,
    pub trial: u64,
    /// Checksum of the target samples the trial consumed.
    pub target_checksum: u64,
    /// Index of the first step of each segment (just `[0]` without segments).
    pub segment_starts: Vec<usize>,
}

impl RegretTrace {
    pub fn last(&self) -> f64 {
        self.per_step.last().copied().unwrap_or(0.0)
    }

    /// Regret accumulated inside segment `l`.
    pub fn segment_regret(&self, l: usize) -> f64 {
        let start = self.segment_starts[l];
        let end = self.segment_starts.get(l + 1).copied().unwrap_or(self.per_step.len());
        let before = if start == 0 { 0.0 } else { self.per_step[start - 1] };
        self.per_step[end - 1] - before
    }
}

/// One stationary stretch of a time-variant target.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub theta: ParamPoint,
    pub n: usize,
}

/// How the prior of segment `l` is built from segment `l-1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentLink {
    /// Mixture of the conditional under the previous segment's posterior.
    Chained(Conditional),
    /// Every segment restarts from the source-induced prior.
    Restart,
}

/// Segment parameters and overlap pattern of a time-variant target.
///
/// The first `common_with_source` coordinates are shared with the source in
/// every segment; the next `common_with_previous[l]` coordinates of segment
/// `l` equal those of segment `l-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSchedule {
    segments: Vec<Segment>,
    common_with_source: usize,
    common_with_previous: Vec<usize>,
    link: SegmentLink,
}

impl SegmentSchedule {
    pub fn new(
        segments: Vec<Segment>,
        common_with_source: usize,
        mut common_with_previous: Vec<usize>,
        link: SegmentLink,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Precondition("a schedule needs at least one segment".into()));
        }
        if common_with_previous.len() != segments.len() {
            return Err(Error::Precondition("one previous-overlap count per segment is required".into()));
        }
        common_with_previous[0] = 0;
        let d = segments[0].theta.dim();
        for (l, seg) in segments.iter().enumerate() {
            if seg.n == 0 {
                return Err(Error::Precondition(format!("segment {} is empty", l + 1)));
            }
            if seg.theta.dim() != d {
                return Err(Error::Precondition("segments differ in dimension".into()));
            }
            let j = common_with_source;
            let c = common_with_previous[l];
            if j + c > d {
                return Err(Error::Precondition(format!(
                    "segment {} shares {j} + {c} coordinates, more than d = {d}",
                    l + 1
                )));
            }
            if l > 0 {
                let (a, b) = (segments[l - 1].theta.coords(), seg.theta.coords());
                if a[..j + c] != b[..j + c] {
                    return Err(Error::Precondition(format!(
                        "segment {} differs from segment {l} on its shared coordinates",
                        l + 1
                    )));
                }
            }
        }
        Ok(Self {
            segments,
            common_with_source,
            common_with_previous,
            link,
        })
    }

    /// A single segment; the time-variant runner then matches the plain one.
    pub fn single(theta: ParamPoint, n: usize, common_with_source: usize) -> Result<Self> {
        Self::new(vec![Segment { theta, n }], common_with_source, vec![0], SegmentLink::Restart)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn common_with_source(&self) -> usize {
        self.common_with_source
    }

    pub fn common_with_previous(&self) -> &[usize] {
        &self.common_with_previous
    }

    pub fn link(&self) -> SegmentLink {
        self.link
    }

    pub fn with_link(mut self, link: SegmentLink) -> Self {
        self.link = link;
        self
    }

    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(|s| s.n).sum()
    }
}

/// Source and target samples of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub source: Vec<Sample>,
    pub target: Vec<Sample>,
}

/// Draws the data of one trial. The target-only arm gets no source data;
/// target data do not depend on the arm.
pub fn draw_trial_data(scenario: &ScenarioConfig, arm: Arm, streams: TrialStreams) -> Result<TrialData> {
    let source = match arm {
        Arm::WithSource if scenario.m > 0 => {
            let mut rng = streams.stream(PURPOSE_SOURCE);
            scenario.family.sample(&scenario.theta_s, &mut rng, scenario.m)?
        }
        _ => Vec::new(),
    };
    let mut rng = streams.stream(PURPOSE_TARGET);
    let target = match &scenario.segments {
        None => scenario.family.sample(&scenario.theta_t, &mut rng, scenario.n)?,
        Some(schedule) => {
            let mut out = Vec::with_capacity(schedule.total_steps());
            for seg in schedule.segments() {
                out.extend(scenario.family.sample(&seg.theta, &mut rng, seg.n)?);
            }
            out
        }
    };
    Ok(TrialData { source, target })
}

fn attach(err: Error, scenario: &ScenarioConfig, streams: TrialStreams) -> Error {
    match err {
        Error::DegeneratePosterior { .. } => Error::DegeneratePosterior {
            scenario: scenario.name.clone(),
            seed: Some(streams.master_seed),
            trial: Some(streams.trial),
        },
        other => other,
    }
}

/// Source posterior and the arm's prior over the target parameter.
pub fn initial_posteriors(scenario: &ScenarioConfig, arm: Arm, source: &[Sample]) -> Result<(GridPosterior, GridPosterior)> {
    let grid = scenario.grid_spec()?;
    let prior = match arm {
        Arm::WithSource => &scenario.prior,
        Arm::TargetOnly => &scenario.baseline_prior,
    };
    condition_on_source(prior, &scenario.family, source, &grid, &grid)
}

/// Per-step true-parameter log densities `log P_θ*(z_k)`.
fn truth_log_densities(scenario: &ScenarioConfig, target: &[Sample]) -> Result<Vec<f64>> {
    let thetas: Vec<&ParamPoint> = match &scenario.segments {
        None => vec![&scenario.theta_t; target.len()],
        Some(s) => s
            .segments()
            .iter()
            .flat_map(|seg| std::iter::repeat_n(&seg.theta, seg.n))
            .collect(),
    };
    thetas
        .iter()
        .zip(target)
        .map(|(theta, z)| scenario.family.log_density(theta, z))
        .collect()
}

fn cumulative(increments: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    increments
        .into_iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

/// Log-loss regret of one trial: `Σ_k log P_θ*(z_k) − log Q(z_k | past)`.
pub fn run_log_loss_trial(scenario: &ScenarioConfig, arm: Arm, streams: TrialStreams) -> Result<RegretTrace> {
    let single;
    let schedule = match &scenario.segments {
        Some(s) => s,
        None => {
            single = SegmentSchedule::single(scenario.theta_t.clone(), scenario.n, scenario.prior.shared())?;
            &single
        }
    };
    run_time_variant_trial(schedule, scenario, arm, streams)
}

/// Log-loss regret over a segmented target. Segment `l > 1` starts from
/// `∫ ω(θ_l | θ_{l−1}) Q(θ_{l−1} | source, earlier segments) dθ_{l−1}`.
pub fn run_time_variant_trial(
    schedule: &SegmentSchedule,
    scenario: &ScenarioConfig,
    arm: Arm,
    streams: TrialStreams,
) -> Result<RegretTrace> {
    let run = || -> Result<RegretTrace> {
        let mut sc = scenario.clone();
        sc.segments = Some(schedule.clone());
        let data = draw_trial_data(&sc, arm, streams)?;
        let truth = truth_log_densities(&sc, &data.target)?;
        let (_, first_prior) = initial_posteriors(&sc, arm, &data.source)?;
        let mut post = first_prior.clone();
        let mut increments = Vec::with_capacity(data.target.len());
        let mut starts = Vec::with_capacity(schedule.segments().len());
        let mut k = 0;
        for (l, seg) in schedule.segments().iter().enumerate() {
            if l > 0 {
                post = match schedule.link() {
                    SegmentLink::Restart => first_prior.clone(),
                    SegmentLink::Chained(cond) => {
                        let tied = schedule.common_with_source() + schedule.common_with_previous()[l];
                        induced_prior(cond, sc.family.bounds(), tied, &post, post.grid())?
                    }
                };
            }
            starts.push(k);
            for z in &data.target[k..k + seg.n] {
                let log_pred = post.observe(&sc.family, z)?;
                increments.push(truth[increments.len()] - log_pred);
            }
            k += seg.n;
        }
        Ok(RegretTrace {
            per_step: cumulative(increments),
            loss_kind: LossKind::LogLoss,
            trial_seed: streams.master_seed,
            trial: streams.trial,
            target_checksum: data_checksum(&data.target),
            segment_starts: starts,
        })
    };
    run().map_err(|e| attach(e, scenario, streams))
}

/// Zero-one and log-loss regret of the same trial.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralLossOutcome {
    pub zero_one: RegretTrace,
    pub log_loss: RegretTrace,
}

/// Zero-one-loss regret on logistic labels.
///
/// The learner predicts 1 iff its predictive probability of label 1 is at
/// least 1/2 (ties predict 1); the oracle predicts 1 iff `σ(θ*ᵀx) ≥ 1/2`.
/// The posterior is the same mixture-strategy posterior as under log loss.
pub fn run_general_loss_trial(scenario: &ScenarioConfig, arm: Arm, streams: TrialStreams) -> Result<GeneralLossOutcome> {
    let run = || -> Result<GeneralLossOutcome> {
        if scenario.segments.is_some() {
            return Err(Error::Unsupported("zero-one loss with segmented targets".into()));
        }
        let data = draw_trial_data(scenario, arm, streams)?;
        let truth = truth_log_densities(scenario, &data.target)?;
        let (_, mut post) = initial_posteriors(scenario, arm, &data.source)?;
        let theta = scenario.theta_t.coords();
        let mut zero_one = Vec::with_capacity(scenario.n);
        let mut log_loss = Vec::with_capacity(scenario.n);
        for (z, log_true) in data.target.iter().zip(&truth) {
            let Sample::Labeled { x, label } = z else {
                return Err(Error::Unsupported("zero-one loss needs labeled samples".into()));
            };
            let decide = predict_label(&post, scenario, x)?;
            let score: f64 = theta.iter().zip(x).map(|(a, b)| a * b).sum();
            let oracle = score >= 0.0;
            let loss = |b: bool| if b == *label { 0.0 } else { 1.0 };
            zero_one.push(loss(decide) - loss(oracle));
            let log_pred = post.observe(&scenario.family, z)?;
            log_loss.push(log_true - log_pred);
        }
        let checksum = data_checksum(&data.target);
        let trace = |per_step, loss_kind| RegretTrace {
            per_step,
            loss_kind,
            trial_seed: streams.master_seed,
            trial: streams.trial,
            target_checksum: checksum,
            segment_starts: vec![0],
        };
        Ok(GeneralLossOutcome {
            zero_one: trace(cumulative(zero_one), LossKind::ZeroOne),
            log_loss: trace(cumulative(log_loss), LossKind::LogLoss),
        })
    };
    run().map_err(|e| attach(e, scenario, streams))
}

/// Bayes decision under zero-one loss: label 1 iff its predictive
/// probability is at least that of label 0.
pub fn predict_label(post: &GridPosterior, scenario: &ScenarioConfig, x: &[f64]) -> Result<bool> {
    let one = Sample::Labeled {
        x: x.to_vec(),
        label: true,
    };
    let zero = Sample::Labeled {
        x: x.to_vec(),
        label: false,
    };
    let lp1 = crate::posterior::predictive_log_density(post, &scenario.family, &one)?;
    let lp0 = crate::posterior::predictive_log_density(post, &scenario.family, &zero)?;
    Ok(lp1 >= lp0)
}

/// `log P_θ*(D_t^k) − log Q(D_t^k | D_s^m)` for every prefix `k`, computed
/// by the batch evidence route (no sequential renormalization).
pub fn trial_cmi(scenario: &ScenarioConfig, arm: Arm, streams: TrialStreams) -> Result<Vec<f64>> {
    let run = || -> Result<Vec<f64>> {
        if scenario.segments.is_some() {
            return Err(Error::Unsupported("mutual information with segmented targets".into()));
        }
        let data = draw_trial_data(scenario, arm, streams)?;
        let truth = cumulative(truth_log_densities(scenario, &data.target)?);
        let (_, prior) = initial_posteriors(scenario, arm, &data.source)?;
        let evidence = prefix_log_evidence(&prior, &scenario.family, &data.target)?;
        Ok(truth.iter().zip(&evidence).map(|(t, e)| t - e).collect())
    };
    run().map_err(|e| attach(e, scenario, streams))
}

/// Per-prefix Monte-Carlo mean and standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct CmiCurve {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Mean over `reps` trials (indices `0..reps` under `master_seed`) of the
/// per-prefix information `log P_θ*(D_t^k) − log Q(D_t^k | D_s^m)`.
pub fn estimate_cmi(scenario: &ScenarioConfig, arm: Arm, reps: usize, master_seed: u64) -> Result<CmiCurve> {
    if reps < 2 {
        return Err(Error::Precondition("at least two replications are needed for a standard error".into()));
    }
    let rows: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|i| trial_cmi(scenario, arm, TrialStreams::new(master_seed, i)))
        .collect::<Result<_>>()?;
    Ok(summarize(&rows, scenario.n))
}

/// Column-wise mean and standard error of equally long rows.
pub fn summarize(rows: &[Vec<f64>], n: usize) -> CmiCurve {
    let mut mean = Vec::with_capacity(n);
    let mut stderr = Vec::with_capacity(n);
    let mut column = Vec::with_capacity(rows.len());
    for k in 0..n {
        column.clear();
        column.extend(rows.iter().map(|r| r[k]));
        let (m, s) = mean_stderr(&column);
        mean.push(m);
        stderr.push(s);
    }
    CmiCurve { mean, stderr }
}
