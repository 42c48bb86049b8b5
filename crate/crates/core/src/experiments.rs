//! Monte-Carlo replication driver, regret-curve CSV persistence, posterior
//! snapshots and prior diagnostics.

use std::io::{Read, Write};
use std::path::Path;

use log::{debug, info, warn};
use rayon::prelude::*;

use crate::asymptotics::{asymptote_general, general_loss_bound};
use crate::error::{Error, Result};
use crate::family::{fisher_blocks, FisherBlocks};
use crate::online::{
    draw_trial_data, initial_posteriors, run_general_loss_trial, run_log_loss_trial, summarize, Arm, CmiCurve,
    RegretTrace, TrialStreams,
};
use crate::posterior::{write_snapshot, GridPosterior, SnapshotTag};
use crate::prior::{PropernessReport, DEFAULT_NEIGHBORHOOD};
use crate::scenario::{LossKind, ScenarioConfig};

/// Largest tolerated fraction of aborted trials.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Points per axis of the properness check grid.
pub const PROPERNESS_RESOLUTION: usize = 41;

pub const CSV_HEADER: [&str; 8] = [
    "n",
    "mean_regret",
    "stderr",
    "mean_regret_baseline",
    "stderr_baseline",
    "asymptote",
    "asymptote_baseline",
    "bound",
];

/// Decimal rendering with 9 significant digits.
pub fn format_sig(value: f64) -> String {
    if !value.is_finite() {
        return value.to_string();
    }
    quantize(value).to_string()
}

/// Rounds to 9 significant digits, the precision persisted in CSV files.
pub fn quantize(value: f64) -> f64 {
    if !value.is_finite() {
        return value;
    }
    format!("{value:.8e}").parse().expect("formatted float parses")
}

fn quantize_opt(v: Option<f64>) -> Option<f64> {
    v.map(quantize)
}

/// Mean regret per step for both arms plus reference columns. Values are
/// held at CSV precision so a write/parse round trip is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub n: Vec<usize>,
    pub mean_regret: Vec<f64>,
    pub stderr: Vec<f64>,
    pub mean_regret_baseline: Vec<f64>,
    pub stderr_baseline: Vec<f64>,
    pub asymptote: Vec<Option<f64>>,
    pub asymptote_baseline: Vec<Option<f64>>,
    pub bound: Vec<Option<f64>>,
}

impl RegretCurve {
    pub fn new(
        with_source: &CmiCurve,
        baseline: &CmiCurve,
        asymptote: Vec<Option<f64>>,
        asymptote_baseline: Vec<Option<f64>>,
        bound: Vec<Option<f64>>,
    ) -> Result<Self> {
        let len = with_source.mean.len();
        if [baseline.mean.len(), asymptote.len(), asymptote_baseline.len(), bound.len()]
            .iter()
            .any(|l| *l != len)
        {
            return Err(Error::Precondition("regret curve columns differ in length".into()));
        }
        let q = |v: &[f64]| v.iter().copied().map(quantize).collect::<Vec<_>>();
        let qo = |v: Vec<Option<f64>>| v.into_iter().map(quantize_opt).collect::<Vec<_>>();
        Ok(Self {
            n: (1..=len).collect(),
            mean_regret: q(&with_source.mean),
            stderr: q(&with_source.stderr),
            mean_regret_baseline: q(&baseline.mean),
            stderr_baseline: q(&baseline.stderr),
            asymptote: qo(asymptote),
            asymptote_baseline: qo(asymptote_baseline),
            bound: qo(bound),
        })
    }

    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(format_sig).unwrap_or_else(|| "NA".into());
        for i in 0..self.len() {
            w.write_record([
                self.n[i].to_string(),
                format_sig(self.mean_regret[i]),
                format_sig(self.stderr[i]),
                format_sig(self.mean_regret_baseline[i]),
                format_sig(self.stderr_baseline[i]),
                opt(self.asymptote[i]),
                opt(self.asymptote_baseline[i]),
                opt(self.bound[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn parse_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::InvalidValue(format!("unexpected regret CSV header {header:?}")));
        }
        let mut c = RegretCurve {
            n: Vec::new(),
            mean_regret: Vec::new(),
            stderr: Vec::new(),
            mean_regret_baseline: Vec::new(),
            stderr_baseline: Vec::new(),
            asymptote: Vec::new(),
            asymptote_baseline: Vec::new(),
            bound: Vec::new(),
        };
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| {
                    Error::InvalidValue(format!("row {}: column {} is not a number: `{}`", row + 1, CSV_HEADER[i], &rec[i]))
                })
            };
            let opt = |i: usize| -> Result<Option<f64>> {
                if &rec[i] == "NA" {
                    Ok(None)
                } else {
                    field(i).map(Some)
                }
            };
            c.n.push(
                rec[0]
                    .parse()
                    .map_err(|_| Error::InvalidValue(format!("row {}: bad n `{}`", row + 1, &rec[0])))?,
            );
            c.mean_regret.push(field(1)?);
            c.stderr.push(field(2)?);
            c.mean_regret_baseline.push(field(3)?);
            c.stderr_baseline.push(field(4)?);
            c.asymptote.push(opt(5)?);
            c.asymptote_baseline.push(opt(6)?);
            c.bound.push(opt(7)?);
        }
        Ok(c)
    }

    /// Writes the curve to `path` through a temporary file in the same
    /// directory, renamed into place.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_csv(w))
    }
}

/// Writes via a same-directory temporary file and an atomic rename.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<&mut tempfile::NamedTempFile>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(&mut tmp);
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Replication results of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub curve: RegretCurve,
    /// Mean log-loss regret of the with-source arm (equal to the Monte-Carlo
    /// mutual information); for zero-one experiments this differs from the
    /// curve's regret columns.
    pub cmi: CmiCurve,
    pub completed: usize,
    /// `(trial, message)` for each aborted trial.
    pub failures: Vec<(u64, String)>,
}

struct TrialOutcome {
    with_source: RegretTrace,
    baseline: RegretTrace,
    log_loss: RegretTrace,
}

fn run_trial(config: &ScenarioConfig, streams: TrialStreams) -> Result<TrialOutcome> {
    let out = match config.loss {
        LossKind::LogLoss => {
            let w = run_log_loss_trial(config, Arm::WithSource, streams)?;
            let b = run_log_loss_trial(config, Arm::TargetOnly, streams)?;
            TrialOutcome {
                log_loss: w.clone(),
                with_source: w,
                baseline: b,
            }
        }
        LossKind::ZeroOne => {
            let w = run_general_loss_trial(config, Arm::WithSource, streams)?;
            let b = run_general_loss_trial(config, Arm::TargetOnly, streams)?;
            TrialOutcome {
                with_source: w.zero_one,
                baseline: b.zero_one,
                log_loss: w.log_loss,
            }
        }
    };
    debug!(
        "trial {}: target checksum {:016x} (with source) {:016x} (target only)",
        streams.trial, out.with_source.target_checksum, out.baseline.target_checksum
    );
    if out.with_source.target_checksum != out.baseline.target_checksum {
        return Err(Error::Precondition(format!(
            "arms consumed different target data in trial {}",
            streams.trial
        )));
    }
    Ok(out)
}

/// Worker pool of `threads` workers, or the `OTL_THREADS` variable, or one
/// worker per processor.
pub fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let from_env = || {
        std::env::var("OTL_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|v| *v > 0)
    };
    let n = threads.filter(|t| *t > 0).or_else(from_env).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidValue(format!("cannot build worker pool: {e}")))
}

/// Runs `config.reps` paired trials (with-source and target-only on the
/// same target data) and attaches asymptote and bound columns.
pub fn run_experiment(config: &ScenarioConfig, threads: Option<usize>) -> Result<ExperimentReport> {
    let pool = build_pool(threads)?;
    info!(
        "running `{}`: {} trials, n = {}, m = {}",
        config.name, config.reps, config.n, config.m
    );
    let outcomes: Vec<Result<TrialOutcome>> = pool.install(|| {
        (0..config.reps as u64)
            .into_par_iter()
            .map(|i| run_trial(config, TrialStreams::new(config.seed, i)))
            .collect()
    });

    let mut failures = Vec::new();
    let mut ok = Vec::with_capacity(outcomes.len());
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(t) => ok.push(t),
            Err(e) => {
                warn!("trial {i} of `{}` aborted: {e}", config.name);
                failures.push((i as u64, e.to_string()));
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * config.reps as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: config.reps,
            first: failures[0].1.clone(),
        });
    }

    let rows = |f: fn(&TrialOutcome) -> &RegretTrace| -> Vec<Vec<f64>> { ok.iter().map(|t| f(t).per_step.clone()).collect() };
    let with_source = summarize(&rows(|t| &t.with_source), config.n);
    let baseline = summarize(&rows(|t| &t.baseline), config.n);
    let cmi = summarize(&rows(|t| &t.log_loss), config.n);

    let (asym, asym_base) = match config.loss {
        LossKind::LogLoss => asymptote_columns(config, config.n)?,
        LossKind::ZeroOne => (vec![None; config.n], vec![None; config.n]),
    };
    let bound = match config.loss {
        LossKind::LogLoss => vec![None; config.n],
        LossKind::ZeroOne => bound_column(&cmi, &config.name)?,
    };
    let curve = RegretCurve::new(&with_source, &baseline, asym, asym_base, bound)?;
    Ok(ExperimentReport {
        curve,
        cmi,
        completed: ok.len(),
        failures,
    })
}

/// `√(2k·CMI(k))` for a loss bounded by 1, from the Monte-Carlo mutual
/// information. Estimates below zero are clamped, with a warning when they
/// are more than three standard errors below.
pub fn bound_column(cmi: &CmiCurve, name: &str) -> Result<Vec<Option<f64>>> {
    cmi.mean
        .iter()
        .zip(&cmi.stderr)
        .enumerate()
        .map(|(i, (m, s))| {
            let k = i as u64 + 1;
            if *m < -3.0 * s {
                warn!("`{name}`: mutual information estimate {m} at n = {k} is more than 3 stderr below zero");
            }
            general_loss_bound(1.0, k, m.max(0.0)).map(Some)
        })
        .collect()
}

/// With-source and target-only asymptotes, `None` where inapplicable.
pub type AsymptoteColumns = (Vec<Option<f64>>, Vec<Option<f64>>);

/// Asymptote columns for both arms at `n = 1..=n_max`. A column is `None`
/// where the asymptote does not apply: improper priors, segmented targets,
/// or shared coordinates without source data.
pub fn asymptote_columns(config: &ScenarioConfig, n_max: usize) -> Result<AsymptoteColumns> {
    let none = vec![None; n_max];
    if config.segments.is_some() {
        return Ok((none.clone(), none));
    }
    let d = config.dim();
    let fisher_t = config.family.fisher_information(&config.theta_t)?;
    let baseline_blocks = FisherBlocks::from_matrices(&fisher_t, &fisher_t, 0)?;
    let base_log_prior = config
        .baseline_prior
        .conditional_log_density(&config.theta_t, &config.theta_s);
    let baseline = column(&baseline_blocks, base_log_prior, n_max, 0, d, 0)?;

    let j = config.prior.shared();
    let report = prior_report(config)?;
    let log_prior = config.prior.conditional_log_density(&config.theta_t, &config.theta_s);
    let with_source = if !report.is_proper() || !log_prior.is_finite() || (j > 0 && config.m == 0) {
        info!("`{}`: prior is improper at the true parameters; no with-source asymptote", config.name);
        none
    } else {
        let blocks = fisher_blocks(&config.family, &config.family, &config.theta_s, &config.theta_t, j)?;
        column(&blocks, log_prior, n_max, config.m as u64, d, j)?
    };
    Ok((with_source, baseline))
}

fn column(blocks: &FisherBlocks, log_prior: f64, n_max: usize, m: u64, d: usize, j: usize) -> Result<Vec<Option<f64>>> {
    if !log_prior.is_finite() {
        return Ok(vec![None; n_max]);
    }
    (1..=n_max as u64)
        .map(|n| Ok(Some(asymptote_general(blocks, log_prior, n, m, d, j)?.value)))
        .collect()
}

/// Properness of the configured prior around the true parameters.
pub fn prior_report(config: &ScenarioConfig) -> Result<PropernessReport> {
    config.prior.validate_properness(
        &config.theta_s,
        &config.theta_t,
        DEFAULT_NEIGHBORHOOD,
        DEFAULT_NEIGHBORHOOD,
        PROPERNESS_RESOLUTION,
    )
}

/// Source posterior and both target posteriors after `n` target samples of
/// trial 0.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub source: GridPosterior,
    pub with_source: GridPosterior,
    pub target_only: GridPosterior,
}

pub fn posterior_snapshot(config: &ScenarioConfig, n: usize) -> Result<Snapshot> {
    if n > config.n {
        return Err(Error::config("n", format!("snapshot at n = {n} exceeds the scenario's n = {}", config.n)));
    }
    if config.segments.is_some() {
        return Err(Error::Unsupported("snapshots of segmented targets".into()));
    }
    let sc = config.clone().with_n(n);
    let streams = TrialStreams::new(config.seed, 0);
    let data = draw_trial_data(&sc, Arm::WithSource, streams)?;
    let (source, mut with_source) = initial_posteriors(&sc, Arm::WithSource, &data.source)?;
    let (_, mut target_only) = initial_posteriors(&sc, Arm::TargetOnly, &[])?;
    for z in &data.target {
        with_source.observe(&sc.family, z)?;
        target_only.observe(&sc.family, z)?;
    }
    Ok(Snapshot {
        source,
        with_source,
        target_only,
    })
}

impl Snapshot {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_snapshot(
            out,
            &[
                (SnapshotTag::SourcePosterior, &self.source),
                (SnapshotTag::TargetPosteriorWithSource, &self.with_source),
                (SnapshotTag::TargetPosteriorNoSource, &self.target_only),
            ],
        )
    }

    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_csv(w))
    }
}

/// Asymptote table for `n = 1..=n_max`: `n,asymptote,asymptote_baseline`.
pub fn write_asymptote_csv<W: Write>(config: &ScenarioConfig, n_max: usize, out: W) -> Result<()> {
    let (a, b) = asymptote_columns(config, n_max)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["n", "asymptote", "asymptote_baseline"])?;
    let opt = |v: Option<f64>| v.map(format_sig).unwrap_or_else(|| "NA".into());
    for (i, (x, y)) in a.into_iter().zip(b).enumerate() {
        w.write_record([(i + 1).to_string(), opt(x), opt(y)])?;
    }
    w.flush()?;
    Ok(())
}
