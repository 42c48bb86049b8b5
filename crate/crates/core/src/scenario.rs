//! Scenario descriptions: flat `key = value` config files and the builtin
//! catalog.
//!
//! ```text
//! # logistic regression, positive transfer
//! family = logistic
//! covariates.mean = 5, -5
//! theta_t = 0.3, 0.5
//! theta_s = 0.2, 0.4
//! m = 5000
//! n = 200
//! prior.kind = gaussian
//! prior.c = 0.1
//! ```
//!
//! Vectors are comma separated; segment parameter lists separate points
//! with `;`. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::family::{FamilyModel, ParamBox, ParamPoint};
use crate::online::{Segment, SegmentLink, SegmentSchedule};
use crate::posterior::{default_resolution, GridSpec};
use crate::prior::{Conditional, Marginal, PriorSpec};

pub const DEFAULT_REPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    LogLoss,
    /// Zero-one loss on logistic labels; the loss bound is 1.
    ZeroOne,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::LogLoss => "log",
            LossKind::ZeroOne => "zero_one",
        }
    }
}

/// A fully resolved simulation setup.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub family: FamilyModel,
    pub theta_t: ParamPoint,
    pub theta_s: ParamPoint,
    pub m: usize,
    pub n: usize,
    pub prior: PriorSpec,
    /// Prior of the target-only arm.
    pub baseline_prior: PriorSpec,
    pub reps: usize,
    pub seed: u64,
    /// Grid nodes per axis.
    pub grid: usize,
    pub loss: LossKind,
    pub segments: Option<SegmentSchedule>,
}

impl ScenarioConfig {
    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    /// Quadrature grid over the family box, shared by source and target.
    pub fn grid_spec(&self) -> Result<Arc<GridSpec>> {
        Ok(Arc::new(GridSpec::regular(self.family.bounds(), self.grid)?))
    }

    /// Copy with fewer target steps, used by snapshots and quick runs.
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }
}

const BUILTINS: &[(&str, &str)] = &[
    (
        "logistic_positive",
        "family = logistic
covariates.mean = 5, -5
covariates.cov = 1, 1
theta_t = 0.3, 0.5
theta_s = 0.2, 0.4
m = 5000
n = 200
prior.kind = gaussian
prior.c = 0.1
reps = 200
grid = 61
",
    ),
    (
        "logistic_negative",
        "family = logistic
covariates.mean = 5, -5
covariates.cov = 1, 1
theta_t = 0.3, 0.5
theta_s = 0.8, 0.2
m = 5000
n = 200
prior.kind = gaussian
prior.c = 0.1
reps = 200
grid = 61
",
    ),
    (
        "logistic_prior_sweep",
        "# weak prior belief: the source barely informs the target
family = logistic
covariates.mean = 5, -5
covariates.cov = 1, 1
theta_t = 0.3, 0.5
theta_s = 0.2, 0.4
m = 5000
n = 200
prior.kind = gaussian
prior.c = 1.0
reps = 200
grid = 61
",
    ),
    (
        "bernoulli_negative",
        "# the window excludes the target parameter once the source posterior is sharp
family = bernoulli
theta_t = 0.6
theta_s = 0.8
m = 100000
n = 2000
prior.kind = window
prior.delta = 0.1
reps = 200
grid = 201
",
    ),
    (
        "time_variant_demo",
        "family = bernoulli
theta_s = 0.55
m = 1000
prior.kind = gaussian
prior.c = 0.1
segments.theta = 0.6; 0.6
segments.n = 300, 300
time.kind = gaussian
time.c = 0.05
reps = 200
grid = 201
",
    ),
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|(n, _)| *n)
}

pub fn builtin_text(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Resolves a builtin name or reads a config file.
pub fn load_scenario(name_or_path: &str) -> Result<ScenarioConfig> {
    if let Some(text) = builtin_text(name_or_path) {
        return parse_scenario(text, name_or_path);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        let names: Vec<&str> = builtin_names().collect();
        return Err(Error::config(
            "scenario",
            format!("`{name_or_path}` is neither a file nor a builtin ({})", names.join(", ")),
        ));
    }
    let text = std::fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    parse_scenario(&text, stem)
}

const KNOWN_KEYS: &[&str] = &[
    "name",
    "family",
    "theta_t",
    "theta_s",
    "m",
    "n",
    "prior.kind",
    "prior.c",
    "prior.delta",
    "prior.shared",
    "prior.marginal",
    "prior.marginal.mean",
    "prior.marginal.sd",
    "reps",
    "seed",
    "grid",
    "loss",
    "covariates.mean",
    "covariates.cov",
    "noise.cov",
    "box.lower",
    "box.upper",
    "fisher_draws",
    "segments.theta",
    "segments.n",
    "segments.shared_prev",
    "time.kind",
    "time.c",
    "time.delta",
];

struct Entries {
    map: BTreeMap<String, String>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::config(key, "unknown key"));
            }
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::config(key, "duplicate key"));
            }
        }
        Ok(Self { map })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::config(key, "missing required field"))
    }

    fn number<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::config(key, format!("cannot parse `{v}`"))))
            .transpose()
    }

    fn vector(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key).map(|v| parse_vector(key, v)).transpose()
    }
}

fn parse_vector(key: &str, value: &str) -> Result<Vec<f64>> {
    let out = value
        .split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::config(key, format!("cannot parse `{p}` as a finite number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if out.is_empty() {
        return Err(Error::config(key, "empty vector"));
    }
    Ok(out)
}

fn covariance(key: &str, values: Vec<f64>, d: usize) -> Result<DMatrix<f64>> {
    if values.len() == d {
        Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(values)))
    } else if values.len() == d * d {
        Ok(DMatrix::from_row_slice(d, d, &values))
    } else {
        Err(Error::config(
            key,
            format!("expected {d} variances or {} row-major entries, got {}", d * d, values.len()),
        ))
    }
}

fn in_config<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(key, other.to_string()),
    })
}

fn conditional(entries: &Entries, prefix: &str, default: Conditional) -> Result<Conditional> {
    let kind_key = format!("{prefix}.kind");
    let c_key = format!("{prefix}.c");
    let delta_key = format!("{prefix}.delta");
    let kind = entries.get(&kind_key);
    let c: Option<f64> = entries.number(&c_key)?;
    let delta: Option<f64> = entries.number(&delta_key)?;
    let cond = match kind {
        None => {
            if c.is_some() || delta.is_some() {
                return Err(Error::config(kind_key, "missing required field"));
            }
            return Ok(default);
        }
        Some("gaussian") => {
            let c = c.ok_or_else(|| Error::config(&c_key, "missing required field"))?;
            if !(c > 0.0) {
                return Err(Error::config(c_key, "must be > 0"));
            }
            if delta.is_some() {
                return Err(Error::config(delta_key, "only valid with kind = window"));
            }
            Conditional::GaussianAround { c }
        }
        Some("window") => {
            let delta = delta.ok_or_else(|| Error::config(&delta_key, "missing required field"))?;
            if !(delta > 0.0) {
                return Err(Error::config(delta_key, "must be > 0"));
            }
            if c.is_some() {
                return Err(Error::config(c_key, "only valid with kind = gaussian"));
            }
            Conditional::HardWindow { delta }
        }
        Some("independent") => {
            if c.is_some() || delta.is_some() {
                return Err(Error::config(kind_key, "independent takes no parameters"));
            }
            Conditional::IndependentUniform
        }
        Some(other) => {
            return Err(Error::config(
                kind_key,
                format!("unknown kind `{other}` (gaussian, window, independent)"),
            ))
        }
    };
    Ok(cond)
}

fn point(key: &str, coords: Vec<f64>, family: &FamilyModel) -> Result<ParamPoint> {
    if coords.len() != family.dim() {
        return Err(Error::config(
            key,
            format!("expected {} coordinates, got {}", family.dim(), coords.len()),
        ));
    }
    if !family.bounds().contains(&coords) {
        return Err(Error::config(
            key,
            format!(
                "{coords:?} lies outside the parameter box [{:?}, {:?}]",
                family.bounds().lower(),
                family.bounds().upper()
            ),
        ));
    }
    Ok(ParamPoint::new(coords))
}

/// Parses config text; `default_name` is used when no `name` key is given.
pub fn parse_scenario(text: &str, default_name: &str) -> Result<ScenarioConfig> {
    let e = Entries::parse(text)?;
    let name = e.get("name").unwrap_or(default_name).to_string();

    let theta_t_raw = e.vector("theta_t")?;
    let seg_theta = e.get("segments.theta");
    let dim = match (&theta_t_raw, seg_theta) {
        (Some(t), _) => t.len(),
        (None, Some(s)) => parse_vector("segments.theta", s.split(';').next().unwrap_or(""))?.len(),
        (None, None) => return Err(Error::config("theta_t", "missing required field")),
    };

    let family_name = e.required("family")?;
    let mut family = match family_name {
        "bernoulli" => {
            if dim != 1 {
                return Err(Error::config("theta_t", "bernoulli takes a single coordinate"));
            }
            for key in ["covariates.mean", "covariates.cov", "noise.cov", "fisher_draws"] {
                if e.get(key).is_some() {
                    return Err(Error::config(key, "not used by the bernoulli family"));
                }
            }
            FamilyModel::bernoulli()
        }
        "gaussian" => {
            for key in ["covariates.mean", "covariates.cov", "fisher_draws"] {
                if e.get(key).is_some() {
                    return Err(Error::config(key, "not used by the gaussian family"));
                }
            }
            let cov = match e.vector("noise.cov")? {
                Some(v) => covariance("noise.cov", v, dim)?,
                None => DMatrix::identity(dim, dim),
            };
            in_config("noise.cov", FamilyModel::gaussian_mean(cov))?
        }
        "logistic" => {
            if e.get("noise.cov").is_some() {
                return Err(Error::config("noise.cov", "not used by the logistic family"));
            }
            let mean = e.vector("covariates.mean")?.unwrap_or_else(|| vec![0.0; dim]);
            if mean.len() != dim {
                return Err(Error::config(
                    "covariates.mean",
                    format!("expected {dim} entries, got {}", mean.len()),
                ));
            }
            let cov = match e.vector("covariates.cov")? {
                Some(v) => covariance("covariates.cov", v, dim)?,
                None => DMatrix::identity(dim, dim),
            };
            in_config("covariates.cov", FamilyModel::logistic(mean, cov))?
        }
        other => {
            return Err(Error::config(
                "family",
                format!("unknown family `{other}` (bernoulli, gaussian, logistic)"),
            ))
        }
    };
    if let Some(draws) = e.number::<usize>("fisher_draws")? {
        if draws < 2 {
            return Err(Error::config("fisher_draws", "must be at least 2"));
        }
        let seed = e.number::<u64>("seed")?.unwrap_or(0);
        family = family.with_fisher_draws(draws, seed);
    }
    match (e.vector("box.lower")?, e.vector("box.upper")?) {
        (None, None) => {}
        (Some(lo), Some(hi)) => {
            if lo.len() != dim || hi.len() != dim {
                return Err(Error::config("box.lower", format!("expected {dim} entries")));
            }
            let b = in_config("box.upper", ParamBox::new(lo, hi))?;
            family = in_config("box.lower", family.with_box(b))?;
        }
        (Some(_), None) => return Err(Error::config("box.upper", "missing required field")),
        (None, Some(_)) => return Err(Error::config("box.lower", "missing required field")),
    }

    let m: usize = e.number("m")?.unwrap_or(0);
    let theta_s = match e.vector("theta_s")? {
        Some(v) => point("theta_s", v, &family)?,
        None if m > 0 => return Err(Error::config("theta_s", "missing required field (m > 0)")),
        None => ParamPoint::new(family.bounds().lower().iter().zip(family.bounds().upper()).map(|(a, b)| 0.5 * (a + b)).collect()),
    };

    let support = family.bounds().clone();
    let cond = conditional(&e, "prior", Conditional::IndependentUniform)?;
    let marginal = match e.get("prior.marginal").unwrap_or("uniform") {
        "uniform" => {
            for key in ["prior.marginal.mean", "prior.marginal.sd"] {
                if e.get(key).is_some() {
                    return Err(Error::config(key, "only valid with prior.marginal = gaussian"));
                }
            }
            Marginal::UniformBox
        }
        "gaussian" => {
            let mean = e
                .vector("prior.marginal.mean")?
                .ok_or_else(|| Error::config("prior.marginal.mean", "missing required field"))?;
            let sd: f64 = e
                .number("prior.marginal.sd")?
                .ok_or_else(|| Error::config("prior.marginal.sd", "missing required field"))?;
            if mean.len() != dim {
                return Err(Error::config("prior.marginal.mean", format!("expected {dim} entries")));
            }
            if !(sd > 0.0) {
                return Err(Error::config("prior.marginal.sd", "must be > 0"));
            }
            let cov = DMatrix::identity(dim, dim) * (sd * sd);
            in_config("prior.marginal", PriorSpec::truncated_gaussian_marginal(mean, cov, &support))?
        }
        other => {
            return Err(Error::config(
                "prior.marginal",
                format!("unknown marginal `{other}` (uniform, gaussian)"),
            ))
        }
    };
    let shared: usize = e.number("prior.shared")?.unwrap_or(0);
    if shared > dim {
        return Err(Error::config("prior.shared", format!("exceeds dimension {dim}")));
    }
    let prior = in_config("prior", PriorSpec::new(marginal, cond, support.clone()))?;
    let prior = in_config("prior.shared", prior.with_shared(shared))?;

    let reps: usize = e.number("reps")?.unwrap_or(DEFAULT_REPS);
    if reps == 0 {
        return Err(Error::config("reps", "must be at least 1"));
    }
    let seed: u64 = e.number("seed")?.unwrap_or(0);
    let grid: usize = e.number("grid")?.unwrap_or_else(|| default_resolution(dim));
    if grid == 0 {
        return Err(Error::config("grid", "must be at least 1"));
    }
    if dim > 3 {
        return Err(Error::config("theta_t", "grid quadrature supports at most 3 coordinates"));
    }
    let loss = match e.get("loss").unwrap_or("log") {
        "log" => LossKind::LogLoss,
        "zero_one" => {
            if family_name != "logistic" {
                return Err(Error::config("loss", "zero_one loss needs the logistic family"));
            }
            LossKind::ZeroOne
        }
        other => return Err(Error::config("loss", format!("unknown loss `{other}` (log, zero_one)"))),
    };

    let (theta_t, n, segments) = match seg_theta {
        None => {
            for key in ["segments.n", "segments.shared_prev", "time.kind", "time.c", "time.delta"] {
                if e.get(key).is_some() {
                    return Err(Error::config(key, "only valid with segments.theta"));
                }
            }
            let theta_t = point("theta_t", theta_t_raw.expect("dimension came from theta_t"), &family)?;
            let n: usize = e.number("n")?.ok_or_else(|| Error::config("n", "missing required field"))?;
            if n == 0 {
                return Err(Error::config("n", "must be at least 1"));
            }
            (theta_t, n, None)
        }
        Some(list) => {
            for key in ["theta_t", "n"] {
                if e.get(key).is_some() {
                    return Err(Error::config(key, "derived from segments.theta and segments.n"));
                }
            }
            let thetas = list
                .split(';')
                .map(|p| point("segments.theta", parse_vector("segments.theta", p)?, &family))
                .collect::<Result<Vec<_>>>()?;
            let sizes = e
                .vector("segments.n")?
                .ok_or_else(|| Error::config("segments.n", "missing required field"))?;
            if sizes.len() != thetas.len() {
                return Err(Error::config("segments.n", "needs one size per segment"));
            }
            let sizes = sizes
                .iter()
                .map(|v| {
                    if *v >= 1.0 && v.fract() == 0.0 {
                        Ok(*v as usize)
                    } else {
                        Err(Error::config("segments.n", format!("`{v}` is not a positive integer")))
                    }
                })
                .collect::<Result<Vec<usize>>>()?;
            let shared_prev = match e.vector("segments.shared_prev")? {
                Some(v) => v
                    .iter()
                    .map(|c| {
                        if *c >= 0.0 && c.fract() == 0.0 && (*c as usize) <= dim {
                            Ok(*c as usize)
                        } else {
                            Err(Error::config("segments.shared_prev", format!("`{c}` is not a valid count")))
                        }
                    })
                    .collect::<Result<Vec<usize>>>()?,
                None => vec![0; thetas.len()],
            };
            let time = conditional(&e, "time", Conditional::GaussianAround { c: 0.05 })?;
            let segments: Vec<Segment> = thetas
                .into_iter()
                .zip(sizes)
                .map(|(theta, n)| Segment { theta, n })
                .collect();
            let schedule = SegmentSchedule::new(segments, shared, shared_prev, SegmentLink::Chained(time))
                .map_err(|err| Error::config("segments", err.to_string()))?;
            (schedule.segments()[0].theta.clone(), schedule.total_steps(), Some(schedule))
        }
    };

    if shared > 0 {
        let targets: Vec<&ParamPoint> = match &segments {
            Some(s) => s.segments().iter().map(|seg| &seg.theta).collect(),
            None => vec![&theta_t],
        };
        let s = theta_s.coords();
        if targets.iter().any(|t| s[..shared] != t.coords()[..shared]) {
            return Err(Error::config(
                "prior.shared",
                format!("theta_s and theta_t differ on the first {shared} coordinates"),
            ));
        }
    }

    Ok(ScenarioConfig {
        name,
        baseline_prior: PriorSpec::source_free(support),
        family,
        theta_t,
        theta_s,
        m,
        n,
        prior,
        reps,
        seed,
        grid,
        loss,
        segments,
    })
}
