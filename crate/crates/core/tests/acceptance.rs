//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Criteria run one after another so the timings are not
//! perturbed by each other.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use otl::asymptotics::{asymptote_scalar, rate_regime_sweep, verify_regime, Growth};
use otl::experiments::{asymptote_columns, run_experiment, RegretCurve};
use otl::online::{draw_trial_data, estimate_cmi, run_log_loss_trial, Arm, TrialStreams};
use otl::posterior::{condition_on_source, log_evidence, predictive_log_density, prefix_log_evidence, update_target};
use otl::scenario::{load_scenario, parse_scenario, ScenarioConfig};
use otl::{FamilyModel, FisherBlocks, GridSpec, ParamPoint, PriorSpec, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Check = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scenario(text: &str) -> ScenarioConfig {
    parse_scenario(text, "acceptance").expect("valid scenario text")
}

fn regret_equals_log_ratio() -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let bern = case % 2 == 0;
        let prior = match rng.random_range(0..3) {
            0 => format!("prior.kind = gaussian\nprior.c = {}\n", rng.random_range(0.05..0.5)),
            1 => format!("prior.kind = window\nprior.delta = {}\n", rng.random_range(0.1..0.6)),
            _ => "prior.kind = independent\n".to_string(),
        };
        let m = rng.random_range(0..40);
        let n = rng.random_range(1..30);
        let text = if bern {
            format!(
                "family = bernoulli\ntheta_t = {}\ntheta_s = {}\nm = {m}\nn = {n}\ngrid = 101\n{prior}",
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95)
            )
        } else {
            format!(
                "family = logistic\ntheta_t = {}, {}\ntheta_s = {}, {}\nm = {m}\nn = {n}\ngrid = 21\nfisher_draws = 1000\n{prior}",
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95)
            )
        };
        let sc = scenario(&text);
        let streams = TrialStreams::new(case, 0);
        let trace = run_log_loss_trial(&sc, Arm::WithSource, streams).map_err(|e| e.to_string())?;
        let data = draw_trial_data(&sc, Arm::WithSource, streams).map_err(|e| e.to_string())?;
        let grid = sc.grid_spec().map_err(|e| e.to_string())?;
        let mut truth = 0.0;
        for k in 1..=n {
            truth += sc.family.log_density(&sc.theta_t, &data.target[k - 1]).unwrap();
            let q = log_evidence(&sc.prior, &sc.family, &sc.family, &data.source, &data.target[..k], &grid, &grid)
                .map_err(|e| e.to_string())?;
            let gap = (trace.per_step[k - 1] - (truth - q)).abs();
            worst = worst.max(gap);
        }
    }
    ensure(worst <= 1e-9, format!("max |regret − log ratio| = {worst:.2e} over 100 scenarios"))
}

fn scalar_asymptote() -> Check {
    let sc = scenario("family = bernoulli\ntheta_t = 0.6\nm = 0\nn = 500\nprior.kind = independent\ngrid = 201\n");
    let cmi = estimate_cmi(&sc, Arm::WithSource, 500, 11).map_err(|e| e.to_string())?;
    let formula = 0.5 * (500.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E)).ln() + 0.5 * (25.0f64 / 6.0).ln();
    let lib = asymptote_scalar(25.0 / 6.0, sc.prior.conditional_log_density(&sc.theta_t, &sc.theta_s), 500)
        .map_err(|e| e.to_string())?
        .value;
    let mc = cmi.mean[499];
    ensure(
        (mc - formula).abs() <= 0.15,
        format!(
            "MC CMI {mc:.4} ± {:.4}, closed form {formula:.4} (library {lib:.4}), |diff| = {:.4} ≤ 0.15",
            cmi.stderr[499],
            (mc - formula).abs()
        ),
    )
}

fn general_asymptote() -> Check {
    let sc = scenario(
        "family = gaussian\ntheta_t = 0.5, 0.45\ntheta_s = 0.5, 0.55\nm = 200\nn = 200\nprior.kind = gaussian\nprior.c = 0.25\nprior.shared = 1\n",
    );
    let cmi = estimate_cmi(&sc, Arm::WithSource, 500, 12).map_err(|e| e.to_string())?;
    let (with_source, _) = asymptote_columns(&sc, 200).map_err(|e| e.to_string())?;
    let a = with_source[199].ok_or("no asymptote for a proper prior")?;
    let mc = cmi.mean[199];
    ensure(
        (mc - a).abs() <= 0.2,
        format!("MC CMI {mc:.4} ± {:.4}, asymptote {a:.4}, |diff| = {:.4} ≤ 0.2", cmi.stderr[199], (mc - a).abs()),
    )
}

fn builtin_curve(name: &str) -> Result<(ScenarioConfig, RegretCurve), String> {
    let sc = load_scenario(name).map_err(|e| e.to_string())?;
    let report = run_experiment(&sc, None).map_err(|e| e.to_string())?;
    Ok((sc, report.curve))
}

fn positive_transfer() -> Check {
    let (sc, c) = builtin_curve("logistic_positive")?;
    let above: Vec<usize> = (40..=200)
        .filter(|n| c.mean_regret[n - 1] >= c.mean_regret_baseline[n - 1])
        .collect();
    let expected = sc.prior.conditional_log_density(&sc.theta_t, &sc.theta_s)
        - sc.baseline_prior.conditional_log_density(&sc.theta_t, &sc.theta_s);
    let gap = c.mean_regret_baseline[199] - c.mean_regret[199];
    let detail = format!(
        "gap at n=200 = {gap:.4} (expected {expected:.4} ± 0.5); with-source {:.4}, target-only {:.4}; n in [40,200] not below: {above:?}",
        c.mean_regret[199], c.mean_regret_baseline[199]
    );
    ensure(above.is_empty() && (gap - expected).abs() <= 0.5, detail)
}

fn negative_transfer() -> Check {
    let (_, c) = builtin_curve("logistic_negative")?;
    let below: Vec<usize> = (80..=c.len())
        .filter(|n| c.mean_regret[n - 1] <= c.mean_regret_baseline[n - 1])
        .collect();
    ensure(
        below.is_empty(),
        format!(
            "with-source {:.4} vs target-only {:.4} at n=80, {:.4} vs {:.4} at n=200; n ≥ 80 not above: {below:?}",
            c.mean_regret[79],
            c.mean_regret_baseline[79],
            c.mean_regret[199],
            c.mean_regret_baseline[199]
        ),
    )
}

fn bernoulli_negative() -> Check {
    let (_, c) = builtin_curve("bernoulli_negative")?;
    let kl = 0.6 * (0.6f64 / 0.7).ln() + 0.4 * (0.4f64 / 0.3).ln();
    let slope = (c.mean_regret[1999] - c.mean_regret[1499]) / 500.0;
    let base = (c.mean_regret_baseline[1999] - c.mean_regret_baseline[1499]) / 500.0;
    ensure(
        (slope - kl).abs() <= 0.005 && base <= 0.002,
        format!("with-source slope {slope:.5} (oracle {kl:.5} ± 0.005), target-only slope {base:.5} ≤ 0.002"),
    )
}

fn bounded_loss_inequality() -> Check {
    let configs = [
        ("positive", "theta_s = 0.2, 0.4"),
        ("negative", "theta_s = 0.8, 0.2"),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (label, source) in configs {
        let sc = scenario(&format!(
            "family = logistic\ncovariates.mean = 5, -5\ncovariates.cov = 1, 1\ntheta_t = 0.3, 0.5\n{source}\nm = 1000\nn = 200\nprior.kind = gaussian\nprior.c = 0.1\nreps = 100\nseed = 3\nloss = zero_one\n"
        ));
        let report = run_experiment(&sc, None).map_err(|e| e.to_string())?;
        let c = &report.curve;
        let mut worst = f64::NEG_INFINITY;
        let mut at = 0;
        for k in 0..c.len() {
            let bound = c.bound[k].ok_or("missing bound column")?;
            if c.mean_regret[k] - bound > worst {
                worst = c.mean_regret[k] - bound;
                at = k + 1;
            }
        }
        ok &= worst <= 0.0;
        lines.push(format!(
            "{label}: max(regret − bound) = {worst:.4} at n={at} (regret {:.4} ± {:.4}, CMI {:.4} ± {:.4})",
            c.mean_regret[at - 1],
            c.stderr[at - 1],
            report.cmi.mean[at - 1],
            report.cmi.stderr[at - 1]
        ));
    }
    ensure(ok, lines.join("; "))
}

fn rate_regimes() -> Check {
    let blocks = FisherBlocks::identity(2, 1);
    let ns: Vec<u64> = vec![1, 4, 16, 100, 400, 2500, 10_000, 1_000_000];
    let mut detail = Vec::new();
    let mut ok = true;
    for growth in [Growth::Sublinear, Growth::Linear, Growth::Superlinear] {
        let rows = rate_regime_sweep(&blocks, growth, &ns).map_err(|e| e.to_string())?;
        let verified = verify_regime(&rows, growth, 1, 1e-12);
        let exact = rows.iter().all(|r| {
            let expected = 0.5 * (r.n as f64 / r.m as f64).ln_1p();
            (r.cost - expected).abs() <= 1e-15 * expected.abs().max(1.0)
        });
        ok &= verified && exact;
        detail.push(format!(
            "{}: cost {:.5} → {:.5}, verified {verified}, closed form {exact}",
            growth.as_str(),
            rows[0].cost,
            rows.last().unwrap().cost
        ));
    }
    ensure(ok, detail.join("; "))
}

fn oracle_equivalences() -> Check {
    let mut notes = Vec::new();

    let family = FamilyModel::bernoulli();
    let grid = Arc::new(GridSpec::regular(family.bounds(), 201).unwrap());
    let prior = PriorSpec::source_free(family.bounds().clone());
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut beta_err = 0.0f64;
    for theta in [0.1, 0.35, 0.6, 0.85] {
        let data = family.sample(&ParamPoint::scalar(theta), &mut rng, 80).unwrap();
        let (_, mut post) = condition_on_source(&prior, &family, &[], &grid, &grid).unwrap();
        for z in &data {
            post.observe(&family, z).unwrap();
        }
        let k = data.iter().filter(|z| matches!(z, Sample::Bit(true))).count() as f64;
        let (a, b) = (1.0 + k, 81.0 - k);
        let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        beta_err = beta_err
            .max((post.mean()[0] - a / (a + b)).abs())
            .max((post.covariance()[0] - var).abs());
    }
    notes.push(format!("Beta moments max err {beta_err:.1e}"));

    let logistic = FamilyModel::logistic_reference();
    let theta = ParamPoint::new(vec![0.3, 0.5]);
    let fisher = logistic.fisher_information(&theta).unwrap();
    let data = logistic.sample(&theta, &mut rng, 100_000).unwrap();
    let mut sum = DMatrix::zeros(2, 2);
    let mut sq = DMatrix::zeros(2, 2);
    for z in &data {
        let h = logistic.neg_hessian(theta.coords(), z).unwrap();
        sq += h.component_mul(&h);
        sum += h;
    }
    let n = data.len() as f64;
    let mean = &sum / n;
    let se = (&sq / n - mean.component_mul(&mean)).map(|v| (v.max(0.0) / (n - 1.0)).sqrt());
    let z_max = (0..4)
        .map(|i| (fisher[i] - mean[i]).abs() / (se[i] * 1.1f64.sqrt()))
        .fold(0.0, f64::max);
    notes.push(format!("Fisher vs MC Hessian max |z| {z_max:.2}"));

    let fd = {
        let h = 1e-3;
        let xs = logistic.sample(&theta, &mut rng, 1_000_000).unwrap();
        let ell = |d0: f64, d1: f64| {
            xs.iter()
                .map(|z| {
                    let Sample::Labeled { x, .. } = z else { unreachable!() };
                    let p = otl::math::sigmoid(0.3 * x[0] + 0.5 * x[1]);
                    let s = (0.3 + d0) * x[0] + (0.5 + d1) * x[1];
                    p * otl::math::log_sigmoid(s) + (1.0 - p) * otl::math::log_sigmoid(-s)
                })
                .sum::<f64>()
                / xs.len() as f64
        };
        let f0 = ell(0.0, 0.0);
        let d00 = (ell(h, 0.0) - 2.0 * f0 + ell(-h, 0.0)) / (h * h);
        let d11 = (ell(0.0, h) - 2.0 * f0 + ell(0.0, -h)) / (h * h);
        let d01 = (ell(h, h) - ell(h, -h) - ell(-h, h) + ell(-h, -h)) / (4.0 * h * h);
        -DMatrix::from_row_slice(2, 2, &[d00, d01, d01, d11])
    };
    let fd_rel = (0..4).map(|i| ((fisher[i] - fd[i]) / fd[i]).abs()).fold(0.0, f64::max);
    notes.push(format!("Fisher vs finite differences max rel {fd_rel:.1e}"));

    let mut chain_err = 0.0f64;
    for case in 0..20u64 {
        let bern = case % 2 == 0;
        let (fam, truth) = if bern {
            (family.clone(), ParamPoint::scalar(rng.random_range(0.1..0.9)))
        } else {
            (logistic.clone(), ParamPoint::new(vec![rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]))
        };
        let g = Arc::new(GridSpec::regular(fam.bounds(), if bern { 201 } else { 31 }).unwrap());
        let p = PriorSpec::uniform(otl::Conditional::GaussianAround { c: 0.2 }, fam.bounds().clone()).unwrap();
        let src = fam.sample(&truth, &mut rng, 20).unwrap();
        let tgt = fam.sample(&truth, &mut rng, 20).unwrap();
        let (_, start) = condition_on_source(&p, &fam, &src, &g, &g).unwrap();
        let batch = prefix_log_evidence(&start, &fam, &tgt).unwrap();
        let mut post = start;
        let mut acc = 0.0;
        for (k, z) in tgt.iter().enumerate() {
            acc += predictive_log_density(&post, &fam, z).unwrap();
            post = update_target(&post, &fam, z).unwrap();
            chain_err = chain_err.max((batch[k] - acc).abs());
        }
    }
    notes.push(format!("chain-rule max err {chain_err:.1e}"));

    ensure(beta_err <= 1e-3 && z_max <= 3.0 && fd_rel <= 0.02 && chain_err <= 1e-9, notes.join("; "))
}

fn csv_bytes(sc: &ScenarioConfig, threads: usize) -> Result<Vec<u8>, String> {
    let report = run_experiment(sc, Some(threads)).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    report.curve.write_csv(&mut out).map_err(|e| e.to_string())?;
    Ok(out)
}

fn determinism() -> Check {
    let bern = load_scenario("bernoulli_negative").map_err(|e| e.to_string())?;
    let a = csv_bytes(&bern, 1)?;
    let b = csv_bytes(&bern, 1)?;
    let c = csv_bytes(&bern, 4)?;
    let mut logistic = load_scenario("logistic_positive").map_err(|e| e.to_string())?;
    logistic.reps = 8;
    logistic.seed = 7;
    let d = csv_bytes(&logistic, 1)?;
    let e = csv_bytes(&logistic, 3)?;
    let f = csv_bytes(&logistic, 3)?;
    ensure(
        a == b && a == c && d == e && e == f,
        format!(
            "bernoulli_negative: {} bytes, identical across runs {} and pool sizes {}; logistic_positive (8 reps, seed 7): identical across pool sizes {} and runs {}",
            a.len(),
            a == b,
            a == c,
            d == e,
            e == f
        ),
    )
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "regret equals log-likelihood ratio", budget: Some(Duration::from_secs(60)), run: regret_equals_log_ratio },
        Criterion { name: "scalar asymptote", budget: Some(Duration::from_secs(60)), run: scalar_asymptote },
        Criterion { name: "general asymptote with shared coordinate", budget: Some(Duration::from_secs(120)), run: general_asymptote },
        Criterion { name: "positive transfer", budget: Some(Duration::from_secs(300)), run: positive_transfer },
        Criterion { name: "negative transfer", budget: Some(Duration::from_secs(300)), run: negative_transfer },
        Criterion { name: "bernoulli negative transfer slope", budget: Some(Duration::from_secs(120)), run: bernoulli_negative },
        Criterion { name: "bounded-loss regret inequality", budget: None, run: bounded_loss_inequality },
        Criterion { name: "rate regimes", budget: None, run: rate_regimes },
        Criterion { name: "oracle equivalences", budget: None, run: oracle_equivalences },
        Criterion { name: "determinism", budget: None, run: determinism },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let over = c.budget.is_some_and(|b| elapsed > b);
        let (pass, detail) = match outcome {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; exceeded time budget {:?}", c.budget.unwrap())),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {} [{:.1}s] {}",
            if pass { "PASS" } else { "FAIL" },
            c.name,
            elapsed.as_secs_f64(),
            detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
