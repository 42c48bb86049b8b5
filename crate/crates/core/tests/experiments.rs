use otl::experiments::{posterior_snapshot, run_experiment, RegretCurve};
use otl::online::CmiCurve;
use otl::scenario::{load_scenario, parse_scenario};

#[test]
fn informative_prior_concentrates_the_target_posterior() {
    let sc = load_scenario("logistic_positive").unwrap();
    let snap = posterior_snapshot(&sc, 10).unwrap();
    let with = snap.with_source.covariance_trace();
    let without = snap.target_only.covariance_trace();
    assert!(with < without, "{with} vs {without}");
    let mean = snap.with_source.mean();
    let dist = ((mean[0] - 0.3).powi(2) + (mean[1] - 0.5).powi(2)).sqrt();
    assert!(dist < 0.15, "{mean:?}");
}

#[test]
fn broad_prior_behaves_like_target_only() {
    let sc = load_scenario("logistic_prior_sweep").unwrap();
    for n in [10, 50, 200] {
        let snap = posterior_snapshot(&sc, n).unwrap();
        let with = snap.with_source.covariance_trace();
        let without = snap.target_only.covariance_trace();
        assert!((with / without - 1.0).abs() < 0.2, "n = {n}: {with} vs {without}");
    }
}

#[test]
fn large_source_sample_locates_the_source_parameter() {
    // at (0.8, 0.2) nearly all labels are 1 and the (1, 1) direction is weakly
    // identified, so that source needs a larger sample than the builtin's
    for (name, m) in [("logistic_positive", 5000), ("logistic_negative", 50_000), ("bernoulli_negative", 100_000)] {
        let mut sc = load_scenario(name).unwrap();
        sc.m = m;
        let snap = posterior_snapshot(&sc, 1).unwrap();
        let mean = snap.source.mean();
        for (a, b) in mean.iter().zip(sc.theta_s.coords()) {
            assert!((a - b).abs() < 0.05, "{name}: {mean:?}");
        }
    }
}

#[test]
fn snapshot_masses_are_one() {
    let sc = load_scenario("logistic_positive").unwrap();
    let snap = posterior_snapshot(&sc, 5).unwrap();
    for p in [&snap.source, &snap.with_source, &snap.target_only] {
        assert!((p.mass() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn regret_curve_round_trips_with_na_columns() {
    let mean = CmiCurve {
        mean: vec![0.1, 1.0 / 3.0, 2.0e-7],
        stderr: vec![0.0, 0.01, 0.001],
    };
    let base = CmiCurve {
        mean: vec![0.2, 0.4, 0.6],
        stderr: vec![0.05, 0.05, 0.05],
    };
    let curve = RegretCurve::new(&mean, &base, vec![None, Some(-1.25), Some(0.7)], vec![Some(0.5); 3], vec![None; 3]).unwrap();
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "1,0.1,0,0.2,0.05,NA,0.5,NA");
    assert_eq!(text.lines().nth(2).unwrap(), "2,0.333333333,0.01,0.4,0.05,-1.25,0.5,NA");
    assert_eq!(RegretCurve::parse_csv(buf.as_slice()).unwrap(), curve);
}

#[test]
fn regret_curve_rejects_bad_input() {
    let header = "n,mean_regret,stderr,mean_regret_baseline,stderr_baseline,asymptote,asymptote_baseline,bound\n";
    let err = RegretCurve::parse_csv(format!("{header}1,x,0,0,0,NA,NA,NA\n").as_bytes()).unwrap_err();
    assert!(err.to_string().contains("mean_regret"), "{err}");
    assert!(RegretCurve::parse_csv("n,mean\n1,2\n".as_bytes()).is_err());
    assert!(RegretCurve::parse_csv(format!("{header}1,0,0\n").as_bytes()).is_err());
    let mismatched = RegretCurve::new(
        &CmiCurve { mean: vec![0.0], stderr: vec![0.0] },
        &CmiCurve { mean: vec![0.0, 1.0], stderr: vec![0.0, 0.0] },
        vec![None],
        vec![None],
        vec![None],
    );
    assert!(mismatched.is_err());
}

#[test]
fn zero_one_runs_carry_a_bound_and_no_asymptote() {
    let sc = parse_scenario(
        "family = logistic\ntheta_t = 0.3, 0.5\ntheta_s = 0.2, 0.4\nm = 100\nn = 30\nprior.kind = gaussian\nprior.c = 0.1\nreps = 6\ngrid = 21\nloss = zero_one\nfisher_draws = 1000\n",
        "z",
    )
    .unwrap();
    let report = run_experiment(&sc, Some(2)).unwrap();
    let c = &report.curve;
    assert!(c.asymptote.iter().all(Option::is_none));
    assert!(c.bound.iter().all(Option::is_some));
    assert!(c.stderr.iter().all(|s| *s >= 0.0));
    for k in 0..c.len() {
        let cmi = report.cmi.mean[k].max(0.0);
        let expected = (2.0 * (k + 1) as f64 * cmi).sqrt();
        assert!((c.bound[k].unwrap() - expected).abs() <= 1e-8 * expected.max(1.0));
    }
}

#[test]
fn segmented_runs_have_no_asymptote() {
    let mut sc = load_scenario("time_variant_demo").unwrap();
    sc.reps = 4;
    let report = run_experiment(&sc, Some(1)).unwrap();
    assert_eq!(report.curve.len(), 600);
    assert!(report.curve.asymptote.iter().all(Option::is_none));
    assert!(report.curve.asymptote_baseline.iter().all(Option::is_none));
}
