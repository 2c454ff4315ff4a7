use smoothwass::estimator::estimate_vs_dense;
use smoothwass::harness::dense_reference;
use smoothwass::inference::test_from_distribution;
use smoothwass::stats::{mean, sample_variance};
use smoothwass::{
    bootstrap_naive_null, bootstrap_one_sample_alt, bootstrap_one_sample_null, bootstrap_pooled_null,
    bootstrap_two_sample_alt, confidence_interval, equality_test, estimate_swd, plugin_variance, sample,
    BootstrapDistribution, BootstrapScheme, DistributionSpec, NoiseCoupling, Sample, SeedPath, SmoothingConfig,
    VarianceMode,
};

fn seed(label: &str) -> SeedPath {
    SeedPath::root(31).child(label)
}

fn unif(lo: f64, hi: f64, n: usize, label: &str) -> Sample {
    sample(&DistributionSpec::uniform(lo, hi), n, &seed(label)).unwrap()
}

/// Bootstrap mean near zero and variance near the plug-in `v^2`.
fn check_alt_law(values: &[f64], v2: f64) {
    let (m, var) = (mean(values), sample_variance(values));
    let se = (var / values.len() as f64).sqrt();
    assert!(m.abs() <= 3.0 * se, "mean {m} se {se}");
    assert!((var - v2).abs() <= 0.3 * v2, "bootstrap variance {var} vs plug-in {v2}");
}

#[test]
fn one_sample_alt_matches_plugin_variance() {
    let cfg = SmoothingConfig::new(2.0, 0.5, 16).unwrap();
    let n = 400;
    let x = unif(0.0, 1.0, n, "alt1-x");
    let dense = dense_reference(&DistributionSpec::uniform(2.0, 3.0), n, 0.5, None, None, &seed("alt1-dense")).unwrap();
    let est = estimate_vs_dense(&x, &dense, &cfg, &seed("alt1-est")).unwrap();
    let v2 = plugin_variance(&est, VarianceMode::OneSample).unwrap().v_squared;
    let dist = bootstrap_one_sample_alt(&x, &dense, &cfg, 500, &seed("alt1-boot")).unwrap();
    assert_eq!(dist.scheme, BootstrapScheme::OneSampleAlt);
    check_alt_law(&dist.values, v2);
}

#[test]
fn two_sample_alt_matches_plugin_variance() {
    let cfg = SmoothingConfig::new(2.0, 0.5, 16).unwrap();
    let n = 400;
    let (x, y) = (unif(0.0, 1.0, n, "alt2-x"), unif(2.0, 3.0, n, "alt2-y"));
    let est = estimate_swd(&x, &y, &cfg, &seed("alt2-est"), false).unwrap();
    let v2 = plugin_variance(&est, VarianceMode::TwoSample).unwrap().v_squared;
    let dist = bootstrap_two_sample_alt(&x, &y, &cfg, 500, &seed("alt2-boot")).unwrap();
    check_alt_law(&dist.values, v2);
}

#[test]
fn bootstraps_are_deterministic_in_the_seed() {
    let cfg = SmoothingConfig::new(2.0, 0.5, 4).unwrap();
    let (x, y) = (unif(0.0, 1.0, 30, "det-x"), unif(0.2, 1.2, 30, "det-y"));
    let a = bootstrap_pooled_null(&x, &y, &cfg, 40, &seed("det")).unwrap();
    let b = bootstrap_pooled_null(&x, &y, &cfg, 40, &seed("det")).unwrap();
    assert_eq!(a, b);
    let c = bootstrap_pooled_null(&x, &y, &cfg, 40, &seed("det-other")).unwrap();
    assert_ne!(a.values, c.values);
    let d = bootstrap_one_sample_null(&x, &cfg, 40, &seed("det")).unwrap();
    assert_eq!(d, bootstrap_one_sample_null(&x, &cfg, 40, &seed("det")).unwrap());
}

#[test]
fn null_bootstraps_are_nonnegative_sorted_and_sized() {
    let cfg = SmoothingConfig::new(2.0, 0.5, 4).unwrap();
    let (x, y) = (unif(0.0, 1.0, 25, "nn-x"), unif(0.0, 1.0, 25, "nn-y"));
    let dists = [
        bootstrap_pooled_null(&x, &y, &cfg, 37, &seed("nn")).unwrap(),
        bootstrap_one_sample_null(&x, &cfg, 37, &seed("nn")).unwrap(),
        bootstrap_naive_null(&x, &y, &cfg, 37, &seed("nn")).unwrap(),
    ];
    for d in &dists {
        assert_eq!(d.len(), 37);
        assert!(d.scaled);
        assert!(d.values.iter().all(|v| *v >= 0.0));
        assert!(d.values.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn p_values_and_decisions_follow_the_distribution() {
    let dist = BootstrapDistribution {
        values: (1..=99).map(f64::from).collect(),
        scheme: BootstrapScheme::PooledNull,
        seed_path: seed("fixed"),
        scaled: true,
    };
    let low = test_from_distribution(0.5, &dist, 0.05).unwrap();
    assert_eq!(low.p_value, 1.0);
    assert!(!low.reject);
    let high = test_from_distribution(200.0, &dist, 0.05).unwrap();
    assert_eq!(high.p_value, 0.01);
    assert!(high.reject);
    // critical value is values[ceil(0.95 * 99) - 1] = 95
    assert_eq!(high.critical_value, 95.0);
    let mid = test_from_distribution(50.0, &dist, 0.05).unwrap();
    assert_eq!(mid.p_value, 51.0 / 100.0);
}

#[test]
fn equality_test_p_value_lies_in_range() {
    let cfg = SmoothingConfig::new(2.0, 0.5, 4).unwrap();
    let (x, y) = (unif(0.0, 1.0, 30, "eq-x"), unif(0.0, 1.0, 30, "eq-y"));
    for coupling in [NoiseCoupling::Independent, NoiseCoupling::Common] {
        let t = equality_test(&x, &y, &cfg, 0.1, 50, &seed("eq"), coupling).unwrap();
        assert!((1.0 / 51.0..=1.0).contains(&t.p_value));
        assert_eq!(t.reject, t.statistic > t.critical_value);
    }
    let far = unif(5.0, 6.0, 30, "eq-far");
    assert!(equality_test(&x, &far, &cfg, 0.1, 50, &seed("eq"), NoiseCoupling::Independent).unwrap().reject);
}

#[test]
fn interval_brackets_a_clamped_range() {
    let cfg = SmoothingConfig::new(2.0, 0.5, 4).unwrap();
    let (x, y) = (unif(0.0, 1.0, 40, "ci-x"), unif(1.0, 2.0, 40, "ci-y"));
    let ci = confidence_interval(&x, &y, &cfg, 0.05, 100, &seed("ci")).unwrap();
    assert!(0.0 <= ci.lo && ci.lo <= ci.hi);
    assert!(ci.lo <= ci.estimate && ci.estimate <= ci.hi, "{ci:?}");
}

#[test]
fn bad_arguments_are_rejected() {
    let cfg = SmoothingConfig::new(2.0, 0.5, 4).unwrap();
    let (x, y) = (unif(0.0, 1.0, 10, "bad-x"), unif(0.0, 1.0, 12, "bad-y"));
    assert!(bootstrap_pooled_null(&x, &x, &cfg, 0, &seed("bad")).is_err());
    assert!(bootstrap_two_sample_alt(&x, &y, &cfg, 10, &seed("bad")).is_err());
    assert!(confidence_interval(&x, &x, &cfg, 1.0, 10, &seed("bad")).is_err());
}
