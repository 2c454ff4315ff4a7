use proptest::prelude::*;
use serde_json::json;

use smoothwass::harness::read_rows_csv;
use smoothwass::stats::{mean, sample_variance};
use smoothwass::{ks_two_sample, run_experiment, run_replications, DistributionSpec, ExperimentConfig, SeedPath, Summary};

/// Brute-force KS: evaluate both ECDFs at every data point.
fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], t: f64| s.iter().filter(|v| **v <= t).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&t| (ecdf(a, t) - ecdf(b, t)).abs()).fold(0.0, f64::max)
}

#[test]
fn ks_small_examples() {
    assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), 0.0);
    assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 1.0);
    assert_eq!(ks_two_sample(&[0.0, 1.0], &[0.5]).unwrap(), 0.5);
    assert!(ks_two_sample(&[], &[1.0]).is_err());
}

proptest! {
    #[test]
    fn ks_matches_brute_force(a in prop::collection::vec(-5i32..5, 1..40), b in prop::collection::vec(-5i32..5, 1..40)) {
        // small integer support forces ties
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        prop_assert!((ks_two_sample(&a, &b).unwrap() - ks_oracle(&a, &b)).abs() <= 1e-15);
    }
}

fn spec(lo: f64, hi: f64) -> serde_json::Value {
    serde_json::to_value(DistributionSpec::uniform(lo, hi)).unwrap()
}

fn config(params: serde_json::Value, reps: usize, parallelism: usize) -> ExperimentConfig {
    ExperimentConfig {
        command: "two_sample_null_mc".into(),
        params,
        master_seed: 11,
        replications: reps,
        parallelism,
        out: None,
    }
}

#[test]
fn rows_do_not_depend_on_thread_count() {
    let params = json!({"spec": spec(0.0, 1.0), "n": 12, "p": 2.0, "sigma": 0.5, "m": 2});
    for reps in [1, 7] {
        let a = run_experiment(&config(params.clone(), reps, 1)).unwrap();
        let b = run_experiment(&config(params.clone(), reps, 3)).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows_csv_string().unwrap(), b.rows_csv_string().unwrap());
        assert_eq!(a.metadata.config_hash, b.metadata.config_hash);
    }
}

#[test]
fn config_hash_tracks_what_determines_rows() {
    let params = json!({"spec": spec(0.0, 1.0), "n": 12, "p": 2.0, "sigma": 0.5});
    let base = config(params.clone(), 5, 1);
    let mut threads = base.clone();
    threads.parallelism = 4;
    threads.out = Some("elsewhere".into());
    assert_eq!(base.hash(), threads.hash());
    let mut reseeded = base.clone();
    reseeded.master_seed = 12;
    assert_ne!(base.hash(), reseeded.hash());
    let changed = config(json!({"spec": spec(0.0, 1.0), "n": 13, "p": 2.0, "sigma": 0.5}), 5, 1);
    assert_ne!(base.hash(), changed.hash());
    assert_eq!(base.hash().len(), 64);
}

#[test]
fn summary_recomputes_from_written_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(json!({"spec": spec(0.0, 1.0), "n": 10, "p": 2.0, "sigma": 0.5, "m": 2}), 9, 2);
    cfg.out = Some(dir.path().to_path_buf());
    let rep = run_experiment(&cfg).unwrap();
    let (columns, rows) = read_rows_csv(std::fs::File::open(dir.path().join("rows.csv")).unwrap()).unwrap();
    assert_eq!(columns, rep.columns);
    assert_eq!(rows, rep.rows);
    assert_eq!(Summary::from_rows(&columns, &rows), rep.summary);
    let stat = rep.column("stat").unwrap();
    let s = rep.summary.column("stat").unwrap();
    assert!((s.mean - mean(&stat)).abs() <= 1e-12);
    assert!((s.variance - sample_variance(&stat)).abs() <= 1e-12);
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(written["metadata"]["config_hash"], rep.metadata.config_hash.as_str());
}

#[test]
fn failed_replicates_make_a_partial_report() {
    let rep = run_replications(vec!["v".into()], 6, 2, &SeedPath::root(1), |r, _| {
        if r % 3 == 0 {
            Err(smoothwass::Error::Config(format!("replicate {r} fails")))
        } else {
            Ok(vec![r as f64])
        }
    })
    .unwrap();
    assert!(rep.is_partial());
    assert_eq!(rep.failures.iter().map(|f| f.replicate).collect::<Vec<_>>(), vec![0, 3]);
    assert_eq!(rep.column("v").unwrap(), vec![1.0, 2.0, 4.0, 5.0]);
}

#[test]
fn validation_rejects_bad_configs() {
    let mut zero = config(json!({"spec": spec(0.0, 1.0), "n": 10, "p": 2.0, "sigma": 0.5}), 0, 1);
    assert!(run_experiment(&zero).is_err());
    zero.replications = 1;
    zero.command = "no_such_command".into();
    assert!(zero.validate().is_err());
    let quad_2d = ExperimentConfig {
        command: "null_mc".into(),
        params: json!({"spec": DistributionSpec::gaussian(vec![0.0, 0.0], vec![1.0, 1.0]),
                       "n": 10, "p": 2.0, "sigma": 0.5, "method": "quadrature"}),
        master_seed: 1,
        replications: 1,
        parallelism: 1,
        out: None,
    };
    let err = quad_2d.validate().unwrap_err().to_string();
    assert!(err.contains("quadrature"), "{err}");
    let quad_1d = ExperimentConfig {
        params: json!({"spec": spec(0.0, 1.0), "n": 10, "p": 2.0, "sigma": 0.5, "method": "quadrature"}),
        ..quad_2d
    };
    quad_1d.validate().unwrap();
    assert!(ExperimentConfig::from_json(r#"{"command":"null_mc","master_seed":1,"R":1,"extra":0}"#).is_err());
}
