use std::collections::HashSet;
use std::io::Write;

use mupscale_core::microtrain::param_count;
use mupscale_core::param::{base_spec, BaseKind, OptimizerKind};
use mupscale_core::sweep::{
    execute, groups, observations, plan, planned_steps, Regime, RecordStore, RunRecord, SweepConfig, WdScaling,
};
use proptest::prelude::*;

fn config(extra: &str) -> SweepConfig {
    let base = r#"{
        "version": 1,
        "specs": ["SP", "muP"],
        "widths": [8, 16, 32],
        "nu_grid": [-8, -6, -4, -2, 0],
        "regime": {"kind": "fixed_steps", "steps": 12},
        "network": {"nonlinearity": "tanh"},
        "task": {"kind": "teacher_student_regression", "d_in": 6, "d_out": 3, "dataset_size": 64,
                 "teacher_width": 16, "eval_size": 32, "seed": 4},
        "train": {"batch_size": 8},
        "seed": 11
    }"#;
    let mut v: serde_json::Value = serde_json::from_str(base).unwrap();
    let patch: serde_json::Value = serde_json::from_str(if extra.is_empty() { "{}" } else { extra }).unwrap();
    for (k, x) in patch.as_object().unwrap() {
        v[k] = x.clone();
    }
    SweepConfig::from_json(&v.to_string()).unwrap()
}

fn sorted(mut r: Vec<RunRecord>) -> Vec<String> {
    r.sort_by(|a, b| {
        (a.spec_name.as_str(), a.width, a.lambda, a.nu).partial_cmp(&(b.spec_name.as_str(), b.width, b.lambda, b.nu)).unwrap()
    });
    r.iter().map(|x| serde_json::to_string(x).unwrap()).collect()
}

#[test]
fn empty_store_plans_the_full_cross_product() {
    let cfg = config("");
    let keys = plan(&cfg, &[]).unwrap();
    assert_eq!(keys.len(), 2 * 3 * 5);
    let cfg = config(r#"{"lambda_grid": [0, 0.1, 1]}"#);
    let keys = plan(&cfg, &[]).unwrap();
    assert_eq!(keys.len(), 2 * 3 * 5 * 3);
    let ids: HashSet<String> = keys.iter().map(|k| format!("{k:?}")).collect();
    assert_eq!(ids.len(), keys.len());
    // deterministic ordering
    assert_eq!(keys, plan(&cfg, &[]).unwrap());
    assert_eq!(keys[0].spec_name, "SP");
    assert_eq!((keys[0].width, keys[0].nu, keys[0].lambda), (8, -8.0, 0.0));
    assert_eq!((keys[1].width, keys[1].nu), (8, -6.0));
}

#[test]
fn execute_then_resume_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::new(dir.path().join("runs.jsonl"));
    let cfg = config("");
    let mut seen = 0;
    let s = execute(&cfg, &store, 1, |done, total, _| {
        seen = done;
        assert_eq!(total, 30);
    })
    .unwrap();
    assert_eq!((s.planned, s.executed, seen), (30, 30, 30));
    let recs = store.load().unwrap();
    assert_eq!(recs.len(), 30);
    assert!(plan(&cfg, &recs).unwrap().is_empty());
    let again = execute(&cfg, &store, 1, |_, _, _| panic!("nothing to run")).unwrap();
    assert_eq!((again.planned, again.executed), (0, 0));
    assert_eq!(store.load().unwrap().len(), 30);

    // extending the grid only runs the new points
    let wider = config(r#"{"nu_grid": [-8, -6, -4, -2, 0, 2]}"#);
    assert_eq!(plan(&wider, &recs).unwrap().len(), 6);
    let s = execute(&wider, &store, 2, |_, _, _| {}).unwrap();
    assert_eq!(s.executed, 6);
    assert_eq!(store.load().unwrap().len(), 36);
}

#[test]
fn parallelism_does_not_change_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(r#"{"lambda_grid": [0, 0.5]}"#);
    let one = RecordStore::new(dir.path().join("a.jsonl"));
    let eight = RecordStore::new(dir.path().join("b.jsonl"));
    execute(&cfg, &one, 1, |_, _, _| {}).unwrap();
    execute(&cfg, &eight, 8, |_, _, _| {}).unwrap();
    assert_eq!(sorted(one.load().unwrap()), sorted(eight.load().unwrap()));
}

#[test]
fn records_have_the_documented_keys() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::new(dir.path().join("r.jsonl"));
    let cfg = config(r#"{"specs": ["muP"], "widths": [8], "nu_grid": [-4]}"#);
    execute(&cfg, &store, 1, |_, _, _| {}).unwrap();
    let text = std::fs::read_to_string(store.path()).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for k in ["spec_name", "width", "nu", "lambda", "regime", "final_loss", "steps_run", "seed", "schema_version"] {
        assert!(v.get(k).is_some(), "missing {k}: {v}");
    }
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["regime"], "fixed_steps:12");
    assert_eq!(v["steps_run"], 12);
    assert_eq!(v["seed"], cfg.run_seed(8));
}

#[test]
fn diverged_runs_are_kept_as_infinity() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::new(dir.path().join("r.jsonl"));
    let cfg = config(
        r#"{"specs": ["SP"], "optimizer": "SGD", "widths": [32], "nu_grid": [-4, 14],
            "train": {"batch_size": 8, "schedule": {"warmup_frac": 0, "stable_frac": 1, "decay_frac": 0}}}"#,
    );
    execute(&cfg, &store, 1, |_, _, _| {}).unwrap();
    let recs = store.load().unwrap();
    assert_eq!(recs.len(), 2);
    let bad = recs.iter().find(|r| r.nu == 14.0).unwrap();
    assert_eq!(bad.final_loss, f64::INFINITY);
    assert!(std::fs::read_to_string(store.path()).unwrap().contains(r#""final_loss":"inf""#));
    let good = recs.iter().find(|r| r.nu == -4.0).unwrap();
    assert!(good.final_loss.is_finite());
    assert!(plan(&cfg, &recs).unwrap().is_empty());
}

#[test]
fn torn_final_line_is_ignored_and_repaired() {
    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::new(dir.path().join("r.jsonl"));
    let cfg = config(r#"{"specs": ["SP"], "widths": [8], "nu_grid": [-4, -2]}"#);
    execute(&cfg, &store, 1, |_, _, _| {}).unwrap();
    let mut f = std::fs::OpenOptions::new().append(true).open(store.path()).unwrap();
    f.write_all(br#"{"schema_version":1,"spec_name":"SP","wid"#).unwrap();
    drop(f);
    assert_eq!(store.load().unwrap().len(), 2);
    let cfg = config(r#"{"specs": ["SP"], "widths": [8], "nu_grid": [-4, -2, 0]}"#);
    let s = execute(&cfg, &store, 1, |_, _, _| {}).unwrap();
    assert_eq!(s.executed, 1);
    assert_eq!(store.load().unwrap().len(), 3);

    // corruption before the last line is an error, not silently skipped
    let text = std::fs::read_to_string(store.path()).unwrap();
    std::fs::write(store.path(), format!("garbage\n{text}")).unwrap();
    assert!(store.load().is_err());
}

#[test]
fn fixed_tpp_steps_scale_with_parameter_count() {
    let cfg = config(
        r#"{"widths": [64, 128], "regime": {"kind": "fixed_tpp", "tpp": 20, "tokens_per_step": 256,
            "wd_scaling": "constant_eta_lambda"}}"#,
    );
    let spec = base_spec(BaseKind::MuP, OptimizerKind::Adam);
    let steps = planned_steps(&cfg, &spec);
    let (t64, t128) = (steps[0].1 as f64, steps[1].1 as f64);
    let p = |n| param_count(n, 6, 3, false, false) as f64;
    // independent count: d_in*n + n^2 + n*d_out
    assert_eq!(p(64), (6 * 64 + 64 * 64 + 64 * 3) as f64);
    assert_eq!(t64, (20.0 * p(64) / 256.0).ceil());
    assert!((t128 - t64 * p(128) / p(64)).abs() <= 1.0);
    let ratio = t128 / t64;
    assert!((ratio - 4.0).abs() < 0.25, "{ratio}");
}

#[test]
fn inverse_width_squared_quarters_lambda_per_doubling() {
    let r = Regime::FixedTpp { tpp: 20.0, tokens_per_step: 64, wd_scaling: WdScaling::InverseWidthSquared };
    assert_eq!(r.effective_lambda(0.1, 64, 64), 0.1);
    assert_eq!(r.effective_lambda(0.1, 128, 64), 0.025);
    let c = Regime::FixedTpp { tpp: 20.0, tokens_per_step: 64, wd_scaling: WdScaling::ConstantEtaLambda };
    assert_eq!(c.effective_lambda(0.1, 128, 64), 0.1);
    assert_eq!(Regime::FixedSteps { steps: 5 }.effective_lambda(0.3, 512, 8), 0.3);

    let dir = tempfile::tempdir().unwrap();
    let store = RecordStore::new(dir.path().join("r.jsonl"));
    let cfg = config(
        r#"{"specs": ["muP"], "widths": [8, 16], "nu_grid": [-4], "lambda_grid": [0.2],
            "regime": {"kind": "fixed_tpp", "tpp": 1, "tokens_per_step": 64, "wd_scaling": "inverse_width_squared"}}"#,
    );
    execute(&cfg, &store, 1, |_, _, _| {}).unwrap();
    let recs = store.load().unwrap();
    let eff: Vec<(usize, f64, f64)> = recs.iter().map(|r| (r.width, r.lambda, r.effective_lambda)).collect();
    assert!(eff.contains(&(8, 0.2, 0.2)));
    assert!(eff.contains(&(16, 0.2, 0.05)));
    assert!(recs.iter().all(|r| r.regime == "fixed_tpp:1:64:inverse_width_squared"));
}

#[test]
fn invalid_configs_are_rejected() {
    let base = r#"{"version": 1, "specs": ["SP"], "widths": [8, 16], "nu_grid": [-2, -1],
        "regime": {"kind": "fixed_steps", "steps": 3},
        "task": {"kind": "teacher_student_regression", "d_in": 2, "d_out": 2, "dataset_size": 8},
        "train": {"batch_size": 2}}"#;
    assert!(SweepConfig::from_json(base).is_ok());
    for (from, to) in [
        (r#""widths": [8, 16]"#, r#""widths": [16, 8]"#),
        (r#""nu_grid": [-2, -1]"#, r#""nu_grid": [-1, -1]"#),
        (r#""specs": ["SP"]"#, r#""specs": ["SP", "SP"]"#),
        (r#""specs": ["SP"]"#, r#""specs": ["XP"]"#),
        (r#""steps": 3"#, r#""steps": 0"#),
        (r#""version": 1"#, r#""version": 2"#),
        (r#""batch_size": 2"#, r#""batch_size": 0"#),
    ] {
        let bad = base.replace(from, to);
        assert!(SweepConfig::from_json(&bad).is_err(), "{to}");
    }
    let neg = base.replace(r#""nu_grid""#, r#""lambda_grid": [-1], "nu_grid""#);
    assert!(SweepConfig::from_json(&neg).is_err());
}

#[test]
fn observations_and_groups() {
    let rec = |spec: &str, width, nu, lambda, loss| RunRecord {
        schema_version: 1,
        spec_name: spec.into(),
        width,
        nu,
        lambda,
        effective_lambda: lambda,
        regime: "fixed_steps:1".into(),
        final_loss: loss,
        steps_run: 1,
        seed: 0,
    };
    let recs = vec![rec("SP", 8, -1.0, 0.0, 1.0), rec("muP", 8, -1.0, 0.0, 2.0), rec("SP", 16, -1.0, 0.1, 3.0)];
    assert_eq!(groups(&recs), vec![("SP".to_string(), 0.0), ("muP".to_string(), 0.0), ("SP".to_string(), 0.1)]);
    let obs = observations(&recs, "SP", 0.0);
    assert_eq!(obs.len(), 1);
    assert_eq!((obs[0].width, obs[0].nu, obs[0].loss), (8, -1.0, 1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plan_minus_existing_is_exact(mask in proptest::collection::vec(any::<bool>(), 30)) {
        let cfg = config("");
        let all = plan(&cfg, &[]).unwrap();
        let existing: Vec<RunRecord> = all
            .iter()
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|(k, _)| RunRecord {
                schema_version: 1,
                spec_name: k.spec_name.clone(),
                width: k.width,
                nu: k.nu,
                lambda: k.lambda,
                effective_lambda: k.lambda,
                regime: k.regime.clone(),
                final_loss: 1.0,
                steps_run: 12,
                seed: k.seed,
            })
            .collect();
        let rest = plan(&cfg, &existing).unwrap();
        prop_assert_eq!(rest.len(), mask.iter().filter(|m| !**m).count());
        let expect: Vec<_> = all.iter().zip(&mask).filter(|(_, m)| !**m).map(|(k, _)| k.clone()).collect();
        prop_assert_eq!(rest, expect);
    }

    #[test]
    fn tpp_ratio_tracks_param_ratio(n1 in 4usize..256, k in 2usize..5, tpp in 1.0f64..40.0, tps in 1usize..512) {
        let r = Regime::FixedTpp { tpp, tokens_per_step: tps, wd_scaling: WdScaling::ConstantEtaLambda };
        let n2 = n1 * k;
        let (p1, p2) = (param_count(n1, 6, 3, false, false), param_count(n2, 6, 3, false, false));
        let (t1, t2) = (r.steps_for(p1) as f64, r.steps_for(p2) as f64);
        // T(n2) within one step of T(n1) * P(n2) / P(n1), up to the rounding of T(n1)
        let scaled = t1 * p2 as f64 / p1 as f64;
        prop_assert!((t2 - scaled).abs() <= 1.0 + p2 as f64 / p1 as f64);
        prop_assert!(t2 >= tpp * p2 as f64 / tps as f64);
    }
}
