use fpp_ihrg::harness::{run_experiment, run_suite, write_outputs, ExperimentConfig, ExperimentName, Summary, Table};
use fpp_ihrg::kernel::KernelSpec;
use fpp_ihrg::stats::{cdf_exp, cdf_normal, ks_against, ks_two_sample_values, moments};

fn er() -> KernelSpec {
    KernelSpec::Finite {
        mu: vec![1.0],
        kappa: vec![vec![2.0]],
    }
}

fn col(t: &Table, name: &str) -> Vec<f64> {
    let i = t
        .header
        .split(',')
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    t.rows
        .iter()
        .map(|r| r.split(',').nth(i).unwrap().parse().unwrap())
        .collect()
}

fn criterion(s: &Summary, name: &str) -> f64 {
    s.criterion(name).unwrap_or_else(|| panic!("no criterion {name}")).value
}

#[test]
fn hopcount_summary_is_recomputable_from_rows() {
    let cfg = ExperimentConfig::new(ExperimentName::HopcountClt, er(), vec![800], 80, 5);
    let res = run_experiment(&cfg).unwrap();
    let t = res.table("hopcount_clt").unwrap();
    let s = &res.summary;
    assert_eq!(t.rows.len(), s.accepted);
    let gh = col(t, "graph_Hn");
    let bh = col(t, "bp_Hn");
    assert_eq!(moments(&gh).mean, s.value("hop_mean_graph_n800").unwrap());
    assert_eq!(moments(&bh).mean, s.value("hop_mean_bp_n800").unwrap());
    assert_eq!(
        ks_against(&col(t, "z_graph"), cdf_normal).unwrap(),
        criterion(s, "hop_ks_graph_n800")
    );
    assert_eq!(
        ks_two_sample_values(&col(t, "graph_Pn"), &col(t, "bp_Pn")).unwrap(),
        criterion(s, "route_ks_weight_n800")
    );
    assert_eq!(
        ks_two_sample_values(&gh, &bh).unwrap(),
        criterion(s, "route_ks_hopcount_n800")
    );
}

#[test]
fn collision_summary_is_recomputable_from_rows() {
    let mut cfg = ExperimentConfig::new(ExperimentName::CollisionPpp, er(), vec![900], 500, 8);
    cfg.params.i_max = 5;
    let res = run_experiment(&cfg).unwrap();
    let t = res.table("collision_ppp").unwrap();
    let s = &res.summary;
    let (c1, a_n) = (col(t, "C1"), col(t, "a_n"));
    let x: Vec<f64> = c1.iter().zip(&a_n).map(|(c, a)| c * a / 900.0).collect();
    let rate = s.value("rate_n900").unwrap();
    let ks = ks_against(&x, |v| cdf_exp(v, rate).unwrap()).unwrap();
    assert!((ks - criterion(s, "ks_c1_n900")).abs() < 1e-12);
    let hn = col(t, "Hn");
    let (gx, gy) = (col(t, "Gx"), col(t, "Gy"));
    for i in 0..hn.len() {
        assert_eq!(hn[i], gx[i] + gy[i] + 1.0);
    }
}

#[test]
fn gumbel_summary_is_recomputable_from_rows() {
    let cfg = ExperimentConfig::new(ExperimentName::GumbelMin, er(), vec![], 2_000, 2);
    let res = run_experiment(&cfg).unwrap();
    let t = &res.tables[0];
    let v: Vec<f64> = t
        .rows
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(moments(&v).mean, res.summary.value("min_mean").unwrap());
}

#[test]
fn outputs_are_written_and_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::new(ExperimentName::Embedding, er(), vec![30], 20, 1);
    let res = run_experiment(&cfg).unwrap();
    let written = write_outputs(&res, dir.path()).unwrap();
    assert!(written.iter().all(|p| p.exists()));
    let json = std::fs::read_to_string(dir.path().join("embedding.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["accepted"], 20);
    let csv = std::fs::read_to_string(dir.path().join("embedding.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn configs_are_strict() {
    let ok = r#"{"experiment":"embedding","kernel":{"type":"finite","mu":[1.0],"kappa":[[2.0]]},
                 "n_values":[20],"replications":3,"seed":4}"#;
    assert!(ExperimentConfig::from_json(ok).unwrap().validate().is_ok());
    let typo = ok.replace("\"seed\"", "\"sead\"");
    assert!(ExperimentConfig::from_json(&typo).is_err());
    let zero = ok.replace("\"replications\":3", "\"replications\":0");
    assert!(ExperimentConfig::from_json(&zero).unwrap().validate().is_err());
    let sub = ok
        .replace("[[2.0]]", "[[0.5]]")
        .replace("\"embedding\"", "\"gumbel_min\"");
    assert!(run_experiment(&ExperimentConfig::from_json(&sub).unwrap()).is_err());
}

#[test]
fn dense_setting_refuses_fixed_kernels() {
    let cfg = ExperimentConfig::new(ExperimentName::DenseSetting, er(), vec![500], 5, 1);
    assert!(run_experiment(&cfg).is_err());
}

#[test]
fn suite_reports_invalid_entries_as_failures() {
    let entries: Vec<serde_json::Value> = serde_json::from_str(
        r#"[
            {"experiment":"embedding","kernel":{"type":"finite","mu":[1.0],"kappa":[[2.0]]},
             "n_values":[20],"replications":3,"seed":4},
            {"experiment":"embedding","kernel":{"type":"finite","mu":[1.0],"kappa":[[2.0]]},
             "n_values":[20],"replications":3,"seed":4,"bogus":1}
        ]"#,
    )
    .unwrap();
    let rep = run_suite(&entries, Some(2));
    assert_eq!(rep.entries.len(), 2);
    assert!(rep.entries[0].passed());
    assert!(rep.entries[1].error.is_some());
    assert!(!rep.all_pass);
    assert!(!rep.failures.is_empty());
}

#[test]
fn rows_do_not_depend_on_worker_count() {
    let mut cfg = ExperimentConfig::new(ExperimentName::CollisionPpp, er(), vec![600], 30, 12);
    cfg.params.i_max = 5;
    cfg.workers = Some(1);
    let a = run_experiment(&cfg).unwrap();
    cfg.workers = Some(3);
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.tables, b.tables);
    assert_eq!(a.summary.values, b.summary.values);
}
