mod common;

use common::*;
use serde_json::Value;
use winseq::design::Allocation;
use winseq::sim::{generate_trial, GenerationSpec};
use winseq::winstats::staged_statistics;

fn strip_timestamp(text: &str) -> Value {
    let mut v: Value = serde_json::from_str(text).unwrap();
    v.as_object_mut().unwrap().remove("generated_at_unix");
    v
}

#[test]
fn every_command_emits_a_schema_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 400);
    let cfg = cfg.to_str().unwrap();
    let csv = dir.path().join("trial.csv");
    let csv = csv.to_str().unwrap();
    let hf = config_path_str("hf_action.json");
    let schemas = Schemas::load();
    let runs: Vec<Vec<&str>> = vec![
        vec!["design", "--config", cfg],
        vec!["boundaries", "--config", cfg],
        vec!["power", "--config", cfg, "--n", "240"],
        vec!["simulate", "--config", cfg, "--reps", "100"],
        vec!["simulate", "--config", cfg, "--reps", "100", "--hypothesis", "h0"],
        vec!["generate", "--config", cfg, "--csv", csv],
        vec!["analyze", "--config", cfg, "--data", csv],
        vec!["analyze", "--config", cfg, "--data", csv, "--stage", "2", "--power"],
        vec!["power", "--config", cfg, "--data", csv],
        vec!["design", "--config", &hf],
    ];
    for args in runs {
        let report = report(&args);
        let errs = schemas.report_errors(&report);
        assert!(errs.is_empty(), "{args:?}: {errs:#?}");
        assert_eq!(report["report_version"], 1);
    }
}

fn config_path_str(name: &str) -> String {
    config_path(name).to_str().unwrap().to_string()
}

#[test]
fn shipped_configs_match_the_config_schema() {
    let schemas = Schemas::load();
    for name in ["scenario_c12.json", "scenario_c24.json", "hf_action.json"] {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(config_path(name)).unwrap()).unwrap();
        let errs: Vec<String> = schemas.config.iter_errors(&v).map(|e| e.to_string()).collect();
        assert!(errs.is_empty(), "{name}: {errs:?}");
    }
    let bad = serde_json::json!({ "design": { "stages": 3, "stagez": 3 } });
    assert!(!schemas.config.is_valid(&bad));
}

#[test]
fn markdown_summary_is_written_next_to_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let run = winseq([
        "power",
        "--config",
        &config_path_str("hf_action.json"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.is_empty());
    let md = std::fs::read_to_string(out.with_extension("md")).unwrap();
    assert!(md.contains("| seq-SNB | 205/221 |"), "{md}");
    assert!(md.contains("(2.54, 2.07, 1.74)"), "{md}");
}

#[test]
fn reports_are_byte_identical_apart_from_the_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 400);
    let cfg = cfg.to_str().unwrap();
    for args in [
        vec!["design", "--config", cfg, "--seed", "9"],
        vec!["simulate", "--config", cfg, "--seed", "9"],
    ] {
        let a = winseq(&args);
        let b = winseq(&args);
        assert_eq!(a.code, 0, "{}", a.stderr);
        assert_eq!(strip_timestamp(&a.stdout), strip_timestamp(&b.stdout));
        let lines = |s: &str| -> Vec<String> {
            s.lines()
                .filter(|l| !l.contains("generated_at_unix"))
                .map(String::from)
                .collect()
        };
        assert_eq!(lines(&a.stdout), lines(&b.stdout));
    }
    let a = winseq(["design", "--config", cfg, "--seed", "9"]);
    let c = winseq(["design", "--config", cfg, "--seed", "10"]);
    assert_ne!(strip_timestamp(&a.stdout), strip_timestamp(&c.stdout));
}

#[test]
fn report_is_rerunnable_from_its_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 400);
    let first = report(["power", "--config", cfg.to_str().unwrap(), "--seed", "4"]);
    let echo = write(
        dir.path(),
        "echo.json",
        &serde_json::to_string(&first["input"]["config"]).unwrap(),
    );
    let second = report(["power", "--config", echo.to_str().unwrap(), "--seed", "4"]);
    assert_eq!(first["design"], second["design"]);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = small_config(p, 400);
    let cfg_s = cfg.to_str().unwrap();

    let unknown = write(p, "unknown.json", r#"{ "design": { "stages": 3, "bogus": 1 } }"#);
    let run = winseq(["power", "--config", unknown.to_str().unwrap()]);
    assert_eq!(run.code, 1, "{}", run.stderr);
    assert!(run.stderr.contains("bogus"));

    let run = winseq(["power", "--config", p.join("missing.json").to_str().unwrap()]);
    assert_eq!(run.code, 1);

    let run = winseq([
        "design",
        "--config",
        cfg_s,
        "--data",
        p.join("none.csv").to_str().unwrap(),
    ]);
    assert_eq!(run.code, 1);

    let run = winseq_env(["power", "--config", cfg_s], &[("WINSEQ_THREADS", "zero")]);
    assert_eq!(run.code, 1);

    let mut tight: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    tight["design"]["n_max"] = 30.into();
    let tight = write(p, "tight.json", &tight.to_string());
    let run = winseq(["design", "--config", tight.to_str().unwrap()]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    assert!(run.stderr.contains("best power"));

    // No wins and no losses anywhere: the statistic has zero variance under H0.
    let zero = serde_json::json!({
        "point": { "u_w": 0.0, "u_l": 0.0, "u_tie": 1.0, "m": 10, "n": 10, "wins": 0, "losses": 0 },
        "xi10": { "ww": 0.0, "wl": 0.0, "ll": 0.0 },
        "xi01": { "ww": 0.0, "wl": 0.0, "ll": 0.0 },
        "xi11": { "ww": 0.0, "wl": 0.0, "ll": 0.0 }
    });
    let degenerate = serde_json::json!({
        "design": { "stages": 2, "total": 40 },
        "estimates": { "h0": zero, "ha": zero }
    });
    let degenerate = write(p, "degenerate.json", &degenerate.to_string());
    let run = winseq(["power", "--config", degenerate.to_str().unwrap()]);
    assert_eq!(run.code, 3, "{}", run.stderr);

    let run = winseq(["simulate", "--config", cfg_s, "--reps", "10"]);
    assert_eq!(run.code, 1, "{}", run.stderr);
}

#[test]
fn single_subject_per_arm_is_insufficient() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", ORACLE_CONFIG);
    let csv = write(
        dir.path(),
        "one.csv",
        "id,arm,y1,delta1,v2\nt1,treatment,5,1,3\nc1,control,4,1,2\n",
    );
    let run = winseq([
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("insufficient data"), "{}", run.stderr);
}

#[test]
fn malformed_rows_are_rejected_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", ORACLE_CONFIG);
    let csv = write(
        dir.path(),
        "bad.csv",
        "id,arm,y1,delta1,v2\nt1,treatment,5,1,3\nc1,control,4,2,2\n",
    );
    let run = winseq([
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.contains("line 3"), "{}", run.stderr);
}

#[test]
fn analyze_matches_the_hand_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", ORACLE_CONFIG);
    let csv = write(dir.path(), "oracle.csv", ORACLE_CSV);
    let r = report([
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        csv.to_str().unwrap(),
    ]);
    let s = &r["analysis"]["stages"][0];
    assert_eq!(s["wins"], 5);
    assert_eq!(s["losses"], 3);
    assert_eq!(s["ties"], 1);
    let o = oracle_stats(&ORACLE_MATRIX);
    let f = |p: &str| s.pointer(p).and_then(Value::as_f64).unwrap();
    assert!(close(f("/point/u_w"), o.u_w, 1e-15));
    assert!(close(f("/point/u_l"), o.u_l, 1e-15));
    assert!(close(f("/net_benefit/estimate"), o.nb, 1e-12));
    assert!(close(f("/net_benefit/variance"), o.nb_var, 1e-12));
    assert!(close(f("/net_benefit/z"), o.nb / o.nb_var.sqrt(), 1e-12));
    let half = 1.959964 * o.nb_var.sqrt();
    assert!(close(f("/net_benefit/ci95/0"), o.nb - half, 1e-12));
    assert!(close(f("/net_benefit/ci95/1"), o.nb + half, 1e-12));
    assert!(close(f("/win_ratio/estimate"), o.log_wr.exp(), 1e-12));
    assert!(close(f("/win_ratio/variance"), o.log_wr_var, 1e-12));
    let half = 1.959964 * o.log_wr_var.sqrt();
    assert!(close(f("/win_ratio/ci95/0"), (o.log_wr - half).exp(), 1e-12));
}

#[test]
fn boundaries_in_config_produce_stop_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value = serde_json::from_str(ORACLE_CONFIG).unwrap();
    cfg["design"] = serde_json::json!({
        "stages": 2,
        "boundaries": { "net_benefit": [5.0, 0.1], "log_win_ratio": [5.0, 9.0] }
    });
    let cfg = write(dir.path(), "cfg.json", &cfg.to_string());
    let mut csv = String::from("id,arm,stage,y1,delta1,v2\n");
    for (i, line) in ORACLE_CSV.lines().skip(1).enumerate() {
        let (id, rest) = line.split_once(',').unwrap();
        let (arm, rest) = rest.split_once(',').unwrap();
        csv.push_str(&format!("{id},{arm},{},{rest}\n", 1 + (i % 3 == 2) as u32));
    }
    // Two more subjects per arm in stage 1 so that stage 1 has enough data.
    csv.push_str("t4,treatment,1,9,0,5\nt5,treatment,1,3,1,1\nc4,control,1,2,1,1\nc5,control,1,9,0,3\n");
    let csv = write(dir.path(), "staged.csv", &csv);
    let r = report([
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        csv.to_str().unwrap(),
    ]);
    let a = &r["analysis"];
    assert_eq!(a["stages"][0]["net_benefit_decision"]["reject"], false);
    assert_eq!(a["stages"][1]["net_benefit_decision"]["reject"], true);
    assert_eq!(a["net_benefit_stop_stage"], 2);
    assert!(a.get("win_ratio_stop_stage").is_none());
}

#[test]
fn generated_csv_round_trips_to_identical_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = small_config(dir.path(), 400);
    let csv = dir.path().join("trial.csv");
    let gen = report([
        "generate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "21",
        "--replicate",
        "3",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(gen["generated"]["treatment"], 60);
    let analysis = report([
        "analyze",
        "--config",
        cfg_path.to_str().unwrap(),
        "--data",
        csv.to_str().unwrap(),
    ]);

    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    let spec: GenerationSpec = serde_json::from_value(cfg["generation"].clone()).unwrap();
    let alloc = Allocation::even(3).unwrap();
    let trial = generate_trial(&spec, &alloc, 120, 21, 3).unwrap();
    let sizes = alloc.cumulative(120).unwrap();
    let stats = staged_statistics(&trial.treatment, &trial.control, &spec.schema(), &sizes).unwrap();
    for (k, st) in stats.iter().enumerate() {
        let stage = &analysis["analysis"]["stages"][k];
        assert_eq!(
            stage["estimates"],
            serde_json::to_value(st.estimates).unwrap(),
            "stage {k}"
        );
        let nb = st.net_benefit.as_ref().unwrap();
        assert_eq!(stage["net_benefit"]["z"].as_f64().unwrap().to_bits(), nb.z.to_bits());
        let wr = st.log_win_ratio.as_ref().unwrap();
        assert_eq!(stage["win_ratio"]["z"].as_f64().unwrap().to_bits(), wr.z.to_bits());
    }
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 400);
    let args = ["simulate", "--config", cfg.to_str().unwrap(), "--seed", "5"];
    let one = winseq_env(args, &[("WINSEQ_THREADS", "1")]);
    let two = winseq_env(args, &[("WINSEQ_THREADS", "2")]);
    assert_eq!(one.code, 0, "{}", one.stderr);
    assert_eq!(strip_timestamp(&one.stdout), strip_timestamp(&two.stdout));
}
