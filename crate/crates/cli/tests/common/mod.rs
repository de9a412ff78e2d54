#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn config_path(name: &str) -> PathBuf {
    manifest_dir().join("configs").join(name)
}

fn load_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn winseq<I, S>(args: I) -> Run
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    winseq_env(args, &[])
}

pub fn winseq_env<I, S>(args: I, env: &[(&str, &str)]) -> Run
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_winseq"));
    cmd.args(args).env_remove("WINSEQ_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("winseq runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Run and parse the JSON report written to stdout; panics on failure.
pub fn report<I, S>(args: I) -> Value
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let run = winseq(args);
    assert_eq!(run.code, 0, "stderr: {}", run.stderr);
    serde_json::from_str(&run.stdout).expect("report is JSON")
}

pub struct Schemas {
    pub report: jsonschema::Validator,
    pub config: jsonschema::Validator,
}

impl Schemas {
    pub fn load() -> Self {
        let dir = manifest_dir().join("schemas");
        Self {
            report: jsonschema::validator_for(&load_json(&dir.join("report.schema.json"))).unwrap(),
            config: jsonschema::validator_for(&load_json(&dir.join("config.schema.json"))).unwrap(),
        }
    }

    /// Errors of the report and of its echoed config, as strings.
    pub fn report_errors(&self, report: &Value) -> Vec<String> {
        let mut errs: Vec<String> = self
            .report
            .iter_errors(report)
            .map(|e| format!("{} at {}", e, e.instance_path))
            .collect();
        if let Some(cfg) = report.pointer("/input/config") {
            errs.extend(
                self.config
                    .iter_errors(cfg)
                    .map(|e| format!("config echo: {} at {}", e, e.instance_path)),
            );
        }
        errs
    }
}

/// A small copy of the c = 12 scenario config that runs in well under a second.
pub fn small_config(dir: &Path, super_population: usize) -> PathBuf {
    let mut cfg = load_json(&config_path("scenario_c12.json"));
    cfg["design"]["super_population_size"] = super_population.into();
    cfg["design"]["total"] = 120.into();
    cfg["mc"]["reps"] = 100.into();
    let path = dir.join("small.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Config for the 3×3 hand-oracle data set: death time, then a continuous
/// score with margin 0.5.
pub const ORACLE_CONFIG: &str = r#"{
  "schema": [
    { "name": "death", "kind": "time_to_event", "priority": 1 },
    { "name": "score", "kind": "continuous", "margin": 0.5, "direction": "higher_wins", "priority": 2 }
  ]
}"#;

pub const ORACLE_CSV: &str = "\
id,arm,y1,delta1,v2
t1,treatment,5,1,3
t2,treatment,8,0,4.3
t3,treatment,7,0,2
c1,control,4,1,2
c2,control,8,0,4
c3,control,6,0,1
";

/// Comparison matrix of the oracle data, worked out by hand (rows treatment,
/// columns control; 1 = win, -1 = loss, 0 = tie).
///
/// t1: beats c1 (c1 died first), loses to c2 and c3 (t1 died first).
/// t2: beats c1; ties c2 on time and on score (|4.3 − 4| ≤ 0.5); no time
///     verdict against c3 (censored later than a censored control), wins on score.
/// t3: beats c1; against c2 and c3 the times are uninformative, so the score
///     decides: 2 vs 4 loses, 2 vs 1 wins.
pub const ORACLE_MATRIX: [[i8; 3]; 3] = [[1, -1, -1], [1, 0, 1], [1, -1, 1]];

pub struct OracleStats {
    pub u_w: f64,
    pub u_l: f64,
    pub nb: f64,
    pub nb_var: f64,
    pub log_wr: f64,
    pub log_wr_var: f64,
}

/// Win statistics of a small matrix straight from the pairwise double sums.
pub fn oracle_stats(mat: &[[i8; 3]; 3]) -> OracleStats {
    let (m, n) = (3usize, 3usize);
    let phi = |u: i8, i: usize, j: usize| (mat[i][j] == u) as u8 as f64;
    let tau = |u: i8| {
        (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| phi(u, i, j))
            .sum::<f64>()
            / (m * n) as f64
    };
    let (tw, tl) = (tau(1), tau(-1));
    let t = |u: i8| if u == 1 { tw } else { tl };
    let xi10 = |u: i8, v: i8| {
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..n {
                for jj in 0..n {
                    if j != jj {
                        s += phi(u, i, j) * phi(v, i, jj);
                    }
                }
            }
        }
        s / (m * n * (n - 1)) as f64 - t(u) * t(v)
    };
    let xi01 = |u: i8, v: i8| {
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..m {
                for ii in 0..m {
                    if i != ii {
                        s += phi(u, i, j) * phi(v, ii, j);
                    }
                }
            }
        }
        s / (m * (m - 1) * n) as f64 - t(u) * t(v)
    };
    let xi11 = |u: i8, v: i8| {
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..n {
                s += phi(u, i, j) * phi(v, i, j);
            }
        }
        s / (m * n) as f64 - t(u) * t(v)
    };
    let (mf, nf) = (m as f64, n as f64);
    let cov = |u: i8, v: i8| ((nf - 1.0) * xi10(u, v) + (mf - 1.0) * xi01(u, v) + xi11(u, v)) / (mf * nf);
    let (vw, vl, cwl) = (cov(1, 1), cov(-1, -1), cov(1, -1));
    OracleStats {
        u_w: tw,
        u_l: tl,
        nb: tw - tl,
        nb_var: vw + vl - 2.0 * cwl,
        log_wr: (tw / tl).ln(),
        log_wr_var: vw / (tw * tw) + vl / (tl * tl) - 2.0 * cwl / (tw * tl),
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}
