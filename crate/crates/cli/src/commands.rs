//! Command implementations; each returns a finished report.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use winseq::design::{
    alpha_spending, build_distribution_at, design_estimates, evaluate_design_at, evaluate_power,
    sample_size_from_estimates, solve_boundaries, Hypothesis, SearchSpec,
};
use winseq::hce::{comparison_matrices, Arm, PreparedArm, SubjectRecord};
use winseq::mc::{run_experiment, McConfig, Method};
use winseq::sim::{generate_trial, super_population_estimates};
use winseq::winstats::{staged_statistics, KernelSums, StatKind, WinLossEstimates};

use crate::config::{Config, SimHypothesis};
use crate::data;
use crate::error::CliError;
use crate::report::{
    AnalysisReport, BoundariesReport, Decision, DesignReport, GeneratedReport, Input, MethodTheory, Report,
    SearchTrace, SimulationReport, StageAnalysis, StatEntry,
};

fn input(cfg: &Config, args: Value) -> Input {
    let args = match args {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    };
    Input {
        config: cfg.clone(),
        args,
    }
}

fn data_path(cfg: &Config, flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf).or_else(|| cfg.io.data.clone())
}

struct Loaded {
    treat: Vec<SubjectRecord>,
    ctrl: Vec<SubjectRecord>,
}

fn load_data(cfg: &Config, path: &Path) -> Result<Loaded, CliError> {
    let schema = cfg.schema()?;
    let records = data::read_subjects_path(path, &schema)?;
    Ok(Loaded {
        treat: data::arm_records(&records, Arm::Treatment),
        ctrl: data::arm_records(&records, Arm::Control),
    })
}

fn data_estimates(cfg: &Config, d: &Loaded) -> Result<WinLossEstimates, CliError> {
    let schema = cfg.schema()?;
    let t = PreparedArm::new(&d.treat, &schema)?;
    let c = PreparedArm::new(&d.ctrl, &schema)?;
    Ok(KernelSums::stream(&t, &c).estimates()?)
}

/// H0 and H_A estimates: config block, then subject data (used for both), then
/// super-populations drawn from the generation model.
fn estimates(
    cfg: &Config,
    loaded: Option<&Loaded>,
    seed: u64,
) -> Result<(WinLossEstimates, WinLossEstimates, String), CliError> {
    if let Some(e) = &cfg.estimates {
        return Ok((e.h0, e.ha, "config".into()));
    }
    if let Some(d) = loaded {
        let e = data_estimates(cfg, d)?;
        return Ok((e, e, "data".into()));
    }
    let spec = cfg.design_spec()?;
    let (h0, ha) = design_estimates(&spec, seed)?;
    Ok((
        h0,
        ha,
        format!("super-populations of {} per arm", spec.super_population_size),
    ))
}

/// Cumulative stage sizes: from the data's stage labels, else from the allocation.
fn stage_sizes(cfg: &Config, loaded: Option<&Loaded>, n_flag: Option<usize>) -> Result<Vec<(usize, usize)>, CliError> {
    let d = cfg.design()?;
    match (loaded, n_flag.or(d.total)) {
        (Some(l), None) => data::cumulative_stage_sizes(&l.treat, &l.ctrl, None),
        (_, Some(n)) => Ok(d.allocation()?.cumulative(n)?),
        (None, None) => Err(CliError::Config(
            "total sample size missing: pass --n or set design.total".into(),
        )),
    }
}

pub fn design(cfg: &Config, seed: u64, data_flag: Option<&Path>) -> Result<Report, CliError> {
    let d = cfg.design()?;
    let path = data_path(cfg, data_flag);
    let loaded = path.as_deref().map(|p| load_data(cfg, p)).transpose()?;
    let (h0, ha, source) = estimates(cfg, loaded.as_ref(), seed)?;
    let search = SearchSpec {
        alpha: d.alpha,
        target_power: d.target_power,
        statistic: d.statistic,
        spending_exponent: d.spending_exponent,
        allocation: d.allocation()?,
        n_max: d.n_max,
    };
    let result = sample_size_from_estimates(&search, &h0, &ha)?;
    let mut rep = DesignReport::from_evaluation(&result.evaluation, &h0, &ha, d.alpha, d.spending_exponent, source)?;
    rep.search = Some(SearchTrace {
        target_power: d.target_power,
        evaluated: result.trace.clone(),
    });
    let mut report = Report::new("design", Some(seed), input(cfg, json!({ "seed": seed, "data": path })));
    report.design = Some(rep);
    Ok(report)
}

pub fn power(cfg: &Config, seed: u64, n_flag: Option<usize>, data_flag: Option<&Path>) -> Result<Report, CliError> {
    let d = cfg.design()?;
    let path = data_path(cfg, data_flag);
    let loaded = path.as_deref().map(|p| load_data(cfg, p)).transpose()?;
    let sizes = stage_sizes(cfg, loaded.as_ref(), n_flag)?;
    let (h0, ha, source) = estimates(cfg, loaded.as_ref(), seed)?;
    let eval = evaluate_design_at(&h0, &ha, &sizes, d.statistic, d.alpha, d.spending_exponent, None)?;
    let mut report = Report::new(
        "power",
        Some(seed),
        input(cfg, json!({ "seed": seed, "n": n_flag, "data": path })),
    );
    report.design = Some(DesignReport::from_evaluation(
        &eval,
        &h0,
        &ha,
        d.alpha,
        d.spending_exponent,
        source,
    )?);
    Ok(report)
}

/// H0 estimates only; the alternative model is never sampled.
fn null_estimates(cfg: &Config, loaded: Option<&Loaded>, seed: u64) -> Result<(WinLossEstimates, String), CliError> {
    if let Some(e) = &cfg.estimates {
        return Ok((e.h0, "config".into()));
    }
    if let Some(l) = loaded {
        return Ok((data_estimates(cfg, l)?, "data".into()));
    }
    let size = cfg.design()?.super_population_size;
    let h0 = super_population_estimates(&cfg.generation()?.null(), size, seed)?;
    Ok((h0, format!("a null super-population of {size} per arm")))
}

fn solve_for(
    h0: &WinLossEstimates,
    sizes: &[(usize, usize)],
    kind: StatKind,
    alpha: f64,
    exponent: f64,
) -> Result<(winseq::design::SequentialDistribution, winseq::design::BoundaryResult), CliError> {
    let null = build_distribution_at(h0, sizes, kind, Hypothesis::H0)?;
    let partial = alpha_spending(alpha, &null.info_fraction, exponent)?;
    let bounds = solve_boundaries(&partial, &null.corr)?;
    Ok((null, bounds))
}

pub fn boundaries(
    cfg: &Config,
    seed: u64,
    n_flag: Option<usize>,
    data_flag: Option<&Path>,
) -> Result<Report, CliError> {
    let d = cfg.design()?;
    let path = data_path(cfg, data_flag);
    let loaded = path.as_deref().map(|p| load_data(cfg, p)).transpose()?;
    let sizes = stage_sizes(cfg, loaded.as_ref(), n_flag)?;
    let (h0, source) = null_estimates(cfg, loaded.as_ref(), seed)?;
    let (null, bounds) = solve_for(&h0, &sizes, d.statistic, d.alpha, d.spending_exponent)?;
    let mut report = Report::new(
        "boundaries",
        Some(seed),
        input(cfg, json!({ "seed": seed, "n": n_flag, "data": path })),
    );
    report.boundaries = Some(BoundariesReport::new(
        &null,
        &bounds,
        &h0,
        d.alpha,
        d.spending_exponent,
        source,
    ));
    Ok(report)
}

pub fn analyze(
    cfg: &Config,
    data_flag: Option<&Path>,
    stage: Option<u32>,
    with_power: bool,
) -> Result<Report, CliError> {
    let path = data_path(cfg, data_flag)
        .ok_or_else(|| CliError::Config("no subject data: pass --data or set io.data".into()))?;
    let schema = cfg.schema()?;
    let loaded = load_data(cfg, &path)?;
    let sizes = data::cumulative_stage_sizes(&loaded.treat, &loaded.ctrl, stage)?;
    let stats = staged_statistics(&loaded.treat, &loaded.ctrl, &schema, &sizes)?;
    let bounds = cfg.design.as_ref().and_then(|d| d.boundaries.as_ref());
    let decide = |kind: StatKind, s: usize, entry: &StatEntry| -> Result<Option<Decision>, CliError> {
        let Some(b) = bounds.and_then(|b| b.get(kind)) else {
            return Ok(None);
        };
        let k = cfg.design()?.allocation().map(|a| a.stages()).unwrap_or(b.len());
        if b.len() != k || s >= b.len() {
            return Err(CliError::Config(format!(
                "{} boundaries for a {k}-stage design; stage {} has no boundary",
                b.len(),
                s + 1
            )));
        }
        Ok(Some(Decision {
            boundary: b[s],
            z: entry.z,
            reject: entry.z.is_some_and(|z| z >= b[s]),
        }))
    };
    let mut stages = Vec::with_capacity(stats.len());
    let mut prev = (0usize, 0usize);
    for (s, st) in stats.iter().enumerate() {
        let (m, n) = (st.m, st.n);
        let only = comparison_matrices(&loaded.treat[prev.0..m], &loaded.ctrl[prev.1..n], &schema)?;
        let only = KernelSums::from_matrix(&only).point()?;
        prev = (m, n);
        let p = st.estimates.point;
        let nb = StatEntry::from_result(&st.net_benefit);
        let wr = StatEntry::from_result(&st.log_win_ratio);
        let pairs = (m * n) as u64;
        stages.push(StageAnalysis {
            stage: s + 1,
            treatment: m,
            control: n,
            wins: p.wins,
            losses: p.losses,
            ties: pairs - p.wins - p.losses,
            point: p,
            stage_only: only,
            estimates: st.estimates,
            net_benefit_decision: decide(StatKind::NetBenefit, s, &nb)?,
            win_ratio_decision: decide(StatKind::LogWinRatio, s, &wr)?,
            net_benefit: nb,
            win_ratio: wr,
        });
    }
    let first = |f: fn(&StageAnalysis) -> &Option<Decision>| {
        stages
            .iter()
            .find(|a| f(a).as_ref().is_some_and(|d| d.reject))
            .map(|a| a.stage)
    };
    let net_benefit_stop_stage = first(|a| &a.net_benefit_decision);
    let win_ratio_stop_stage = first(|a| &a.win_ratio_decision);
    let design = if with_power {
        let d = cfg.design()?;
        let est = stats.last().expect("at least one stage").estimates;
        let eval = evaluate_design_at(&est, &est, &sizes, d.statistic, d.alpha, d.spending_exponent, None)?;
        Some(DesignReport::from_evaluation(
            &eval,
            &est,
            &est,
            d.alpha,
            d.spending_exponent,
            "data".into(),
        )?)
    } else {
        None
    };
    let mut report = Report::new(
        "analyze",
        None,
        input(cfg, json!({ "data": path, "stage": stage, "power": with_power })),
    );
    report.analysis = Some(AnalysisReport {
        data: path.display().to_string(),
        stages,
        net_benefit_stop_stage,
        win_ratio_stop_stage,
        design,
    });
    Ok(report)
}

pub fn simulate(
    cfg: &Config,
    seed: u64,
    reps: Option<usize>,
    n_flag: Option<usize>,
    hypothesis: Option<SimHypothesis>,
) -> Result<Report, CliError> {
    let d = cfg.design()?;
    let gen = cfg.generation()?;
    let alloc = d.allocation()?;
    let total = d.total(n_flag)?;
    let sizes = alloc.cumulative(total)?;
    let hypothesis = hypothesis.unwrap_or(cfg.mc.hypothesis);
    let methods = cfg.mc.methods.clone();
    let fixed = d.boundaries.clone().unwrap_or(crate::config::BoundarySet {
        net_benefit: None,
        log_win_ratio: None,
    });
    let needs = |kind: StatKind| {
        fixed.get(kind).is_none() && methods.iter().any(|m| m.is_sequential() && m.statistic() == kind)
    };
    // Estimates are needed to solve missing boundaries; with them the
    // theoretical rates come for free.
    let est = if cfg.estimates.is_some() || needs(StatKind::NetBenefit) || needs(StatKind::LogWinRatio) {
        Some(estimates(cfg, None, seed)?)
    } else {
        None
    };
    let mut solved = Vec::new();
    for kind in [StatKind::NetBenefit, StatKind::LogWinRatio] {
        if let Some((h0, ..)) = &est {
            if methods.iter().any(|m| m.statistic() == kind) {
                let (_, b) = solve_for(h0, &sizes, kind, d.alpha, d.spending_exponent)?;
                solved.push((kind, b));
            }
        }
    }
    let pick = |kind: StatKind| -> Option<Vec<f64>> {
        fixed.get(kind).cloned().or_else(|| {
            solved
                .iter()
                .find(|(k, _)| *k == kind)
                .map(|(_, b)| b.boundaries.clone())
        })
    };
    let generation = match hypothesis {
        SimHypothesis::H0 => gen.null(),
        SimHypothesis::Ha => gen.clone(),
    };
    let mc = McConfig {
        reps: reps.unwrap_or(cfg.mc.reps),
        seed,
        generation,
        allocation: alloc,
        total,
        alpha: d.alpha,
        nb_boundaries: pick(StatKind::NetBenefit),
        wr_boundaries: pick(StatKind::LogWinRatio),
        methods: methods.clone(),
    };
    let result = run_experiment(&mc)?;
    let mut theoretical = Vec::new();
    if let Some((h0, ha, _)) = &est {
        for mr in &result.methods {
            let kind = mr.method.statistic();
            let cumulative = theoretical_rates(mr.method, &mr.boundaries, h0, ha, &sizes, d.alpha, hypothesis, kind)?;
            theoretical.push(MethodTheory {
                method: mr.method,
                bias: mr.bias(&cumulative),
                cumulative,
            });
        }
    }
    let mut report = Report::new(
        "simulate",
        Some(seed),
        input(
            cfg,
            json!({ "seed": seed, "reps": mc.reps, "n": total, "hypothesis": hypothesis }),
        ),
    );
    report.simulation = Some(SimulationReport {
        hypothesis,
        total,
        result,
        theoretical,
        estimates_source: est.map(|e| e.2),
    });
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn theoretical_rates(
    method: Method,
    bounds: &[f64],
    h0: &WinLossEstimates,
    ha: &WinLossEstimates,
    sizes: &[(usize, usize)],
    alpha: f64,
    hypothesis: SimHypothesis,
    kind: StatKind,
) -> Result<Vec<f64>, CliError> {
    let (est, hyp) = match hypothesis {
        SimHypothesis::H0 => (h0, Hypothesis::H0),
        SimHypothesis::Ha => (ha, Hypothesis::HA),
    };
    let dist = build_distribution_at(est, sizes, kind, hyp)?;
    let k = sizes.len();
    if method.is_sequential() {
        let b = winseq::design::BoundaryResult {
            partial_alpha: vec![f64::NAN; k],
            boundaries: bounds.to_vec(),
            cumulative_alpha_check: f64::NAN,
        };
        let units: Vec<f64> = sizes.iter().map(|s| s.0 as f64).collect();
        Ok(evaluate_power(&b, &dist, &units)?.cumulative_power)
    } else {
        let c = winseq::mvn::std_normal_quantile(1.0 - alpha)?;
        let mut v = vec![0.0; k];
        v[k - 1] = winseq::mvn::norm_cdf(dist.mean[k - 1] - c);
        Ok(v)
    }
}

pub fn generate(
    cfg: &Config,
    seed: u64,
    n_flag: Option<usize>,
    replicate: u64,
    hypothesis: Option<SimHypothesis>,
    out: &Path,
) -> Result<Report, CliError> {
    let d = cfg.design()?;
    let gen = cfg.generation()?;
    let total = d.total(n_flag)?;
    let alloc = d.allocation()?;
    let hypothesis = hypothesis.unwrap_or(cfg.mc.hypothesis);
    let spec = match hypothesis {
        SimHypothesis::H0 => gen.null(),
        SimHypothesis::Ha => gen.clone(),
    };
    let trial = generate_trial(&spec, &alloc, total, seed, replicate)?;
    let records: Vec<SubjectRecord> = trial.records().cloned().collect();
    let file = std::fs::File::create(out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    data::write_subjects(std::io::BufWriter::new(file), &spec.schema(), &records)?;
    let mut report = Report::new(
        "generate",
        Some(seed),
        input(
            cfg,
            json!({ "seed": seed, "n": total, "replicate": replicate, "hypothesis": hypothesis, "csv": out }),
        ),
    );
    report.generated = Some(GeneratedReport {
        path: out.display().to_string(),
        treatment: trial.treatment.len(),
        control: trial.control.len(),
        stage_sizes: alloc.cumulative(total)?,
    });
    Ok(report)
}
