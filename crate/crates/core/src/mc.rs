//! Monte Carlo evaluation of sequential and fixed designs on simulated trials.

use serde::{Deserialize, Serialize};

use crate::design::Allocation;
use crate::error::{Error, Result};
use crate::hce::{PairwiseMatrix, PreparedArm};
use crate::mvn::std_normal_quantile;
use crate::par;
use crate::sim::{generate_trial, GenerationSpec};
use crate::winstats::{log_win_ratio, net_benefit, DerivedStat, KernelSums, StatKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SeqSnb,
    SeqSwr,
    FixSnb,
    FixSwr,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::SeqSnb, Method::SeqSwr, Method::FixSnb, Method::FixSwr];

    pub fn statistic(self) -> StatKind {
        match self {
            Method::SeqSnb | Method::FixSnb => StatKind::NetBenefit,
            Method::SeqSwr | Method::FixSwr => StatKind::LogWinRatio,
        }
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, Method::SeqSnb | Method::SeqSwr)
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::SeqSnb => "seq-SNB",
            Method::SeqSwr => "seq-SWR",
            Method::FixSnb => "fix-SNB",
            Method::FixSwr => "fix-SWR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub reps: usize,
    pub seed: u64,
    pub generation: GenerationSpec,
    pub allocation: Allocation,
    /// Total sample size over both arms.
    pub total: usize,
    /// One-sided level used by the fixed designs.
    pub alpha: f64,
    /// Efficacy boundaries for seq-SNB.
    #[serde(default)]
    pub nb_boundaries: Option<Vec<f64>>,
    /// Efficacy boundaries for seq-SWR.
    #[serde(default)]
    pub wr_boundaries: Option<Vec<f64>>,
    pub methods: Vec<Method>,
}

impl McConfig {
    fn boundaries(&self, method: Method) -> Result<Vec<f64>> {
        let k = self.allocation.stages();
        let b = match method {
            Method::SeqSnb => self.nb_boundaries.clone(),
            Method::SeqSwr => self.wr_boundaries.clone(),
            Method::FixSnb | Method::FixSwr => {
                let c = std_normal_quantile(1.0 - self.alpha)?;
                let mut v = vec![f64::INFINITY; k];
                v[k - 1] = c;
                Some(v)
            }
        };
        match b {
            Some(b) if b.len() == k => Ok(b),
            Some(b) => Err(Error::Validation(format!(
                "{}: {} boundaries for a {k}-stage design",
                method.label(),
                b.len()
            ))),
            None => Err(Error::Validation(format!("{} needs boundaries", method.label()))),
        }
    }
}

/// Stage-wise statistics of one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub z_nb: Vec<f64>,
    pub z_wr: Vec<f64>,
    pub var_nb: Vec<f64>,
    pub var_wr: Vec<f64>,
    /// Final-analysis NB statistic, when its variance is usable.
    pub nb_final: Option<DerivedStat>,
    pub degenerate_nb: usize,
    pub degenerate_wr: usize,
}

/// z-statistic for one analysis, with the degenerate cases mapped to ±∞ or 0.
fn nb_z(est: &crate::winstats::WinLossEstimates) -> (f64, f64, bool) {
    match net_benefit(est) {
        Ok(s) => (s.z, s.variance, false),
        Err(_) => {
            let e = est.tau_w() - est.tau_l();
            (if e > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY }, 0.0, true)
        }
    }
}

fn wr_z(est: &crate::winstats::WinLossEstimates) -> (f64, f64, bool) {
    match log_win_ratio(est) {
        Ok(s) => (s.z, s.variance, false),
        Err(Error::UndefinedRatio { u_w, .. }) => (if u_w > 0.0 { f64::INFINITY } else { 0.0 }, f64::NAN, true),
        Err(_) => {
            let e = (est.tau_w() / est.tau_l()).ln();
            (if e > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY }, 0.0, true)
        }
    }
}

/// Generate and analyze replicate `rep`.
pub fn simulate_rep(cfg: &McConfig, rep: u64) -> Result<RepOutcome> {
    let trial = generate_trial(&cfg.generation, &cfg.allocation, cfg.total, cfg.seed, rep)?;
    let schema = cfg.generation.schema();
    let t = PreparedArm::new(&trial.treatment, &schema)?;
    let c = PreparedArm::new(&trial.control, &schema)?;
    let mat = PairwiseMatrix::from_prepared(&t, &c);
    let stages = cfg.allocation.cumulative(cfg.total)?;
    let k = stages.len();
    let mut out = RepOutcome {
        z_nb: Vec::with_capacity(k),
        z_wr: Vec::with_capacity(k),
        var_nb: Vec::with_capacity(k),
        var_wr: Vec::with_capacity(k),
        nb_final: None,
        degenerate_nb: 0,
        degenerate_wr: 0,
    };
    let mut sums = KernelSums::empty();
    for (s, &(m, n)) in stages.iter().enumerate() {
        sums.extend_to(&mat, m, n)?;
        let est = sums.estimates()?;
        let (z, v, d) = nb_z(&est);
        out.z_nb.push(z);
        out.var_nb.push(v);
        out.degenerate_nb += d as usize;
        let (z, v, d) = wr_z(&est);
        out.z_wr.push(z);
        out.var_wr.push(v);
        out.degenerate_wr += d as usize;
        if s == k - 1 {
            out.nb_final = net_benefit(&est).ok();
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// `+∞` (serialized as `null`) marks a stage without an efficacy look.
    #[serde(with = "open_boundaries")]
    pub boundaries: Vec<f64>,
    /// Number of reps rejecting first at each stage.
    pub stop_counts: Vec<u64>,
    pub cumulative_rate: Vec<f64>,
    /// Binomial standard errors of the cumulative rates.
    pub cumulative_se: Vec<f64>,
    pub total_rate: f64,
    /// Mean treatment-arm enrollment per rep.
    pub asn: f64,
    /// Stage analyses whose statistic hit a degenerate case.
    pub degenerate: u64,
}

mod open_boundaries {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<Option<f64>> = b.iter().map(|&c| (c != f64::INFINITY).then_some(c)).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v = Vec::<Option<f64>>::deserialize(d)?;
        Ok(v.into_iter().map(|c| c.unwrap_or(f64::INFINITY)).collect())
    }
}

impl MethodResult {
    /// Attained minus theoretical cumulative rate, per stage.
    pub fn bias(&self, theoretical: &[f64]) -> Vec<f64> {
        self.cumulative_rate
            .iter()
            .zip(theoretical)
            .map(|(a, t)| a - t)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub reps: usize,
    pub seed: u64,
    /// Cumulative treatment-arm sizes at each analysis.
    pub stage_sizes: Vec<usize>,
    pub methods: Vec<MethodResult>,
}

impl McResult {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

fn check_reps(cfg: &McConfig, min: usize) -> Result<()> {
    if cfg.reps < min {
        return Err(Error::Validation(format!(
            "at least {min} replicates are required, got {}",
            cfg.reps
        )));
    }
    cfg.generation.validate()?;
    cfg.allocation.validate()?;
    cfg.allocation.stage_counts(cfg.total).map(|_| ())
}

/// Run all replicates and tabulate every requested method.
pub fn run_experiment(cfg: &McConfig) -> Result<McResult> {
    check_reps(cfg, 100)?;
    let bounds = cfg
        .methods
        .iter()
        .map(|&m| cfg.boundaries(m))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = par::map_indexed(cfg.reps, |r| simulate_rep(cfg, r as u64));
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let stage_sizes: Vec<usize> = cfg.allocation.cumulative(cfg.total)?.iter().map(|s| s.0).collect();
    let k = stage_sizes.len();
    let reps = cfg.reps as f64;
    let methods = cfg
        .methods
        .iter()
        .zip(bounds)
        .map(|(&method, b)| {
            let mut stop_counts = vec![0u64; k];
            let mut enrolled = 0u64;
            let mut degenerate = 0u64;
            for o in &outcomes {
                let (z, deg) = match method.statistic() {
                    StatKind::NetBenefit => (&o.z_nb, o.degenerate_nb),
                    StatKind::LogWinRatio => (&o.z_wr, o.degenerate_wr),
                };
                degenerate += deg as u64;
                let stop = (0..k).find(|&s| z[s] >= b[s]);
                if let Some(s) = stop {
                    stop_counts[s] += 1;
                }
                let used = if method.is_sequential() {
                    stop.map_or(k - 1, |s| s)
                } else {
                    k - 1
                };
                enrolled += stage_sizes[used] as u64;
            }
            let cumulative_rate: Vec<f64> = stop_counts
                .iter()
                .scan(0u64, |acc, c| {
                    *acc += c;
                    Some(*acc as f64 / reps)
                })
                .collect();
            let cumulative_se = cumulative_rate.iter().map(|p| (p * (1.0 - p) / reps).sqrt()).collect();
            MethodResult {
                method,
                boundaries: b,
                total_rate: cumulative_rate[k - 1],
                stop_counts,
                cumulative_rate,
                cumulative_se,
                asn: enrolled as f64 / reps,
                degenerate,
            }
        })
        .collect();
    Ok(McResult {
        reps: cfg.reps,
        seed: cfg.seed,
        stage_sizes,
        methods,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub p: usize,
    pub q: usize,
    pub empirical: f64,
    pub theoretical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementReport {
    pub net_benefit: Vec<PairCorrelation>,
    pub log_win_ratio: Vec<PairCorrelation>,
    pub max_abs_nb: f64,
    pub max_abs_wr: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn pair_table(z: &[&Vec<f64>], v: &[&Vec<f64>], k: usize) -> Vec<PairCorrelation> {
    let usable: Vec<usize> = (0..z.len())
        .filter(|&r| z[r].iter().chain(v[r].iter()).all(|x| x.is_finite()))
        .collect();
    let col = |data: &[&Vec<f64>], s: usize| -> Vec<f64> { usable.iter().map(|&r| data[r][s]).collect() };
    let mean_v: Vec<f64> = (0..k)
        .map(|s| col(v, s).iter().sum::<f64>() / usable.len() as f64)
        .collect();
    let mut out = Vec::new();
    for p in 0..k {
        for q in p + 1..k {
            out.push(PairCorrelation {
                p: p + 1,
                q: q + 1,
                empirical: pearson(&col(z, p), &col(z, q)),
                theoretical: (mean_v[q] / mean_v[p]).sqrt(),
            });
        }
    }
    out
}

/// Compare across-rep correlations of the stage z-statistics with `√(V_q/V_p)`.
pub fn independent_increment_check(cfg: &McConfig) -> Result<IncrementReport> {
    check_reps(cfg, 2000)?;
    let outcomes = par::map_indexed(cfg.reps, |r| simulate_rep(cfg, r as u64))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let k = cfg.allocation.stages();
    let zs: Vec<&Vec<f64>> = outcomes.iter().map(|o| &o.z_nb).collect();
    let vs: Vec<&Vec<f64>> = outcomes.iter().map(|o| &o.var_nb).collect();
    let nb = pair_table(&zs, &vs, k);
    let zs: Vec<&Vec<f64>> = outcomes.iter().map(|o| &o.z_wr).collect();
    let vs: Vec<&Vec<f64>> = outcomes.iter().map(|o| &o.var_wr).collect();
    let wr = pair_table(&zs, &vs, k);
    let max_abs = |t: &[PairCorrelation]| {
        t.iter()
            .map(|c| (c.empirical - c.theoretical).abs())
            .fold(0.0, f64::max)
    };
    Ok(IncrementReport {
        max_abs_nb: max_abs(&nb),
        max_abs_wr: max_abs(&wr),
        net_benefit: nb,
        log_win_ratio: wr,
    })
}
