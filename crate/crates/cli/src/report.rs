//! JSON reports and their markdown summaries.

use std::fmt::Write as _;

use serde::Serialize;
use winseq::design::{DesignEvaluation, SequentialDistribution};
use winseq::mc::McResult;
use winseq::winstats::{DerivedStat, StatKind, WinLossEstimates, WinLossPoint};

use crate::config::Config;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub report_version: u32,
    pub tool_version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    /// The only field that differs between reruns of the same input.
    pub generated_at_unix: u64,
    pub input: Input,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<BoundariesReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated: Option<GeneratedReport>,
}

/// Everything needed to rerun the command.
#[derive(Debug, Clone, Serialize)]
pub struct Input {
    pub config: Config,
    pub args: serde_json::Map<String, serde_json::Value>,
}

impl Report {
    pub fn new(command: &'static str, seed: Option<u64>, input: Input) -> Self {
        let generated_at_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            report_version: REPORT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            generated_at_unix,
            input,
            design: None,
            boundaries: None,
            analysis: None,
            simulation: None,
            generated: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("# winseq {}\n\n", self.command);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "Seed: {seed}\n");
        }
        if let Some(d) = &self.design {
            d.markdown(&mut s);
        }
        if let Some(b) = &self.boundaries {
            b.markdown(&mut s);
        }
        if let Some(a) = &self.analysis {
            a.markdown(&mut s);
        }
        if let Some(m) = &self.simulation {
            m.markdown(&mut s);
        }
        if let Some(g) = &self.generated {
            let _ = writeln!(
                s,
                "Wrote {} treatment and {} control subjects to `{}`.",
                g.treatment, g.control, g.path
            );
        }
        s
    }
}

fn stat_name(kind: StatKind) -> &'static str {
    match kind {
        StatKind::NetBenefit => "net_benefit",
        StatKind::LogWinRatio => "log_win_ratio",
    }
}

fn method_name(kind: StatKind) -> &'static str {
    match kind {
        StatKind::NetBenefit => "seq-SNB",
        StatKind::LogWinRatio => "seq-SWR",
    }
}

fn fixed_name(kind: StatKind) -> &'static str {
    match kind {
        StatKind::NetBenefit => "fix-SNB",
        StatKind::LogWinRatio => "fix-SWR",
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn list(xs: &[f64], digits: usize) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("({})", parts.join(", "))
}

#[derive(Debug, Clone, Serialize)]
pub struct StageDesign {
    pub stage: usize,
    pub treatment: usize,
    pub control: usize,
    pub info_fraction: f64,
    pub partial_alpha: f64,
    pub boundary: f64,
    pub null_variance: f64,
    pub alternative_variance: f64,
    pub alternative_mean: f64,
    pub stage_power: f64,
    pub cumulative_power: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedDesign {
    pub boundary: f64,
    pub power: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchTrace {
    pub target_power: f64,
    pub evaluated: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub statistic: StatKind,
    pub alpha: f64,
    pub spending_exponent: f64,
    /// Where the τ / ξ estimates came from.
    pub estimates_source: String,
    pub estimates_h0: WinLossEstimates,
    pub estimates_ha: WinLossEstimates,
    pub effect: f64,
    pub stages: Vec<StageDesign>,
    pub null_correlation: Vec<Vec<f64>>,
    pub cumulative_alpha_check: f64,
    pub total_power: f64,
    pub mss_per_arm: (usize, usize),
    pub mss_total: usize,
    /// Expected enrollment, treatment arm.
    pub asn_treatment: f64,
    /// Expected enrollment, both arms.
    pub asn_total: f64,
    pub fixed: FixedDesign,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchTrace>,
}

impl DesignReport {
    pub fn from_evaluation(
        eval: &DesignEvaluation,
        h0: &WinLossEstimates,
        ha: &WinLossEstimates,
        alpha: f64,
        exponent: f64,
        source: String,
    ) -> winseq::Result<Self> {
        let null = &eval.null;
        let alt = &eval.alternative;
        let k = null.stages();
        let sizes = &null.stage_sizes;
        let stages = (0..k)
            .map(|s| StageDesign {
                stage: s + 1,
                treatment: sizes[s].0,
                control: sizes[s].1,
                info_fraction: null.info_fraction[s],
                partial_alpha: eval.boundaries.partial_alpha[s],
                boundary: eval.boundaries.boundaries[s],
                null_variance: null.stage_variance[s],
                alternative_variance: alt.stage_variance[s],
                alternative_mean: alt.mean[s],
                stage_power: eval.power.stage_rejection[s],
                cumulative_power: eval.power.cumulative_power[s],
            })
            .collect();
        let totals: Vec<f64> = sizes.iter().map(|(m, n)| (m + n) as f64).collect();
        let treat: Vec<f64> = sizes.iter().map(|(m, _)| *m as f64).collect();
        let c_fixed = winseq::mvn::std_normal_quantile(1.0 - alpha)?;
        Ok(Self {
            statistic: null.kind,
            alpha,
            spending_exponent: exponent,
            estimates_source: source,
            estimates_h0: *h0,
            estimates_ha: *ha,
            effect: winseq::design::effect(ha, null.kind)?,
            stages,
            null_correlation: null.corr.rows(),
            cumulative_alpha_check: eval.boundaries.cumulative_alpha_check,
            total_power: eval.power.total_power,
            mss_per_arm: sizes[k - 1],
            mss_total: sizes[k - 1].0 + sizes[k - 1].1,
            asn_treatment: winseq::design::average_sample_number(&eval.power.stage_rejection, &treat),
            asn_total: winseq::design::average_sample_number(&eval.power.stage_rejection, &totals),
            fixed: FixedDesign {
                boundary: c_fixed,
                power: fixed_power(alt, c_fixed),
            },
            search: None,
        })
    }

    fn markdown(&self, s: &mut String) {
        let k = self.stages.len();
        let _ = writeln!(
            s,
            "## Design ({}, alpha = {}, spending exponent {})\n",
            stat_name(self.statistic),
            self.alpha,
            self.spending_exponent
        );
        let _ = writeln!(
            s,
            "Estimates from {}: H0 tau_w = {:.4}, tau_l = {:.4}; H_A tau_w = {:.4}, tau_l = {:.4}.\n",
            self.estimates_source,
            self.estimates_h0.tau_w(),
            self.estimates_h0.tau_l(),
            self.estimates_ha.tau_w(),
            self.estimates_ha.tau_l()
        );
        let b: Vec<f64> = self.stages.iter().map(|x| x.boundary).collect();
        let p: Vec<f64> = self.stages.iter().map(|x| 100.0 * x.cumulative_power).collect();
        let _ = writeln!(
            s,
            "| Method | MSS (T/C) | ASN (T/total) | Critical Boundaries | Theoretical Power Level (%) |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|");
        let _ = writeln!(
            s,
            "| {} | {}/{} | {:.1}/{:.1} | {} | {} |",
            method_name(self.statistic),
            self.mss_per_arm.0,
            self.mss_per_arm.1,
            self.asn_treatment,
            self.asn_total,
            list(&b, 2),
            list(&p, 2)
        );
        let _ = writeln!(
            s,
            "| {} | {}/{} | {}/{} | {:.2} | {:.2} |\n",
            fixed_name(self.statistic),
            self.mss_per_arm.0,
            self.mss_per_arm.1,
            self.mss_per_arm.0,
            self.mss_total,
            self.fixed.boundary,
            100.0 * self.fixed.power
        );
        let _ = writeln!(
            s,
            "| Stage | n (T/C) | t_k | alpha_k | c_k | Stage power | Cumulative power |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for x in &self.stages {
            let _ = writeln!(
                s,
                "| {} | {}/{} | {:.4} | {:.6} | {:.4} | {:.4} | {:.4} |",
                x.stage,
                x.treatment,
                x.control,
                x.info_fraction,
                x.partial_alpha,
                x.boundary,
                x.stage_power,
                x.cumulative_power
            );
        }
        let _ = writeln!(
            s,
            "\nASN: {:.2} treatment, {:.2} total over {k} stages.\n",
            self.asn_treatment, self.asn_total
        );
        if let Some(t) = &self.search {
            let _ = writeln!(
                s,
                "Sample-size search: {} evaluations, target power {}.\n",
                t.evaluated.len(),
                t.target_power
            );
        }
    }
}

/// Power of the single-look test at the final-stage information.
fn fixed_power(alt: &SequentialDistribution, c: f64) -> f64 {
    let k = alt.stages();
    winseq::mvn::norm_cdf(alt.mean[k - 1] - c)
}

#[derive(Debug, Clone, Serialize)]
pub struct StageBoundary {
    pub stage: usize,
    pub treatment: usize,
    pub control: usize,
    pub info_fraction: f64,
    pub partial_alpha: f64,
    pub boundary: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundariesReport {
    pub statistic: StatKind,
    pub alpha: f64,
    pub spending_exponent: f64,
    pub estimates_source: String,
    pub estimates_h0: WinLossEstimates,
    pub stages: Vec<StageBoundary>,
    pub null_correlation: Vec<Vec<f64>>,
    pub cumulative_alpha_check: f64,
}

impl BoundariesReport {
    pub fn new(
        null: &SequentialDistribution,
        bounds: &winseq::design::BoundaryResult,
        h0: &WinLossEstimates,
        alpha: f64,
        exponent: f64,
        source: String,
    ) -> Self {
        let stages = (0..null.stages())
            .map(|s| StageBoundary {
                stage: s + 1,
                treatment: null.stage_sizes[s].0,
                control: null.stage_sizes[s].1,
                info_fraction: null.info_fraction[s],
                partial_alpha: bounds.partial_alpha[s],
                boundary: bounds.boundaries[s],
            })
            .collect();
        Self {
            statistic: null.kind,
            alpha,
            spending_exponent: exponent,
            estimates_source: source,
            estimates_h0: *h0,
            stages,
            null_correlation: null.corr.rows(),
            cumulative_alpha_check: bounds.cumulative_alpha_check,
        }
    }

    fn markdown(&self, s: &mut String) {
        let _ = writeln!(
            s,
            "## Boundaries ({}, alpha = {}, spending exponent {}; estimates from {})\n",
            stat_name(self.statistic),
            self.alpha,
            self.spending_exponent,
            self.estimates_source
        );
        let _ = writeln!(s, "| Stage | n (T/C) | t_k | alpha_k | c_k |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for x in &self.stages {
            let _ = writeln!(
                s,
                "| {} | {}/{} | {:.4} | {:.6} | {:.4} |",
                x.stage, x.treatment, x.control, x.info_fraction, x.partial_alpha, x.boundary
            );
        }
        let _ = writeln!(s, "\nAttained total alpha: {:.6}\n", self.cumulative_alpha_check);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StatEntry {
    pub estimate: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    pub z: Option<f64>,
    pub variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StatEntry {
    pub fn from_result(r: &winseq::Result<DerivedStat>) -> Self {
        match r {
            Ok(d) => Self {
                estimate: Some(d.reported()),
                ci95: Some(d.ci95),
                z: Some(d.z),
                variance: Some(d.variance),
                error: None,
            },
            Err(e) => Self {
                estimate: None,
                ci95: None,
                z: None,
                variance: None,
                error: Some(e.to_string()),
            },
        }
    }

    fn cell(&self, digits: usize, percent: bool) -> String {
        let f = |x: f64| {
            if percent {
                format!("{}%", pct(x))
            } else {
                format!("{x:.digits$}")
            }
        };
        match (self.estimate, self.ci95) {
            (Some(e), Some((lo, hi))) => format!("{} ({}, {})", f(e), f(lo), f(hi)),
            _ => "undefined".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Decision {
    pub boundary: f64,
    pub z: Option<f64>,
    pub reject: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageAnalysis {
    pub stage: usize,
    /// Cumulative subjects analysed at this stage.
    pub treatment: usize,
    pub control: usize,
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
    pub point: WinLossPoint,
    /// Proportions among pairs of subjects enrolled in this stage only.
    pub stage_only: WinLossPoint,
    pub estimates: WinLossEstimates,
    pub net_benefit: StatEntry,
    pub win_ratio: StatEntry,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub net_benefit_decision: Option<Decision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub win_ratio_decision: Option<Decision>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub data: String,
    pub stages: Vec<StageAnalysis>,
    /// First stage whose statistic crossed its boundary, per statistic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub net_benefit_stop_stage: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub win_ratio_stop_stage: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignReport>,
}

impl AnalysisReport {
    fn markdown(&self, s: &mut String) {
        let _ = writeln!(s, "## Analysis of `{}`\n", self.data);
        let _ = writeln!(
            s,
            "| Stage | n (T/C) | Wins | Losses | Ties | NB (95% CI) | WR (95% CI) | z (NB) | z (WR) |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
        let z = |e: &StatEntry| e.z.map_or("undefined".to_string(), |z| format!("{z:.3}"));
        for a in &self.stages {
            let _ = writeln!(
                s,
                "| {} | {}/{} | {}% | {}% | {}% | {} | {} | {} | {} |",
                a.stage,
                a.treatment,
                a.control,
                pct(a.point.u_w),
                pct(a.point.u_l),
                pct(a.point.u_tie),
                a.net_benefit.cell(2, true),
                a.win_ratio.cell(3, false),
                z(&a.net_benefit),
                z(&a.win_ratio)
            );
        }
        s.push('\n');
        let verdict = |d: &Option<Decision>| match d {
            Some(d) if d.reject => format!("reject (c = {:.3})", d.boundary),
            Some(d) => format!("continue (c = {:.3})", d.boundary),
            None => "-".into(),
        };
        if self
            .stages
            .iter()
            .any(|a| a.net_benefit_decision.is_some() || a.win_ratio_decision.is_some())
        {
            let _ = writeln!(s, "| Stage | seq-SNB | seq-SWR |");
            let _ = writeln!(s, "|---|---|---|");
            for a in &self.stages {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} |",
                    a.stage,
                    verdict(&a.net_benefit_decision),
                    verdict(&a.win_ratio_decision)
                );
            }
            s.push('\n');
        }
        if let Some(d) = &self.design {
            d.markdown(s);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodTheory {
    pub method: winseq::mc::Method,
    pub cumulative: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub hypothesis: crate::config::SimHypothesis,
    pub total: usize,
    pub result: McResult,
    /// Theoretical cumulative rejection rates, when estimates were available.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub theoretical: Vec<MethodTheory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates_source: Option<String>,
}

impl SimulationReport {
    fn markdown(&self, s: &mut String) {
        let r = &self.result;
        let what = match self.hypothesis {
            crate::config::SimHypothesis::H0 => "Type I Rate",
            crate::config::SimHypothesis::Ha => "Power Level",
        };
        let _ = writeln!(
            s,
            "## Simulation ({} reps, {} per arm at the final stage)\n",
            r.reps,
            r.stage_sizes.last().copied().unwrap_or(0)
        );
        let _ = writeln!(s, "| Method | MSS (T) | ASN (T) | Attained {what} (%) | Bias (%) |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        let mss = r.stage_sizes.last().copied().unwrap_or(0);
        for m in &r.methods {
            let bias = self
                .theoretical
                .iter()
                .find(|t| t.method == m.method)
                .map(|t| t.bias.iter().map(|b| 100.0 * b).collect::<Vec<_>>());
            let rates: Vec<f64> = m.cumulative_rate.iter().map(|x| 100.0 * x).collect();
            let (attained, bias) = if m.method.is_sequential() {
                (list(&rates, 2), bias.map_or("-".into(), |b| list(&b, 2)))
            } else {
                (
                    format!("{:.2}", 100.0 * m.total_rate),
                    bias.and_then(|b| b.last().copied())
                        .map_or("-".into(), |b| format!("{b:.2}")),
                )
            };
            let _ = writeln!(
                s,
                "| {} | {mss} | {:.1} | {attained} | {bias} |",
                m.method.label(),
                m.asn
            );
        }
        s.push('\n');
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratedReport {
    pub path: String,
    pub treatment: usize,
    pub control: usize,
    pub stage_sizes: Vec<(usize, usize)>,
}
