//! Group-sequential design: joint distribution of the stage statistics, alpha
//! spending, efficacy boundaries, power, ASN and the sample-size search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvn::{mvn_rect_prob, std_normal_quantile, CorrelationMatrix, Rectangle};
use crate::sim::{super_population_estimates, GenerationSpec};
use crate::winstats::{StatKind, WinLossEstimates};

/// Probability tolerance for boundary bisection.
pub const BOUNDARY_TOL: f64 = 1e-5;
/// Integration tolerance for reported power.
pub const POWER_TOL: f64 = 1e-6;
const BRACKET: (f64, f64) = (-10.0, 10.0);
const MAX_BISECTIONS: usize = 80;
/// Seed for the lattice shifts of every MVN call made by this module.
const MVN_SEED: u64 = 0x5eed;

/// Fractions of the total sample enrolled per stage and arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Allocation {
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Allocation {
    pub fn new(eta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        let a = Self { eta, gamma };
        a.validate()?;
        Ok(a)
    }

    /// `K` stages, total split evenly across stages and arms.
    pub fn even(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("at least one stage is required".into()));
        }
        let f = 1.0 / (2 * k) as f64;
        Self::new(vec![f; k], vec![f; k])
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta.is_empty() || self.eta.len() != self.gamma.len() {
            return Err(Error::Validation(format!(
                "allocation needs equal, non-zero numbers of treatment and control fractions ({} vs {})",
                self.eta.len(),
                self.gamma.len()
            )));
        }
        if self.eta.iter().chain(&self.gamma).any(|f| !(*f > 0.0)) {
            return Err(Error::Validation("allocation fractions must be positive".into()));
        }
        let s: f64 = self.eta.iter().chain(&self.gamma).sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("allocation fractions sum to {s}, not 1")));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.eta.len()
    }

    /// Per-stage `(treatment, control)` enrollment for total size `total`.
    pub fn stage_counts(&self, total: usize) -> Result<Vec<(usize, usize)>> {
        let exact = |f: f64| -> Result<usize> {
            let x = f * total as f64;
            let r = x.round();
            if (x - r).abs() > 1e-9 || r < 1.0 {
                return Err(Error::Validation(format!(
                    "N = {total} does not split into whole positive stage sizes (fraction {f} gives {x})"
                )));
            }
            Ok(r as usize)
        };
        self.eta
            .iter()
            .zip(&self.gamma)
            .map(|(&e, &g)| Ok((exact(e)?, exact(g)?)))
            .collect()
    }

    /// Cumulative `(m_k, n_k)`.
    pub fn cumulative(&self, total: usize) -> Result<Vec<(usize, usize)>> {
        Ok(self
            .stage_counts(total)?
            .into_iter()
            .scan((0, 0), |acc, (a, b)| {
                acc.0 += a;
                acc.1 += b;
                Some(*acc)
            })
            .collect())
    }

    /// Smallest total size that splits into whole stage sizes.
    pub fn grid_step(&self) -> Result<usize> {
        (1..=100_000)
            .find(|&s| self.stage_counts(s).is_ok())
            .ok_or_else(|| Error::Validation("allocation has no practical integer grid".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    H0,
    #[serde(rename = "ha")]
    HA,
}

/// Joint normal law of the standardized stage statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialDistribution {
    pub kind: StatKind,
    /// Cumulative `(m_k, n_k)` the variances were evaluated at.
    pub stage_sizes: Vec<(usize, usize)>,
    pub stage_variance: Vec<f64>,
    pub info_fraction: Vec<f64>,
    pub mean: Vec<f64>,
    pub corr: CorrelationMatrix,
}

impl SequentialDistribution {
    pub fn stages(&self) -> usize {
        self.stage_variance.len()
    }
}

/// Parameter on the statistic's scale: `τ_w − τ_l` or `log(τ_w/τ_l)`.
pub fn effect(est: &WinLossEstimates, kind: StatKind) -> Result<f64> {
    let (tw, tl) = (est.tau_w(), est.tau_l());
    match kind {
        StatKind::NetBenefit => Ok(tw - tl),
        StatKind::LogWinRatio if tw > 0.0 && tl > 0.0 => Ok((tw / tl).ln()),
        StatKind::LogWinRatio => Err(Error::UndefinedRatio { u_w: tw, u_l: tl }),
    }
}

/// Variance of the (unstandardized) statistic at arm sizes `(m, n)`.
pub fn statistic_variance(est: &WinLossEstimates, kind: StatKind, m: usize, n: usize) -> Result<f64> {
    match kind {
        StatKind::NetBenefit => Ok(est.nb_variance_at(m, n)),
        StatKind::LogWinRatio => est.log_wr_variance_at(m, n),
    }
}

/// Distribution for explicit cumulative stage sizes.
pub fn build_distribution_at(
    est: &WinLossEstimates,
    stage_sizes: &[(usize, usize)],
    kind: StatKind,
    hypothesis: Hypothesis,
) -> Result<SequentialDistribution> {
    if stage_sizes.is_empty() {
        return Err(Error::Validation("at least one stage is required".into()));
    }
    let stage_variance = stage_sizes
        .iter()
        .map(|&(m, n)| statistic_variance(est, kind, m, n))
        .collect::<Result<Vec<_>>>()?;
    if let Some(v) = stage_variance.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Degenerate(format!(
            "stage variance {v} is not positive; the estimates carry no information"
        )));
    }
    let k = stage_variance.len();
    let last = stage_variance[k - 1];
    let info_fraction = stage_variance.iter().map(|v| last / v).collect();
    let theta = match hypothesis {
        Hypothesis::H0 => 0.0,
        Hypothesis::HA => effect(est, kind)?,
    };
    let mean = stage_variance.iter().map(|v| theta / v.sqrt()).collect();
    let corr = CorrelationMatrix::new(
        (0..k)
            .map(|p| {
                (0..k)
                    .map(|q| {
                        let (a, b) = (p.min(q), p.max(q));
                        (stage_variance[b] / stage_variance[a]).sqrt()
                    })
                    .collect()
            })
            .collect(),
    )?;
    Ok(SequentialDistribution {
        kind,
        stage_sizes: stage_sizes.to_vec(),
        stage_variance,
        info_fraction,
        mean,
        corr,
    })
}

/// Distribution of the stage statistics when `total` subjects are allocated by `alloc`.
pub fn build_distribution(
    est: &WinLossEstimates,
    alloc: &Allocation,
    total: usize,
    kind: StatKind,
    hypothesis: Hypothesis,
) -> Result<SequentialDistribution> {
    build_distribution_at(est, &alloc.cumulative(total)?, kind, hypothesis)
}

/// Large-sample correlation of the stage statistics, which depends only on
/// the allocation fractions and the ξ¹⁰, ξ⁰¹ components.
pub fn asymptotic_correlation(est: &WinLossEstimates, alloc: &Allocation, kind: StatKind) -> Result<CorrelationMatrix> {
    let (tw, tl) = (est.tau_w(), est.tau_l());
    let (a10, a01) = match kind {
        StatKind::NetBenefit => (est.xi10.difference(), est.xi01.difference()),
        StatKind::LogWinRatio => {
            if !(tw > 0.0 && tl > 0.0) {
                return Err(Error::UndefinedRatio { u_w: tw, u_l: tl });
            }
            let f = |s: &crate::winstats::Sym2| s.ww / (tw * tw) + s.ll / (tl * tl) - 2.0 * s.wl / (tw * tl);
            (f(&est.xi10), f(&est.xi01))
        }
    };
    let mut eta_cum = 0.0;
    let mut gamma_cum = 0.0;
    let gamma_s: Vec<f64> = alloc
        .eta
        .iter()
        .zip(&alloc.gamma)
        .map(|(e, g)| {
            eta_cum += e;
            gamma_cum += g;
            a10 / eta_cum + a01 / gamma_cum
        })
        .collect();
    let k = gamma_s.len();
    CorrelationMatrix::new(
        (0..k)
            .map(|p| (0..k).map(|q| (gamma_s[p.max(q)] / gamma_s[p.min(q)]).sqrt()).collect())
            .collect(),
    )
}

/// Kim–DeMets power-family partial alphas `α(t_k^m − t_{k−1}^m)`.
pub fn alpha_spending(alpha: f64, t: &[f64], exponent: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Validation(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(exponent > 0.0) {
        return Err(Error::Validation(format!(
            "spending exponent must be positive, got {exponent}"
        )));
    }
    let Some(&last) = t.last() else {
        return Err(Error::Validation("information fractions are empty".into()));
    };
    if (last - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(format!(
            "final information fraction is {last}, not 1"
        )));
    }
    let mut prev = 0.0;
    t.iter()
        .map(|&tk| {
            if !(tk > prev && tk <= 1.0 + 1e-12) {
                return Err(Error::Validation(format!(
                    "information fractions must increase strictly within (0, 1]: {t:?}"
                )));
            }
            let a = alpha * (tk.powf(exponent) - prev.powf(exponent));
            prev = tk;
            Ok(a)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResult {
    pub partial_alpha: Vec<f64>,
    pub boundaries: Vec<f64>,
    /// Sum of the crossing probabilities actually attained at the boundaries.
    pub cumulative_alpha_check: f64,
}

/// `P(S_1 < c_1, …, S_{k−1} < c_{k−1}, S_k ≥ c)` under `N(mean, corr)`.
fn first_crossing(bounds: &[f64], c: f64, corr: &CorrelationMatrix, mean: &[f64], tol: f64) -> Result<f64> {
    let k = bounds.len() + 1;
    if k == 1 {
        return Ok(crate::mvn::norm_cdf(mean[0] - c));
    }
    let mut lower = vec![f64::NEG_INFINITY; k];
    let mut upper: Vec<f64> = bounds.to_vec();
    lower[k - 1] = c;
    upper.push(f64::INFINITY);
    let rect = Rectangle::new(lower, upper)?;
    Ok(mvn_rect_prob(&rect, &corr.leading(k), &mean[..k], tol, MVN_SEED)?.p)
}

/// Sequentially solve each `c_k` so the first crossing at stage k has probability `α_k` under H0.
pub fn solve_boundaries(partial_alpha: &[f64], corr: &CorrelationMatrix) -> Result<BoundaryResult> {
    let k = partial_alpha.len();
    if k != corr.dim() {
        return Err(Error::Validation(format!(
            "{k} partial alphas for a {}-stage correlation matrix",
            corr.dim()
        )));
    }
    if let Some(a) = partial_alpha.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::Validation(format!("partial alpha {a} is not positive")));
    }
    let total: f64 = partial_alpha.iter().sum();
    if !(total < 1.0) {
        return Err(Error::Validation(format!("partial alphas sum to {total}")));
    }
    let zero = vec![0.0; k];
    let mut bounds: Vec<f64> = Vec::with_capacity(k);
    let mut attained = 0.0;
    for (s, &target) in partial_alpha.iter().enumerate() {
        if s == 0 {
            let c = std_normal_quantile(1.0 - target)?;
            attained += target;
            bounds.push(c);
            continue;
        }
        let g = |c: f64| first_crossing(&bounds, c, corr, &zero, BOUNDARY_TOL);
        let (mut lo, mut hi) = BRACKET;
        let (g_lo, g_hi) = (g(lo)?, g(hi)?);
        if !(g_lo >= target && g_hi <= target) {
            return Err(Error::Numeric(format!(
                "stage {} boundary is not bracketed by [{lo}, {hi}] (probabilities {g_lo:.3e}, {g_hi:.3e}, target {target:.3e})",
                s + 1
            )));
        }
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let p = g(mid)?;
            if (p - target).abs() < best.0 {
                best = ((p - target).abs(), mid, p);
            }
            if (p - target).abs() <= BOUNDARY_TOL / 100.0 || hi - lo < 1e-7 {
                break;
            }
            if p > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if best.0 > BOUNDARY_TOL {
            return Err(Error::Numeric(format!(
                "stage {} boundary search stalled {:.2e} away from its target",
                s + 1,
                best.0
            )));
        }
        attained += best.2;
        bounds.push(best.1);
    }
    Ok(BoundaryResult {
        partial_alpha: partial_alpha.to_vec(),
        boundaries: bounds,
        cumulative_alpha_check: attained,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub stage_rejection: Vec<f64>,
    pub cumulative_power: Vec<f64>,
    pub total_power: f64,
    /// Expected enrollment, in the units of the supplied stage sizes.
    pub asn: f64,
    /// Final-stage enrollment, in the same units.
    pub mss: f64,
}

/// Expected enrollment under efficacy-only stopping.
pub fn average_sample_number(stage_rejection: &[f64], stage_sizes: &[f64]) -> f64 {
    let k = stage_sizes.len();
    let early: f64 = stage_rejection[..k - 1].iter().sum();
    stage_rejection[..k - 1]
        .iter()
        .zip(stage_sizes)
        .map(|(rp, n)| rp * n)
        .sum::<f64>()
        + stage_sizes[k - 1] * (1.0 - early)
}

/// First-crossing probabilities of `dist` against `bounds`.
pub fn evaluate_power(
    bounds: &BoundaryResult,
    dist: &SequentialDistribution,
    stage_sizes: &[f64],
) -> Result<PowerResult> {
    let k = bounds.boundaries.len();
    if dist.stages() != k || stage_sizes.len() != k {
        return Err(Error::Validation(format!(
            "{k} boundaries, {} distribution stages and {} stage sizes",
            dist.stages(),
            stage_sizes.len()
        )));
    }
    let stage_rejection = (0..k)
        .map(|s| {
            first_crossing(
                &bounds.boundaries[..s],
                bounds.boundaries[s],
                &dist.corr,
                &dist.mean,
                POWER_TOL,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cumulative_power: Vec<f64> = stage_rejection
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    Ok(PowerResult {
        total_power: cumulative_power[k - 1],
        asn: average_sample_number(&stage_rejection, stage_sizes),
        mss: stage_sizes[k - 1],
        stage_rejection,
        cumulative_power,
    })
}

/// Boundaries from the H0 estimates and power from the H_A estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignEvaluation {
    pub null: SequentialDistribution,
    pub alternative: SequentialDistribution,
    pub boundaries: BoundaryResult,
    pub power: PowerResult,
}

/// Spending, boundaries and power at explicit cumulative stage sizes.
///
/// ASN is reported in treatment-arm units unless `asn_units` is given.
pub fn evaluate_design_at(
    est_h0: &WinLossEstimates,
    est_ha: &WinLossEstimates,
    stage_sizes: &[(usize, usize)],
    kind: StatKind,
    alpha: f64,
    exponent: f64,
    asn_units: Option<&[f64]>,
) -> Result<DesignEvaluation> {
    let null = build_distribution_at(est_h0, stage_sizes, kind, Hypothesis::H0)?;
    let alternative = build_distribution_at(est_ha, stage_sizes, kind, Hypothesis::HA)?;
    let partial = alpha_spending(alpha, &null.info_fraction, exponent)?;
    let boundaries = solve_boundaries(&partial, &null.corr)?;
    let default_units: Vec<f64> = stage_sizes.iter().map(|s| s.0 as f64).collect();
    let power = evaluate_power(&boundaries, &alternative, asn_units.unwrap_or(&default_units))?;
    Ok(DesignEvaluation {
        null,
        alternative,
        boundaries,
        power,
    })
}

pub fn power_analysis_from_estimates(
    est_h0: &WinLossEstimates,
    est_ha: &WinLossEstimates,
    alloc: &Allocation,
    total: usize,
    kind: StatKind,
    alpha: f64,
    exponent: f64,
) -> Result<DesignEvaluation> {
    evaluate_design_at(est_h0, est_ha, &alloc.cumulative(total)?, kind, alpha, exponent, None)
}

fn default_spending_exponent() -> f64 {
    2.0
}

fn default_super_population() -> usize {
    100_000
}

fn default_n_max() -> usize {
    1_000_000
}

/// Inputs of the sample-size search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub alpha: f64,
    pub target_power: f64,
    pub statistic: StatKind,
    #[serde(default = "default_spending_exponent")]
    pub spending_exponent: f64,
    pub allocation: Allocation,
    pub generation: GenerationSpec,
    /// Subjects per arm in each super-population.
    #[serde(default = "default_super_population")]
    pub super_population_size: usize,
    /// Largest total sample size the search may try.
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        self.search().validate()?;
        if self.super_population_size < 2 {
            return Err(Error::Validation(
                "super-population needs at least 2 subjects per arm".into(),
            ));
        }
        self.generation.validate()
    }

    pub fn search(&self) -> SearchSpec {
        SearchSpec {
            alpha: self.alpha,
            target_power: self.target_power,
            statistic: self.statistic,
            spending_exponent: self.spending_exponent,
            allocation: self.allocation.clone(),
            n_max: self.n_max,
        }
    }
}

/// The part of a [`DesignSpec`] the search needs once τ and ξ are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub alpha: f64,
    pub target_power: f64,
    pub statistic: StatKind,
    pub spending_exponent: f64,
    pub allocation: Allocation,
    pub n_max: usize,
}

impl SearchSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < self.target_power && self.target_power < 1.0) {
            return Err(Error::Validation(format!(
                "need 0 < alpha < target_power < 1 (alpha {}, target {})",
                self.alpha, self.target_power
            )));
        }
        if !(self.spending_exponent > 0.0) {
            return Err(Error::Validation("spending exponent must be positive".into()));
        }
        self.allocation.validate()
    }
}

/// Design evaluated at the chosen total sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSizeResult {
    pub total: usize,
    pub stage_sizes: Vec<(usize, usize)>,
    pub evaluation: DesignEvaluation,
    pub estimates_h0: WinLossEstimates,
    pub estimates_ha: WinLossEstimates,
    /// Every `(N, power)` the search evaluated, in evaluation order.
    pub trace: Vec<(usize, f64)>,
}

/// Super-population estimates under H0 and H_A.
pub fn design_estimates(spec: &DesignSpec, seed: u64) -> Result<(WinLossEstimates, WinLossEstimates)> {
    spec.validate()?;
    let size = spec.super_population_size;
    log::info!("estimating H0 and H_A super-populations with {size} subjects per arm");
    let h0 = super_population_estimates(&spec.generation.null(), size, seed)?;
    let ha = super_population_estimates(&spec.generation, size, seed)?;
    Ok((h0, ha))
}

/// Smallest total sample size on the allocation grid whose power reaches the target.
pub fn determine_sample_size(spec: &DesignSpec, seed: u64) -> Result<SampleSizeResult> {
    let (h0, ha) = design_estimates(spec, seed)?;
    sample_size_from_estimates(&spec.search(), &h0, &ha)
}

/// Sample-size search given precomputed super-population estimates.
///
/// Power is nondecreasing in N, so the grid is searched by doubling and then
/// bisection; the result is the same N a step-by-step scan would return.
pub fn sample_size_from_estimates(
    spec: &SearchSpec,
    h0: &WinLossEstimates,
    ha: &WinLossEstimates,
) -> Result<SampleSizeResult> {
    spec.validate()?;
    let step = spec.allocation.grid_step()?;
    let mut trace = Vec::new();
    let eval = |steps: usize, trace: &mut Vec<(usize, f64)>| -> Result<DesignEvaluation> {
        let total = steps * step;
        let e = power_analysis_from_estimates(
            h0,
            ha,
            &spec.allocation,
            total,
            spec.statistic,
            spec.alpha,
            spec.spending_exponent,
        )?;
        log::debug!("N = {total}: power {:.5}", e.power.total_power);
        trace.push((total, e.power.total_power));
        Ok(e)
    };
    let max_steps = spec.n_max / step;
    if max_steps == 0 {
        return Err(Error::Validation(format!(
            "n_max {} is below one grid step {step}",
            spec.n_max
        )));
    }
    let reached = |e: &DesignEvaluation| e.power.total_power >= spec.target_power;

    // Doubling phase: find hi with power(hi) ≥ target, lo with power(lo) < target.
    let mut lo = 0usize;
    let mut hi = 1usize;
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut hit = loop {
        let e = eval(hi, &mut trace)?;
        if e.power.total_power > best.1 {
            best = (hi * step, e.power.total_power);
        }
        if reached(&e) {
            break e;
        }
        if hi == max_steps {
            return Err(Error::SearchFailed {
                target: spec.target_power,
                n_max: spec.n_max,
                best_n: best.0,
                best_power: best.1,
            });
        }
        lo = hi;
        hi = (hi * 2).min(max_steps);
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let e = eval(mid, &mut trace)?;
        if reached(&e) {
            hi = mid;
            hit = e;
        } else {
            lo = mid;
        }
    }
    let total = hi * step;
    Ok(SampleSizeResult {
        total,
        stage_sizes: spec.allocation.cumulative(total)?,
        evaluation: hit,
        estimates_h0: *h0,
        estimates_ha: *ha,
        trace,
    })
}
