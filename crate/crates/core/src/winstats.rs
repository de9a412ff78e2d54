//! Win/loss U-statistics, their covariance components, and the Net Benefit and
//! log Win Ratio test statistics.
//!
//! Everything is driven by [`KernelSums`]: the row and column sums of the win
//! and loss kernel matrices. They are exact integers, so point estimates and
//! ξ̂ components are a single division away from exact rational values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hce::{HceSchema, PairwiseMatrix, PreparedArm, SubjectRecord, Verdict};
use crate::par;

/// 97.5% standard normal quantile used for two-sided 95% intervals.
pub const Z_975: f64 = 1.959964;

/// Row and column sums of `Φ_w` and `Φ_l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSums {
    m: usize,
    n: usize,
    row_w: Vec<u64>,
    row_l: Vec<u64>,
    col_w: Vec<u64>,
    col_l: Vec<u64>,
}

/// Rows per task when streaming a super-population.
const STREAM_ROWS: usize = 64;

impl KernelSums {
    /// Empty sums (0×0), ready to be extended.
    pub fn empty() -> Self {
        Self {
            m: 0,
            n: 0,
            row_w: Vec::new(),
            row_l: Vec::new(),
            col_w: Vec::new(),
            col_l: Vec::new(),
        }
    }

    pub fn from_matrix(mat: &PairwiseMatrix) -> Self {
        let mut s = Self::empty();
        s.extend_to(mat, mat.rows(), mat.cols())
            .expect("full matrix is a valid extension");
        s
    }

    /// Sums over the leading `m × n` block of `mat`.
    pub fn from_matrix_prefix(mat: &PairwiseMatrix, m: usize, n: usize) -> Result<Self> {
        let mut s = Self::empty();
        s.extend_to(mat, m, n)?;
        Ok(s)
    }

    /// Grow the summed block from its current shape to the leading `m × n`
    /// block of `mat`, touching only the newly covered cells.
    pub fn extend_to(&mut self, mat: &PairwiseMatrix, m: usize, n: usize) -> Result<()> {
        if m > mat.rows() || n > mat.cols() {
            return Err(Error::Validation(format!(
                "prefix {m}×{n} exceeds the {}×{} comparison matrix",
                mat.rows(),
                mat.cols()
            )));
        }
        if m < self.m || n < self.n {
            return Err(Error::Validation(format!(
                "cannot shrink summed block from {}×{} to {m}×{n}",
                self.m, self.n
            )));
        }
        let (m0, n0) = (self.m, self.n);
        self.row_w.resize(m, 0);
        self.row_l.resize(m, 0);
        self.col_w.resize(n, 0);
        self.col_l.resize(n, 0);
        for i in 0..m {
            let row = mat.row(i);
            let first_col = if i < m0 { n0 } else { 0 };
            for (j, v) in row.iter().enumerate().take(n).skip(first_col) {
                match v {
                    Verdict::Win => {
                        self.row_w[i] += 1;
                        self.col_w[j] += 1;
                    }
                    Verdict::Loss => {
                        self.row_l[i] += 1;
                        self.col_l[j] += 1;
                    }
                    Verdict::Tie => {}
                }
            }
        }
        self.m = m;
        self.n = n;
        Ok(())
    }

    /// Sums over all `m × n` pairs without materializing the matrix.
    ///
    /// Memory is O(m + n), so this is the path for super-populations.
    pub fn stream(treat: &PreparedArm, ctrl: &PreparedArm) -> Self {
        let (m, n) = (treat.len(), ctrl.len());
        let chunks = m.div_ceil(STREAM_ROWS);
        struct Acc {
            col_w: Vec<u64>,
            col_l: Vec<u64>,
            rows: Vec<(usize, Vec<(u64, u64)>)>,
        }
        let identity = || Acc {
            col_w: Vec::new(),
            col_l: Vec::new(),
            rows: Vec::new(),
        };
        let acc = par::fold_reduce(
            chunks,
            identity,
            |mut acc, c| {
                if acc.col_w.is_empty() {
                    acc.col_w = vec![0; n];
                    acc.col_l = vec![0; n];
                }
                let lo = c * STREAM_ROWS;
                let hi = (lo + STREAM_ROWS).min(m);
                let mut rows = Vec::with_capacity(hi - lo);
                for i in lo..hi {
                    let (rw, rl) = treat.accumulate_row(i, ctrl, &mut acc.col_w, &mut acc.col_l);
                    rows.push((rw, rl));
                }
                acc.rows.push((c, rows));
                acc
            },
            |mut a, mut b| {
                if a.col_w.is_empty() {
                    std::mem::swap(&mut a.col_w, &mut b.col_w);
                    std::mem::swap(&mut a.col_l, &mut b.col_l);
                } else if !b.col_w.is_empty() {
                    for (x, y) in a.col_w.iter_mut().zip(&b.col_w) {
                        *x += y;
                    }
                    for (x, y) in a.col_l.iter_mut().zip(&b.col_l) {
                        *x += y;
                    }
                }
                a.rows.append(&mut b.rows);
                a
            },
        );
        let mut rows = acc.rows;
        rows.sort_unstable_by_key(|(c, _)| *c);
        let (row_w, row_l) = rows.into_iter().flat_map(|(_, r)| r).unzip();
        let (col_w, col_l) = if acc.col_w.is_empty() {
            (vec![0; n], vec![0; n])
        } else {
            (acc.col_w, acc.col_l)
        };
        Self {
            m,
            n,
            row_w,
            row_l,
            col_w,
            col_l,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn wins(&self) -> u64 {
        self.row_w.iter().sum()
    }

    pub fn losses(&self) -> u64 {
        self.row_l.iter().sum()
    }

    pub fn point(&self) -> Result<WinLossPoint> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::Domain(format!(
                "win/loss proportions need both arms non-empty (m = {}, n = {})",
                self.m, self.n
            )));
        }
        Ok(WinLossPoint::from_counts(self.wins(), self.losses(), self.m, self.n))
    }

    /// Consistent plug-in estimators of τ and the ξ components.
    pub fn estimates(&self) -> Result<WinLossEstimates> {
        let (m, n) = (self.m, self.n);
        if m < 2 || n < 2 {
            return Err(Error::InsufficientData(format!(
                "covariance estimation needs at least 2 subjects per arm (m = {m}, n = {n})"
            )));
        }
        let point = self.point()?;
        let (tw, tl) = (point.u_w, point.u_l);
        let (sw, sl) = (point.wins as u128, point.losses as u128);
        let dot = |a: &[u64], b: &[u64]| -> u128 { a.iter().zip(b).map(|(&x, &y)| x as u128 * y as u128).sum() };
        // Σ_{j≠j'} φ_u^{ij} φ_v^{ij'} summed over i, and the column analogue.
        let d10 = (m * n * (n - 1)) as f64;
        let d01 = (m * (m - 1) * n) as f64;
        let xi10 = Sym2 {
            ww: (dot(&self.row_w, &self.row_w) - sw) as f64 / d10 - tw * tw,
            wl: dot(&self.row_w, &self.row_l) as f64 / d10 - tw * tl,
            ll: (dot(&self.row_l, &self.row_l) - sl) as f64 / d10 - tl * tl,
        };
        let xi01 = Sym2 {
            ww: (dot(&self.col_w, &self.col_w) - sw) as f64 / d01 - tw * tw,
            wl: dot(&self.col_w, &self.col_l) as f64 / d01 - tw * tl,
            ll: (dot(&self.col_l, &self.col_l) - sl) as f64 / d01 - tl * tl,
        };
        let xi11 = Sym2 {
            ww: tw * (1.0 - tw),
            wl: -tw * tl,
            ll: tl * (1.0 - tl),
        };
        Ok(WinLossEstimates {
            point,
            xi10,
            xi01,
            xi11,
        })
    }
}

/// Win, loss and tie proportions over all `m × n` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinLossPoint {
    pub u_w: f64,
    pub u_l: f64,
    pub u_tie: f64,
    pub m: usize,
    pub n: usize,
    pub wins: u64,
    pub losses: u64,
}

impl WinLossPoint {
    pub fn from_counts(wins: u64, losses: u64, m: usize, n: usize) -> Self {
        let pairs = (m * n) as u64;
        let total = pairs as f64;
        Self {
            u_w: wins as f64 / total,
            u_l: losses as f64 / total,
            u_tie: (pairs - wins - losses) as f64 / total,
            m,
            n,
            wins,
            losses,
        }
    }
}

/// Symmetric 2×2 matrix over {w, l}.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym2 {
    pub ww: f64,
    pub wl: f64,
    pub ll: f64,
}

impl Sym2 {
    pub fn get(&self, u: WinLoss, v: WinLoss) -> f64 {
        match (u, v) {
            (WinLoss::Win, WinLoss::Win) => self.ww,
            (WinLoss::Loss, WinLoss::Loss) => self.ll,
            _ => self.wl,
        }
    }

    /// Component of `U_w − U_l`: ww + ll − 2wl.
    pub fn difference(&self) -> f64 {
        self.ww + self.ll - 2.0 * self.wl
    }

    fn swapped(&self) -> Self {
        Self {
            ww: self.ll,
            wl: self.wl,
            ll: self.ww,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinLoss {
    Win,
    Loss,
}

/// τ̂ and the ξ̂ covariance components at one analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinLossEstimates {
    pub point: WinLossPoint,
    pub xi10: Sym2,
    pub xi01: Sym2,
    pub xi11: Sym2,
}

fn clamp_variance(v: f64, what: &str) -> f64 {
    if v < 0.0 {
        log::warn!("negative plug-in variance {v:.3e} for {what} clamped to 0");
        0.0
    } else {
        v
    }
}

impl WinLossEstimates {
    pub fn tau_w(&self) -> f64 {
        self.point.u_w
    }

    pub fn tau_l(&self) -> f64 {
        self.point.u_l
    }

    /// `((n−1)/mn)·f(ξ¹⁰) + ((m−1)/mn)·f(ξ⁰¹) + (1/mn)·f(ξ¹¹)` at sample sizes `(m, n)`.
    fn combine(&self, m: usize, n: usize, f: impl Fn(&Sym2) -> f64) -> f64 {
        let (mf, nf) = (m as f64, n as f64);
        let mn = mf * nf;
        (nf - 1.0) / mn * f(&self.xi10) + (mf - 1.0) / mn * f(&self.xi01) + f(&self.xi11) / mn
    }

    /// `Cov(U_u, U_v)` for arms of size `(m, n)`, unclamped.
    pub fn covariance_at(&self, u: WinLoss, v: WinLoss, m: usize, n: usize) -> f64 {
        self.combine(m, n, |s| s.get(u, v))
    }

    /// `V(U_w − U_l)` for arms of size `(m, n)`.
    pub fn nb_variance_at(&self, m: usize, n: usize) -> f64 {
        clamp_variance(self.combine(m, n, Sym2::difference), "net benefit")
    }

    /// Delta-method `V(log U_w − log U_l)` for arms of size `(m, n)`.
    pub fn log_wr_variance_at(&self, m: usize, n: usize) -> Result<f64> {
        let (tw, tl) = (self.tau_w(), self.tau_l());
        if tw <= 0.0 || tl <= 0.0 {
            return Err(Error::UndefinedRatio { u_w: tw, u_l: tl });
        }
        let v = self.combine(m, n, |s| s.ww / (tw * tw) + s.ll / (tl * tl) - 2.0 * s.wl / (tw * tl));
        Ok(clamp_variance(v, "log win ratio"))
    }

    /// Estimates seen from the other arm: wins and losses swap, and so do `m, n` and `ξ¹⁰, ξ⁰¹`.
    pub fn swapped(&self) -> Self {
        let p = self.point;
        Self {
            point: WinLossPoint {
                u_w: p.u_l,
                u_l: p.u_w,
                u_tie: p.u_tie,
                m: p.n,
                n: p.m,
                wins: p.losses,
                losses: p.wins,
            },
            xi10: self.xi01.swapped(),
            xi01: self.xi10.swapped(),
            xi11: self.xi11.swapped(),
        }
    }
}

pub fn win_loss_statistics(mat: &PairwiseMatrix) -> Result<WinLossPoint> {
    KernelSums::from_matrix(mat).point()
}

pub fn estimate_xi(mat: &PairwiseMatrix) -> Result<WinLossEstimates> {
    KernelSums::from_matrix(mat).estimates()
}

/// Plug-in `V(U_u)` at the sample sizes the estimates were computed on.
pub fn variance_u(est: &WinLossEstimates, which: WinLoss) -> f64 {
    clamp_variance(
        est.covariance_at(which, which, est.point.m, est.point.n),
        "win/loss proportion",
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    NetBenefit,
    LogWinRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedStat {
    pub kind: StatKind,
    pub estimate: f64,
    pub variance: f64,
    /// `estimate / √variance`, centered at the null value 0.
    pub z: f64,
    /// 95% interval on the reporting scale (difference for NB, ratio for WR).
    pub ci95: (f64, f64),
}

impl DerivedStat {
    /// Estimate on the reporting scale.
    pub fn reported(&self) -> f64 {
        match self.kind {
            StatKind::NetBenefit => self.estimate,
            StatKind::LogWinRatio => self.estimate.exp(),
        }
    }

    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }
}

fn z_score(estimate: f64, variance: f64, kind: StatKind) -> Result<f64> {
    if variance > 0.0 {
        Ok(estimate / variance.sqrt())
    } else if estimate == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::Degenerate(format!(
            "{kind:?} estimate {estimate} has zero variance"
        )))
    }
}

pub fn net_benefit(est: &WinLossEstimates) -> Result<DerivedStat> {
    let estimate = est.tau_w() - est.tau_l();
    let variance = est.nb_variance_at(est.point.m, est.point.n);
    let z = z_score(estimate, variance, StatKind::NetBenefit)?;
    let half = Z_975 * variance.sqrt();
    Ok(DerivedStat {
        kind: StatKind::NetBenefit,
        estimate,
        variance,
        z,
        ci95: (estimate - half, estimate + half),
    })
}

pub fn log_win_ratio(est: &WinLossEstimates) -> Result<DerivedStat> {
    let variance = est.log_wr_variance_at(est.point.m, est.point.n)?;
    let estimate = (est.tau_w() / est.tau_l()).ln();
    let z = z_score(estimate, variance, StatKind::LogWinRatio)?;
    let half = Z_975 * variance.sqrt();
    Ok(DerivedStat {
        kind: StatKind::LogWinRatio,
        estimate,
        variance,
        z,
        ci95: ((estimate - half).exp(), (estimate + half).exp()),
    })
}

/// Statistics on the cumulative data of one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStatistics {
    pub m: usize,
    pub n: usize,
    pub estimates: WinLossEstimates,
    pub net_benefit: Result<DerivedStat>,
    pub log_win_ratio: Result<DerivedStat>,
}

impl StageStatistics {
    fn from_sums(sums: &KernelSums) -> Result<Self> {
        let estimates = sums.estimates()?;
        Ok(Self {
            m: sums.m(),
            n: sums.n(),
            estimates,
            net_benefit: net_benefit(&estimates),
            log_win_ratio: log_win_ratio(&estimates),
        })
    }
}

fn check_stage_sizes(stages: &[(usize, usize)], m_max: usize, n_max: usize) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::Validation("at least one analysis is required".into()));
    }
    for w in stages.windows(2) {
        if w[1].0 <= w[0].0 || w[1].1 <= w[0].1 {
            return Err(Error::Validation(format!(
                "cumulative stage sizes must increase strictly in both arms: {:?} then {:?}",
                w[0], w[1]
            )));
        }
    }
    let &(m, n) = stages.last().expect("non-empty");
    if m > m_max || n > n_max {
        return Err(Error::Validation(format!(
            "final stage needs {m} treatment and {n} control subjects, have {m_max} and {n_max}"
        )));
    }
    Ok(())
}

/// Statistics for each cumulative analysis `(m_k, n_k)` over one matrix.
pub fn staged_statistics_from_matrix(mat: &PairwiseMatrix, stages: &[(usize, usize)]) -> Result<Vec<StageStatistics>> {
    check_stage_sizes(stages, mat.rows(), mat.cols())?;
    let mut sums = KernelSums::empty();
    stages
        .iter()
        .map(|&(m, n)| {
            sums.extend_to(mat, m, n)?;
            StageStatistics::from_sums(&sums)
        })
        .collect()
}

/// Stage-wise statistics on enrollment-ordered records; stage k uses the first
/// `m_k` treatment and `n_k` control subjects.
pub fn staged_statistics(
    treat: &[SubjectRecord],
    ctrl: &[SubjectRecord],
    schema: &HceSchema,
    stages: &[(usize, usize)],
) -> Result<Vec<StageStatistics>> {
    check_stage_sizes(stages, treat.len(), ctrl.len())?;
    let &(m, n) = stages.last().expect("checked non-empty");
    let mat = crate::hce::comparison_matrices(&treat[..m], &ctrl[..n], schema)?;
    staged_statistics_from_matrix(&mat, stages)
}
