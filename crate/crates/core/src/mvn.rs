//! Rectangle probabilities of multivariate normal vectors.
//!
//! Separation of variables after a priority reordering and Cholesky
//! factorization, integrated with randomly shifted rank-1 lattice rules. The
//! shifts come from a seeded ChaCha stream, so a given input and seed always
//! return the same bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::par;

pub const MAX_DIM: usize = 16;

/// Largest diagonal jitter used to repair a nearly singular matrix.
const MAX_JITTER: f64 = 1e-10;

const SHIFTS: usize = 12;
const START_POINTS: usize = 1 << 10;
const MAX_POINTS: usize = 1 << 19;

const PRIMES: [f64; MAX_DIM] = [
    2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0, 53.0,
];

/// Standard normal CDF, accurate in both tails.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[inline]
fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn standard() -> Normal {
    Normal::standard()
}

/// `Φ⁻¹(p)` with one Newton correction on top of the library inverse.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("quantile needs p in (0, 1), got {p}")));
    }
    let x = standard().inverse_cdf(p);
    let d = norm_pdf(x);
    if d > 1e-300 {
        let refined = x - (norm_cdf(x) - p) / d;
        if (norm_cdf(refined) - p).abs() <= (norm_cdf(x) - p).abs() {
            return Ok(refined);
        }
    }
    Ok(x)
}

#[inline]
fn quantile_clamped(p: f64) -> f64 {
    standard().inverse_cdf(p.clamp(1e-300, 1.0 - 1e-16))
}

/// Validated correlation matrix with its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::Validation("correlation matrix is empty".into()));
        }
        if dim > MAX_DIM {
            return Err(Error::Unsupported(format!(
                "dimension {dim} exceeds the supported maximum {MAX_DIM}"
            )));
        }
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Validation("correlation matrix must be square".into()));
        }
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            if (rows[i][i] - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "diagonal entry {i} is {} rather than 1",
                    rows[i][i]
                )));
            }
            for j in 0..dim {
                let (a, b) = (rows[i][j], rows[j][i]);
                if !a.is_finite() || (a - b).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "entries ({i},{j}) = {a} and ({j},{i}) = {b} are not symmetric"
                    )));
                }
                entries[i * dim + j] = if i == j { 1.0 } else { 0.5 * (a + b) };
            }
        }
        let c = Self { dim, entries };
        c.cholesky()?;
        Ok(c)
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(
            (0..dim)
                .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// Leading `k × k` block.
    pub fn leading(&self, k: usize) -> Self {
        let entries = (0..k)
            .flat_map(|i| (0..k).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self { dim: k, entries }
    }

    /// Lower-triangular factor, with at most [`MAX_JITTER`] added to the diagonal.
    pub fn cholesky(&self) -> Result<Vec<f64>> {
        cholesky(&self.entries, self.dim, 0.0)
            .or_else(|_| cholesky(&self.entries, self.dim, MAX_JITTER))
            .map_err(|k| {
                Error::Numeric(format!(
                    "correlation matrix is not positive semi-definite (pivot {k} fails even with jitter {MAX_JITTER:e})"
                ))
            })
    }
}

fn cholesky(a: &[f64], d: usize, jitter: f64) -> std::result::Result<Vec<f64>, usize> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] + jitter - s;
                if v < 0.0 {
                    return Err(i);
                }
                l[i * d + i] = v.sqrt();
            } else {
                let ljj = l[j * d + j];
                l[i * d + j] = if ljj > 0.0 { (a[i * d + j] - s) / ljj } else { 0.0 };
            }
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rectangle {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Rectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Validation(format!(
                "rectangle bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if a.is_nan() || b.is_nan() || a >= b {
                return Err(Error::Validation(format!(
                    "rectangle side {i} has lower {a} not below upper {b}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `(−∞, upper)` in every coordinate.
    pub fn below(upper: Vec<f64>) -> Result<Self> {
        Self::new(vec![f64::NEG_INFINITY; upper.len()], upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnProb {
    pub p: f64,
    /// Three standard errors across the random shifts.
    pub err_est: f64,
}

/// Reordered and factored integrand for one rectangle.
struct Integrand {
    dim: usize,
    l: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Integrand {
    fn new(rect: &Rectangle, corr: &CorrelationMatrix, mean: &[f64]) -> Result<Self> {
        let d = corr.dim();
        let mut a: Vec<f64> = rect.lower.iter().zip(mean).map(|(x, m)| x - m).collect();
        let mut b: Vec<f64> = rect.upper.iter().zip(mean).map(|(x, m)| x - m).collect();
        let mut c = corr.entries.clone();
        let mut l = vec![0.0; d * d];
        let mut y = vec![0.0; d];
        for i in 0..d {
            // Pick the remaining variable with the smallest expected interval mass.
            let mut best = (i, f64::INFINITY, 0.0);
            for j in i..d {
                let s: f64 = (0..i).map(|k| l[j * d + k] * y[k]).sum();
                let var = c[j * d + j] - (0..i).map(|k| l[j * d + k].powi(2)).sum::<f64>();
                let sd = var.max(0.0).sqrt();
                if sd <= 0.0 {
                    continue;
                }
                let mass = norm_cdf((b[j] - s) / sd) - norm_cdf((a[j] - s) / sd);
                if mass < best.1 {
                    best = (j, mass, sd);
                }
            }
            let (j, _, sd) = best;
            if sd <= 1e-12 {
                return Err(Error::Numeric(
                    "correlation matrix is numerically singular after reordering".into(),
                ));
            }
            if j != i {
                a.swap(i, j);
                b.swap(i, j);
                for k in 0..d {
                    c.swap(i * d + k, j * d + k);
                }
                for k in 0..d {
                    c.swap(k * d + i, k * d + j);
                }
                for k in 0..i {
                    l.swap(i * d + k, j * d + k);
                }
            }
            l[i * d + i] = sd;
            for r in i + 1..d {
                let s: f64 = (0..i).map(|k| l[r * d + k] * l[i * d + k]).sum();
                l[r * d + i] = (c[r * d + i] - s) / sd;
            }
            let s: f64 = (0..i).map(|k| l[i * d + k] * y[k]).sum();
            let (lo, hi) = ((a[i] - s) / sd, (b[i] - s) / sd);
            let mass = norm_cdf(hi) - norm_cdf(lo);
            y[i] = if mass > 1e-300 {
                (norm_pdf(lo) - norm_pdf(hi)) / mass
            } else if lo.is_finite() {
                lo
            } else {
                hi
            };
        }
        Ok(Self { dim: d, l, a, b })
    }

    /// Probability of the first coordinate's interval, the constant factor.
    fn first(&self) -> (f64, f64) {
        let s = self.l[0];
        (norm_cdf(self.a[0] / s), norm_cdf(self.b[0] / s))
    }

    /// Integrand value at `w ∈ [0,1]^{dim−1}`.
    #[inline]
    fn eval(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let d = self.dim;
        let (mut lo, mut hi) = self.first();
        let mut f = hi - lo;
        for i in 1..d {
            if f <= 0.0 {
                return 0.0;
            }
            y[i - 1] = quantile_clamped(lo + w[i - 1] * (hi - lo));
            let s: f64 = (0..i).map(|k| self.l[i * d + k] * y[k]).sum();
            let lii = self.l[i * d + i];
            lo = norm_cdf((self.a[i] - s) / lii);
            hi = norm_cdf((self.b[i] - s) / lii);
            f *= hi - lo;
        }
        f
    }
}

/// `P(lower < X < upper)` for `X ~ N(mean, corr)`.
///
/// `tol` is the target for `err_est`; integration stops early once it is met.
pub fn mvn_rect_prob(rect: &Rectangle, corr: &CorrelationMatrix, mean: &[f64], tol: f64, seed: u64) -> Result<MvnProb> {
    let d = corr.dim();
    if rect.dim() != d || mean.len() != d {
        return Err(Error::Validation(format!(
            "dimension mismatch: rectangle {}, matrix {d}, mean {}",
            rect.dim(),
            mean.len()
        )));
    }
    if !(tol > 0.0 && tol <= 1e-2) {
        return Err(Error::Domain(format!("tolerance must lie in (0, 0.01], got {tol}")));
    }
    let integrand = Integrand::new(rect, corr, mean)?;
    if d == 1 {
        let (lo, hi) = integrand.first();
        return Ok(MvnProb {
            p: (hi - lo).max(0.0),
            err_est: 0.0,
        });
    }
    let q = d - 1;
    let z: Vec<f64> = PRIMES[..q].iter().map(|p| p.sqrt().fract()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<Vec<f64>> = (0..SHIFTS)
        .map(|_| (0..q).map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut sums = [0.0; SHIFTS];
    let mut done = 0usize;
    let mut target = START_POINTS;
    loop {
        let (from, to) = (done, target);
        let block = par::map_indexed(SHIFTS, |s| {
            let mut w = vec![0.0; q];
            let mut y = vec![0.0; d];
            let mut acc = 0.0;
            for k in from + 1..=to {
                for (t, wt) in w.iter_mut().enumerate() {
                    let x = (k as f64 * z[t] + shifts[s][t]).fract();
                    *wt = (2.0 * x - 1.0).abs();
                }
                acc += integrand.eval(&w, &mut y);
            }
            acc
        });
        for (s, b) in sums.iter_mut().zip(block) {
            *s += b;
        }
        done = target;
        let means: Vec<f64> = sums.iter().map(|s| s / done as f64).collect();
        let p = means.iter().sum::<f64>() / SHIFTS as f64;
        let var = means.iter().map(|m| (m - p).powi(2)).sum::<f64>() / (SHIFTS * (SHIFTS - 1)) as f64;
        let err_est = 3.0 * var.sqrt();
        if err_est <= tol || done >= MAX_POINTS {
            if err_est > tol {
                log::debug!("mvn integration stopped at {done} points per shift with error {err_est:.2e}");
            }
            return Ok(MvnProb {
                p: p.clamp(0.0, 1.0),
                err_est,
            });
        }
        target = done * 2;
    }
}

/// Plain Monte Carlo estimate of the same probability, with its standard error.
pub fn mvn_rect_prob_mc(
    rect: &Rectangle,
    corr: &CorrelationMatrix,
    mean: &[f64],
    draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let d = corr.dim();
    if rect.dim() != d || mean.len() != d {
        return Err(Error::Validation("dimension mismatch".into()));
    }
    let l = corr.cholesky()?;
    const BLOCK: usize = 1 << 16;
    let blocks = draws.div_ceil(BLOCK);
    let hits: u64 = par::map_indexed(blocks, |bi| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(bi as u64);
        let count = BLOCK.min(draws - bi * BLOCK);
        let mut e = vec![0.0; d];
        let mut hits = 0u64;
        for _ in 0..count {
            for v in e.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let inside = (0..d).all(|i| {
                let x = mean[i] + (0..=i).map(|k| l[i * d + k] * e[k]).sum::<f64>();
                x > rect.lower[i] && x < rect.upper[i]
            });
            hits += inside as u64;
        }
        hits
    })
    .into_iter()
    .sum();
    let p = hits as f64 / draws as f64;
    Ok((p, (p * (1.0 - p) / draws as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corr2(r: f64) -> CorrelationMatrix {
        CorrelationMatrix::new(vec![vec![1.0, r], vec![r, 1.0]]).unwrap()
    }

    #[test]
    fn quantiles() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        assert!((std_normal_quantile(0.95).unwrap() - 1.6448536).abs() < 1e-6);
        assert!((std_normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-6);
        for p in [1e-12, 1e-6, 0.001, 0.2, 0.7, 0.999, 1.0 - 1e-9] {
            let x = std_normal_quantile(p).unwrap();
            assert!((norm_cdf(x) - p).abs() <= 1e-10, "p = {p}");
        }
        assert!(matches!(std_normal_quantile(0.0), Err(Error::Domain(_))));
        assert!(std_normal_quantile(1.0).is_err());
    }

    #[test]
    fn closed_forms() {
        let r = mvn_rect_prob(
            &Rectangle::below(vec![1.6449]).unwrap(),
            &CorrelationMatrix::identity(1).unwrap(),
            &[0.0],
            1e-6,
            1,
        )
        .unwrap();
        assert!((r.p - 0.95).abs() < 1e-4);
        let orth = Rectangle::below(vec![0.0, 0.0]).unwrap();
        let p0 = mvn_rect_prob(&orth, &corr2(0.0), &[0.0, 0.0], 1e-6, 1).unwrap().p;
        assert!((p0 - 0.25).abs() < 1e-4);
        let p5 = mvn_rect_prob(&orth, &corr2(0.5), &[0.0, 0.0], 1e-6, 1).unwrap().p;
        assert!((p5 - (0.25 + 0.5f64.asin() / (2.0 * std::f64::consts::PI))).abs() < 1e-4);
    }

    #[test]
    fn trivariate_orthant_closed_form() {
        // P(all < 0) = 1/8 + (asin ρ12 + asin ρ13 + asin ρ23)/(4π)
        let c = CorrelationMatrix::new(vec![vec![1.0, 0.3, 0.5], vec![0.3, 1.0, 0.2], vec![0.5, 0.2, 1.0]]).unwrap();
        let r = mvn_rect_prob(&Rectangle::below(vec![0.0; 3]).unwrap(), &c, &[0.0; 3], 1e-6, 9).unwrap();
        let exact = 0.125 + (0.3f64.asin() + 0.5f64.asin() + 0.2f64.asin()) / (4.0 * std::f64::consts::PI);
        assert!((r.p - exact).abs() < 1e-5, "{} vs {exact}", r.p);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Rectangle::new(vec![1.0], vec![1.0]).is_err());
        let big = vec![vec![0.0; 17]; 17];
        assert!(matches!(CorrelationMatrix::new(big), Err(Error::Unsupported(_))));
        let not_psd = CorrelationMatrix::new(vec![vec![1.0, 0.9, -0.9], vec![0.9, 1.0, 0.9], vec![-0.9, 0.9, 1.0]]);
        assert!(matches!(not_psd, Err(Error::Numeric(_))));
        let r = Rectangle::below(vec![0.0, 0.0]).unwrap();
        assert!(mvn_rect_prob(&r, &corr2(0.1), &[0.0, 0.0], 0.5, 1).is_err());
        assert!(mvn_rect_prob(&r, &corr2(0.1), &[0.0], 1e-4, 1).is_err());
    }

    #[test]
    fn full_space_and_partition() {
        let c = CorrelationMatrix::new(vec![vec![1.0, 0.6, 0.4], vec![0.6, 1.0, 0.7], vec![0.4, 0.7, 1.0]]).unwrap();
        let inf = f64::INFINITY;
        let full = Rectangle::new(vec![-inf; 3], vec![inf; 3]).unwrap();
        assert!((mvn_rect_prob(&full, &c, &[0.0; 3], 1e-6, 2).unwrap().p - 1.0).abs() < 1e-6);
        // split axis 0 at 0.3 and axis 2 at -0.5: four slabs partition the space
        let mut total = 0.0;
        for (l0, u0) in [(-inf, 0.3), (0.3, inf)] {
            for (l2, u2) in [(-inf, -0.5), (-0.5, inf)] {
                let r = Rectangle::new(vec![l0, -inf, l2], vec![u0, inf, u2]).unwrap();
                total += mvn_rect_prob(&r, &c, &[0.1, 0.0, -0.2], 1e-6, 3).unwrap().p;
            }
        }
        assert!((total - 1.0).abs() < 4e-6);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let c = corr2(0.7);
        let r = Rectangle::new(vec![-1.0, 0.5], vec![2.0, 3.0]).unwrap();
        let a = mvn_rect_prob(&r, &c, &[0.2, 0.1], 1e-6, 42).unwrap();
        let b = mvn_rect_prob(&r, &c, &[0.2, 0.1], 1e-6, 42).unwrap();
        assert_eq!(a.p.to_bits(), b.p.to_bits());
    }

    fn arb_corr3() -> impl Strategy<Value = CorrelationMatrix> {
        proptest::collection::vec(-1.0f64..1.0, 9).prop_map(|v| {
            // normalized Gram matrix of random vectors, kept well conditioned
            let g: Vec<Vec<f64>> = (0..3)
                .map(|i| (0..3).map(|j| v[i * 3 + j] + if i == j { 1.5 } else { 0.0 }).collect())
                .collect();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let rows = (0..3)
                .map(|i| {
                    (0..3)
                        .map(|j| {
                            if i == j {
                                1.0
                            } else {
                                dot(&g[i], &g[j]) / (dot(&g[i], &g[i]) * dot(&g[j], &g[j])).sqrt()
                            }
                        })
                        .collect()
                })
                .collect();
            CorrelationMatrix::new(rows).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn nested_rectangles_are_monotone(c in arb_corr3(), u in proptest::collection::vec(-1.5f64..1.5, 3), grow in 0.0f64..1.0) {
            let inner = Rectangle::below(u.clone()).unwrap();
            let outer = Rectangle::below(u.iter().map(|x| x + grow).collect()).unwrap();
            let pi = mvn_rect_prob(&inner, &c, &[0.0; 3], 1e-6, 5).unwrap();
            let po = mvn_rect_prob(&outer, &c, &[0.0; 3], 1e-6, 5).unwrap();
            prop_assert!(po.p + 1e-5 >= pi.p);
        }

        #[test]
        fn permutation_invariance(c in arb_corr3(), u in proptest::collection::vec(-1.5f64..1.5, 3)) {
            let perm = [2usize, 0, 1];
            let rows = c.rows();
            let pc = CorrelationMatrix::new(
                perm.iter().map(|&i| perm.iter().map(|&j| rows[i][j]).collect()).collect(),
            ).unwrap();
            let pu: Vec<f64> = perm.iter().map(|&i| u[i]).collect();
            let a = mvn_rect_prob(&Rectangle::below(u).unwrap(), &c, &[0.0; 3], 1e-6, 1).unwrap();
            let b = mvn_rect_prob(&Rectangle::below(pu).unwrap(), &pc, &[0.0; 3], 1e-6, 1).unwrap();
            prop_assert!((a.p - b.p).abs() < 1e-5);
        }
    }
}
