//! Simulated trials: two exponential event times and one ordinal outcome tied
//! together by a trivariate Clayton copula, with uniform administrative
//! censoring shared by both times.
//!
//! Every subject draws from its own ChaCha stream, keyed by the master seed,
//! a replicate number and a purpose tag, so subjects can be generated in any
//! order or in parallel and still come out identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::design::Allocation;
use crate::error::{Error, Result};
use crate::hce::{Arm, Direction, HceSchema, OutcomeSpec, OutcomeValue, PreparedArm, SubjectRecord};
use crate::par;
use crate::winstats::{KernelSums, WinLossEstimates};

fn default_terminal() -> usize {
    1
}

/// Data-generating model for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSpec {
    /// Common pairwise Kendall's τ of the copula.
    pub kendall_tau: f64,
    /// Control-arm hazards of the two event times.
    pub lambda: Vec<f64>,
    /// Treatment effects: two log-hazard ratios, then the ordinal log-odds shift.
    pub beta: Vec<f64>,
    /// Control-arm probabilities of ordinal levels 1..L (level 1 is best).
    pub baseline_probs: Vec<f64>,
    /// Censoring times are uniform on `[0, censor_upper]`.
    pub censor_upper: f64,
    /// Which event time (1 or 2) truncates the other.
    #[serde(default = "default_terminal")]
    pub terminal_index: usize,
}

impl GenerationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(0.0..1.0).contains(&self.kendall_tau) {
            return bad(format!("kendall_tau must lie in [0, 1), got {}", self.kendall_tau));
        }
        if self.lambda.len() != 2 || self.lambda.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return bad(format!("lambda needs two positive hazards, got {:?}", self.lambda));
        }
        if self.beta.len() != 3 || self.beta.iter().any(|b| !b.is_finite()) {
            return bad(format!("beta needs three finite effects, got {:?}", self.beta));
        }
        check_simplex(&self.baseline_probs)?;
        if !(self.censor_upper > 0.0) {
            return bad(format!("censor_upper must be positive, got {}", self.censor_upper));
        }
        if !(1..=2).contains(&self.terminal_index) {
            return bad(format!("terminal_index must be 1 or 2, got {}", self.terminal_index));
        }
        Ok(())
    }

    /// Clayton parameter `2τ/(1−τ)`.
    pub fn theta(&self) -> f64 {
        2.0 * self.kendall_tau / (1.0 - self.kendall_tau)
    }

    /// Same model with every treatment effect removed.
    pub fn null(&self) -> Self {
        Self {
            beta: vec![0.0; self.beta.len()],
            ..self.clone()
        }
    }

    /// Schema of the generated records: event 1, event 2, then the ordinal level
    /// (raw codes, lower is better).
    pub fn schema(&self) -> HceSchema {
        HceSchema::new(vec![
            OutcomeSpec::time_to_event("event1", 1),
            OutcomeSpec::time_to_event("event2", 2),
            OutcomeSpec::ordinal("ordinal", 0.0, Direction::LowerWins, 3),
        ])
        .expect("fixed schema is valid")
    }

    fn arm_model(&self, arm: Arm) -> Result<ArmModel> {
        let z = match arm {
            Arm::Treatment => 1.0,
            Arm::Control => 0.0,
        };
        let probs = ordinal_shift(&self.baseline_probs, z * self.beta[2])?;
        let mut cdf: Vec<f64> = probs
            .iter()
            .scan(0.0, |s, p| {
                *s += p;
                Some(*s)
            })
            .collect();
        *cdf.last_mut().expect("non-empty") = 1.0;
        Ok(ArmModel {
            rate: [
                self.lambda[0] * (-self.beta[0] * z).exp(),
                self.lambda[1] * (-self.beta[1] * z).exp(),
            ],
            cdf,
        })
    }
}

fn check_simplex(p: &[f64]) -> Result<()> {
    if p.len() < 2 {
        return Err(Error::Validation(format!(
            "ordinal outcome needs at least two levels, got {}",
            p.len()
        )));
    }
    if p.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::Validation(format!(
            "ordinal probabilities must be positive, got {p:?}"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(format!("ordinal probabilities sum to {s}, not 1")));
    }
    Ok(())
}

struct ArmModel {
    rate: [f64; 2],
    cdf: Vec<f64>,
}

/// Shift the baseline level probabilities so every upper-tail odds
/// `P(≥l)/P(<l)` is multiplied by `exp(−beta3)`.
pub fn ordinal_shift(baseline: &[f64], beta3: f64) -> Result<Vec<f64>> {
    check_simplex(baseline)?;
    let levels = baseline.len();
    let factor = (-beta3).exp();
    // upper[l] = P(level ≥ l + 1) for l in 0..levels, upper[0] = 1
    let mut upper = vec![1.0; levels + 1];
    let mut tail = 0.0;
    for l in (1..levels).rev() {
        tail += baseline[l];
        let odds = tail / (1.0 - tail) * factor;
        upper[l] = if odds.is_infinite() { 1.0 } else { odds / (1.0 + odds) };
    }
    upper[levels] = 0.0;
    Ok((0..levels).map(|l| upper[l] - upper[l + 1]).collect())
}

/// One draw from the Clayton copula, written into `out`.
///
/// Returns each coordinate as `(u, 1 − u)`, both computed without cancellation.
fn clayton_draw<R: Rng + ?Sized>(theta: f64, out: &mut [(f64, f64)], rng: &mut R) {
    if theta == 0.0 {
        for o in out.iter_mut() {
            let u: f64 = rng.random();
            *o = (u, 1.0 - u);
        }
        return;
    }
    let v: f64 = Gamma::new(1.0 / theta, 1.0).expect("positive shape").sample(rng);
    for o in out.iter_mut() {
        let e: f64 = Exp1.sample(rng);
        // u = (1 + e/v)^(−1/θ)
        let log_u = -(e / v).ln_1p() / theta;
        *o = (log_u.exp(), -log_u.exp_m1());
    }
}

/// `count` draws from the `dim`-variate Clayton copula with parameter `theta`.
pub fn clayton_sample<R: Rng + ?Sized>(dim: usize, theta: f64, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::Unsupported(format!(
            "Clayton parameter must be finite and non-negative, got {theta}"
        )));
    }
    let mut buf = vec![(0.0, 0.0); dim];
    Ok((0..count)
        .map(|_| {
            clayton_draw(theta, &mut buf, rng);
            buf.iter().map(|(u, _)| *u).collect()
        })
        .collect())
}

/// Latent draw of one subject before censoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSubject {
    pub u: [f64; 3],
    pub t: [f64; 2],
    pub ordinal_level: u32,
    pub censor_time: f64,
}

impl RawSubject {
    /// Observed outcomes: each time is cut at the censoring time and, for the
    /// non-terminal event, also at the terminal event.
    pub fn observe(&self, terminal_index: usize) -> Vec<OutcomeValue> {
        let term = terminal_index - 1;
        let other = 1 - term;
        let c = self.censor_time;
        let mut times = [OutcomeValue::Value(0.0); 2];
        let tt = self.t[term];
        times[term] = OutcomeValue::Event {
            time: tt.min(c),
            event: tt <= c,
        };
        let to = self.t[other];
        let y = to.min(tt).min(c);
        times[other] = OutcomeValue::Event {
            time: y,
            event: to <= tt && to <= c,
        };
        vec![times[0], times[1], OutcomeValue::Value(self.ordinal_level as f64)]
    }
}

pub fn draw_raw<R: Rng + ?Sized>(spec: &GenerationSpec, arm: Arm, rng: &mut R) -> Result<RawSubject> {
    spec.validate()?;
    Ok(draw_with(spec, &spec.arm_model(arm)?, rng))
}

fn draw_with<R: Rng + ?Sized>(spec: &GenerationSpec, model: &ArmModel, rng: &mut R) -> RawSubject {
    let mut u = [(0.0, 0.0); 3];
    clayton_draw(spec.theta(), &mut u, rng);
    // larger uniform ⇒ longer time
    let t = [-u[0].1.ln() / model.rate[0], -u[1].1.ln() / model.rate[1]];
    // larger uniform ⇒ higher raw level
    let level = model
        .cdf
        .iter()
        .position(|&f| u[2].0 < f)
        .unwrap_or(model.cdf.len() - 1)
        + 1;
    let censor_time = spec.censor_upper * rng.random::<f64>();
    RawSubject {
        u: [u[0].0, u[1].0, u[2].0],
        t,
        ordinal_level: level as u32,
        censor_time,
    }
}

pub fn generate_subject<R: Rng + ?Sized>(spec: &GenerationSpec, arm: Arm, rng: &mut R) -> Result<SubjectRecord> {
    let raw = draw_raw(spec, arm, rng)?;
    Ok(SubjectRecord {
        id: String::new(),
        arm,
        stage: 1,
        values: raw.observe(spec.terminal_index),
    })
}

/// What a family of random streams is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    Trial,
    SuperPopulation,
}

/// Per-subject RNG streams for one `(seed, replicate, purpose)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubjectStreams {
    key: [u8; 32],
}

impl SubjectStreams {
    pub fn new(seed: u64, replicate: u64, purpose: StreamPurpose) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&replicate.to_le_bytes());
        key[16] = match purpose {
            StreamPurpose::Trial => 1,
            StreamPurpose::SuperPopulation => 2,
        };
        Self { key }
    }

    /// Generator for the `index`-th subject of `arm`.
    pub fn rng(&self, arm: Arm, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        let lane = match arm {
            Arm::Treatment => 0,
            Arm::Control => 1,
        };
        rng.set_stream(2 * index as u64 + lane);
        rng
    }
}

/// Both arms of a trial in enrollment order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub treatment: Vec<SubjectRecord>,
    pub control: Vec<SubjectRecord>,
}

impl Trial {
    pub fn records(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.treatment.iter().chain(&self.control)
    }
}

fn generate_arm(
    spec: &GenerationSpec,
    arm: Arm,
    stage_of: &[u32],
    streams: &SubjectStreams,
) -> Result<Vec<SubjectRecord>> {
    let model = spec.arm_model(arm)?;
    let prefix = match arm {
        Arm::Treatment => 't',
        Arm::Control => 'c',
    };
    Ok(par::map_indexed(stage_of.len(), |i| {
        let raw = draw_with(spec, &model, &mut streams.rng(arm, i));
        SubjectRecord {
            id: format!("{prefix}{}", i + 1),
            arm,
            stage: stage_of[i],
            values: raw.observe(spec.terminal_index),
        }
    }))
}

/// Generate one replicate of a staged trial with `total` subjects.
pub fn generate_trial(
    spec: &GenerationSpec,
    alloc: &Allocation,
    total: usize,
    seed: u64,
    replicate: u64,
) -> Result<Trial> {
    spec.validate()?;
    let counts = alloc.stage_counts(total)?;
    let labels = |pick: fn(&(usize, usize)) -> usize| -> Vec<u32> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(k, c)| std::iter::repeat_n(k as u32 + 1, pick(c)))
            .collect()
    };
    let streams = SubjectStreams::new(seed, replicate, StreamPurpose::Trial);
    Ok(Trial {
        treatment: generate_arm(spec, Arm::Treatment, &labels(|c| c.0), &streams)?,
        control: generate_arm(spec, Arm::Control, &labels(|c| c.1), &streams)?,
    })
}

/// τ̂ and ξ̂ from `size` subjects per arm, streaming all `size²` comparisons.
pub fn super_population_estimates(spec: &GenerationSpec, size: usize, seed: u64) -> Result<WinLossEstimates> {
    spec.validate()?;
    let streams = SubjectStreams::new(seed, 0, StreamPurpose::SuperPopulation);
    let stages = vec![1u32; size];
    let schema = spec.schema();
    let t = PreparedArm::new(&generate_arm(spec, Arm::Treatment, &stages, &streams)?, &schema)?;
    let c = PreparedArm::new(&generate_arm(spec, Arm::Control, &stages, &streams)?, &schema)?;
    KernelSums::stream(&t, &c).estimates()
}

/// Kendall's τ of a tie-free paired sample, in O(n log n).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired samples of different lengths");
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let discordant = count_inversions(&mut ys, &mut buf);
    let pairs = (n as f64) * (n as f64 - 1.0) / 2.0;
    1.0 - 2.0 * discordant as f64 / pairs
}

fn count_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        count_inversions(l, bl) + count_inversions(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            inv += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    inv
}
