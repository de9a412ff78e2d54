//! Hierarchical composite endpoints and the prioritized pairwise comparison.
//!
//! A schema lists the outcomes in clinical-priority order. Two subjects are
//! compared outcome by outcome; the first outcome that is not a tie decides
//! the pair. Raw values keep their natural units in [`SubjectRecord`]; the
//! [`Direction`] flag of each outcome maps them onto a higher-wins scale
//! before any comparison happens.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Binary,
    Ordinal,
    Continuous,
    TimeToEvent,
}

impl OutcomeKind {
    pub fn takes_margin(self) -> bool {
        matches!(self, OutcomeKind::Ordinal | OutcomeKind::Continuous)
    }
}

/// Which end of the raw scale is clinically better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    HigherWins,
    LowerWins,
}

/// One prioritized component of the composite endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    pub name: String,
    pub kind: OutcomeKind,
    /// Clinically meaningful margin; only for ordinal and continuous outcomes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default)]
    pub direction: Direction,
    /// 1 is the highest clinical priority.
    pub priority: u32,
}

impl OutcomeSpec {
    pub fn time_to_event(name: impl Into<String>, priority: u32) -> Self {
        Self {
            name: name.into(),
            kind: OutcomeKind::TimeToEvent,
            margin: None,
            direction: Direction::HigherWins,
            priority,
        }
    }

    pub fn binary(name: impl Into<String>, direction: Direction, priority: u32) -> Self {
        Self {
            name: name.into(),
            kind: OutcomeKind::Binary,
            margin: None,
            direction,
            priority,
        }
    }

    pub fn ordinal(name: impl Into<String>, margin: f64, direction: Direction, priority: u32) -> Self {
        Self {
            name: name.into(),
            kind: OutcomeKind::Ordinal,
            margin: Some(margin),
            direction,
            priority,
        }
    }

    pub fn continuous(name: impl Into<String>, margin: f64, direction: Direction, priority: u32) -> Self {
        Self {
            name: name.into(),
            kind: OutcomeKind::Continuous,
            margin: Some(margin),
            direction,
            priority,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind.takes_margin(), self.margin) {
            (true, None) => {
                return Err(Error::Schema(format!(
                    "outcome '{}' ({:?}) requires a margin",
                    self.name, self.kind
                )))
            }
            (false, Some(_)) => {
                return Err(Error::Schema(format!(
                    "outcome '{}' ({:?}) does not take a margin",
                    self.name, self.kind
                )))
            }
            (true, Some(m)) if !(m >= 0.0 && m.is_finite()) => {
                return Err(Error::Schema(format!("outcome '{}' has invalid margin {m}", self.name)))
            }
            _ => {}
        }
        if self.kind == OutcomeKind::TimeToEvent && self.direction != Direction::HigherWins {
            return Err(Error::Schema(format!(
                "time-to-event outcome '{}' must be higher-wins (longer time is better)",
                self.name
            )));
        }
        if self.priority == 0 {
            return Err(Error::Schema(format!(
                "outcome '{}' has priority 0; priorities start at 1",
                self.name
            )));
        }
        Ok(())
    }

    fn margin_or_zero(&self) -> f64 {
        self.margin.unwrap_or(0.0)
    }

    /// Map a raw value onto the higher-wins scale.
    pub fn orient(&self, raw: f64) -> f64 {
        match (self.direction, self.kind) {
            (Direction::HigherWins, _) => raw,
            // keeps the 0/1 coding valid
            (Direction::LowerWins, OutcomeKind::Binary) => 1.0 - raw,
            (Direction::LowerWins, _) => -raw,
        }
    }

    /// Check that `value` is a well-formed observation for this outcome.
    pub fn check_value(&self, value: &OutcomeValue) -> Result<()> {
        match (self.kind, value) {
            (OutcomeKind::TimeToEvent, OutcomeValue::Event { time, .. }) => {
                if !(time.is_finite() && *time >= 0.0) {
                    return Err(Error::Validation(format!(
                        "outcome '{}': event time must be finite and non-negative, got {time}",
                        self.name
                    )));
                }
            }
            (OutcomeKind::TimeToEvent, OutcomeValue::Value(_)) | (_, OutcomeValue::Event { .. }) => {
                return Err(Error::Schema(format!(
                    "outcome '{}' expects a {:?} value, got {:?}",
                    self.name, self.kind, value
                )))
            }
            (OutcomeKind::Binary, OutcomeValue::Value(v)) => {
                if *v != 0.0 && *v != 1.0 {
                    return Err(Error::Validation(format!(
                        "outcome '{}': binary value must be 0 or 1, got {v}",
                        self.name
                    )));
                }
            }
            (_, OutcomeValue::Value(v)) => {
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "outcome '{}': value must be finite, got {v}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ordered list of outcomes, highest priority first.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct HceSchema {
    outcomes: Vec<OutcomeSpec>,
}

impl HceSchema {
    /// Validates every outcome and sorts by priority, which must be exactly 1..=Q.
    pub fn new(mut outcomes: Vec<OutcomeSpec>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Schema("schema needs at least one outcome".into()));
        }
        for o in &outcomes {
            o.validate()?;
        }
        outcomes.sort_by_key(|o| o.priority);
        for (idx, o) in outcomes.iter().enumerate() {
            if o.priority as usize != idx + 1 {
                return Err(Error::Schema(format!(
                    "priorities must be 1..={} without gaps or duplicates (found {} at position {})",
                    outcomes.len(),
                    o.priority,
                    idx + 1
                )));
            }
        }
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[OutcomeSpec] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

impl<'de> Deserialize<'de> for HceSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let outcomes = Vec::<OutcomeSpec>::deserialize(d)?;
        HceSchema::new(outcomes).map_err(serde::de::Error::custom)
    }
}

/// One observed outcome of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutcomeValue {
    /// Observed time `min(T, C)` with event indicator.
    Event { time: f64, event: bool },
    /// Binary (0/1), ordinal (level code) or continuous value on the raw scale.
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treatment,
    Control,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Treatment => "treatment",
            Arm::Control => "control",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "treatment" => Ok(Arm::Treatment),
            "control" => Ok(Arm::Control),
            other => Err(Error::Validation(format!(
                "arm must be 'treatment' or 'control', got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub arm: Arm,
    /// Enrollment stage, starting at 1.
    pub stage: u32,
    pub values: Vec<OutcomeValue>,
}

impl SubjectRecord {
    pub fn validate(&self, schema: &HceSchema) -> Result<()> {
        if self.values.len() != schema.len() {
            return Err(Error::Schema(format!(
                "subject '{}' has {} outcome values, schema has {}",
                self.id,
                self.values.len(),
                schema.len()
            )));
        }
        if self.stage == 0 {
            return Err(Error::Validation(format!(
                "subject '{}': stage numbers start at 1",
                self.id
            )));
        }
        for (spec, v) in schema.outcomes().iter().zip(&self.values) {
            spec.check_value(v)?;
        }
        Ok(())
    }
}

/// Result of comparing one outcome for a (treatment, control) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(u8)]
pub enum Verdict {
    #[default]
    Tie = 0,
    Win = 1,
    Loss = 2,
}

impl Verdict {
    /// `(W, L, Ω)` indicators.
    pub fn indicators(self) -> (u8, u8, u8) {
        match self {
            Verdict::Win => (1, 0, 0),
            Verdict::Loss => (0, 1, 0),
            Verdict::Tie => (0, 0, 1),
        }
    }

    pub fn reversed(self) -> Verdict {
        match self {
            Verdict::Win => Verdict::Loss,
            Verdict::Loss => Verdict::Win,
            Verdict::Tie => Verdict::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonResult {
    /// Per-outcome verdicts for every outcome in the schema.
    pub per_outcome: Vec<Verdict>,
    pub phi_w: u8,
    pub phi_l: u8,
    /// 1-based priority of the first non-tie outcome.
    pub decided_at: Option<usize>,
}

impl ComparisonResult {
    pub fn verdict(&self) -> Verdict {
        match (self.phi_w, self.phi_l) {
            (1, _) => Verdict::Win,
            (_, 1) => Verdict::Loss,
            _ => Verdict::Tie,
        }
    }
}

#[inline]
fn event_verdict(ya: f64, da: bool, yb: f64, db: bool) -> Verdict {
    if db && ya > yb {
        Verdict::Win
    } else if da && ya < yb {
        Verdict::Loss
    } else {
        Verdict::Tie
    }
}

#[inline]
fn value_verdict(a: f64, b: f64, margin: f64) -> Verdict {
    // The sign of a − b flips exactly when the roles swap.
    let d = a - b;
    if d > margin {
        Verdict::Win
    } else if d < -margin {
        Verdict::Loss
    } else {
        Verdict::Tie
    }
}

/// Compare one outcome of subject `a` (treatment role) against `b` (control role).
///
/// Values must already be on the higher-wins scale.
pub fn compare_outcome(a: &OutcomeValue, b: &OutcomeValue, spec: &OutcomeSpec) -> Result<Verdict> {
    spec.check_value(a)?;
    spec.check_value(b)?;
    Ok(match (*a, *b) {
        (OutcomeValue::Event { time: ya, event: da }, OutcomeValue::Event { time: yb, event: db }) => {
            event_verdict(ya, da, yb, db)
        }
        (OutcomeValue::Value(x), OutcomeValue::Value(y)) => value_verdict(x, y, spec.margin_or_zero()),
        _ => unreachable!("check_value rejects kind mismatches"),
    })
}

fn oriented(value: &OutcomeValue, spec: &OutcomeSpec) -> OutcomeValue {
    match *value {
        OutcomeValue::Value(v) => OutcomeValue::Value(spec.orient(v)),
        ev => ev,
    }
}

/// Walk the priorities for the pair `(di, dj)`; `di` plays the treatment role.
pub fn evaluate_pair(di: &SubjectRecord, dj: &SubjectRecord, schema: &HceSchema) -> Result<ComparisonResult> {
    di.validate(schema)?;
    dj.validate(schema)?;
    let mut per_outcome = Vec::with_capacity(schema.len());
    for (q, spec) in schema.outcomes().iter().enumerate() {
        let a = oriented(&di.values[q], spec);
        let b = oriented(&dj.values[q], spec);
        per_outcome.push(compare_outcome(&a, &b, spec)?);
    }
    let decided = per_outcome.iter().position(|v| *v != Verdict::Tie);
    let (phi_w, phi_l) = match decided.map(|q| per_outcome[q]) {
        Some(Verdict::Win) => (1, 0),
        Some(Verdict::Loss) => (0, 1),
        _ => (0, 0),
    };
    Ok(ComparisonResult {
        per_outcome,
        phi_w,
        phi_l,
        decided_at: decided.map(|q| q + 1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Event,
    Value { margin: f64 },
}

/// Validated, oriented copy of one arm, ready for the O(mn) kernels.
///
/// Stored column-wise (one value vector and one event-flag vector per
/// outcome) so that one subject can be compared against a run of opponents
/// with vectorizable loops.
#[derive(Debug, Clone)]
pub struct PreparedArm {
    len: usize,
    slots: Vec<Slot>,
    values: Vec<Vec<f64>>,
    events: Vec<Vec<u8>>,
}

/// Opponents handled per call of [`PreparedArm::kernel_block`].
pub const KERNEL_BLOCK: usize = 256;

impl PreparedArm {
    pub fn new(records: &[SubjectRecord], schema: &HceSchema) -> Result<Self> {
        let slots: Vec<Slot> = schema
            .outcomes()
            .iter()
            .map(|spec| match spec.kind {
                OutcomeKind::TimeToEvent => Slot::Event,
                _ => Slot::Value {
                    margin: spec.margin_or_zero(),
                },
            })
            .collect();
        let q = slots.len();
        let mut values = vec![Vec::with_capacity(records.len()); q];
        let mut events = vec![Vec::with_capacity(records.len()); q];
        for r in records {
            r.validate(schema)?;
            for (k, (spec, v)) in schema.outcomes().iter().zip(&r.values).enumerate() {
                let (x, e) = match *v {
                    OutcomeValue::Event { time, event } => (time, event as u8),
                    OutcomeValue::Value(x) => (spec.orient(x), 0),
                };
                values[k].push(x);
                events[k].push(e);
            }
        }
        Ok(Self {
            len: records.len(),
            slots,
            values,
            events,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `(φ_w, φ_l)` of subject `i` of `self` against subject `j` of `other`.
    /// Both arms must come from the same schema.
    #[inline]
    pub fn kernel(&self, i: usize, other: &PreparedArm, j: usize) -> (bool, bool) {
        let (mut w, mut l, mut open) = (false, false, true);
        for (q, slot) in self.slots.iter().enumerate() {
            let (x, y) = (self.values[q][i], other.values[q][j]);
            let (wq, lq) = match *slot {
                Slot::Event => ((other.events[q][j] != 0) & (x > y), (self.events[q][i] != 0) & (x < y)),
                Slot::Value { margin } => (x - y > margin, x - y < -margin),
            };
            w |= open & wq;
            l |= open & lq;
            open &= !(wq | lq);
        }
        (w, l)
    }

    /// Kernel of subject `i` against opponents `j0..j0 + w.len()` of `other`,
    /// written as 0/1 flags into `w` and `l` (at most [`KERNEL_BLOCK`] long).
    pub fn kernel_block(&self, i: usize, other: &PreparedArm, j0: usize, w: &mut [u8], l: &mut [u8]) {
        let len = w.len();
        assert!(len <= KERNEL_BLOCK && l.len() == len && j0 + len <= other.len);
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports AVX2, checked just above.
                unsafe { self.kernel_block_avx2(i, other, j0, w, l) };
                return;
            }
        }
        self.kernel_block_generic(i, other, j0, w, l);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn kernel_block_avx2(&self, i: usize, other: &PreparedArm, j0: usize, w: &mut [u8], l: &mut [u8]) {
        self.kernel_block_generic(i, other, j0, w, l);
    }

    #[inline(always)]
    fn kernel_block_generic(&self, i: usize, other: &PreparedArm, j0: usize, w: &mut [u8], l: &mut [u8]) {
        let len = w.len();
        let mut open = [1u8; KERNEL_BLOCK];
        let open = &mut open[..len];
        w.fill(0);
        l.fill(0);
        for (q, slot) in self.slots.iter().enumerate() {
            let x = self.values[q][i];
            let ys = &other.values[q][j0..j0 + len];
            match *slot {
                Slot::Event => {
                    let xe = self.events[q][i];
                    let ye = &other.events[q][j0..j0 + len];
                    for k in 0..len {
                        let wq = ye[k] & (x > ys[k]) as u8;
                        let lq = xe & (x < ys[k]) as u8;
                        w[k] |= open[k] & wq;
                        l[k] |= open[k] & lq;
                        open[k] &= !(wq | lq) & 1;
                    }
                }
                Slot::Value { margin } => {
                    for k in 0..len {
                        let d = x - ys[k];
                        let wq = (d > margin) as u8;
                        let lq = (d < -margin) as u8;
                        w[k] |= open[k] & wq;
                        l[k] |= open[k] & lq;
                        open[k] &= !(wq | lq) & 1;
                    }
                }
            }
        }
    }

    /// Adds the kernel of subject `i` against every subject of `other` into
    /// the per-opponent totals `col_w`, `col_l`; returns the row totals.
    pub fn accumulate_row(&self, i: usize, other: &PreparedArm, col_w: &mut [u64], col_l: &mut [u64]) -> (u64, u64) {
        assert!(col_w.len() == other.len && col_l.len() == other.len);
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: AVX2 support checked just above.
                return unsafe { self.accumulate_row_avx2(i, other, col_w, col_l) };
            }
        }
        self.accumulate_row_generic(i, other, col_w, col_l)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn accumulate_row_avx2(
        &self,
        i: usize,
        other: &PreparedArm,
        col_w: &mut [u64],
        col_l: &mut [u64],
    ) -> (u64, u64) {
        self.accumulate_row_generic(i, other, col_w, col_l)
    }

    #[inline(always)]
    fn accumulate_row_generic(
        &self,
        i: usize,
        other: &PreparedArm,
        col_w: &mut [u64],
        col_l: &mut [u64],
    ) -> (u64, u64) {
        let mut wb = [0u8; KERNEL_BLOCK];
        let mut lb = [0u8; KERNEL_BLOCK];
        let (mut rw, mut rl) = (0u64, 0u64);
        for j0 in (0..other.len).step_by(KERNEL_BLOCK) {
            let len = KERNEL_BLOCK.min(other.len - j0);
            let (w, l) = (&mut wb[..len], &mut lb[..len]);
            self.kernel_block_generic(i, other, j0, w, l);
            let (cw, cl) = (&mut col_w[j0..j0 + len], &mut col_l[j0..j0 + len]);
            let (mut bw, mut bl) = (0u32, 0u32);
            for k in 0..len {
                bw += w[k] as u32;
                bl += l[k] as u32;
                cw[k] += w[k] as u64;
                cl[k] += l[k] as u64;
            }
            rw += bw as u64;
            rl += bl as u64;
        }
        (rw, rl)
    }

    #[inline]
    pub fn verdict(&self, i: usize, other: &PreparedArm, j: usize) -> Verdict {
        match self.kernel(i, other, j) {
            (true, _) => Verdict::Win,
            (_, true) => Verdict::Loss,
            _ => Verdict::Tie,
        }
    }
}

/// All m×n kernel values for a (treatment, control) pair of arms.
///
/// Stores one [`Verdict`] per cell; `Φ_w` and `Φ_l` are views of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<Verdict>,
}

/// Rows per parallel task when filling a matrix.
const ROW_CHUNK: usize = 16;

impl PairwiseMatrix {
    pub fn from_prepared(treat: &PreparedArm, ctrl: &PreparedArm) -> Self {
        let (rows, cols) = (treat.len(), ctrl.len());
        let mut cells = vec![Verdict::Tie; rows * cols];
        if cols > 0 {
            par::for_each_chunk_mut(&mut cells, ROW_CHUNK * cols, |chunk_idx, chunk| {
                let first_row = chunk_idx * ROW_CHUNK;
                for (r, row) in chunk.chunks_mut(cols).enumerate() {
                    let i = first_row + r;
                    for (j, cell) in row.iter_mut().enumerate() {
                        *cell = treat.verdict(i, ctrl, j);
                    }
                }
            });
        }
        Self { rows, cols, cells }
    }

    /// Build from explicit 0/1 indicator matrices.
    pub fn from_indicators(phi_w: &[Vec<u8>], phi_l: &[Vec<u8>]) -> Result<Self> {
        let rows = phi_w.len();
        if phi_l.len() != rows {
            return Err(Error::Validation(format!(
                "Φ_w has {rows} rows but Φ_l has {}",
                phi_l.len()
            )));
        }
        let cols = phi_w.first().map_or(0, Vec::len);
        let mut cells = Vec::with_capacity(rows * cols);
        for (i, (rw, rl)) in phi_w.iter().zip(phi_l).enumerate() {
            if rw.len() != cols || rl.len() != cols {
                return Err(Error::Validation(format!(
                    "row {i} does not have {cols} columns in both matrices"
                )));
            }
            for (j, (&w, &l)) in rw.iter().zip(rl).enumerate() {
                cells.push(match (w, l) {
                    (0, 0) => Verdict::Tie,
                    (1, 0) => Verdict::Win,
                    (0, 1) => Verdict::Loss,
                    _ => {
                        return Err(Error::Validation(format!(
                            "cell ({i}, {j}) has φ_w = {w}, φ_l = {l}; need binary entries with φ_w·φ_l = 0"
                        )))
                    }
                });
            }
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn verdict(&self, i: usize, j: usize) -> Verdict {
        self.cells[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[Verdict] {
        &self.cells[i * self.cols..(i + 1) * self.cols]
    }

    pub fn phi_w(&self, i: usize, j: usize) -> u8 {
        (self.verdict(i, j) == Verdict::Win) as u8
    }

    pub fn phi_l(&self, i: usize, j: usize) -> u8 {
        (self.verdict(i, j) == Verdict::Loss) as u8
    }

    /// `(Φ_w, Φ_l)` as dense 0/1 matrices.
    pub fn to_indicators(&self) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
        let w = (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.phi_w(i, j)).collect())
            .collect();
        let l = (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.phi_l(i, j)).collect())
            .collect();
        (w, l)
    }

    /// Matrix obtained by swapping the arm roles: `(Φ_lᵀ, Φ_wᵀ)`.
    pub fn role_reversed(&self) -> Self {
        let mut cells = Vec::with_capacity(self.cells.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                cells.push(self.verdict(i, j).reversed());
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            cells,
        }
    }
}

/// Kernel matrices for every (treatment, control) pair.
pub fn comparison_matrices(
    treat: &[SubjectRecord],
    ctrl: &[SubjectRecord],
    schema: &HceSchema,
) -> Result<PairwiseMatrix> {
    if treat.is_empty() || ctrl.is_empty() {
        return Err(Error::Domain(format!(
            "both arms must be non-empty (treatment {}, control {})",
            treat.len(),
            ctrl.len()
        )));
    }
    let t = PreparedArm::new(treat, schema)?;
    let c = PreparedArm::new(ctrl, schema)?;
    Ok(PairwiseMatrix::from_prepared(&t, &c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(time: f64, event: u8) -> OutcomeValue {
        OutcomeValue::Event {
            time,
            event: event == 1,
        }
    }

    fn tte_schema(q: u32) -> HceSchema {
        HceSchema::new(
            (1..=q)
                .map(|p| OutcomeSpec::time_to_event(format!("t{p}"), p))
                .collect(),
        )
        .unwrap()
    }

    fn rec(id: &str, arm: Arm, values: Vec<OutcomeValue>) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            arm,
            stage: 1,
            values,
        }
    }

    #[test]
    fn table_rules_per_kind() {
        let tte = OutcomeSpec::time_to_event("death", 1);
        assert_eq!(compare_outcome(&ev(5.0, 0), &ev(4.0, 1), &tte).unwrap(), Verdict::Win);
        assert_eq!(compare_outcome(&ev(5.0, 0), &ev(5.0, 0), &tte).unwrap(), Verdict::Tie);
        // censored control before the treated time: cannot tell
        assert_eq!(compare_outcome(&ev(5.0, 1), &ev(4.0, 0), &tte).unwrap(), Verdict::Tie);
        // exact tie with both events stays a tie
        assert_eq!(compare_outcome(&ev(3.0, 1), &ev(3.0, 1), &tte).unwrap(), Verdict::Tie);

        let cont = OutcomeSpec::continuous("score", 0.5, Direction::HigherWins, 1);
        let v = OutcomeValue::Value;
        assert_eq!(compare_outcome(&v(3.0), &v(3.0), &cont).unwrap(), Verdict::Tie);
        assert_eq!(compare_outcome(&v(3.5), &v(3.0), &cont).unwrap(), Verdict::Tie);
        assert_eq!(compare_outcome(&v(3.6), &v(3.0), &cont).unwrap(), Verdict::Win);
        assert_eq!(compare_outcome(&v(2.4), &v(3.0), &cont).unwrap(), Verdict::Loss);

        let bin = OutcomeSpec::binary("resp", Direction::HigherWins, 1);
        assert_eq!(compare_outcome(&v(1.0), &v(0.0), &bin).unwrap(), Verdict::Win);
        assert_eq!(compare_outcome(&v(0.0), &v(1.0), &bin).unwrap(), Verdict::Loss);
    }

    #[test]
    fn compare_outcome_errors() {
        let tte = OutcomeSpec::time_to_event("death", 1);
        assert!(matches!(
            compare_outcome(&OutcomeValue::Value(1.0), &ev(1.0, 1), &tte),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            compare_outcome(&ev(-1.0, 1), &ev(1.0, 1), &tte),
            Err(Error::Validation(_))
        ));
        let bin = OutcomeSpec::binary("resp", Direction::HigherWins, 1);
        assert!(matches!(
            compare_outcome(&OutcomeValue::Value(2.0), &OutcomeValue::Value(0.0), &bin),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn evaluate_pair_examples() {
        let s = tte_schema(2);
        let di = rec("i", Arm::Treatment, vec![ev(5.0, 0), ev(3.0, 1)]);
        let dj = rec("j", Arm::Control, vec![ev(4.0, 1), ev(2.0, 1)]);
        let r = evaluate_pair(&di, &dj, &s).unwrap();
        assert_eq!((r.phi_w, r.phi_l, r.decided_at), (1, 0, Some(1)));

        let same = rec("x", Arm::Treatment, vec![ev(5.0, 0), ev(2.0, 1)]);
        let r = evaluate_pair(&same, &same, &s).unwrap();
        assert_eq!((r.phi_w, r.phi_l, r.decided_at), (0, 0, None));
        assert!(r.per_outcome.iter().all(|v| *v == Verdict::Tie));

        let di = rec("i", Arm::Treatment, vec![ev(6.0, 0), ev(3.0, 1)]);
        let dj = rec("j", Arm::Control, vec![ev(6.0, 0), ev(4.0, 1)]);
        let r = evaluate_pair(&di, &dj, &s).unwrap();
        assert_eq!(r.per_outcome, vec![Verdict::Tie, Verdict::Loss]);
        assert_eq!((r.phi_w, r.phi_l, r.decided_at), (0, 1, Some(2)));
    }

    #[test]
    fn lower_wins_direction_is_applied_before_comparison() {
        let s = HceSchema::new(vec![OutcomeSpec::ordinal("nyha", 0.0, Direction::LowerWins, 1)]).unwrap();
        let di = rec("i", Arm::Treatment, vec![OutcomeValue::Value(1.0)]);
        let dj = rec("j", Arm::Control, vec![OutcomeValue::Value(3.0)]);
        assert_eq!(evaluate_pair(&di, &dj, &s).unwrap().phi_w, 1);
    }

    #[test]
    fn schema_validation() {
        assert!(HceSchema::new(vec![]).is_err());
        let dup = vec![OutcomeSpec::time_to_event("a", 1), OutcomeSpec::time_to_event("b", 1)];
        assert!(matches!(HceSchema::new(dup), Err(Error::Schema(_))));
        let gap = vec![OutcomeSpec::time_to_event("a", 1), OutcomeSpec::time_to_event("b", 3)];
        assert!(HceSchema::new(gap).is_err());
        let mut no_margin = OutcomeSpec::ordinal("o", 0.0, Direction::HigherWins, 1);
        no_margin.margin = None;
        assert!(HceSchema::new(vec![no_margin]).is_err());
        let mut bad = OutcomeSpec::time_to_event("t", 1);
        bad.margin = Some(1.0);
        assert!(HceSchema::new(vec![bad]).is_err());
        // sorted by priority regardless of input order
        let s = HceSchema::new(vec![
            OutcomeSpec::time_to_event("second", 2),
            OutcomeSpec::time_to_event("first", 1),
        ])
        .unwrap();
        assert_eq!(s.outcomes()[0].name, "first");
    }

    #[test]
    fn record_length_mismatch_is_schema_error() {
        let s = tte_schema(2);
        let short = rec("i", Arm::Treatment, vec![ev(1.0, 1)]);
        let ok = rec("j", Arm::Control, vec![ev(1.0, 1), ev(1.0, 1)]);
        assert!(matches!(evaluate_pair(&short, &ok, &s), Err(Error::Schema(_))));
    }

    #[test]
    fn matrices_match_per_pair_and_reject_empty_arms() {
        let s = tte_schema(2);
        let t = vec![
            rec("t1", Arm::Treatment, vec![ev(5.0, 0), ev(3.0, 1)]),
            rec("t2", Arm::Treatment, vec![ev(2.0, 1), ev(2.0, 1)]),
        ];
        let c = vec![
            rec("c1", Arm::Control, vec![ev(4.0, 1), ev(2.0, 1)]),
            rec("c2", Arm::Control, vec![ev(5.0, 0), ev(1.0, 1)]),
        ];
        let mat = comparison_matrices(&t, &c, &s).unwrap();
        for (i, ti) in t.iter().enumerate() {
            for (j, cj) in c.iter().enumerate() {
                let r = evaluate_pair(ti, cj, &s).unwrap();
                assert_eq!(mat.phi_w(i, j), r.phi_w);
                assert_eq!(mat.phi_l(i, j), r.phi_l);
            }
        }
        assert!(matches!(comparison_matrices(&[], &c, &s), Err(Error::Domain(_))));

        let one = comparison_matrices(&t[..1], &t[..1], &s).unwrap();
        assert_eq!(one.to_indicators(), (vec![vec![0]], vec![vec![0]]));
    }

    #[test]
    fn from_indicators_rejects_overlap() {
        assert!(PairwiseMatrix::from_indicators(&[vec![1]], &[vec![1]]).is_err());
        assert!(PairwiseMatrix::from_indicators(&[vec![2]], &[vec![0]]).is_err());
        assert!(PairwiseMatrix::from_indicators(&[vec![1, 0]], &[vec![0]]).is_err());
    }

    fn arb_value(kind: OutcomeKind) -> BoxedStrategy<OutcomeValue> {
        match kind {
            OutcomeKind::TimeToEvent => (0u8..6, any::<bool>())
                .prop_map(|(t, e)| OutcomeValue::Event {
                    time: t as f64,
                    event: e,
                })
                .boxed(),
            OutcomeKind::Binary => (0u8..2).prop_map(|v| OutcomeValue::Value(v as f64)).boxed(),
            _ => (1u8..5).prop_map(|v| OutcomeValue::Value(v as f64)).boxed(),
        }
    }

    fn mixed_schema() -> HceSchema {
        HceSchema::new(vec![
            OutcomeSpec::time_to_event("death", 1),
            OutcomeSpec::binary("event", Direction::LowerWins, 2),
            OutcomeSpec::ordinal("class", 1.0, Direction::LowerWins, 3),
            OutcomeSpec::continuous("score", 0.5, Direction::HigherWins, 4),
        ])
        .unwrap()
    }

    fn arb_record(arm: Arm) -> impl Strategy<Value = SubjectRecord> {
        let s = mixed_schema();
        let kinds: Vec<_> = s.outcomes().iter().map(|o| arb_value(o.kind)).collect();
        kinds.prop_map(move |values| SubjectRecord {
            id: "r".into(),
            arm,
            stage: 1,
            values,
        })
    }

    proptest! {
        #[test]
        fn kernel_invariants(a in arb_record(Arm::Treatment), b in arb_record(Arm::Control)) {
            let s = mixed_schema();
            let r = evaluate_pair(&a, &b, &s).unwrap();
            for v in &r.per_outcome {
                let (w, l, o) = v.indicators();
                prop_assert_eq!(w + l + o, 1);
            }
            prop_assert_eq!(r.phi_w * r.phi_l, 0);
            prop_assert!(r.phi_w <= 1 && r.phi_l <= 1);
            // phi_w = 1 iff first non-tie is a win
            let first = r.per_outcome.iter().find(|v| **v != Verdict::Tie).copied();
            prop_assert_eq!(r.phi_w == 1, first == Some(Verdict::Win));
            prop_assert_eq!(r.phi_l == 1, first == Some(Verdict::Loss));
            let rev = evaluate_pair(&b, &a, &s).unwrap();
            prop_assert_eq!(r.phi_w, rev.phi_l);
            prop_assert_eq!(r.phi_l, rev.phi_w);
        }

        #[test]
        fn dispatched_kernel_matches_portable_body(
            treat in prop::collection::vec(arb_record(Arm::Treatment), 1..5),
            ctrl in prop::collection::vec(arb_record(Arm::Control), 1..400),
        ) {
            let s = mixed_schema();
            let (t, c) = (PreparedArm::new(&treat, &s).unwrap(), PreparedArm::new(&ctrl, &s).unwrap());
            for i in 0..t.len() {
                for j0 in (0..c.len()).step_by(KERNEL_BLOCK) {
                    let len = KERNEL_BLOCK.min(c.len() - j0);
                    let (mut w, mut l) = (vec![0u8; len], vec![0u8; len]);
                    let (mut gw, mut gl) = (vec![0u8; len], vec![0u8; len]);
                    t.kernel_block(i, &c, j0, &mut w, &mut l);
                    t.kernel_block_generic(i, &c, j0, &mut gw, &mut gl);
                    prop_assert_eq!(&w, &gw);
                    prop_assert_eq!(&l, &gl);
                }
                let (mut cw, mut cl) = (vec![0u64; c.len()], vec![0u64; c.len()]);
                let (mut gw, mut gl) = (vec![0u64; c.len()], vec![0u64; c.len()]);
                prop_assert_eq!(
                    t.accumulate_row(i, &c, &mut cw, &mut cl),
                    t.accumulate_row_generic(i, &c, &mut gw, &mut gl)
                );
                prop_assert_eq!(cw, gw);
                prop_assert_eq!(cl, gl);
            }
        }

        #[test]
        fn longer_time_keeps_a_win(ya in 0.0f64..10.0, yb in 0.0f64..10.0, extra in 0.0f64..5.0, da: bool) {
            let spec = OutcomeSpec::time_to_event("t", 1);
            let a = OutcomeValue::Event { time: ya, event: da };
            let b = OutcomeValue::Event { time: yb, event: true };
            let later = OutcomeValue::Event { time: ya + extra, event: da };
            if compare_outcome(&a, &b, &spec).unwrap() == Verdict::Win {
                prop_assert_eq!(compare_outcome(&later, &b, &spec).unwrap(), Verdict::Win);
            }
        }
    }
}
