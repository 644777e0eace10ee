//! ReLU pairs on top of the simplex state, and the search loop.
//!
//! Out-of-bounds variables are always repaired first; only when every
//! variable is within bounds does the loop look at violated ReLU pairs. A
//! pair is repaired locally until its repair counter reaches the split
//! threshold, after which it becomes a split candidate.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{AuditRecord, DerivedBound, PassOutcome, TightenScope};
use crate::numerics::{
    self, scaled, CheckOutcome, BOUND_TOLERANCE, NumericsError, RoundoffMonitor, DEFAULT_MIN_PIVOT,
    DEFAULT_ROUNDOFF_CADENCE, DEFAULT_ROUNDOFF_THRESHOLD, RELU_TOLERANCE, WITNESS_TOLERANCE,
};
use crate::simplex::{
    BoundKind, BoundsSnapshot, InfeasibleRow, RepairLimits, RepairOutcome, SimplexError,
    SimplexSettings, SimplexState, SparseRow, VarId,
};
use crate::smt::{CaseOrder, Conflict, ConflictOutcome, SplitFrame, SplitStack, TraceEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Undecided,
    Active,
    Inactive,
}

impl Phase {
    pub fn opposite(self) -> Phase {
        match self {
            Phase::Active => Phase::Inactive,
            Phase::Inactive => Phase::Active,
            Phase::Undecided => Phase::Undecided,
        }
    }
}

/// `forward = max(0, backward)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReluPair {
    pub backward: VarId,
    pub forward: VarId,
    pub phase: Phase,
    pub repair_count: u32,
    /// Auxiliary `forward − backward`, created the first time the pair is
    /// fixed active and pinned to `[0, 0]` while it stays active.
    pub link: Option<VarId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub split_threshold: u32,
    /// Pivots between full-tableau tightening passes.
    pub tighten_cadence: u64,
    pub fixpoint_sweeps: usize,
    pub roundoff_threshold: f64,
    pub roundoff_cadence: u64,
    pub min_pivot_element: f64,
    /// Repair iterations before the simplex layer switches to Bland's rule.
    pub bland_after: u64,
    /// Shrink ReLU ranges by this amount before solving (0 disables).
    pub under_approx_epsilon: f64,
    /// Non-chronological backjumping; `false` backtracks one frame at a time.
    pub backjumping: bool,
    /// Also derive bounds for the non-basic variables of a row.
    pub derive_nonbasic_bounds: bool,
    pub trace: bool,
    /// Record every derived bound together with the split decisions it
    /// depends on. Only useful for testing.
    pub audit_bounds: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            split_threshold: 5,
            tighten_cadence: 5_000,
            fixpoint_sweeps: 3,
            roundoff_threshold: DEFAULT_ROUNDOFF_THRESHOLD,
            roundoff_cadence: DEFAULT_ROUNDOFF_CADENCE,
            min_pivot_element: DEFAULT_MIN_PIVOT,
            bland_after: 10_000,
            under_approx_epsilon: 0.0,
            backjumping: true,
            derive_nonbasic_bounds: true,
            trace: false,
            audit_bounds: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Budget {
    pub timeout: Option<Duration>,
    /// Pivots allowed for this call.
    pub max_pivots: Option<u64>,
}

impl Budget {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn timeout(timeout: Duration) -> Self {
        Self {
            timeout: Some(timeout),
            max_pivots: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    /// Full solver assignment (problem and auxiliary variables).
    Sat(Vec<f64>),
    Unsat,
    Timeout,
    /// UNSAT of an under-approximated problem, which says nothing about the
    /// original one.
    Unknown,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Sat(_) => "SAT",
            Verdict::Unsat => "UNSAT",
            Verdict::Timeout => "TIMEOUT",
            Verdict::Unknown => "UNKNOWN",
        }
    }

    pub fn is_sat(&self) -> bool {
        matches!(self, Verdict::Sat(_))
    }

    pub fn assignment(&self) -> Option<&[f64]> {
        match self {
            Verdict::Sat(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub max_stack_depth: usize,
    /// Pushes plus sibling flips.
    pub total_splits: u64,
    pub pivots: u64,
    pub forced_pivots: u64,
    pub relu_repairs: u64,
    pub tableau_restorations: u64,
    pub conflicts: u64,
    /// Frames popped without exploring their sibling case.
    pub backjumped_frames: u64,
    pub derived_bounds: u64,
    pub phase_eliminations: u64,
    /// Seconds.
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub verdict: Verdict,
    pub stats: SolveStats,
    pub under_approximate: bool,
    /// Results come from double-precision arithmetic and carry no proof.
    pub floating_point: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairAction {
    UpdatedB,
    UpdatedF,
    PivotedThenUpdated,
    NeedsSplit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundChange {
    pub var: VarId,
    pub kind: BoundKind,
    pub value: f64,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("no ReLU pair with index {0}")]
    UnknownPair(usize),
    #[error("ReLU pair {backward}/{forward} is malformed")]
    InvalidPair { backward: VarId, forward: VarId },
    #[error("ReLU pair {0} already has a fixed phase")]
    PairFixed(usize),
    #[error("ReLU pair {0} is not violated")]
    NotViolated(usize),
    #[error("split on pair {pair} is vacuous: backward bounds [{lower}, {upper}]")]
    SplitVacuous { pair: usize, lower: f64, upper: f64 },
    #[error("internal state corrupted: {0}")]
    Corrupted(String),
    #[error("satisfying assignment failed re-verification: {0}")]
    WitnessRejected(String),
}

/// A Reluplex problem instance and its search state.
#[derive(Clone, Debug)]
pub struct Reluplex {
    pub(crate) state: SimplexState,
    pub(crate) pairs: Vec<ReluPair>,
    pub(crate) config: SolverConfig,
    pub(crate) stack: SplitStack,
    pub(crate) log: Vec<DerivedBound>,
    pub(crate) audit: Vec<AuditRecord>,
    pub(crate) stats: SolveStats,
    original: BoundsSnapshot,
    monitor: RoundoffMonitor,
    pub(crate) under_approximated: bool,
}

impl Reluplex {
    /// Takes ownership of an initialized simplex state and declares the ReLU
    /// pairs over its variables. Forward variables get lower bound 0.
    pub fn new(
        mut state: SimplexState,
        pairs: &[(VarId, VarId)],
        config: SolverConfig,
    ) -> Result<Self, EngineError> {
        let n = state.num_vars();
        let mut used = vec![false; n];
        for &(b, f) in pairs {
            if b.0 >= n || f.0 >= n || b == f || used[b.0] || used[f.0] {
                return Err(EngineError::InvalidPair {
                    backward: b,
                    forward: f,
                });
            }
            used[b.0] = true;
            used[f.0] = true;
            if state.lower(f) < 0.0 {
                state.set_lower(f, 0.0, 0);
            }
        }
        state.set_settings(SimplexSettings {
            min_pivot_element: config.min_pivot_element,
            bland_after: config.bland_after,
        });
        let original = state.snapshot_bounds();
        let monitor = RoundoffMonitor::new(config.roundoff_threshold, config.roundoff_cadence);
        let stack = SplitStack::new(config.trace);
        Ok(Self {
            state,
            pairs: pairs
                .iter()
                .map(|&(backward, forward)| ReluPair {
                    backward,
                    forward,
                    phase: Phase::Undecided,
                    repair_count: 0,
                    link: None,
                })
                .collect(),
            config,
            stack,
            log: Vec::new(),
            audit: Vec::new(),
            stats: SolveStats::default(),
            original,
            monitor,
            under_approximated: false,
        })
    }

    pub fn state(&self) -> &SimplexState {
        &self.state
    }

    /// Direct access for scripted rule applications.
    pub fn state_mut(&mut self) -> &mut SimplexState {
        &mut self.state
    }

    pub fn pairs(&self) -> &[ReluPair] {
        &self.pairs
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn depth(&self) -> usize {
        self.stack.frames.len()
    }

    pub fn frames(&self) -> &[SplitFrame] {
        &self.stack.frames
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.stack.trace.as_deref().unwrap_or(&[])
    }

    pub fn derived_log(&self) -> &[DerivedBound] {
        &self.log
    }

    /// Every bound derived during the run, including on abandoned branches.
    /// Empty unless `audit_bounds` is set.
    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audit
    }

    /// Snapshot of the statistics so far.
    pub fn stats(&self) -> SolveStats {
        let mut s = self.stats.clone();
        s.pivots = self.state.pivot_count();
        s.forced_pivots = self.state.forced_pivot_count();
        s.tableau_restorations += self.state.refresh_count();
        s.max_stack_depth = self.stack.max_depth;
        s.total_splits = self.stack.total_splits;
        s
    }

    /// Bounds as given at construction (forward lower bounds included).
    pub fn original_bounds(&self) -> &BoundsSnapshot {
        &self.original
    }

    pub(crate) fn pair_checked(&self, pair: usize) -> Result<&ReluPair, EngineError> {
        self.pairs.get(pair).ok_or(EngineError::UnknownPair(pair))
    }

    pub fn is_pair_violated(&self, pair: usize) -> bool {
        let p = &self.pairs[pair];
        let b = self.state.value(p.backward);
        let f = self.state.value(p.forward);
        (f - b.max(0.0)).abs() > scaled(RELU_TOLERANCE, b.abs().max(f.abs()))
    }

    /// Undecided pairs whose assignment breaks `f = max(0, b)`. Pairs with a
    /// fixed phase are enforced through bounds and never reported.
    pub fn relu_violations(&self) -> Vec<usize> {
        (0..self.pairs.len())
            .filter(|&i| self.pairs[i].phase == Phase::Undecided && self.is_pair_violated(i))
            .collect()
    }

    /// One Update_b / Update_f / PivotForRelu step on a violated pair.
    pub fn repair_relu(&mut self, pair: usize) -> Result<RepairAction, EngineError> {
        let p = self.pair_checked(pair)?.clone();
        if p.phase != Phase::Undecided {
            return Err(EngineError::PairFixed(pair));
        }
        if !self.is_pair_violated(pair) {
            return Err(EngineError::NotViolated(pair));
        }
        if p.repair_count >= self.config.split_threshold {
            return Ok(RepairAction::NeedsSplit);
        }
        let (b, f) = (p.backward, p.forward);
        let mut pivoted = false;
        if self.state.is_basic(b) && self.state.is_basic(f) {
            let fv = self.state.value(f);
            let leaving = if fv >= 0.0 { b } else { f };
            let row_empty = self.state.row(leaving).map_or(true, SparseRow::is_empty);
            if row_empty {
                return Err(EngineError::Corrupted(format!(
                    "basic variable {leaving} of a ReLU pair has an empty row"
                )));
            }
            self.state.pivot_best(leaving)?;
            self.bump_repair(pair);
            pivoted = true;
        } else if self.state.is_basic(f) && self.state.value(f) < 0.0 {
            // Copying a negative f into b cannot satisfy the pair; move f
            // out of the basis so it can be updated instead.
            if self.state.row(f).map_or(true, SparseRow::is_empty) {
                return Err(EngineError::Corrupted(format!(
                    "basic forward variable {f} has an empty row"
                )));
            }
            self.state.pivot_best(f)?;
            self.bump_repair(pair);
            pivoted = true;
        }
        let fv = self.state.value(f);
        let bv = self.state.value(b);
        let action = if !self.state.is_basic(b) && fv >= 0.0 {
            self.state.update(b, fv - bv)?;
            RepairAction::UpdatedB
        } else if !self.state.is_basic(f) {
            self.state.update(f, bv.max(0.0) - fv)?;
            RepairAction::UpdatedF
        } else {
            return Err(EngineError::Corrupted(format!(
                "no repair rule applies to pair {b}/{f}"
            )));
        };
        self.bump_repair(pair);
        Ok(if pivoted {
            RepairAction::PivotedThenUpdated
        } else {
            action
        })
    }

    fn bump_repair(&mut self, pair: usize) {
        self.pairs[pair].repair_count += 1;
        self.stats.relu_repairs += 1;
    }

    /// The two cases of a split; does not touch the state.
    pub fn split_relu(&self, pair: usize) -> Result<(BoundChange, BoundChange), EngineError> {
        let p = self.pair_checked(pair)?;
        if p.phase != Phase::Undecided {
            return Err(EngineError::PairFixed(pair));
        }
        let (lo, hi) = (self.state.lower(p.backward), self.state.upper(p.backward));
        if !(lo < 0.0 && 0.0 < hi) {
            return Err(EngineError::SplitVacuous {
                pair,
                lower: lo,
                upper: hi,
            });
        }
        Ok((
            BoundChange {
                var: p.backward,
                kind: BoundKind::Lower,
                value: 0.0,
            },
            BoundChange {
                var: p.backward,
                kind: BoundKind::Upper,
                value: 0.0,
            },
        ))
    }

    /// Fixes the phase of a pair by tightening bounds at `level`.
    pub(crate) fn fix_phase(
        &mut self,
        pair: usize,
        phase: Phase,
        level: u32,
    ) -> Result<(), Conflict> {
        let (b, f) = (self.pairs[pair].backward, self.pairs[pair].forward);
        self.pairs[pair].phase = phase;
        match phase {
            Phase::Active => {
                self.tighten_bound(b, BoundKind::Lower, 0.0, level, None)?;
                let link = self.ensure_link(pair);
                self.tighten_bound(link, BoundKind::Lower, 0.0, level, None)?;
                self.tighten_bound(link, BoundKind::Upper, 0.0, level, None)?;
            }
            Phase::Inactive => {
                self.tighten_bound(b, BoundKind::Upper, 0.0, level, None)?;
                self.tighten_bound(f, BoundKind::Upper, 0.0, level, None)?;
            }
            Phase::Undecided => {}
        }
        Ok(())
    }

    fn ensure_link(&mut self, pair: usize) -> VarId {
        if let Some(link) = self.pairs[pair].link {
            return link;
        }
        let (b, f) = (self.pairs[pair].backward, self.pairs[pair].forward);
        let expr = SparseRow::from_terms([(f, 1.0), (b, -1.0)]);
        let link = self
            .state
            .add_defined_variable(expr, f64::NEG_INFINITY, f64::INFINITY)
            .expect("pair variables exist");
        self.pairs[pair].link = Some(link);
        link
    }

    /// Runs the search until a verdict or until the budget runs out.
    pub fn solve(&mut self, budget: Budget) -> Result<SolveResult, EngineError> {
        let start = Instant::now();
        let deadline = budget.timeout.map(|t| start + t);
        let max_pivots = budget.max_pivots.map(|m| self.state.pivot_count() + m);
        let verdict = self.search(deadline, max_pivots);
        self.stats.wall_time = start.elapsed().as_secs_f64();
        let verdict = match verdict? {
            Verdict::Unsat if self.under_approximated => Verdict::Unknown,
            v => v,
        };
        Ok(SolveResult {
            verdict,
            stats: self.stats(),
            under_approximate: self.under_approximated,
            floating_point: true,
        })
    }

    fn search(
        &mut self,
        deadline: Option<Instant>,
        max_pivots: Option<u64>,
    ) -> Result<Verdict, EngineError> {
        let expired = |state: &SimplexState| {
            deadline.is_some_and(|d| Instant::now() >= d)
                || max_pivots.is_some_and(|m| state.pivot_count() >= m)
        };
        if expired(&self.state) {
            return Ok(Verdict::Timeout);
        }
        if self.has_crossed_root_bounds() {
            return Ok(Verdict::Unsat);
        }
        if self.config.under_approx_epsilon > 0.0 {
            self.under_approximate(self.config.under_approx_epsilon);
        }
        if let Err(c) = self.tighten_pass(TightenScope::FullTableau) {
            if !self.resolve(c) {
                return Ok(Verdict::Unsat);
            }
        }
        let mut last_full = self.state.pivot_count();
        let mut rejected_witnesses = 0;
        let mut spurious = 0;
        loop {
            if expired(&self.state) {
                return Ok(Verdict::Timeout);
            }
            let limits = RepairLimits {
                max_pivots,
                deadline,
            };
            match self.state.repair_out_of_bounds(limits) {
                Err(_) => return Ok(Verdict::Timeout),
                Ok(RepairOutcome::Infeasible(row)) => {
                    let c = self.row_conflict(&row);
                    if c.lower <= c.upper + 0.5 * scaled(BOUND_TOLERANCE, c.upper) {
                        // The bounds admit the row; only the assignment has
                        // drifted. Rebuilding recomputes the basic values.
                        spurious += 1;
                        if spurious > 3 {
                            return Err(EngineError::Corrupted(format!(
                                "row of {} stays infeasible without crossing bounds \
                                 (value {}, bounds [{}, {}])",
                                row.basic,
                                self.state.value(row.basic),
                                c.lower,
                                c.upper
                            )));
                        }
                        numerics::restore_tableau(&mut self.state)?;
                        self.stats.tableau_restorations += 1;
                        continue;
                    }
                    spurious = 0;
                    if !self.resolve(c) {
                        return Ok(Verdict::Unsat);
                    }
                    continue;
                }
                Ok(RepairOutcome::AllWithinBounds) => spurious = 0,
            }

            let entered = self.state.drain_entered();
            let pass = if self.state.pivot_count() - last_full >= self.config.tighten_cadence {
                last_full = self.state.pivot_count();
                self.tighten_pass(TightenScope::FullTableau)
            } else {
                self.tighten_entering(&entered)
            };
            match pass {
                Err(c) => {
                    if !self.resolve(c) {
                        return Ok(Verdict::Unsat);
                    }
                    continue;
                }
                Ok(outcome) if outcome.changed() && !self.state.all_within_bounds() => continue,
                Ok(_) => {}
            }

            if let CheckOutcome::Restored { .. } =
                numerics::check_and_maybe_restore(&mut self.state, &mut self.monitor)?
            {
                self.stats.tableau_restorations += 1;
                continue;
            }

            let violated = self.relu_violations();
            if violated.is_empty() {
                match self.verify_current() {
                    Ok(()) => return Ok(Verdict::Sat(self.state.values().to_vec())),
                    Err(msg) => {
                        rejected_witnesses += 1;
                        if rejected_witnesses > 3 {
                            return Err(EngineError::WitnessRejected(msg));
                        }
                        log::debug!("witness rejected ({msg}); restoring tableau");
                        numerics::restore_tableau(&mut self.state)?;
                        self.stats.tableau_restorations += 1;
                        continue;
                    }
                }
            }

            let threshold = self.config.split_threshold;
            let split_candidate = violated
                .iter()
                .copied()
                .filter(|&p| self.pairs[p].repair_count >= threshold)
                .max_by(|&x, &y| {
                    self.backward_width(x)
                        .total_cmp(&self.backward_width(y))
                        .then_with(|| self.pairs[y].backward.cmp(&self.pairs[x].backward))
                });
            match split_candidate {
                Some(p) => {
                    if self.split_relu(p).is_err() {
                        if let Err(c) = self.eliminate_relu_phases() {
                            if !self.resolve(c) {
                                return Ok(Verdict::Unsat);
                            }
                        }
                        continue;
                    }
                    let first = if self.state.value(self.pairs[p].backward) >= 0.0 {
                        CaseOrder::ActiveFirst
                    } else {
                        CaseOrder::InactiveFirst
                    };
                    let conflict = match self.push_split(p, first)? {
                        Some(c) => Some(c),
                        None => self.tighten_pass(TightenScope::FullTableau).err(),
                    };
                    if let Some(c) = conflict {
                        if !self.resolve(c) {
                            return Ok(Verdict::Unsat);
                        }
                    }
                }
                None => {
                    let p = violated
                        .iter()
                        .copied()
                        .min_by_key(|&p| (self.pairs[p].repair_count, self.pairs[p].backward))
                        .expect("violations are non-empty");
                    self.repair_relu(p)?;
                }
            }
        }
    }

    /// Contradictory bounds given by the problem itself.
    fn has_crossed_root_bounds(&self) -> bool {
        (0..self.state.num_vars()).any(|i| {
            let v = VarId(i);
            self.state.lower(v) > self.state.upper(v)
        })
    }

    fn backward_width(&self, pair: usize) -> f64 {
        let b = self.pairs[pair].backward;
        self.state.upper(b) - self.state.lower(b)
    }

    fn tighten_entering(&mut self, entered: &[VarId]) -> Result<PassOutcome, Conflict> {
        let mut seen = Vec::with_capacity(entered.len());
        let mut total = PassOutcome::default();
        for &v in entered {
            if seen.contains(&v) || !self.state.is_basic(v) {
                continue;
            }
            seen.push(v);
            total.derived += self.tighten_row(v)?.len();
        }
        total.eliminated += self.eliminate_relu_phases()?.len();
        total.sweeps = 1;
        Ok(total)
    }

    /// Handles a conflict and any conflicts raised while re-tightening after
    /// the backjump. Returns `false` when the root is refuted.
    fn resolve(&mut self, conflict: Conflict) -> bool {
        let mut conflict = conflict;
        loop {
            self.stats.conflicts += 1;
            match self.handle_conflict(conflict) {
                ConflictOutcome::RootUnsat => return false,
                ConflictOutcome::Backjumped(_) => {}
            }
            match self.tighten_pass(TightenScope::FullTableau) {
                Ok(_) => return true,
                Err(c) => conflict = c,
            }
        }
    }

    /// Conflict witnessed by a row whose basic variable cannot be moved back
    /// into its bounds: the row's extreme value contradicts the violated bound.
    fn row_conflict(&self, infeasible: &InfeasibleRow) -> Conflict {
        let s = &self.state;
        let basic = infeasible.basic;
        let raise = infeasible.violated == BoundKind::Lower;
        let mut level = if raise {
            s.lower_level(basic)
        } else {
            s.upper_level(basic)
        };
        let mut implied = 0.0;
        for (j, c) in infeasible.row.iter() {
            let use_upper = (c > 0.0) == raise;
            let (bound, lvl) = if use_upper {
                (s.upper(j), s.upper_level(j))
            } else {
                (s.lower(j), s.lower_level(j))
            };
            implied += c * bound;
            level = level.max(lvl);
        }
        let (lower, upper) = if raise {
            (s.lower(basic), implied)
        } else {
            (implied, s.upper(basic))
        };
        Conflict {
            var: basic,
            lower,
            upper,
            depth_of_cause: level,
        }
    }

    /// Checks the current assignment against `T₀`, the original bounds and
    /// every ReLU pair at the witness tolerance.
    pub fn verify_current(&self) -> Result<(), String> {
        let vals = self.state.values();
        for (b, row) in self.state.initial_rows() {
            let rhs = row.evaluate(vals);
            let dev = (vals[b.0] - rhs).abs();
            if dev > scaled(WITNESS_TOLERANCE, rhs) {
                return Err(format!("row of {b} off by {dev:e}"));
            }
        }
        for i in 0..self.original.len() {
            let v = VarId(i);
            let (lo, hi) = (self.original.lower(v), self.original.upper(v));
            if vals[i] < lo - scaled(WITNESS_TOLERANCE, lo)
                || vals[i] > hi + scaled(WITNESS_TOLERANCE, hi)
            {
                return Err(format!("{v} = {} outside [{lo}, {hi}]", vals[i]));
            }
        }
        for p in &self.pairs {
            let b = vals[p.backward.0];
            let f = vals[p.forward.0];
            if (f - b.max(0.0)).abs() > scaled(WITNESS_TOLERANCE, b) {
                return Err(format!(
                    "pair {}/{}: forward {f} but backward {b}",
                    p.backward, p.forward
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn trace_event(&mut self, event: TraceEvent) {
        if let Some(t) = self.stack.trace.as_mut() {
            t.push(event);
        }
    }
}
