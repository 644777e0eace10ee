//! Floating-point hygiene for the tableau.
//!
//! All solver tolerances live here. The roundoff monitor compares the current
//! assignment against the initial tableau `T₀`; when the accumulated error
//! grows past a threshold the current tableau is rebuilt from `T₀` with a
//! short pivot sequence, which carries far less error than the long history
//! of pivots that produced it.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::simplex::{SimplexState, SparseRow, VarId};

/// Coefficients below this magnitude are dropped after row operations.
pub const DROP_TOLERANCE: f64 = 1e-12;
/// Slack allowed when testing a value against a bound.
pub const BOUND_TOLERANCE: f64 = 1e-9;
/// Slack for the `α(f) = max(0, α(b))` check during search.
pub const RELU_TOLERANCE: f64 = 1e-9;
/// Slack used when re-verifying a satisfying assignment before reporting it.
pub const WITNESS_TOLERANCE: f64 = 1e-6;
/// Default smallest accepted pivot element.
pub const DEFAULT_MIN_PIVOT: f64 = 1e-6;
/// Minimal improvement for a derived bound to count as strictly tighter.
pub const TIGHTENING_MARGIN: f64 = 1e-12;
/// Crossing bounds closer than this (relative to magnitude) are snapped
/// together instead of being reported as a contradiction.
pub const CONFLICT_TOLERANCE: f64 = 1e-9;
/// Default restoration threshold on the cumulative roundoff error.
pub const DEFAULT_ROUNDOFF_THRESHOLD: f64 = 1e-6;
/// Default number of pivots between roundoff measurements.
pub const DEFAULT_ROUNDOFF_CADENCE: u64 = 5_000;

/// Scales a tolerance for values of large magnitude.
#[inline]
pub fn scaled(tolerance: f64, magnitude: f64) -> f64 {
    tolerance * magnitude.abs().max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundoffReport {
    /// `Σ_{xᵢ∈B₀} |α(xᵢ) − Σⱼ T₀[i,j]·α(xⱼ)|`
    pub cumulative_error: f64,
    /// Row of `T₀` with the largest deviation.
    pub per_row_worst: Option<(VarId, f64)>,
    pub pivots_since_last_check: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("tableau restoration failed: no usable pivot for basic variables {remaining:?}")]
    SingularBasis { remaining: Vec<VarId> },
}

/// Cumulative roundoff of the current assignment against `T₀`.
pub fn measure_roundoff(state: &SimplexState) -> RoundoffReport {
    measure_with(state, 0)
}

fn measure_with(state: &SimplexState, pivots_since: u64) -> RoundoffReport {
    let values = state.values();
    let mut total = 0.0;
    let mut worst: Option<(VarId, f64)> = None;
    for (basic, row) in state.initial_rows() {
        let dev = (values[basic.0] - row.evaluate(values)).abs();
        total += dev;
        if worst.map_or(true, |(_, w)| dev > w) {
            worst = Some((*basic, dev));
        }
    }
    RoundoffReport {
        cumulative_error: total,
        per_row_worst: worst,
        pivots_since_last_check: pivots_since,
    }
}

/// Rebuilds the tableau from `T₀` by pivoting every currently-basic variable
/// that is non-basic in `T₀` into the basis once, always taking the largest
/// available pivot element. Basic values are recomputed from the rebuilt rows.
pub fn restore_tableau(state: &mut SimplexState) -> Result<(), NumericsError> {
    let current: BTreeSet<VarId> = state.basic_vars().collect();
    let mut rows: Vec<(VarId, SparseRow)> = state.initial_rows().to_vec();
    let original: BTreeSet<VarId> = rows.iter().map(|(b, _)| *b).collect();
    let mut entering: BTreeSet<VarId> = current.difference(&original).copied().collect();
    let mut leaving: BTreeSet<VarId> = original.difference(&current).copied().collect();

    let mut position: HashMap<VarId, usize> =
        rows.iter().enumerate().map(|(i, (b, _))| (*b, i)).collect();

    while !entering.is_empty() {
        let mut best: Option<(usize, VarId, f64)> = None;
        for &l in &leaving {
            let r = position[&l];
            for (v, c) in rows[r].1.iter() {
                if entering.contains(&v) && best.map_or(true, |(_, _, b)| c.abs() > b.abs()) {
                    best = Some((r, v, c));
                }
            }
        }
        let Some((r, enter, _)) = best else {
            return Err(NumericsError::SingularBasis {
                remaining: entering.into_iter().collect(),
            });
        };
        let leave = rows[r].0;
        pivot_rows(&mut rows, r, enter);
        position.remove(&leave);
        position.insert(enter, r);
        entering.remove(&enter);
        leaving.remove(&leave);
    }
    state.install_tableau(rows);
    Ok(())
}

fn pivot_rows(rows: &mut [(VarId, SparseRow)], r: usize, entering: VarId) {
    let (leaving, mut row) = std::mem::take(&mut rows[r]);
    let cj = row.remove(entering);
    row.scale(-1.0 / cj);
    row.add_term(leaving, 1.0 / cj);
    for (k, (_, other)) in rows.iter_mut().enumerate() {
        if k == r {
            continue;
        }
        let d = other.remove(entering);
        if d != 0.0 {
            other.add_scaled(&row, d);
        }
    }
    rows[r] = (entering, row);
}

/// Periodic roundoff check state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundoffMonitor {
    pub threshold: f64,
    pub cadence: u64,
    last_check: u64,
}

impl Default for RoundoffMonitor {
    fn default() -> Self {
        Self::new(DEFAULT_ROUNDOFF_THRESHOLD, DEFAULT_ROUNDOFF_CADENCE)
    }
}

impl RoundoffMonitor {
    pub fn new(threshold: f64, cadence: u64) -> Self {
        assert!(threshold > 0.0, "roundoff threshold must be positive");
        Self {
            threshold,
            cadence: cadence.max(1),
            last_check: 0,
        }
    }

    pub fn reset(&mut self, state: &SimplexState) {
        self.last_check = state.pivot_count();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CheckOutcome {
    /// Fewer than `cadence` pivots since the last check.
    NotDue,
    Checked(RoundoffReport),
    Restored {
        before: RoundoffReport,
        after: RoundoffReport,
    },
}

/// Measures every `cadence` pivots and restores when the error exceeds the
/// threshold.
pub fn check_and_maybe_restore(
    state: &mut SimplexState,
    monitor: &mut RoundoffMonitor,
) -> Result<CheckOutcome, NumericsError> {
    let since = state.pivot_count().saturating_sub(monitor.last_check);
    if since < monitor.cadence {
        return Ok(CheckOutcome::NotDue);
    }
    monitor.last_check = state.pivot_count();
    let before = measure_with(state, since);
    if before.cumulative_error <= monitor.threshold {
        return Ok(CheckOutcome::Checked(before));
    }
    restore_tableau(state)?;
    let after = measure_with(state, 0);
    log::debug!(
        "tableau restored: roundoff {:e} -> {:e}",
        before.cumulative_error,
        after.cumulative_error
    );
    Ok(CheckOutcome::Restored { before, after })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::LinearAtom;

    fn v(i: usize) -> VarId {
        VarId(i)
    }

    fn small_state() -> SimplexState {
        SimplexState::from_atoms(
            3,
            &[
                LinearAtom::eq(vec![(v(0), 1.0), (v(1), 2.0)], 0.0),
                LinearAtom::eq(vec![(v(1), -1.0), (v(2), 0.5)], 0.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn fresh_state_has_zero_roundoff() {
        assert_eq!(measure_roundoff(&small_state()).cumulative_error, 0.0);
    }

    #[test]
    fn dyadic_pivots_are_exact() {
        let mut s = small_state();
        s.update(v(0), 0.5).unwrap();
        s.update(v(1), -0.25).unwrap();
        s.pivot(v(3), v(1)).unwrap();
        s.update(v(2), 2.0).unwrap();
        s.pivot(v(4), v(2)).unwrap();
        s.update(v(3), 4.0).unwrap();
        assert_eq!(measure_roundoff(&s).cumulative_error, 0.0);
    }

    #[test]
    fn perturbation_is_reported_exactly() {
        let mut s = small_state();
        s.perturb_value(v(3), 1e-4);
        let r = measure_roundoff(&s);
        assert_eq!(r.cumulative_error, 1e-4);
        assert_eq!(r.per_row_worst, Some((v(3), 1e-4)));
    }

    #[test]
    fn restore_right_after_init_is_identity() {
        let mut s = small_state();
        let before: Vec<_> = s.rows().map(|(b, r)| (b, r.clone())).collect();
        restore_tableau(&mut s).unwrap();
        let after: Vec<_> = s.rows().map(|(b, r)| (b, r.clone())).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn restore_preserves_basis() {
        let mut s = small_state();
        s.pivot(v(3), v(0)).unwrap();
        s.pivot(v(4), v(2)).unwrap();
        let basis: BTreeSet<_> = s.basic_vars().collect();
        restore_tableau(&mut s).unwrap();
        assert_eq!(basis, s.basic_vars().collect());
    }

    #[test]
    fn check_cadence_and_threshold() {
        let mut s = small_state();
        let mut m = RoundoffMonitor::new(1e-6, 2);
        assert_eq!(check_and_maybe_restore(&mut s, &mut m).unwrap(), CheckOutcome::NotDue);
        s.pivot(v(3), v(0)).unwrap();
        s.pivot(v(0), v(3)).unwrap();
        s.perturb_value(v(4), 1e-9);
        assert!(matches!(
            check_and_maybe_restore(&mut s, &mut m).unwrap(),
            CheckOutcome::Checked(_)
        ));
        s.pivot(v(4), v(2)).unwrap();
        s.pivot(v(2), v(4)).unwrap();
        s.perturb_value(v(4), 1e-5);
        match check_and_maybe_restore(&mut s, &mut m).unwrap() {
            CheckOutcome::Restored { before, after } => {
                assert!(before.cumulative_error > 1e-6);
                assert!(after.cumulative_error <= before.cumulative_error);
            }
            other => panic!("expected restoration, got {other:?}"),
        }
    }
}
