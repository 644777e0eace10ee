//! Bounded-variable simplex state.
//!
//! The tableau expresses every basic variable as a sparse linear form over
//! the non-basic variables. Bounds may be infinite, the assignment is always
//! finite and satisfies every row. `pivot` and `update` are the only two
//! operations that touch the tableau or the assignment; everything else in
//! the crate is built from them.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{scaled, BOUND_TOLERANCE, DEFAULT_MIN_PIVOT, DROP_TOLERANCE};

/// Dense identifier of a solver variable.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct VarId(pub usize);

impl VarId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Eq => "=",
            Relation::Le => "<=",
            Relation::Ge => ">=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64, tolerance: f64) -> bool {
        match self {
            Relation::Eq => (lhs - rhs).abs() <= tolerance,
            Relation::Le => lhs <= rhs + tolerance,
            Relation::Ge => lhs >= rhs - tolerance,
        }
    }
}

/// `Σ cᵢ·xᵢ ⋈ d` with `⋈ ∈ {=, ≤, ≥}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearAtom {
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub constant: f64,
}

impl LinearAtom {
    pub fn new(terms: Vec<(VarId, f64)>, relation: Relation, constant: f64) -> Self {
        Self {
            terms,
            relation,
            constant,
        }
    }

    pub fn eq(terms: Vec<(VarId, f64)>, constant: f64) -> Self {
        Self::new(terms, Relation::Eq, constant)
    }

    pub fn le(terms: Vec<(VarId, f64)>, constant: f64) -> Self {
        Self::new(terms, Relation::Le, constant)
    }

    pub fn ge(terms: Vec<(VarId, f64)>, constant: f64) -> Self {
        Self::new(terms, Relation::Ge, constant)
    }

    pub fn lhs(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    pub fn is_satisfied(&self, values: &[f64], tolerance: f64) -> bool {
        self.relation.holds(self.lhs(values), self.constant, tolerance)
    }
}

/// Sparse linear form kept sorted by variable index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRow {
    entries: Vec<(VarId, f64)>,
}

impl SparseRow {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a row, summing repeated variables and dropping zero sums.
    pub fn from_terms<I: IntoIterator<Item = (VarId, f64)>>(terms: I) -> Self {
        let mut entries: Vec<(VarId, f64)> = terms.into_iter().collect();
        entries.sort_by_key(|&(v, _)| v);
        let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(entries.len());
        for (v, c) in entries {
            match merged.last_mut() {
                Some((last, acc)) if *last == v => *acc += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        Self { entries: merged }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.entries.iter().map(|&(v, _)| v)
    }

    pub fn coeff(&self, var: VarId) -> f64 {
        match self.entries.binary_search_by_key(&var, |&(v, _)| v) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn contains(&self, var: VarId) -> bool {
        self.entries.binary_search_by_key(&var, |&(v, _)| v).is_ok()
    }

    /// Removes `var` and returns its coefficient (0 when absent).
    pub fn remove(&mut self, var: VarId) -> f64 {
        match self.entries.binary_search_by_key(&var, |&(v, _)| v) {
            Ok(i) => self.entries.remove(i).1,
            Err(_) => 0.0,
        }
    }

    pub fn add_term(&mut self, var: VarId, coeff: f64) {
        match self.entries.binary_search_by_key(&var, |&(v, _)| v) {
            Ok(i) => {
                self.entries[i].1 += coeff;
                if self.entries[i].1.abs() < DROP_TOLERANCE {
                    self.entries.remove(i);
                }
            }
            Err(i) => {
                if coeff.abs() >= DROP_TOLERANCE {
                    self.entries.insert(i, (var, coeff));
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, c) in &mut self.entries {
            *c *= factor;
        }
    }

    /// `self += factor · other`, dropping coefficients that cancel to dust.
    pub fn add_scaled(&mut self, other: &SparseRow, factor: f64) {
        let mut merged = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (mut i, mut j) = (0, 0);
        let a = &self.entries;
        let b = &other.entries;
        while i < a.len() || j < b.len() {
            let next = if j >= b.len() || (i < a.len() && a[i].0 < b[j].0) {
                i += 1;
                a[i - 1]
            } else if i >= a.len() || b[j].0 < a[i].0 {
                j += 1;
                (b[j - 1].0, factor * b[j - 1].1)
            } else {
                i += 1;
                j += 1;
                (a[i - 1].0, a[i - 1].1 + factor * b[j - 1].1)
            };
            if next.1.abs() >= DROP_TOLERANCE {
                merged.push(next);
            }
        }
        self.entries = merged;
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.entries.iter().map(|&(v, c)| c * values[v.0]).sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("variable {0} does not exist")]
    UnknownVar(VarId),
    #[error("variable {0} is not basic")]
    NotBasic(VarId),
    #[error("variable {0} is basic")]
    NotNonBasic(VarId),
    #[error("pivot element T[{leaving},{entering}] is zero")]
    ZeroPivot { leaving: VarId, entering: VarId },
    #[error("degenerate pivot: |T[{leaving},{entering}]| = {element:e} is below the pivot threshold")]
    DegeneratePivot {
        leaving: VarId,
        entering: VarId,
        element: f64,
    },
    #[error("atom has no nonzero coefficient")]
    EmptyAtom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Lower,
    Upper,
}

/// Variable selection policy for the out-of-bounds repair loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Largest bound violation leaves, largest |coefficient| enters.
    Heuristic,
    /// Lowest index leaves and enters.
    Bland,
}

/// Basic row that satisfies the guard of the Failure rule.
#[derive(Clone, Debug, PartialEq)]
pub struct InfeasibleRow {
    pub basic: VarId,
    /// Which bound of `basic` is violated.
    pub violated: BoundKind,
    pub row: SparseRow,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RepairOutcome {
    AllWithinBounds,
    Infeasible(InfeasibleRow),
}

/// Stop conditions for [`SimplexState::repair_out_of_bounds`].
#[derive(Clone, Copy, Debug, Default)]
pub struct RepairLimits {
    /// Absolute cap on [`SimplexState::pivot_count`].
    pub max_pivots: Option<u64>,
    pub deadline: Option<Instant>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("repair interrupted by pivot or time budget")]
pub struct Interrupted;

/// Bounds and the split level that introduced each bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsSnapshot {
    lower: Vec<f64>,
    upper: Vec<f64>,
    lower_level: Vec<u32>,
    upper_level: Vec<u32>,
}

impl BoundsSnapshot {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self, var: VarId) -> f64 {
        self.lower[var.0]
    }

    pub fn upper(&self, var: VarId) -> f64 {
        self.upper[var.0]
    }
}

/// Tunables of the simplex layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplexSettings {
    /// Pivot elements with smaller magnitude are refused.
    pub min_pivot_element: f64,
    /// Repair iterations before switching from the heuristic to Bland's rule.
    pub bland_after: u64,
}

impl Default for SimplexSettings {
    fn default() -> Self {
        Self {
            min_pivot_element: DEFAULT_MIN_PIVOT,
            bland_after: 10_000,
        }
    }
}

/// Tableau, bounds and assignment of a bounded-variable simplex run.
#[derive(Clone, Debug)]
pub struct SimplexState {
    lower: Vec<f64>,
    upper: Vec<f64>,
    lower_level: Vec<u32>,
    upper_level: Vec<u32>,
    value: Vec<f64>,
    rows: Vec<SparseRow>,
    row_basic: Vec<VarId>,
    row_of: Vec<Option<usize>>,
    initial: Vec<(VarId, SparseRow)>,
    pivots: u64,
    forced_pivots: u64,
    refreshes: u64,
    entered: Vec<VarId>,
    settings: SimplexSettings,
}

impl SimplexState {
    /// A state with `num_vars` unbounded variables assigned 0 and no rows.
    pub fn new(num_vars: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
            lower_level: vec![0; num_vars],
            upper_level: vec![0; num_vars],
            value: vec![0.0; num_vars],
            rows: Vec::new(),
            row_basic: Vec::new(),
            row_of: vec![None; num_vars],
            initial: Vec::new(),
            pivots: 0,
            forced_pivots: 0,
            refreshes: 0,
            entered: Vec::new(),
            settings: SimplexSettings::default(),
        }
    }

    /// Initial configuration: one auxiliary basic variable per atom, with the
    /// atom's constant installed as its bound(s).
    ///
    /// `num_vars` problem variables are created first (at least enough to
    /// cover every variable mentioned by the atoms); auxiliaries follow.
    pub fn from_atoms(num_vars: usize, atoms: &[LinearAtom]) -> Result<Self, SimplexError> {
        let needed = atoms
            .iter()
            .flat_map(|a| a.terms.iter().map(|&(v, _)| v.0 + 1))
            .max()
            .unwrap_or(0);
        let mut state = Self::new(num_vars.max(needed));
        for atom in atoms {
            state.add_atom(atom)?;
        }
        Ok(state)
    }

    pub fn with_settings(mut self, settings: SimplexSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn settings(&self) -> SimplexSettings {
        self.settings
    }

    pub fn set_settings(&mut self, settings: SimplexSettings) {
        self.settings = settings;
    }

    pub fn num_vars(&self) -> usize {
        self.value.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Appends a fresh variable with the given bounds and value 0.
    pub fn add_variable(&mut self, lower: f64, upper: f64) -> VarId {
        let id = VarId(self.value.len());
        self.lower.push(lower);
        self.upper.push(upper);
        self.lower_level.push(0);
        self.upper_level.push(0);
        self.value.push(0.0);
        self.row_of.push(None);
        id
    }

    /// Adds the atom as a new auxiliary basic variable `b = Σcᵢxᵢ` and installs
    /// `d` as its bound(s).
    pub fn add_atom(&mut self, atom: &LinearAtom) -> Result<VarId, SimplexError> {
        let expr = SparseRow::from_terms(atom.terms.iter().copied());
        if expr.is_empty() {
            return Err(SimplexError::EmptyAtom);
        }
        let (lo, hi) = match atom.relation {
            Relation::Eq => (atom.constant, atom.constant),
            Relation::Le => (f64::NEG_INFINITY, atom.constant),
            Relation::Ge => (atom.constant, f64::INFINITY),
        };
        self.add_defined_variable(expr, lo, hi)
    }

    /// Adds a variable defined by `expr` (over existing variables, basic or
    /// not) as a new basic row. The definition is also appended to the
    /// initial tableau so roundoff measurement and restoration cover it.
    pub fn add_defined_variable(
        &mut self,
        expr: SparseRow,
        lower: f64,
        upper: f64,
    ) -> Result<VarId, SimplexError> {
        for v in expr.vars() {
            self.check_var(v)?;
        }
        let var = self.add_variable(lower, upper);
        let mut row = SparseRow::new();
        for (v, c) in expr.iter() {
            match self.row_of[v.0] {
                Some(r) => {
                    let sub = self.rows[r].clone();
                    row.add_scaled(&sub, c);
                }
                None => row.add_term(v, c),
            }
        }
        self.value[var.0] = row.evaluate(&self.value);
        self.row_of[var.0] = Some(self.rows.len());
        self.rows.push(row);
        self.row_basic.push(var);
        self.initial.push((var, expr));
        Ok(var)
    }

    fn check_var(&self, var: VarId) -> Result<(), SimplexError> {
        if var.0 < self.value.len() {
            Ok(())
        } else {
            Err(SimplexError::UnknownVar(var))
        }
    }

    pub fn lower(&self, var: VarId) -> f64 {
        self.lower[var.0]
    }

    pub fn upper(&self, var: VarId) -> f64 {
        self.upper[var.0]
    }

    pub fn lower_level(&self, var: VarId) -> u32 {
        self.lower_level[var.0]
    }

    pub fn upper_level(&self, var: VarId) -> u32 {
        self.upper_level[var.0]
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.value[var.0]
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    pub fn set_lower(&mut self, var: VarId, value: f64, level: u32) {
        self.lower[var.0] = value;
        self.lower_level[var.0] = level;
    }

    pub fn set_upper(&mut self, var: VarId, value: f64, level: u32) {
        self.upper[var.0] = value;
        self.upper_level[var.0] = level;
    }

    pub fn set_bounds(&mut self, var: VarId, lower: f64, upper: f64) {
        self.set_lower(var, lower, 0);
        self.set_upper(var, upper, 0);
    }

    pub fn snapshot_bounds(&self) -> BoundsSnapshot {
        BoundsSnapshot {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            lower_level: self.lower_level.clone(),
            upper_level: self.upper_level.clone(),
        }
    }

    /// Restores bounds; variables created after the snapshot become free.
    pub fn restore_bounds(&mut self, snap: &BoundsSnapshot) {
        let n = snap.lower.len();
        self.lower[..n].copy_from_slice(&snap.lower);
        self.upper[..n].copy_from_slice(&snap.upper);
        self.lower_level[..n].copy_from_slice(&snap.lower_level);
        self.upper_level[..n].copy_from_slice(&snap.upper_level);
        for i in n..self.lower.len() {
            self.lower[i] = f64::NEG_INFINITY;
            self.upper[i] = f64::INFINITY;
            self.lower_level[i] = 0;
            self.upper_level[i] = 0;
        }
    }

    pub fn is_basic(&self, var: VarId) -> bool {
        self.row_of[var.0].is_some()
    }

    pub fn basic_vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.row_basic.iter().copied()
    }

    /// Row of a basic variable.
    pub fn row(&self, basic: VarId) -> Option<&SparseRow> {
        self.row_of.get(basic.0)?.map(|r| &self.rows[r])
    }

    pub fn rows(&self) -> impl Iterator<Item = (VarId, &SparseRow)> + '_ {
        self.row_basic.iter().copied().zip(self.rows.iter())
    }

    /// `T[basic, nonbasic]`; 0 when `basic` is not basic or the entry is absent.
    pub fn coefficient(&self, basic: VarId, nonbasic: VarId) -> f64 {
        self.row(basic).map_or(0.0, |r| r.coeff(nonbasic))
    }

    /// The stored initial tableau `T₀`.
    pub fn initial_rows(&self) -> &[(VarId, SparseRow)] {
        &self.initial
    }

    pub fn pivot_count(&self) -> u64 {
        self.pivots
    }

    /// Pivots taken on an element below `min_pivot_element` because no
    /// better candidate existed.
    pub fn forced_pivot_count(&self) -> u64 {
        self.forced_pivots
    }

    /// Tableau rebuilds done instead of pivoting on a tiny element.
    pub fn refresh_count(&self) -> u64 {
        self.refreshes
    }

    /// Variables that entered the basis since the last call.
    pub fn drain_entered(&mut self) -> Vec<VarId> {
        std::mem::take(&mut self.entered)
    }

    pub fn is_out_of_bounds(&self, var: VarId) -> bool {
        let v = self.value[var.0];
        let (lo, hi) = (self.lower[var.0], self.upper[var.0]);
        v < lo - scaled(BOUND_TOLERANCE, lo) || v > hi + scaled(BOUND_TOLERANCE, hi)
    }

    pub fn all_within_bounds(&self) -> bool {
        (0..self.num_vars()).all(|i| !self.is_out_of_bounds(VarId(i)))
    }

    /// Swaps basic `leaving` with non-basic `entering`.
    pub fn pivot(&mut self, leaving: VarId, entering: VarId) -> Result<(), SimplexError> {
        let element = self.pivot_element(leaving, entering)?;
        if element.abs() < self.settings.min_pivot_element {
            return Err(SimplexError::DegeneratePivot {
                leaving,
                entering,
                element,
            });
        }
        self.pivot_raw(leaving, entering);
        Ok(())
    }

    /// Pivots `leaving` out of the basis with the non-basic of largest
    /// |coefficient| in its row, preferring elements above the threshold.
    pub fn pivot_best(&mut self, leaving: VarId) -> Result<VarId, SimplexError> {
        let row = self.row(leaving).ok_or(SimplexError::NotBasic(leaving))?;
        if row.is_empty() {
            return Err(SimplexError::ZeroPivot {
                leaving,
                entering: leaving,
            });
        }
        let candidates: Vec<(VarId, f64)> = row.iter().collect();
        let (mut entering, mut forced) = self.choose_entering(&candidates, Selection::Heuristic);
        if forced && crate::numerics::restore_tableau(self).is_ok() {
            self.refreshes += 1;
            let row = self.row(leaving).ok_or(SimplexError::NotBasic(leaving))?;
            if row.is_empty() {
                return Err(SimplexError::ZeroPivot {
                    leaving,
                    entering: leaving,
                });
            }
            let candidates: Vec<(VarId, f64)> = row.iter().collect();
            (entering, forced) = self.choose_entering(&candidates, Selection::Heuristic);
        }
        if forced {
            self.forced_pivots += 1;
        }
        self.pivot_raw(leaving, entering);
        Ok(entering)
    }

    fn pivot_element(&self, leaving: VarId, entering: VarId) -> Result<f64, SimplexError> {
        self.check_var(leaving)?;
        self.check_var(entering)?;
        let r = self.row_of[leaving.0].ok_or(SimplexError::NotBasic(leaving))?;
        if self.row_of[entering.0].is_some() {
            return Err(SimplexError::NotNonBasic(entering));
        }
        let element = self.rows[r].coeff(entering);
        if element == 0.0 {
            return Err(SimplexError::ZeroPivot { leaving, entering });
        }
        Ok(element)
    }

    fn pivot_raw(&mut self, leaving: VarId, entering: VarId) {
        let r = self.row_of[leaving.0].expect("leaving variable is basic");
        let mut row = std::mem::take(&mut self.rows[r]);
        let cj = row.remove(entering);
        debug_assert!(cj != 0.0);
        // x_j = x_i / c_j - Σ_{k≠j} (c_k / c_j) x_k
        row.scale(-1.0 / cj);
        row.add_term(leaving, 1.0 / cj);
        for (k, other) in self.rows.iter_mut().enumerate() {
            if k == r {
                continue;
            }
            let d = other.remove(entering);
            if d != 0.0 {
                other.add_scaled(&row, d);
            }
        }
        self.rows[r] = row;
        self.row_basic[r] = entering;
        self.row_of[entering.0] = Some(r);
        self.row_of[leaving.0] = None;
        self.pivots += 1;
        self.entered.push(entering);
    }

    /// `α(var) += delta` and every basic variable follows its row.
    pub fn update(&mut self, var: VarId, delta: f64) -> Result<(), SimplexError> {
        self.check_var(var)?;
        if self.row_of[var.0].is_some() {
            return Err(SimplexError::NotNonBasic(var));
        }
        if delta == 0.0 {
            return Ok(());
        }
        self.value[var.0] += delta;
        for (row, &basic) in self.rows.iter().zip(&self.row_basic) {
            let c = row.coeff(var);
            if c != 0.0 {
                self.value[basic.0] += delta * c;
            }
        }
        Ok(())
    }

    /// Moves a non-basic variable to exactly `target`.
    pub fn assign(&mut self, var: VarId, target: f64) -> Result<(), SimplexError> {
        self.update(var, target - self.value[var.0])?;
        self.value[var.0] = target;
        Ok(())
    }

    /// The slack sets of a basic variable: non-basics that can move the basic
    /// variable up (`slack⁺`) or down (`slack⁻`) without leaving their bounds.
    pub fn slack_sets(&self, basic: VarId) -> Result<(Vec<VarId>, Vec<VarId>), SimplexError> {
        let row = self.row(basic).ok_or(SimplexError::NotBasic(basic))?;
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        for (j, c) in row.iter() {
            let can_rise = self.value[j.0] < self.upper[j.0];
            let can_fall = self.value[j.0] > self.lower[j.0];
            if (c > 0.0 && can_rise) || (c < 0.0 && can_fall) {
                plus.push(j);
            }
            if (c < 0.0 && can_rise) || (c > 0.0 && can_fall) {
                minus.push(j);
            }
        }
        Ok((plus, minus))
    }

    fn slack_in_direction(&self, row: &SparseRow, raise: bool) -> Vec<(VarId, f64)> {
        row.iter()
            .filter(|&(j, c)| {
                let can_rise = self.value[j.0] < self.upper[j.0];
                let can_fall = self.value[j.0] > self.lower[j.0];
                if raise {
                    (c > 0.0 && can_rise) || (c < 0.0 && can_fall)
                } else {
                    (c < 0.0 && can_rise) || (c > 0.0 && can_fall)
                }
            })
            .collect()
    }

    /// Moves every out-of-bounds non-basic variable onto its violated bound.
    fn update_nonbasics_into_bounds(&mut self) {
        for i in 0..self.num_vars() {
            if self.row_of[i].is_some() {
                continue;
            }
            let v = self.value[i];
            let target = if v < self.lower[i] {
                self.lower[i]
            } else if v > self.upper[i] {
                self.upper[i]
            } else {
                continue;
            };
            self.assign(VarId(i), target)
                .expect("non-basic update cannot fail");
        }
    }

    fn choose_leaving(&self, selection: Selection) -> Option<(usize, BoundKind)> {
        let mut best: Option<(usize, BoundKind, f64)> = None;
        for (r, &b) in self.row_basic.iter().enumerate() {
            let v = self.value[b.0];
            let (lo, hi) = (self.lower[b.0], self.upper[b.0]);
            let (kind, amount) = if v < lo - scaled(BOUND_TOLERANCE, lo) {
                (BoundKind::Lower, self.lower[b.0] - v)
            } else if v > hi + scaled(BOUND_TOLERANCE, hi) {
                (BoundKind::Upper, v - self.upper[b.0])
            } else {
                continue;
            };
            let better = match (&best, selection) {
                (None, _) => true,
                (Some((br, _, _)), Selection::Bland) => b < self.row_basic[*br],
                (Some((br, _, ba)), Selection::Heuristic) => {
                    amount > *ba || (amount == *ba && b < self.row_basic[*br])
                }
            };
            if better {
                best = Some((r, kind, amount));
            }
        }
        best.map(|(r, k, _)| (r, k))
    }

    fn choose_entering(&self, candidates: &[(VarId, f64)], selection: Selection) -> (VarId, bool) {
        let min = self.settings.min_pivot_element;
        let acceptable = candidates.iter().filter(|(_, c)| c.abs() >= min);
        let pick = match selection {
            Selection::Bland => acceptable.min_by_key(|(v, _)| *v).copied(),
            Selection::Heuristic => acceptable
                .max_by(|a, b| {
                    a.1.abs()
                        .total_cmp(&b.1.abs())
                        .then_with(|| b.0.cmp(&a.0))
                })
                .copied(),
        };
        match pick {
            Some((v, _)) => (v, false),
            None => {
                let (v, _) = candidates
                    .iter()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then_with(|| b.0.cmp(&a.0)))
                    .copied()
                    .expect("candidate list is non-empty");
                (v, true)
            }
        }
    }

    /// Applies Update, Pivot₁ and Pivot₂ until every variable is within its
    /// bounds or the Failure rule applies.
    pub fn repair_out_of_bounds(&mut self, limits: RepairLimits) -> Result<RepairOutcome, Interrupted> {
        let mut iterations: u64 = 0;
        let mut refreshed = false;
        loop {
            if let Some(max) = limits.max_pivots {
                if self.pivots >= max {
                    return Err(Interrupted);
                }
            }
            if iterations % 64 == 0 {
                if let Some(deadline) = limits.deadline {
                    if Instant::now() >= deadline {
                        return Err(Interrupted);
                    }
                }
            }
            self.update_nonbasics_into_bounds();
            let selection = if iterations >= self.settings.bland_after {
                Selection::Bland
            } else {
                Selection::Heuristic
            };
            let Some((r, kind)) = self.choose_leaving(selection) else {
                return Ok(RepairOutcome::AllWithinBounds);
            };
            let basic = self.row_basic[r];
            let raise = kind == BoundKind::Lower;
            let candidates = self.slack_in_direction(&self.rows[r], raise);
            if candidates.is_empty() {
                return Ok(RepairOutcome::Infeasible(InfeasibleRow {
                    basic,
                    violated: kind,
                    row: self.rows[r].clone(),
                }));
            }
            let (entering, forced) = self.choose_entering(&candidates, selection);
            if forced && !refreshed && crate::numerics::restore_tableau(self).is_ok() {
                // Tiny pivot elements are often accumulated roundoff.
                refreshed = true;
                self.refreshes += 1;
                continue;
            }
            refreshed = false;
            if forced {
                self.forced_pivots += 1;
            }
            self.pivot_raw(basic, entering);
            let target = match kind {
                BoundKind::Lower => self.lower[basic.0],
                BoundKind::Upper => self.upper[basic.0],
            };
            self.assign(basic, target)
                .expect("leaving variable is non-basic");
            iterations += 1;
        }
    }

    /// Largest `|α(xᵢ) − Σ T[i,j]·α(xⱼ)|` over the current rows.
    pub fn max_row_residual(&self) -> f64 {
        self.rows()
            .map(|(b, row)| (self.value[b.0] - row.evaluate(&self.value)).abs())
            .fold(0.0, f64::max)
    }

    /// Replaces the tableau with `rows` (same basis expected) and recomputes
    /// basic values from the non-basic ones.
    pub(crate) fn install_tableau(&mut self, rows: Vec<(VarId, SparseRow)>) {
        for r in self.row_of.iter_mut() {
            *r = None;
        }
        self.rows.clear();
        self.row_basic.clear();
        for (basic, row) in rows {
            self.row_of[basic.0] = Some(self.rows.len());
            self.rows.push(row);
            self.row_basic.push(basic);
        }
        for r in 0..self.rows.len() {
            let b = self.row_basic[r];
            self.value[b.0] = self.rows[r].evaluate(&self.value);
        }
    }

    /// Test hook: overwrite a value without maintaining row equations.
    #[doc(hidden)]
    pub fn perturb_value(&mut self, var: VarId, delta: f64) {
        self.value[var.0] += delta;
    }
}
