//! Bound tightening from tableau rows and ReLU phase elimination.
//!
//! A row `xᵢ = Σ cⱼ·xⱼ` is read as `Σ aᵥ·xᵥ = 0` with `a = −1` for the basic
//! variable, so every variable of the row can receive a derived bound from
//! the others. A derived bound is tagged with the highest split level among
//! the bounds it was computed from; that is the level a conflict involving
//! it is attributed to.

use serde::Serialize;

use crate::engine::{Phase, Reluplex};
use crate::numerics::{scaled, CONFLICT_TOLERANCE, RELU_TOLERANCE, TIGHTENING_MARGIN};
use crate::simplex::{BoundKind, VarId};
use crate::smt::Conflict;

/// Coefficients smaller than this are not divided by when deriving bounds
/// for non-basic variables.
const MIN_DERIVATION_COEFF: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivedBound {
    pub var: VarId,
    pub kind: BoundKind,
    pub value: f64,
    pub previous: f64,
    /// Basic variable of the row the bound came from; `None` for bounds set
    /// by phase fixing.
    pub source_row: Option<VarId>,
    /// Split-stack depth when the bound was derived.
    pub depth: u32,
    /// Highest split level among the premises.
    pub level: u32,
}

/// A derived bound with the split decisions in force at its level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditRecord {
    pub bound: DerivedBound,
    /// `(pair, phase)` of frames `1..=level`.
    pub decisions: Vec<(usize, Phase)>,
    /// `(pair, phase)` of every frame open when the bound was derived.
    pub path: Vec<(usize, Phase)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TightenScope {
    EnteringOnly(VarId),
    FullTableau,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PassOutcome {
    pub derived: usize,
    pub eliminated: usize,
    pub sweeps: usize,
}

impl PassOutcome {
    pub fn changed(&self) -> bool {
        self.derived + self.eliminated > 0
    }
}

/// Running extreme of `Σ aᵥ·xᵥ` over the row, tracking infinite terms and
/// the two highest premise levels so one term can be excluded cheaply.
#[derive(Default)]
struct Extreme {
    finite: f64,
    infinite: usize,
    top: [(u32, usize); 2],
}

impl Extreme {
    fn add(&mut self, k: usize, contrib: f64, level: u32) {
        if contrib.is_finite() {
            self.finite += contrib;
        } else {
            self.infinite += 1;
        }
        if level > self.top[0].0 {
            self.top[1] = self.top[0];
            self.top[0] = (level, k);
        } else if level > self.top[1].0 {
            self.top[1] = (level, k);
        }
    }

    /// Sum and level of every term except `k`; `None` if unbounded.
    fn without(&self, k: usize, contrib: f64) -> Option<(f64, u32)> {
        let own_inf = usize::from(!contrib.is_finite());
        if self.infinite > own_inf {
            return None;
        }
        let sum = if contrib.is_finite() {
            self.finite - contrib
        } else {
            self.finite
        };
        let level = if self.top[0].1 == k && self.top[0].0 > 0 {
            self.top[1].0
        } else {
            self.top[0].0
        };
        Some((sum, level))
    }
}

impl Reluplex {
    /// Derives bounds from the row of `basic` and applies them.
    pub fn tighten_row(&mut self, basic: VarId) -> Result<Vec<DerivedBound>, Conflict> {
        let Some(row) = self.state.row(basic) else {
            return Ok(Vec::new());
        };
        let mut terms: Vec<(VarId, f64)> = Vec::with_capacity(row.len() + 1);
        terms.push((basic, -1.0));
        terms.extend(row.iter());

        let s = &self.state;
        // (min contribution, level, max contribution, level) per term
        let contribs: Vec<(f64, u32, f64, u32)> = terms
            .iter()
            .map(|&(v, a)| {
                let lo = (a * s.lower(v), s.lower_level(v));
                let hi = (a * s.upper(v), s.upper_level(v));
                if a > 0.0 {
                    (lo.0, lo.1, hi.0, hi.1)
                } else {
                    (hi.0, hi.1, lo.0, lo.1)
                }
            })
            .collect();
        let mut min = Extreme::default();
        let mut max = Extreme::default();
        for (k, &(mn, ml, mx, xl)) in contribs.iter().enumerate() {
            min.add(k, mn, ml);
            max.add(k, mx, xl);
        }

        let all = self.config.derive_nonbasic_bounds;
        let mut candidates = Vec::new();
        for (k, &(v, a)) in terms.iter().enumerate() {
            if k > 0 && (!all || a.abs() < MIN_DERIVATION_COEFF) {
                continue;
            }
            let (mn, _, mx, _) = contribs[k];
            // a·x = −Σ_{others}; others ∈ [rest_min, rest_max]
            let rest_min = min.without(k, mn);
            let rest_max = max.without(k, mx);
            let (lower, upper) = if a > 0.0 {
                (
                    rest_max.map(|(s, l)| (-s / a, l)),
                    rest_min.map(|(s, l)| (-s / a, l)),
                )
            } else {
                (
                    rest_min.map(|(s, l)| (-s / a, l)),
                    rest_max.map(|(s, l)| (-s / a, l)),
                )
            };
            if let Some((value, level)) = lower {
                candidates.push((v, BoundKind::Lower, value, level));
            }
            if let Some((value, level)) = upper {
                candidates.push((v, BoundKind::Upper, value, level));
            }
        }

        let mut derived = Vec::new();
        for (v, kind, value, level) in candidates {
            if let Some(d) = self.tighten_bound(v, kind, value, level, Some(basic))? {
                derived.push(d);
            }
        }
        Ok(derived)
    }

    /// Applies a bound if it is strictly tighter. Bounds crossing the
    /// opposite bound by less than the conflict tolerance are snapped onto it.
    pub(crate) fn tighten_bound(
        &mut self,
        var: VarId,
        kind: BoundKind,
        value: f64,
        level: u32,
        source_row: Option<VarId>,
    ) -> Result<Option<DerivedBound>, Conflict> {
        if value.is_nan() {
            return Ok(None);
        }
        let s = &self.state;
        let (lo, hi) = (s.lower(var), s.upper(var));
        let (mut value, mut level) = (value, level);
        let previous = match kind {
            BoundKind::Lower => {
                if !(lo == f64::NEG_INFINITY || value > lo + scaled(TIGHTENING_MARGIN, lo)) {
                    return Ok(None);
                }
                if value > hi {
                    let cause = level.max(s.upper_level(var));
                    if value > hi + scaled(CONFLICT_TOLERANCE, hi) {
                        return Err(Conflict {
                            var,
                            lower: value,
                            upper: hi,
                            depth_of_cause: cause,
                        });
                    }
                    value = hi;
                    level = cause;
                }
                lo
            }
            BoundKind::Upper => {
                if !(hi == f64::INFINITY || value < hi - scaled(TIGHTENING_MARGIN, hi)) {
                    return Ok(None);
                }
                if value < lo {
                    let cause = level.max(s.lower_level(var));
                    if value < lo - scaled(CONFLICT_TOLERANCE, lo) {
                        return Err(Conflict {
                            var,
                            lower: lo,
                            upper: value,
                            depth_of_cause: cause,
                        });
                    }
                    value = lo;
                    level = cause;
                }
                hi
            }
        };
        if value.is_infinite() {
            return Ok(None);
        }
        match kind {
            BoundKind::Lower => self.state.set_lower(var, value, level),
            BoundKind::Upper => self.state.set_upper(var, value, level),
        }
        let d = DerivedBound {
            var,
            kind,
            value,
            previous,
            source_row,
            depth: self.depth() as u32,
            level,
        };
        self.log.push(d);
        self.stats.derived_bounds += 1;
        if self.config.audit_bounds {
            let path: Vec<(usize, Phase)> = self
                .stack
                .frames
                .iter()
                .map(|f| (f.pair, f.current_phase()))
                .collect();
            self.audit.push(AuditRecord {
                bound: d,
                decisions: path[..level as usize].to_vec(),
                path,
            });
        }
        Ok(Some(d))
    }

    /// Fixes the phase of undecided pairs whose bounds already decide it.
    pub fn eliminate_relu_phases(&mut self) -> Result<Vec<(usize, Phase)>, Conflict> {
        let mut fixed = Vec::new();
        for p in 0..self.pairs.len() {
            if self.pairs[p].phase != Phase::Undecided {
                continue;
            }
            let (b, f) = (self.pairs[p].backward, self.pairs[p].forward);
            let s = &self.state;
            let decision = if s.lower(b) >= 0.0 {
                Some((Phase::Active, s.lower_level(b)))
            } else if s.lower(f) > RELU_TOLERANCE {
                // A derived lower bound of 1e-12 on f is usually roundoff.
                Some((Phase::Active, s.lower_level(f)))
            } else if s.upper(b) <= 0.0 {
                Some((Phase::Inactive, s.upper_level(b)))
            } else if s.upper(f) <= 0.0 {
                Some((Phase::Inactive, s.upper_level(f)))
            } else {
                None
            };
            if let Some((phase, level)) = decision {
                self.fix_phase(p, phase, level)?;
                self.stats.phase_eliminations += 1;
                fixed.push((p, phase));
            }
        }
        Ok(fixed)
    }

    pub fn tighten_pass(&mut self, scope: TightenScope) -> Result<PassOutcome, Conflict> {
        let mut out = PassOutcome::default();
        match scope {
            TightenScope::EnteringOnly(v) => {
                if self.state.is_basic(v) {
                    out.derived = self.tighten_row(v)?.len();
                }
                out.eliminated = self.eliminate_relu_phases()?.len();
                out.sweeps = 1;
            }
            TightenScope::FullTableau => {
                for _ in 0..self.config.fixpoint_sweeps.max(1) {
                    out.sweeps += 1;
                    let basics: Vec<VarId> = self.state.basic_vars().collect();
                    let mut derived = 0;
                    for b in basics {
                        derived += self.tighten_row(b)?.len();
                    }
                    let eliminated = self.eliminate_relu_phases()?.len();
                    out.derived += derived;
                    out.eliminated += eliminated;
                    if derived + eliminated == 0 {
                        break;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Shrinks the backward range of every undecided pair by `epsilon` on
    /// each finite side. Solutions of the shrunk problem solve the original
    /// one; refutations do not carry over.
    pub fn under_approximate(&mut self, epsilon: f64) {
        assert!(epsilon > 0.0, "under-approximation needs a positive epsilon");
        self.under_approximated = true;
        for p in 0..self.pairs.len() {
            if self.pairs[p].phase != Phase::Undecided {
                continue;
            }
            let (b, f) = (self.pairs[p].backward, self.pairs[p].forward);
            let (lo, hi) = (self.state.lower(b), self.state.upper(b));
            if (-epsilon..0.0).contains(&lo) {
                self.state.set_lower(b, 0.0, 0);
                self.pairs[p].phase = Phase::Active;
                let _ = self.fix_phase(p, Phase::Active, 0);
                if hi.is_finite() && hi - epsilon > 0.0 {
                    self.state.set_upper(b, hi - epsilon, 0);
                }
                continue;
            }
            let fhi = self.state.upper(f);
            if fhi > 0.0 && fhi <= epsilon {
                self.state.set_upper(f, 0.0, 0);
                let _ = self.fix_phase(p, Phase::Inactive, 0);
                continue;
            }
            let width = hi - lo;
            if width > 2.0 * epsilon {
                if lo.is_finite() {
                    self.state.set_lower(b, lo + epsilon, 0);
                }
                if hi.is_finite() {
                    self.state.set_upper(b, hi - epsilon, 0);
                }
            }
        }
    }
}
