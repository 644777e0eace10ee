//! Local and global robustness queries, and binary search on δ.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::encoding::{solve_query, EncodeError, QueryOptions, QueryVerdict, Witness};
use crate::engine::SolveStats;
use crate::network::{Network, NetworkError};
use crate::property::{Constraint, InputRange, Query, VarRef};
use crate::simplex::Relation;

/// Margin used to express `a > b` as `a ≥ b + margin`.
pub const STRICT_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelConvention {
    /// The best label has the lowest score.
    #[default]
    MinScore,
    MaxScore,
}

#[derive(Debug, Error)]
pub enum RobustnessError {
    #[error("delta must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("epsilon must be non-negative, got {0}")]
    NegativeEpsilon(f64),
    #[error("point has {found} coordinates, network has {expected} inputs")]
    PointDimension { expected: usize, found: usize },
    #[error("input domain has {found} ranges, network has {expected} inputs")]
    DomainDimension { expected: usize, found: usize },
    #[error("network has a single output; robustness needs at least two")]
    SingleOutput,
    #[error("search bracket [{lo}, {hi}] is invalid")]
    BadBracket { lo: f64, hi: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Solve(#[from] EncodeError),
}

/// Index of the winning output; ties go to the lowest index.
pub fn label(scores: &[f64], convention: LabelConvention) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        let better = match convention {
            LabelConvention::MinScore => s < scores[best],
            LabelConvention::MaxScore => s > scores[best],
        };
        if better {
            best = j;
        }
    }
    best
}

/// One query per competing output `j`: some input within `δ` of `x` (∞-norm,
/// clipped to `domain`) gives `j` a score at least as good as the label's.
/// The network is robust at `x` iff every query is UNSAT.
pub fn local_robustness_queries(
    net: &Network,
    x: &[f64],
    delta: f64,
    domain: Option<&[(f64, f64)]>,
    convention: LabelConvention,
) -> Result<Vec<(usize, Query)>, RobustnessError> {
    if !(delta > 0.0) {
        return Err(RobustnessError::NonPositiveDelta(delta));
    }
    if x.len() != net.num_inputs() {
        return Err(RobustnessError::PointDimension {
            expected: net.num_inputs(),
            found: x.len(),
        });
    }
    if net.num_outputs() < 2 {
        return Err(RobustnessError::SingleOutput);
    }
    if let Some(d) = domain {
        if d.len() != x.len() {
            return Err(RobustnessError::DomainDimension {
                expected: x.len(),
                found: d.len(),
            });
        }
    }
    let ranges: Vec<(f64, f64)> = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let (lo, hi) = (xi - delta, xi + delta);
            match domain {
                Some(d) => (lo.max(d[i].0), hi.min(d[i].1)),
                None => (lo, hi),
            }
        })
        .collect();
    let l = label(&net.forward(x), convention);
    let relation = match convention {
        LabelConvention::MinScore => Relation::Le,
        LabelConvention::MaxScore => Relation::Ge,
    };
    Ok((0..net.num_outputs())
        .filter(|&j| j != l)
        .map(|j| {
            let c = Constraint::new(
                &[(VarRef::Output(j), 1.0), (VarRef::Output(l), -1.0)],
                relation,
                0.0,
            );
            (j, Query::boxed(&ranges).with_constraint(c))
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct RobustnessOutcome {
    pub delta: f64,
    pub label: usize,
    /// SAT: an adversarial input exists within δ.
    pub verdict: QueryVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub competitor: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub stats: Vec<SolveStats>,
}

pub fn check_local_robustness(
    net: &Network,
    x: &[f64],
    delta: f64,
    domain: Option<&[(f64, f64)]>,
    convention: LabelConvention,
    opts: &QueryOptions,
) -> Result<RobustnessOutcome, RobustnessError> {
    let queries = local_robustness_queries(net, x, delta, domain, convention)?;
    let run = |(j, q): &(usize, Query)| solve_query(net, q, opts).map(|o| (*j, o));
    let outcomes: Result<Vec<_>, EncodeError> = if opts.parallel {
        queries.par_iter().map(run).collect()
    } else {
        queries.iter().map(run).collect()
    };
    let outcomes = outcomes?;
    let verdict = QueryVerdict::any_sat(outcomes.iter().map(|(_, o)| o.verdict));
    let sat = outcomes.iter().find(|(_, o)| o.verdict == QueryVerdict::Sat);
    Ok(RobustnessOutcome {
        delta,
        label: label(&net.forward(x), convention),
        verdict,
        competitor: sat.map(|(j, _)| *j),
        witness: sat.and_then(|(_, o)| o.witness.clone()),
        stats: outcomes
            .iter()
            .flat_map(|(_, o)| o.results.iter().map(|r| r.stats.clone()))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    /// δ* lies in the reported bracket.
    Bracketed,
    /// Robust at the upper end: no adversarial input up to `hi`.
    NoAdversarialUpTo,
    /// Already adversarial at the lower end.
    AdversarialAtLower,
    /// An inner solve timed out or was inconclusive.
    Aborted,
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchStep {
    pub delta: f64,
    pub verdict: QueryVerdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchOutcome {
    /// `[last UNSAT δ, first SAT δ]`.
    pub bracket: (f64, f64),
    pub status: SearchStatus,
    pub steps: Vec<SearchStep>,
}

/// Bisects on δ until the bracket is no wider than `precision`.
pub fn robustness_binary_search(
    net: &Network,
    x: &[f64],
    delta_lo: f64,
    delta_hi: f64,
    precision: f64,
    domain: Option<&[(f64, f64)]>,
    convention: LabelConvention,
    opts: &QueryOptions,
) -> Result<SearchOutcome, RobustnessError> {
    if !(delta_lo > 0.0 && delta_lo < delta_hi && precision > 0.0) {
        return Err(RobustnessError::BadBracket {
            lo: delta_lo,
            hi: delta_hi,
        });
    }
    let mut steps = Vec::new();
    let probe = |delta: f64, steps: &mut Vec<SearchStep>| {
        check_local_robustness(net, x, delta, domain, convention, opts).map(|o| {
            steps.push(SearchStep {
                delta,
                verdict: o.verdict,
            });
            o.verdict
        })
    };
    let (mut lo, mut hi) = (delta_lo, delta_hi);
    if hi - lo <= precision {
        return Ok(SearchOutcome {
            bracket: (lo, hi),
            status: SearchStatus::Bracketed,
            steps,
        });
    }
    match probe(lo, &mut steps)? {
        QueryVerdict::Unsat => {}
        QueryVerdict::Sat => {
            return Ok(SearchOutcome {
                bracket: (lo, lo),
                status: SearchStatus::AdversarialAtLower,
                steps,
            })
        }
        _ => {
            return Ok(SearchOutcome {
                bracket: (0.0, hi),
                status: SearchStatus::Aborted,
                steps,
            })
        }
    }
    match probe(hi, &mut steps)? {
        QueryVerdict::Sat => {}
        QueryVerdict::Unsat => {
            return Ok(SearchOutcome {
                bracket: (hi, hi),
                status: SearchStatus::NoAdversarialUpTo,
                steps,
            })
        }
        _ => {
            return Ok(SearchOutcome {
                bracket: (lo, hi),
                status: SearchStatus::Aborted,
                steps,
            })
        }
    }
    while hi - lo > precision {
        let mid = 0.5 * (lo + hi);
        match probe(mid, &mut steps)? {
            QueryVerdict::Unsat => lo = mid,
            QueryVerdict::Sat => hi = mid,
            _ => {
                return Ok(SearchOutcome {
                    bracket: (lo, hi),
                    status: SearchStatus::Aborted,
                    steps,
                })
            }
        }
    }
    Ok(SearchOutcome {
        bracket: (lo, hi),
        status: SearchStatus::Bracketed,
        steps,
    })
}

/// Two side-by-side copies of `net` with `‖x₁ − x₂‖∞ ≤ δ` and, per output
/// `a`, one query for `p₁ − p₂ > ε` and one for `p₂ − p₁ > ε`. The network
/// is ε-globally robust on `domain` iff every query is UNSAT.
pub fn global_robustness_queries(
    net: &Network,
    delta: f64,
    epsilon: f64,
    domain: &[(f64, f64)],
) -> Result<(Network, Vec<Query>), RobustnessError> {
    if !(delta >= 0.0) {
        return Err(RobustnessError::NonPositiveDelta(delta));
    }
    if !(epsilon >= 0.0) {
        return Err(RobustnessError::NegativeEpsilon(epsilon));
    }
    let n = net.num_inputs();
    if domain.len() != n {
        return Err(RobustnessError::DomainDimension {
            expected: n,
            found: domain.len(),
        });
    }
    let twin = net.side_by_side(net)?;
    let mut base = Query {
        inputs: domain
            .iter()
            .chain(domain)
            .map(|&(l, h)| InputRange::new(l, h))
            .collect(),
        ..Query::default()
    };
    for i in 0..n {
        let diff = [(VarRef::Input(i), 1.0), (VarRef::Input(n + i), -1.0)];
        base.constraints
            .push(Constraint::new(&diff, Relation::Le, delta));
        base.constraints
            .push(Constraint::new(&diff, Relation::Ge, -delta));
    }
    let m = net.num_outputs();
    let mut queries = Vec::with_capacity(2 * m);
    for a in 0..m {
        for sign in [1.0, -1.0] {
            let c = Constraint::new(
                &[(VarRef::Output(a), sign), (VarRef::Output(m + a), -sign)],
                Relation::Ge,
                epsilon + STRICT_MARGIN,
            );
            queries.push(base.clone().with_constraint(c));
        }
    }
    Ok((twin, queries))
}
