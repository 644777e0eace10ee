//! Property files: an input box, linear constraints over inputs and outputs,
//! and optional disjunctive groups.
//!
//! ```json
//! {
//!   "name": "example",
//!   "inputs": [ { "lower": 0, "upper": 1, "name": "rho", "unit": "ft" } ],
//!   "constraints": [ { "terms": [ { "var": "y0", "coeff": 1 } ], "relation": ">=", "constant": 0.5 } ],
//!   "disjuncts": [ [ ... ], [ ... ] ]
//! }
//! ```
//!
//! `x<i>` names network input `i` (after normalization), `y<j>` output `j`.
//! An omitted bound is unbounded. When `disjuncts` is non-empty the property
//! holds for some input iff `constraints` plus at least one group holds.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Network;
use crate::simplex::Relation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum VarRef {
    Input(usize),
    Output(usize),
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarRef::Input(i) => write!(f, "x{i}"),
            VarRef::Output(j) => write!(f, "y{j}"),
        }
    }
}

impl FromStr for VarRef {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || QueryError::BadVar(s.to_string());
        let (kind, index) = s.split_at(s.char_indices().nth(1).map_or(s.len(), |(i, _)| i));
        let index: usize = index.parse().map_err(|_| bad())?;
        match kind {
            "x" => Ok(VarRef::Input(index)),
            "y" => Ok(VarRef::Output(index)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for VarRef {
    type Error = QueryError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<VarRef> for String {
    fn from(v: VarRef) -> String {
        v.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub var: VarRef,
    pub coeff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub terms: Vec<Term>,
    pub relation: Relation,
    pub constant: f64,
}

impl Constraint {
    pub fn new(terms: &[(VarRef, f64)], relation: Relation, constant: f64) -> Self {
        Self {
            terms: terms
                .iter()
                .map(|&(var, coeff)| Term { var, coeff })
                .collect(),
            relation,
            constant,
        }
    }

    pub fn holds(&self, inputs: &[f64], outputs: &[f64], tolerance: f64) -> bool {
        let lhs: f64 = self
            .terms
            .iter()
            .map(|t| {
                t.coeff
                    * match t.var {
                        VarRef::Input(i) => inputs[i],
                        VarRef::Output(j) => outputs[j],
                    }
            })
            .sum();
        self.relation.holds(lhs, self.constant, tolerance)
    }
}

/// Raw value `r` feeds the network as `(r − offset) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
}

impl InputRange {
    pub fn new(lower: f64, upper: f64) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            lower: finite(lower),
            upper: finite(upper),
            name: None,
            unit: None,
            normalization: None,
        }
    }

    /// Raw-unit range.
    pub fn raw(&self) -> (f64, f64) {
        (
            self.lower.unwrap_or(f64::NEG_INFINITY),
            self.upper.unwrap_or(f64::INFINITY),
        )
    }

    /// Range seen by the network.
    pub fn normalized(&self) -> (f64, f64) {
        let (lo, hi) = self.raw();
        match self.normalization {
            None => (lo, hi),
            Some(n) => {
                let (a, b) = ((lo - n.offset) / n.scale, (hi - n.offset) / n.scale);
                if n.scale > 0.0 {
                    (a, b)
                } else {
                    (b, a)
                }
            }
        }
    }

    pub fn to_raw(&self, network_value: f64) -> f64 {
        match self.normalization {
            None => network_value,
            Some(n) => network_value * n.scale + n.offset,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub inputs: Vec<InputRange>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<Constraint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disjuncts: Vec<Vec<Constraint>>,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("`{0}` is not a variable name (expected x<i> or y<j>)")]
    BadVar(String),
    #[error("property has {found} input ranges, network has {expected} inputs")]
    InputCount { expected: usize, found: usize },
    #[error("{var} does not exist in a network with {inputs} inputs and {outputs} outputs")]
    UnknownVar {
        var: VarRef,
        inputs: usize,
        outputs: usize,
    },
    #[error("input {index}: empty range [{lower}, {upper}]")]
    EmptyRange { index: usize, lower: f64, upper: f64 },
    #[error("input {index}: normalization scale must be finite and nonzero")]
    BadScale { index: usize },
    #[error("constraint has no nonzero coefficient")]
    EmptyConstraint,
    #[error("non-finite number in a constraint")]
    NonFinite,
    #[error("invalid property file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Query {
    pub fn boxed(ranges: &[(f64, f64)]) -> Self {
        Self {
            inputs: ranges.iter().map(|&(l, h)| InputRange::new(l, h)).collect(),
            ..Self::default()
        }
    }

    pub fn with_constraint(mut self, c: Constraint) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn with_disjunct(mut self, group: Vec<Constraint>) -> Self {
        self.disjuncts.push(group);
        self
    }

    /// Input box as seen by the network.
    pub fn input_box(&self) -> Vec<(f64, f64)> {
        self.inputs.iter().map(InputRange::normalized).collect()
    }

    /// One conjunctive constraint list per disjunct (just the common list
    /// when there are no disjuncts).
    pub fn sub_queries(&self) -> Vec<Vec<Constraint>> {
        if self.disjuncts.is_empty() {
            return vec![self.constraints.clone()];
        }
        self.disjuncts
            .iter()
            .map(|g| {
                let mut all = self.constraints.clone();
                all.extend(g.iter().cloned());
                all
            })
            .collect()
    }

    pub fn validate(&self, net: &Network) -> Result<(), QueryError> {
        let (ni, no) = (net.num_inputs(), net.num_outputs());
        if self.inputs.len() != ni {
            return Err(QueryError::InputCount {
                expected: ni,
                found: self.inputs.len(),
            });
        }
        for (index, r) in self.inputs.iter().enumerate() {
            if let Some(n) = r.normalization {
                if !(n.scale.is_finite() && n.scale != 0.0 && n.offset.is_finite()) {
                    return Err(QueryError::BadScale { index });
                }
            }
            let (lower, upper) = r.raw();
            if lower.is_nan() || upper.is_nan() || lower > upper {
                return Err(QueryError::EmptyRange {
                    index,
                    lower,
                    upper,
                });
            }
        }
        for c in self.constraints.iter().chain(self.disjuncts.iter().flatten()) {
            if !c.constant.is_finite() || c.terms.iter().any(|t| !t.coeff.is_finite()) {
                return Err(QueryError::NonFinite);
            }
            let mut merged: Vec<(VarRef, f64)> = Vec::new();
            for t in &c.terms {
                match merged.iter_mut().find(|(v, _)| *v == t.var) {
                    Some((_, acc)) => *acc += t.coeff,
                    None => merged.push((t.var, t.coeff)),
                }
            }
            if merged.iter().all(|&(_, c)| c == 0.0) {
                return Err(QueryError::EmptyConstraint);
            }
            for t in &c.terms {
                let ok = match t.var {
                    VarRef::Input(i) => i < ni,
                    VarRef::Output(j) => j < no,
                };
                if !ok {
                    return Err(QueryError::UnknownVar {
                        var: t.var,
                        inputs: ni,
                        outputs: no,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, QueryError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("query serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, QueryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| QueryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), QueryError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| QueryError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::identity_example;

    #[test]
    fn var_names() {
        assert_eq!("x3".parse::<VarRef>().unwrap(), VarRef::Input(3));
        assert_eq!("y0".parse::<VarRef>().unwrap(), VarRef::Output(0));
        assert!("z1".parse::<VarRef>().is_err());
        assert!("y".parse::<VarRef>().is_err());
        assert!("".parse::<VarRef>().is_err());
    }

    #[test]
    fn json_round_trip() {
        let q = Query::boxed(&[(0.0, 1.0)]).with_constraint(Constraint::new(
            &[(VarRef::Output(0), 1.0)],
            Relation::Ge,
            0.5,
        ));
        let back = Query::from_json(&q.to_json()).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn missing_bounds_are_unbounded() {
        let q = Query::from_json(r#"{"inputs":[{"lower":-1}]}"#).unwrap();
        assert_eq!(q.input_box(), vec![(-1.0, f64::INFINITY)]);
    }

    #[test]
    fn validation() {
        let net = identity_example();
        assert!(Query::boxed(&[(0.0, 1.0)]).validate(&net).is_ok());
        assert!(matches!(
            Query::boxed(&[(0.0, 1.0), (0.0, 1.0)]).validate(&net),
            Err(QueryError::InputCount { .. })
        ));
        assert!(matches!(
            Query::boxed(&[(2.0, 1.0)]).validate(&net),
            Err(QueryError::EmptyRange { .. })
        ));
        let q = Query::boxed(&[(0.0, 1.0)]).with_constraint(Constraint::new(
            &[(VarRef::Output(4), 1.0)],
            Relation::Le,
            0.0,
        ));
        assert!(matches!(
            q.validate(&net),
            Err(QueryError::UnknownVar { .. })
        ));
    }

    #[test]
    fn normalization_maps_box() {
        let mut r = InputRange::new(1000.0, 3000.0);
        r.normalization = Some(Normalization {
            offset: 2000.0,
            scale: -1000.0,
        });
        assert_eq!(r.normalized(), (-1.0, 1.0));
        assert_eq!(r.to_raw(-1.0), 3000.0);
    }

    #[test]
    fn disjuncts_expand() {
        let c = |k: f64| Constraint::new(&[(VarRef::Output(0), 1.0)], Relation::Le, k);
        let q = Query::boxed(&[(0.0, 1.0)])
            .with_constraint(c(1.0))
            .with_disjunct(vec![c(2.0)])
            .with_disjunct(vec![c(3.0)]);
        let subs = q.sub_queries();
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[1], vec![c(1.0), c(3.0)]);
    }
}
