//! 3-SAT to ReLU-network reduction, used to generate hard test instances.
//!
//! Inputs are `x₁ … x_k` boxed to `[0, 1]` plus a constant input `c` pinned
//! to `[1, 1]`. The first hidden layer holds one clause node
//! `t_i = ReLU(c − Σ q)` per clause (a negative literal contributes
//! `q = c − x`), the two halves `s_j = ReLU(x_j)` and `r_j = ReLU(2x_j − c)`
//! of a discreteness gadget per variable, and `p = ReLU(c)`. The second
//! hidden layer holds `y_i = ReLU(p − t_i)` and `g_j = ReLU(s_j − r_j)`,
//! where `g_j = min(x_j, 1 − x_j)`. Outputs are `y = Σ y_i` and every `g_j`,
//! constrained to `y ∈ [n(1 − ε), n]` and `g_j ∈ [0, ε]`.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::network::{Layer, Network};
use crate::property::{Constraint, Query, VarRef};
use crate::simplex::Relation;

/// Largest variable count accepted by [`brute_force_sat`].
pub const BRUTE_FORCE_LIMIT: usize = 24;

/// Slack allowed when decoding solver witnesses.
pub const DECODE_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CnfFormula {
    pub num_vars: usize,
    /// Signed 1-based variable indices; negative means negated.
    pub clauses: Vec<[i32; 3]>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReductionError {
    #[error("line {line}: {message}")]
    Dimacs { line: usize, message: String },
    #[error("clause {clause}: literal {literal} outside 1..={num_vars}")]
    Literal {
        clause: usize,
        literal: i32,
        num_vars: usize,
    },
    #[error("epsilon must lie in (0, {bound}) for {clauses} clauses, got {epsilon}")]
    Epsilon {
        epsilon: f64,
        bound: f64,
        clauses: usize,
    },
    #[error("formula has no clauses")]
    NoClauses,
    #[error("brute force is limited to {BRUTE_FORCE_LIMIT} variables, formula has {0}")]
    TooManyVars(usize),
    #[error("input {index} = {value} lies strictly inside ({epsilon}, {})", 1.0 - epsilon)]
    NotDiscrete {
        index: usize,
        value: f64,
        epsilon: f64,
    },
    #[error("decoded assignment violates clause {0}")]
    ClauseViolated(usize),
}

impl CnfFormula {
    pub fn new(num_vars: usize, clauses: Vec<[i32; 3]>) -> Result<Self, ReductionError> {
        for (i, clause) in clauses.iter().enumerate() {
            for &lit in clause {
                if lit == 0 || lit.unsigned_abs() as usize > num_vars {
                    return Err(ReductionError::Literal {
                        clause: i,
                        literal: lit,
                        num_vars,
                    });
                }
            }
        }
        Ok(Self { num_vars, clauses })
    }

    /// Reads DIMACS CNF. Clauses with one or two literals are padded by
    /// repeating their last literal.
    pub fn parse_dimacs(text: &str) -> Result<Self, ReductionError> {
        let err = |line: usize, message: String| ReductionError::Dimacs { line, message };
        let mut header: Option<(usize, usize)> = None;
        let mut clauses = Vec::new();
        let mut current: Vec<i32> = Vec::new();
        let mut last_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            last_line = line;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('c') {
                continue;
            }
            if trimmed.starts_with('%') {
                break;
            }
            if trimmed.starts_with('p') {
                if header.is_some() {
                    return Err(err(line, "duplicate problem line".into()));
                }
                let parts: Vec<&str> = trimmed.split_whitespace().collect();
                if parts.len() != 4 || parts[1] != "cnf" {
                    return Err(err(line, "expected `p cnf <vars> <clauses>`".into()));
                }
                let vars = parts[2]
                    .parse()
                    .map_err(|_| err(line, format!("bad variable count `{}`", parts[2])))?;
                let count = parts[3]
                    .parse()
                    .map_err(|_| err(line, format!("bad clause count `{}`", parts[3])))?;
                header = Some((vars, count));
                continue;
            }
            let Some((vars, _)) = header else {
                return Err(err(line, "clause before the problem line".into()));
            };
            for tok in trimmed.split_whitespace() {
                let lit: i32 = tok
                    .parse()
                    .map_err(|_| err(line, format!("bad literal `{tok}`")))?;
                if lit == 0 {
                    clauses.push(pad_clause(&current).map_err(|m| err(line, m))?);
                    current.clear();
                    continue;
                }
                if lit.unsigned_abs() as usize > vars {
                    return Err(err(line, format!("literal {lit} exceeds {vars} variables")));
                }
                current.push(lit);
            }
        }
        let Some((vars, count)) = header else {
            return Err(err(last_line, "missing problem line".into()));
        };
        if !current.is_empty() {
            clauses.push(pad_clause(&current).map_err(|m| err(last_line, m))?);
        }
        if clauses.len() != count {
            return Err(err(
                last_line,
                format!("header declares {count} clauses, found {}", clauses.len()),
            ));
        }
        Self::new(vars, clauses)
    }

    pub fn to_dimacs(&self) -> String {
        let mut out = format!("p cnf {} {}\n", self.num_vars, self.clauses.len());
        for c in &self.clauses {
            let _ = writeln!(out, "{} {} {} 0", c[0], c[1], c[2]);
        }
        out
    }

    pub fn satisfied_by(&self, assignment: &[bool]) -> bool {
        self.first_violated(assignment).is_none()
    }

    fn first_violated(&self, assignment: &[bool]) -> Option<usize> {
        self.clauses.iter().position(|c| {
            !c.iter()
                .any(|&lit| assignment[lit.unsigned_abs() as usize - 1] == (lit > 0))
        })
    }

    /// Largest ε accepted by [`reduce`] is strictly below this.
    pub fn epsilon_bound(&self) -> f64 {
        1.0 / (self.clauses.len() as f64 + 3.0)
    }

    pub fn default_epsilon(&self) -> f64 {
        0.01f64.min(1.0 / (self.clauses.len() as f64 + 4.0))
    }
}

fn pad_clause(lits: &[i32]) -> Result<[i32; 3], String> {
    match *lits {
        [] => Err("empty clause".into()),
        [a] => Ok([a, a, a]),
        [a, b] => Ok([a, b, b]),
        [a, b, c] => Ok([a, b, c]),
        _ => Err(format!("clause has {} literals, at most 3 allowed", lits.len())),
    }
}

/// Exhaustive search; returns a satisfying assignment if one exists.
pub fn brute_force_sat(formula: &CnfFormula) -> Result<Option<Vec<bool>>, ReductionError> {
    let k = formula.num_vars;
    if k > BRUTE_FORCE_LIMIT {
        return Err(ReductionError::TooManyVars(k));
    }
    let mut assignment = vec![false; k];
    for bits in 0u32..(1u32 << k) {
        for (j, a) in assignment.iter_mut().enumerate() {
            *a = bits >> j & 1 == 1;
        }
        if formula.satisfied_by(&assignment) {
            return Ok(Some(assignment));
        }
    }
    Ok(None)
}

/// Builds the network and property whose satisfiability matches the
/// formula's. Input order is `x₁ … x_k, c`; output order is `y, g₁ … g_k`.
pub fn reduce(formula: &CnfFormula, epsilon: f64) -> Result<(Network, Query), ReductionError> {
    let n = formula.clauses.len();
    if n == 0 {
        return Err(ReductionError::NoClauses);
    }
    let bound = formula.epsilon_bound();
    if !(epsilon > 0.0 && epsilon < bound) {
        return Err(ReductionError::Epsilon {
            epsilon,
            bound,
            clauses: n,
        });
    }
    let k = formula.num_vars;
    let c = k;
    let inputs = k + 1;

    // Hidden layer 1: t_i (n), s_j (k), r_j (k), p.
    let mut w1 = Vec::with_capacity(n + 2 * k + 1);
    for clause in &formula.clauses {
        let mut row = vec![0.0; inputs];
        row[c] = 1.0;
        for &lit in clause {
            let j = lit.unsigned_abs() as usize - 1;
            if lit > 0 {
                row[j] -= 1.0;
            } else {
                row[c] -= 1.0;
                row[j] += 1.0;
            }
        }
        w1.push(row);
    }
    for j in 0..k {
        let mut row = vec![0.0; inputs];
        row[j] = 1.0;
        w1.push(row);
    }
    for j in 0..k {
        let mut row = vec![0.0; inputs];
        row[j] = 2.0;
        row[c] = -1.0;
        w1.push(row);
    }
    let mut p_row = vec![0.0; inputs];
    p_row[c] = 1.0;
    w1.push(p_row);
    let h1 = w1.len();
    let p = h1 - 1;

    // Hidden layer 2: y_i (n), g_j (k).
    let mut w2 = Vec::with_capacity(n + k);
    for i in 0..n {
        let mut row = vec![0.0; h1];
        row[p] = 1.0;
        row[i] = -1.0;
        w2.push(row);
    }
    for j in 0..k {
        let mut row = vec![0.0; h1];
        row[n + j] = 1.0;
        row[n + k + j] = -1.0;
        w2.push(row);
    }
    let h2 = w2.len();

    // Outputs: y = Σ y_i, then g_j passed through.
    let mut w3 = Vec::with_capacity(1 + k);
    let mut y_row = vec![0.0; h2];
    y_row[..n].fill(1.0);
    w3.push(y_row);
    for j in 0..k {
        let mut row = vec![0.0; h2];
        row[n + j] = 1.0;
        w3.push(row);
    }

    let layer = |weights: Vec<Vec<f64>>| Layer {
        biases: vec![0.0; weights.len()],
        weights,
    };
    let net = Network::new(
        vec![inputs, h1, h2, 1 + k],
        vec![layer(w1), layer(w2), layer(w3)],
        false,
    )
    .expect("reduction builds consistent dimensions");

    let mut ranges = vec![(0.0, 1.0); k];
    ranges.push((1.0, 1.0));
    let nf = n as f64;
    let mut query = Query::boxed(&ranges)
        .with_constraint(Constraint::new(
            &[(VarRef::Output(0), 1.0)],
            Relation::Ge,
            nf * (1.0 - epsilon),
        ))
        .with_constraint(Constraint::new(&[(VarRef::Output(0), 1.0)], Relation::Le, nf));
    for j in 0..k {
        query = query
            .with_constraint(Constraint::new(
                &[(VarRef::Output(1 + j), 1.0)],
                Relation::Ge,
                0.0,
            ))
            .with_constraint(Constraint::new(
                &[(VarRef::Output(1 + j), 1.0)],
                Relation::Le,
                epsilon,
            ));
    }
    query.name = Some(format!("3-SAT reduction, {k} vars, {n} clauses"));
    Ok((net, query))
}

/// Rounds witness inputs (`x₁ … x_k`, any trailing constant input ignored)
/// to booleans and checks the result against the formula.
pub fn decode_boolean_witness(
    formula: &CnfFormula,
    inputs: &[f64],
    epsilon: f64,
) -> Result<Vec<bool>, ReductionError> {
    let assignment = inputs[..formula.num_vars]
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value <= epsilon + DECODE_SLACK {
                Ok(false)
            } else if value >= 1.0 - epsilon - DECODE_SLACK {
                Ok(true)
            } else {
                Err(ReductionError::NotDiscrete {
                    index,
                    value,
                    epsilon,
                })
            }
        })
        .collect::<Result<Vec<bool>, _>>()?;
    match formula.first_violated(&assignment) {
        Some(i) => Err(ReductionError::ClauseViolated(i)),
        None => Ok(assignment),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{solve_query, QueryOptions, QueryVerdict};

    fn unit_pair() -> CnfFormula {
        CnfFormula::new(1, vec![[1, 1, 1], [-1, -1, -1]]).unwrap()
    }

    #[test]
    fn dimacs_round_trip_and_padding() {
        let text = "c example\np cnf 3 3\n1 -2 3 0\n-1 0\n2 3\n0\n";
        let f = CnfFormula::parse_dimacs(text).unwrap();
        assert_eq!(f.clauses, vec![[1, -2, 3], [-1, -1, -1], [2, 3, 3]]);
        assert_eq!(CnfFormula::parse_dimacs(&f.to_dimacs()).unwrap(), f);
    }

    #[test]
    fn dimacs_errors() {
        for bad in [
            "1 2 3 0\n",
            "p cnf 2 1\n1 2 3 0\n",
            "p cnf 3 1\n1 2 3 -1 0\n",
            "p cnf 3 2\n1 2 3 0\n",
            "p cnf 3 1\n0\n",
            "p cnf 3 1\n1 x 0\n",
        ] {
            assert!(CnfFormula::parse_dimacs(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn brute_force_examples() {
        let empty = CnfFormula::new(2, vec![]).unwrap();
        assert!(brute_force_sat(&empty).unwrap().is_some());
        assert_eq!(brute_force_sat(&unit_pair()).unwrap(), None);
        let f = CnfFormula::new(3, vec![[1, 2, 3], [-1, -2, 3], [-3, -3, 1]]).unwrap();
        let model = brute_force_sat(&f).unwrap().unwrap();
        assert!(f.satisfied_by(&model));
        assert!(matches!(
            brute_force_sat(&CnfFormula::new(25, vec![]).unwrap()),
            Err(ReductionError::TooManyVars(25))
        ));
    }

    #[test]
    fn epsilon_range() {
        let f = CnfFormula::new(1, vec![[1, 1, 1]; 10]).unwrap();
        assert!(reduce(&f, 0.5).is_err());
        assert!(reduce(&f, 1.0 / 13.0).is_err());
        assert!(reduce(&f, 0.0).is_err());
        assert!(reduce(&f, f.default_epsilon()).is_ok());
    }

    #[test]
    fn clause_gadget_is_exact_on_booleans() {
        let f = CnfFormula::new(3, vec![[1, -2, 3]]).unwrap();
        let (net, _) = reduce(&f, 0.01).unwrap();
        for bits in 0..8u32 {
            let a: Vec<bool> = (0..3).map(|j| bits >> j & 1 == 1).collect();
            let mut x: Vec<f64> = a.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            x.push(1.0);
            let y = net.forward(&x)[0];
            let expected = if f.satisfied_by(&a) { 1.0 } else { 0.0 };
            assert_eq!(y, expected);
        }
    }

    #[test]
    fn discreteness_gadget_characterizes_corners() {
        let f = CnfFormula::new(1, vec![[1, 1, 1]]).unwrap();
        let eps = 0.05;
        let (net, _) = reduce(&f, eps).unwrap();
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let g = net.forward(&[x, 1.0])[1];
            let near_corner = x <= eps || x >= 1.0 - eps;
            assert_eq!(g <= eps + 1e-12, near_corner, "x = {x}, g = {g}");
        }
    }

    #[test]
    fn reduced_queries_match_brute_force() {
        let opts = QueryOptions::default();
        let sat = CnfFormula::new(1, vec![[1, 1, 1]]).unwrap();
        let (net, q) = reduce(&sat, 0.01).unwrap();
        let out = solve_query(&net, &q, &opts).unwrap();
        assert_eq!(out.verdict, QueryVerdict::Sat);
        let w = out.witness.unwrap();
        assert!(w.inputs[0] >= 0.99 - 1e-6);
        assert_eq!(decode_boolean_witness(&sat, &w.inputs, 0.01).unwrap(), vec![true]);

        let (net, q) = reduce(&unit_pair(), 0.01).unwrap();
        assert_eq!(solve_query(&net, &q, &opts).unwrap().verdict, QueryVerdict::Unsat);
    }

    #[test]
    fn decode_rules() {
        let f = CnfFormula::new(2, vec![[1, 2, 2]]).unwrap();
        assert_eq!(
            decode_boolean_witness(&f, &[0.003, 0.995, 1.0], 0.01).unwrap(),
            vec![false, true]
        );
        assert!(matches!(
            decode_boolean_witness(&f, &[0.5, 1.0], 0.01),
            Err(ReductionError::NotDiscrete { index: 0, .. })
        ));
        assert_eq!(
            decode_boolean_witness(&f, &[0.0, 0.0], 0.01),
            Err(ReductionError::ClauseViolated(0))
        );
    }
}
