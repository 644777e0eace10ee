//! Network + property → solver problem, and solver assignment → witness.
//!
//! Variables are numbered inputs first, then per layer either a
//! `(backward, forward)` pair per ReLU node or one variable per linear
//! output node. Each non-input node gets an equality atom
//! `node − Σ w·prev = bias`, whose auxiliary variables follow the node
//! variables in order. Single-variable constraints become bounds; the rest
//! become additional atoms.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{Budget, EngineError, Reluplex, SolveStats, SolverConfig, Verdict};
use crate::network::Network;
use crate::numerics::{scaled, WITNESS_TOLERANCE};
use crate::property::{Constraint, Query, QueryError, VarRef};
use crate::simplex::{LinearAtom, Relation, SimplexState, VarId};
use crate::smt::TraceEvent;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VarMap {
    pub inputs: Vec<VarId>,
    /// `(backward, forward)` per node of every ReLU layer.
    pub relu_layers: Vec<Vec<(VarId, VarId)>>,
    pub outputs: Vec<VarId>,
    /// Auxiliary variable of every node equation, per non-input layer.
    pub node_aux: Vec<Vec<VarId>>,
    /// Auxiliary variables of multi-variable constraints.
    pub constraint_aux: Vec<VarId>,
}

impl VarMap {
    pub fn resolve(&self, v: VarRef) -> VarId {
        match v {
            VarRef::Input(i) => self.inputs[i],
            VarRef::Output(j) => self.outputs[j],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    /// Node variables (auxiliaries excluded).
    pub num_vars: usize,
    pub atoms: Vec<LinearAtom>,
    /// Bounds on node variables.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub relu_pairs: Vec<(VarId, VarId)>,
    pub var_map: VarMap,
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl Encoding {
    pub fn to_state(&self) -> SimplexState {
        let mut state =
            SimplexState::from_atoms(self.num_vars, &self.atoms).expect("atoms are non-empty");
        for i in 0..self.num_vars {
            state.set_bounds(VarId(i), self.lower[i], self.upper[i]);
        }
        state
    }

    pub fn solver(&self, config: SolverConfig) -> Result<Reluplex, EngineError> {
        Reluplex::new(self.to_state(), &self.relu_pairs, config)
    }

    fn intersect(&mut self, v: VarId, lo: f64, hi: f64) {
        self.lower[v.0] = self.lower[v.0].max(lo);
        self.upper[v.0] = self.upper[v.0].min(hi);
    }
}

/// Encodes the network, the input box and one conjunction of constraints.
pub fn encode(
    net: &Network,
    input_box: &[(f64, f64)],
    constraints: &[Constraint],
) -> Encoding {
    assert_eq!(input_box.len(), net.num_inputs(), "input dimension");
    let mut next = 0usize;
    let mut fresh = || {
        next += 1;
        VarId(next - 1)
    };
    let mut map = VarMap {
        inputs: (0..net.num_inputs()).map(|_| fresh()).collect(),
        ..VarMap::default()
    };
    // node variables feeding each layer equation: (backward-or-linear var)
    let mut node_vars: Vec<Vec<VarId>> = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        if net.is_relu_layer(i) {
            let pairs: Vec<(VarId, VarId)> = (0..layer.size()).map(|_| (fresh(), fresh())).collect();
            node_vars.push(pairs.iter().map(|p| p.0).collect());
            if i + 1 == net.layers().len() {
                map.outputs = pairs.iter().map(|p| p.1).collect();
            }
            map.relu_layers.push(pairs);
        } else {
            let outs: Vec<VarId> = (0..layer.size()).map(|_| fresh()).collect();
            node_vars.push(outs.clone());
            map.outputs = outs;
        }
    }
    let num_vars = next;

    let mut atoms = Vec::new();
    let mut prev: Vec<VarId> = map.inputs.clone();
    let mut relu_idx = 0;
    for (i, layer) in net.layers().iter().enumerate() {
        for (k, node) in node_vars[i].iter().enumerate() {
            let mut terms = vec![(*node, 1.0)];
            for (j, &w) in layer.weights[k].iter().enumerate() {
                if w != 0.0 {
                    terms.push((prev[j], -w));
                }
            }
            atoms.push(LinearAtom::eq(terms, layer.biases[k]));
        }
        prev = if net.is_relu_layer(i) {
            let fwd = map.relu_layers[relu_idx].iter().map(|p| p.1).collect();
            relu_idx += 1;
            fwd
        } else {
            node_vars[i].clone()
        };
    }
    let mut aux = num_vars;
    for layer_nodes in &node_vars {
        map.node_aux.push(
            layer_nodes
                .iter()
                .map(|_| {
                    aux += 1;
                    VarId(aux - 1)
                })
                .collect(),
        );
    }

    let relu_pairs = map.relu_layers.iter().flatten().copied().collect();
    let mut enc = Encoding {
        num_vars,
        atoms,
        lower: vec![f64::NEG_INFINITY; num_vars],
        upper: vec![f64::INFINITY; num_vars],
        relu_pairs,
        var_map: map,
    };
    for (i, &(lo, hi)) in input_box.iter().enumerate() {
        let v = enc.var_map.inputs[i];
        enc.intersect(v, lo, hi);
    }
    for c in constraints {
        let terms: Vec<(VarId, f64)> = c
            .terms
            .iter()
            .filter(|t| t.coeff != 0.0)
            .map(|t| (enc.var_map.resolve(t.var), t.coeff))
            .collect();
        let distinct = {
            let mut vs: Vec<VarId> = terms.iter().map(|t| t.0).collect();
            vs.sort();
            vs.dedup();
            vs
        };
        if distinct.len() == 1 {
            let v = distinct[0];
            let coeff: f64 = terms.iter().map(|t| t.1).sum();
            if coeff != 0.0 {
                let bound = c.constant / coeff;
                let (lo, hi) = match (c.relation, coeff > 0.0) {
                    (Relation::Eq, _) => (bound, bound),
                    (Relation::Le, true) | (Relation::Ge, false) => (f64::NEG_INFINITY, bound),
                    (Relation::Ge, true) | (Relation::Le, false) => (bound, f64::INFINITY),
                };
                enc.intersect(v, lo, hi);
                continue;
            }
        }
        enc.atoms
            .push(LinearAtom::new(terms, c.relation, c.constant));
        enc.var_map.constraint_aux.push(VarId(aux));
        aux += 1;
    }
    enc
}

/// One encoding per disjunct of the query.
pub fn encode_query(net: &Network, query: &Query) -> Result<Vec<Encoding>, QueryError> {
    query.validate(net)?;
    let input_box = query.input_box();
    Ok(query
        .sub_queries()
        .iter()
        .map(|cs| encode(net, &input_box, cs))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    /// Network inputs (after normalization).
    pub inputs: Vec<f64>,
    /// Inputs in the property's raw units, when they differ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_inputs: Option<Vec<f64>>,
    pub outputs: Vec<f64>,
    /// `(backward, forward)` of every ReLU node, per layer.
    pub hidden: Vec<Vec<(f64, f64)>>,
    /// Forward propagation of `inputs` reproduces `outputs` within 1e-6.
    pub verified: bool,
    pub max_replay_error: f64,
}

/// Reads a witness out of a solver assignment and replays it through the
/// network.
pub fn decode_witness(net: &Network, map: &VarMap, assignment: &[f64]) -> Witness {
    let get = |v: &VarId| assignment[v.0];
    let inputs: Vec<f64> = map.inputs.iter().map(get).collect();
    let outputs: Vec<f64> = map.outputs.iter().map(get).collect();
    let hidden = map
        .relu_layers
        .iter()
        .map(|l| l.iter().map(|(b, f)| (get(b), get(f))).collect())
        .collect();
    let replay = net.forward(&inputs);
    let mut verified = true;
    let mut max_err: f64 = 0.0;
    for (r, o) in replay.iter().zip(&outputs) {
        let err = (r - o).abs();
        max_err = max_err.max(err);
        if err > scaled(WITNESS_TOLERANCE, *r) {
            verified = false;
        }
    }
    if !verified {
        log::warn!("witness replay differs from solver outputs by {max_err:e}");
    }
    Witness {
        inputs,
        raw_inputs: None,
        outputs,
        hidden,
        verified,
        max_replay_error: max_err,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum QueryVerdict {
    Sat,
    Unsat,
    Timeout,
    Unknown,
}

impl QueryVerdict {
    pub fn from_verdict(v: &Verdict) -> Self {
        match v {
            Verdict::Sat(_) => QueryVerdict::Sat,
            Verdict::Unsat => QueryVerdict::Unsat,
            Verdict::Timeout => QueryVerdict::Timeout,
            Verdict::Unknown => QueryVerdict::Unknown,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            QueryVerdict::Sat => "SAT",
            QueryVerdict::Unsat => "UNSAT",
            QueryVerdict::Timeout => "TIMEOUT",
            QueryVerdict::Unknown => "UNKNOWN",
        }
    }

    /// Any SAT wins; otherwise any TIMEOUT, then any UNKNOWN; UNSAT only if
    /// every part is UNSAT.
    pub fn any_sat<I: IntoIterator<Item = QueryVerdict>>(parts: I) -> QueryVerdict {
        let mut out = QueryVerdict::Unsat;
        for v in parts {
            out = match (out, v) {
                (QueryVerdict::Sat, _) | (_, QueryVerdict::Sat) => QueryVerdict::Sat,
                (QueryVerdict::Timeout, _) | (_, QueryVerdict::Timeout) => QueryVerdict::Timeout,
                (QueryVerdict::Unknown, _) | (_, QueryVerdict::Unknown) => QueryVerdict::Unknown,
                _ => QueryVerdict::Unsat,
            };
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct QueryOptions {
    pub config: SolverConfig,
    pub budget: Budget,
    /// Solve disjuncts on the rayon pool.
    pub parallel: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SubQueryResult {
    pub index: usize,
    pub verdict: QueryVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    pub stats: SolveStats,
    pub relu_pairs: usize,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
    #[serde(skip)]
    pub assignment: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct QueryOutcome {
    pub verdict: QueryVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    /// Disjunct that produced the witness.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sat_disjunct: Option<usize>,
    pub results: Vec<SubQueryResult>,
}

pub fn solve_encoding(
    net: &Network,
    enc: &Encoding,
    index: usize,
    opts: &QueryOptions,
) -> Result<SubQueryResult, EngineError> {
    let mut solver = enc.solver(opts.config.clone())?;
    let res = solver.solve(opts.budget)?;
    let witness = res
        .verdict
        .assignment()
        .map(|a| decode_witness(net, &enc.var_map, a));
    Ok(SubQueryResult {
        index,
        verdict: QueryVerdict::from_verdict(&res.verdict),
        witness,
        stats: res.stats,
        relu_pairs: enc.relu_pairs.len(),
        trace: solver.trace().to_vec(),
        assignment: res.verdict.assignment().map(<[f64]>::to_vec),
    })
}

/// Solves every disjunct and combines the verdicts.
pub fn solve_query(
    net: &Network,
    query: &Query,
    opts: &QueryOptions,
) -> Result<QueryOutcome, EncodeError> {
    let encodings = encode_query(net, query)?;
    let run = |(i, enc): (usize, &Encoding)| solve_encoding(net, enc, i, opts);
    let results: Result<Vec<SubQueryResult>, EngineError> = if opts.parallel && encodings.len() > 1
    {
        encodings.par_iter().enumerate().map(run).collect()
    } else {
        encodings.iter().enumerate().map(run).collect()
    };
    let results = results?;
    let verdict = QueryVerdict::any_sat(results.iter().map(|r| r.verdict));
    let sat = results.iter().find(|r| r.verdict == QueryVerdict::Sat);
    let witness = sat.and_then(|r| r.witness.clone()).map(|mut w| {
        if query.inputs.iter().any(|r| r.normalization.is_some()) {
            w.raw_inputs = Some(
                w.inputs
                    .iter()
                    .zip(&query.inputs)
                    .map(|(&v, r)| r.to_raw(v))
                    .collect(),
            );
        }
        w
    });
    Ok(QueryOutcome {
        verdict,
        witness,
        sat_disjunct: sat.map(|r| r.index),
        results,
    })
}
