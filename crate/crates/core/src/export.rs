//! Encodings for external solvers: SMT-LIB 2 (QF_LRA, one `ite` per ReLU)
//! and CPLEX LP with a big-M mixed-integer encoding of each ReLU.
//!
//! Variable names: inputs `x<i>`, hidden ReLU nodes `b<l>_<j>` (backward)
//! and `f<l>_<j>` (forward) for hidden layer `l ≥ 1`, outputs `y<j>` (with
//! backward `yb<j>` when the output layer applies ReLU). The big-M booleans
//! of a ReLU whose forward variable is `v` are `on_<v>` and `off_<v>`.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::network::Network;
use crate::property::{Constraint, Query, QueryError, VarRef};
use crate::simplex::Relation;

/// Fallback big-M when the input box is unbounded and no value is given.
pub const DEFAULT_BIG_M: f64 = 1e6;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("big-M must be positive and finite, got {0}")]
    InvalidBigM(f64),
    #[error("big-M {m} does not exceed the reachable pre-activation magnitude {needed}")]
    BigMTooSmall { m: f64, needed: f64 },
    #[error("input box is unbounded, so big-M cannot be derived; pass an explicit value")]
    UnboundedInputs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BigM {
    /// Derived from interval propagation over the input box.
    Auto,
    Fixed(f64),
}

/// One ReLU in exported form.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportedRelu {
    pub backward: String,
    pub forward: String,
}

/// A linear definition `name = Σ coeff·var + constant`.
#[derive(Clone, Debug, PartialEq)]
pub struct Definition {
    pub name: String,
    pub terms: Vec<(String, f64)>,
    pub constant: f64,
}

/// Names and structure shared by both encodings.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub definitions: Vec<Definition>,
    pub relus: Vec<ExportedRelu>,
    /// Every declared variable, in declaration order.
    pub variables: Vec<String>,
}

pub fn skeleton(net: &Network) -> Skeleton {
    let inputs: Vec<String> = (0..net.num_inputs()).map(|i| format!("x{i}")).collect();
    let mut variables = inputs.clone();
    let mut definitions = Vec::new();
    let mut relus = Vec::new();
    let mut prev = inputs.clone();
    let last = net.layers().len() - 1;
    for (i, layer) in net.layers().iter().enumerate() {
        let relu = net.is_relu_layer(i);
        let mut post = Vec::with_capacity(layer.size());
        for (j, (row, &bias)) in layer.weights.iter().zip(&layer.biases).enumerate() {
            let (pre_name, post_name) = match (i == last, relu) {
                (true, true) => (format!("yb{j}"), format!("y{j}")),
                (true, false) => (format!("y{j}"), format!("y{j}")),
                (false, _) => (format!("b{}_{j}", i + 1), format!("f{}_{j}", i + 1)),
            };
            definitions.push(Definition {
                name: pre_name.clone(),
                terms: row
                    .iter()
                    .zip(&prev)
                    .filter(|(w, _)| **w != 0.0)
                    .map(|(&w, v)| (v.clone(), w))
                    .collect(),
                constant: bias,
            });
            variables.push(pre_name.clone());
            if relu {
                variables.push(post_name.clone());
                relus.push(ExportedRelu {
                    backward: pre_name,
                    forward: post_name.clone(),
                });
            }
            post.push(post_name);
        }
        prev = post;
    }
    Skeleton {
        inputs,
        outputs: prev,
        definitions,
        relus,
        variables,
    }
}

/// Decimal rendering without exponent; integral values get a trailing `.0`.
fn decimal(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn smt_num(v: f64) -> String {
    if v < 0.0 {
        format!("(- {})", decimal(-v))
    } else {
        decimal(v)
    }
}

fn smt_sum(terms: &[(String, f64)], constant: f64) -> String {
    let mut parts: Vec<String> = terms
        .iter()
        .map(|(v, c)| {
            if *c == 1.0 {
                v.clone()
            } else {
                format!("(* {} {v})", smt_num(*c))
            }
        })
        .collect();
    if constant != 0.0 || parts.is_empty() {
        parts.push(smt_num(constant));
    }
    if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        format!("(+ {})", parts.join(" "))
    }
}

fn var_name(sk: &Skeleton, v: VarRef) -> String {
    match v {
        VarRef::Input(i) => sk.inputs[i].clone(),
        VarRef::Output(j) => sk.outputs[j].clone(),
    }
}

fn named_terms(sk: &Skeleton, c: &Constraint) -> Vec<(String, f64)> {
    c.terms.iter().map(|t| (var_name(sk, t.var), t.coeff)).collect()
}

fn smt_constraint(sk: &Skeleton, c: &Constraint) -> String {
    format!(
        "({} {} {})",
        c.relation.symbol(),
        smt_sum(&named_terms(sk, c), 0.0),
        smt_num(c.constant)
    )
}

/// SMT-LIB 2 script for the query (QF_LRA). Disjuncts become one `or` of
/// `and` groups.
pub fn to_smtlib(net: &Network, query: &Query) -> Result<String, ExportError> {
    query.validate(net)?;
    let sk = skeleton(net);
    let mut out = String::new();
    if let Some(name) = &query.name {
        let _ = writeln!(out, "; {name}");
    }
    out.push_str("(set-logic QF_LRA)\n");
    for v in &sk.variables {
        let _ = writeln!(out, "(declare-fun {v} () Real)");
    }
    for (name, (lo, hi)) in sk.inputs.iter().zip(query.input_box()) {
        if lo.is_finite() {
            let _ = writeln!(out, "(assert (>= {name} {}))", smt_num(lo));
        }
        if hi.is_finite() {
            let _ = writeln!(out, "(assert (<= {name} {}))", smt_num(hi));
        }
    }
    for d in &sk.definitions {
        let _ = writeln!(out, "(assert (= {} {}))", d.name, smt_sum(&d.terms, d.constant));
    }
    for r in &sk.relus {
        let _ = writeln!(
            out,
            "(assert (= {f} (ite (>= {b} 0) {b} 0)))",
            f = r.forward,
            b = r.backward
        );
    }
    for c in &query.constraints {
        let _ = writeln!(out, "(assert {})", smt_constraint(&sk, c));
    }
    if !query.disjuncts.is_empty() {
        let groups: Vec<String> = query
            .disjuncts
            .iter()
            .map(|g| {
                let parts: Vec<String> = g.iter().map(|c| smt_constraint(&sk, c)).collect();
                format!("(and {})", parts.join(" "))
            })
            .collect();
        let _ = writeln!(out, "(assert (or {}))", groups.join(" "));
    }
    out.push_str("(check-sat)\n(get-model)\n");
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LpExport {
    /// One LP file per disjunct (a single file without disjuncts).
    pub files: Vec<String>,
    pub big_m: f64,
    /// Largest reachable |pre-activation| of a ReLU, when the box is finite.
    pub reachable: Option<f64>,
    /// Whether `big_m` was checked against `reachable`.
    pub validated: bool,
}

fn reachable_magnitude(net: &Network, input_box: &[(f64, f64)]) -> Option<f64> {
    if input_box.iter().any(|(l, h)| !l.is_finite() || !h.is_finite()) {
        return None;
    }
    let bounds = net.interval_bounds(input_box);
    let mut needed: f64 = 0.0;
    for (i, layer) in bounds.iter().enumerate() {
        if net.is_relu_layer(i) {
            for &(lo, hi) in layer {
                needed = needed.max(lo.abs()).max(hi.abs());
            }
        }
    }
    Some(needed)
}

fn lp_num(v: f64) -> String {
    decimal(v)
}

/// Renders `Σ coeff·var` for an LP row; zero coefficients are dropped.
fn lp_expr(terms: &[(String, f64)]) -> String {
    let mut out = String::new();
    for (v, c) in terms {
        if *c == 0.0 {
            continue;
        }
        let sign = if *c < 0.0 { "-" } else { "+" };
        if out.is_empty() {
            if *c < 0.0 {
                out.push_str("- ");
            }
        } else {
            let _ = write!(out, " {sign} ");
        }
        let _ = write!(out, "{} {v}", lp_num(c.abs()));
    }
    if out.is_empty() {
        // A row needs at least one variable; pin the expression to zero.
        out.push_str("0 x0");
    }
    out
}

fn lp_relation(r: Relation) -> &'static str {
    match r {
        Relation::Eq => "=",
        Relation::Le => "<=",
        Relation::Ge => ">=",
    }
}

fn lp_rhs(v: f64) -> String {
    if v < 0.0 {
        format!("-{}", lp_num(-v))
    } else {
        lp_num(v)
    }
}

/// CPLEX LP files with the big-M ReLU encoding:
/// `on + off = 1`, `f ≥ 0`, `b − f − M·off ≤ 0`, `b − f + M·off ≥ 0`,
/// `f − M·on ≤ 0`, `b − M·on ≤ 0`.
pub fn to_big_m_lp(net: &Network, query: &Query, big_m: BigM) -> Result<LpExport, ExportError> {
    query.validate(net)?;
    let input_box = query.input_box();
    let reachable = reachable_magnitude(net, &input_box);
    let (m, validated) = match (big_m, reachable) {
        (BigM::Auto, None) => return Err(ExportError::UnboundedInputs),
        (BigM::Auto, Some(r)) => ((2.0 * r).max(1.0), true),
        (BigM::Fixed(m), _) if !(m > 0.0 && m.is_finite()) => {
            return Err(ExportError::InvalidBigM(m))
        }
        (BigM::Fixed(m), Some(r)) if m <= r => {
            return Err(ExportError::BigMTooSmall { m, needed: r })
        }
        (BigM::Fixed(m), r) => (m, r.is_some()),
    };
    let sk = skeleton(net);
    let mut body = String::new();
    for d in &sk.definitions {
        let mut terms = vec![(d.name.clone(), 1.0)];
        terms.extend(d.terms.iter().map(|(v, c)| (v.clone(), -c)));
        let _ = writeln!(body, " def_{}: {} = {}", d.name, lp_expr(&terms), lp_rhs(d.constant));
    }
    for r in &sk.relus {
        let (b, f) = (&r.backward, &r.forward);
        let (on, off) = (format!("on_{f}"), format!("off_{f}"));
        let mv = lp_num(m);
        let _ = writeln!(body, " {f}_onoff: {on} + {off} = 1");
        let _ = writeln!(body, " {f}_nonneg: {f} >= 0");
        let _ = writeln!(body, " {f}_off_le: {b} - {f} - {mv} {off} <= 0");
        let _ = writeln!(body, " {f}_off_ge: {b} - {f} + {mv} {off} >= 0");
        let _ = writeln!(body, " {f}_on_f: {f} - {mv} {on} <= 0");
        let _ = writeln!(body, " {f}_on_b: {b} - {mv} {on} <= 0");
    }
    for (k, c) in query.constraints.iter().enumerate() {
        let _ = writeln!(
            body,
            " prop{k}: {} {} {}",
            lp_expr(&named_terms(&sk, c)),
            lp_relation(c.relation),
            lp_rhs(c.constant)
        );
    }
    let mut bounds = String::new();
    for (name, (lo, hi)) in sk.inputs.iter().zip(&input_box) {
        let lo = if lo.is_finite() { lp_rhs(*lo) } else { "-inf".into() };
        let hi = if hi.is_finite() { lp_rhs(*hi) } else { "+inf".into() };
        let _ = writeln!(bounds, " {lo} <= {name} <= {hi}");
    }
    for v in sk.variables.iter().skip(sk.inputs.len()) {
        let _ = writeln!(bounds, " {v} free");
    }
    let binaries: Vec<String> = sk
        .relus
        .iter()
        .flat_map(|r| [format!("on_{}", r.forward), format!("off_{}", r.forward)])
        .collect();

    let groups: Vec<&[Constraint]> = if query.disjuncts.is_empty() {
        vec![&[]]
    } else {
        query.disjuncts.iter().map(Vec::as_slice).collect()
    };
    let total = groups.len();
    let files = groups
        .iter()
        .enumerate()
        .map(|(g, extra)| {
            let mut out = String::new();
            if let Some(name) = &query.name {
                let _ = writeln!(out, "\\ {name}");
            }
            if total > 1 {
                let _ = writeln!(out, "\\ disjunct {} of {total}", g + 1);
            }
            let _ = writeln!(out, "\\ big-M = {}", lp_num(m));
            out.push_str("Minimize\n obj: 0 x0\nSubject To\n");
            out.push_str(&body);
            for (k, c) in extra.iter().enumerate() {
                let _ = writeln!(
                    out,
                    " disj{k}: {} {} {}",
                    lp_expr(&named_terms(&sk, c)),
                    lp_relation(c.relation),
                    lp_rhs(c.constant)
                );
            }
            out.push_str("Bounds\n");
            out.push_str(&bounds);
            if !binaries.is_empty() {
                let _ = writeln!(out, "Binaries\n {}", binaries.join(" "));
            }
            out.push_str("End\n");
            out
        })
        .collect();
    Ok(LpExport {
        files,
        big_m: m,
        reachable,
        validated,
    })
}
