//! Shared test support: random instances, an eager phase-enumeration LP
//! oracle built on an independent LP solver, and evaluators for exported
//! SMT-LIB and LP files.
#![allow(dead_code)]

use std::collections::HashMap;

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reluplex::encoding::{Encoding, Witness};
use reluplex::network::{Layer, Network};
use reluplex::property::{Constraint, Query, VarRef};
use reluplex::{Phase, Relation, Reluplex};

#[derive(Clone, Debug)]
pub struct Instance {
    pub seed: u64,
    pub net: Network,
    pub query: Query,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Network with 1–3 inputs, 1–3 hidden layers, at most `max_relus` ReLUs,
/// weights in [−2, 2] and biases in [−1, 1].
pub fn random_network(rng: &mut ChaCha8Rng, max_relus: usize) -> Network {
    let inputs = rng.gen_range(1..=3);
    let outputs = rng.gen_range(1..=2);
    let output_relu = outputs <= max_relus.saturating_sub(1) && rng.gen_bool(0.1);
    let budget = max_relus - if output_relu { outputs } else { 0 };
    let depth = rng.gen_range(1..=3).min(budget.max(1));
    let mut hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=4)).collect();
    while hidden.iter().sum::<usize>() > budget {
        let i = rng.gen_range(0..hidden.len());
        if hidden[i] > 1 {
            hidden[i] -= 1;
        } else if hidden.len() > 1 {
            hidden.remove(i);
        }
    }
    let mut sizes = vec![inputs];
    sizes.extend(&hidden);
    sizes.push(outputs);
    let layers = sizes
        .windows(2)
        .map(|w| Layer {
            weights: (0..w[1])
                .map(|_| (0..w[0]).map(|_| rng.gen_range(-2.0..=2.0)).collect())
                .collect(),
            biases: (0..w[1]).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        })
        .collect();
    Network::new(sizes, layers, output_relu).unwrap()
}

fn random_constraint(
    rng: &mut ChaCha8Rng,
    net: &Network,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Constraint {
    let m = net.num_outputs();
    let n = net.num_inputs();
    let mut terms = vec![(VarRef::Output(rng.gen_range(0..m)), rng.gen_range(0.5..=1.5))];
    match rng.gen_range(0..4) {
        0 if m > 1 => {
            let other = VarRef::Output((match terms[0].0 {
                VarRef::Output(j) => j + 1,
                _ => unreachable!(),
            }) % m);
            terms.push((other, -rng.gen_range(0.5..=1.5)));
        }
        1 => terms.push((VarRef::Input(rng.gen_range(0..n)), rng.gen_range(-1.0..=1.0))),
        _ => {}
    }
    if rng.gen_bool(0.5) {
        terms[0].1 = -terms[0].1;
    }
    let c = Constraint::new(&terms, Relation::Le, 0.0);
    let values: Vec<f64> = samples
        .iter()
        .map(|(x, y)| {
            c.terms
                .iter()
                .map(|t| {
                    t.coeff
                        * match t.var {
                            VarRef::Input(i) => x[i],
                            VarRef::Output(j) => y[j],
                        }
                })
                .sum()
        })
        .collect();
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let t = rng.gen_range(-0.3..=1.3);
    let constant = lo + t * (hi - lo).max(1e-3);
    let relation = if rng.gen_bool(0.5) {
        Relation::Le
    } else {
        Relation::Ge
    };
    Constraint {
        relation,
        constant,
        ..c
    }
}

/// Random network plus a box query with one or two output constraints; about
/// one in seven queries also carries two disjuncts.
pub fn random_instance(seed: u64, max_relus: usize) -> Instance {
    let mut rng = rng(seed);
    let net = random_network(&mut rng, max_relus);
    let ranges: Vec<(f64, f64)> = (0..net.num_inputs())
        .map(|_| {
            let lo = rng.gen_range(-1.0..=0.5);
            (lo, lo + rng.gen_range(0.2..=1.5))
        })
        .collect();
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..64)
        .map(|_| {
            let x: Vec<f64> = ranges.iter().map(|&(l, h)| rng.gen_range(l..=h)).collect();
            let y = net.forward(&x);
            (x, y)
        })
        .collect();
    let mut query = Query::boxed(&ranges);
    for _ in 0..rng.gen_range(1..=2) {
        query = query.with_constraint(random_constraint(&mut rng, &net, &samples));
    }
    if rng.gen_ratio(1, 7) {
        for _ in 0..2 {
            let c = random_constraint(&mut rng, &net, &samples);
            query = query.with_disjunct(vec![c]);
        }
    }
    Instance { seed, net, query }
}

pub fn oracle_suite(count: usize, base_seed: u64) -> Vec<Instance> {
    (0..count as u64)
        .map(|i| random_instance(base_seed + i, 8))
        .collect()
}

/// A feasible point of one phase pattern: input, `(b, f)` of every ReLU in
/// layer order, and outputs.
#[derive(Clone, Debug)]
pub struct FeasiblePoint {
    pub inputs: Vec<f64>,
    pub relus: Vec<(f64, f64)>,
    pub outputs: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct OracleOutcome {
    pub sat: bool,
    pub feasible_patterns: usize,
    pub points: Vec<FeasiblePoint>,
}

struct PatternLp {
    problem: Problem,
    inputs: Vec<Variable>,
    relus: Vec<(Variable, Variable)>,
    outputs: Vec<Variable>,
}

fn pattern_lp(
    net: &Network,
    input_box: &[(f64, f64)],
    constraints: &[Constraint],
    pattern: u32,
    objective: &[f64],
) -> PatternLp {
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let inputs: Vec<Variable> = input_box
        .iter()
        .enumerate()
        .map(|(i, &b)| problem.add_var(objective.get(i).copied().unwrap_or(0.0), b))
        .collect();
    let free = (f64::NEG_INFINITY, f64::INFINITY);
    let mut prev = inputs.clone();
    let mut relus = Vec::new();
    let mut bit = 0;
    for (i, layer) in net.layers().iter().enumerate() {
        let relu = net.is_relu_layer(i);
        let mut post = Vec::with_capacity(layer.size());
        for (row, &bias) in layer.weights.iter().zip(&layer.biases) {
            let b = problem.add_var(0.0, free);
            let mut expr: Vec<(Variable, f64)> = vec![(b, 1.0)];
            expr.extend(row.iter().zip(&prev).map(|(&w, &v)| (v, -w)));
            problem.add_constraint(&expr[..], ComparisonOp::Eq, bias);
            if relu {
                let f = problem.add_var(0.0, free);
                if pattern >> bit & 1 == 1 {
                    problem.add_constraint(&[(f, 1.0), (b, -1.0)][..], ComparisonOp::Eq, 0.0);
                    problem.add_constraint(&[(b, 1.0)][..], ComparisonOp::Ge, 0.0);
                } else {
                    problem.add_constraint(&[(f, 1.0)][..], ComparisonOp::Eq, 0.0);
                    problem.add_constraint(&[(b, 1.0)][..], ComparisonOp::Le, 0.0);
                }
                bit += 1;
                relus.push((b, f));
                post.push(f);
            } else {
                post.push(b);
            }
        }
        prev = post;
    }
    let outputs = prev;
    for c in constraints {
        let expr: Vec<(Variable, f64)> = c
            .terms
            .iter()
            .map(|t| {
                let v = match t.var {
                    VarRef::Input(i) => inputs[i],
                    VarRef::Output(j) => outputs[j],
                };
                (v, t.coeff)
            })
            .collect();
        let op = match c.relation {
            Relation::Eq => ComparisonOp::Eq,
            Relation::Le => ComparisonOp::Le,
            Relation::Ge => ComparisonOp::Ge,
        };
        problem.add_constraint(&expr[..], op, c.constant);
    }
    PatternLp {
        problem,
        inputs,
        relus,
        outputs,
    }
}

fn solve_pattern(lp: &PatternLp) -> Option<FeasiblePoint> {
    match lp.problem.solve() {
        Ok(outcome) => {
            let s = outcome.into_solution().expect("no limits set");
            Some(FeasiblePoint {
                inputs: lp.inputs.iter().map(|&v| s.var_value(v)).collect(),
                relus: lp
                    .relus
                    .iter()
                    .map(|&(b, f)| (s.var_value(b), s.var_value(f)))
                    .collect(),
                outputs: lp.outputs.iter().map(|&v| s.var_value(v)).collect(),
            })
        }
        Err(microlp::Error::Infeasible) => None,
        Err(e) => panic!("oracle LP failed: {e}"),
    }
}

/// Enumerates all `2ⁿ` phase patterns of the network and solves each as a
/// pure LP. With `extra_points > 0`, each feasible pattern also contributes
/// points that minimize random input directions.
pub fn eager_oracle(
    net: &Network,
    input_box: &[(f64, f64)],
    constraints: &[Constraint],
    extra_points: usize,
    stop_at_first: bool,
) -> OracleOutcome {
    let n = net.num_relus();
    assert!(n <= 16, "eager oracle limited to 16 ReLUs");
    let mut out = OracleOutcome::default();
    let mut dir_rng = rng(n as u64 ^ 0x5eed);
    for pattern in 0..(1u32 << n) {
        let lp = pattern_lp(net, input_box, constraints, pattern, &[]);
        let Some(p) = solve_pattern(&lp) else {
            continue;
        };
        out.sat = true;
        out.feasible_patterns += 1;
        out.points.push(p);
        if stop_at_first {
            return out;
        }
        for _ in 0..extra_points {
            let dir: Vec<f64> = (0..net.num_inputs())
                .map(|_| dir_rng.gen_range(-1.0..=1.0))
                .collect();
            let lp = pattern_lp(net, input_box, constraints, pattern, &dir);
            if let Some(p) = solve_pattern(&lp) {
                out.points.push(p);
            }
        }
    }
    out
}

/// Oracle verdict for a whole query (any disjunct feasible).
pub fn oracle_sat(inst: &Instance) -> bool {
    let input_box = inst.query.input_box();
    inst.query
        .sub_queries()
        .iter()
        .any(|cs| eager_oracle(&inst.net, &input_box, cs, 0, true).sat)
}

/// Values of every solver variable (including auxiliaries) at an oracle
/// point.
pub fn full_assignment(enc: &Encoding, solver: &Reluplex, p: &FeasiblePoint) -> Vec<f64> {
    let state = solver.state();
    let mut vals = vec![0.0; state.num_vars()];
    let map = &enc.var_map;
    for (v, &x) in map.inputs.iter().zip(&p.inputs) {
        vals[v.0] = x;
    }
    for (&(b, f), &(bv, fv)) in map.relu_layers.iter().flatten().zip(&p.relus) {
        vals[b.0] = bv;
        vals[f.0] = fv;
    }
    for (v, &y) in map.outputs.iter().zip(&p.outputs) {
        vals[v.0] = y;
    }
    for (basic, row) in state.initial_rows() {
        vals[basic.0] = row.evaluate(&vals);
    }
    for pair in solver.pairs() {
        if let Some(link) = pair.link {
            vals[link.0] = vals[pair.forward.0] - vals[pair.backward.0];
        }
    }
    vals
}

/// Whether an oracle point lies in the region selected by split decisions.
pub fn point_matches(p: &FeasiblePoint, decisions: &[(usize, Phase)], tol: f64) -> bool {
    decisions.iter().all(|&(pair, phase)| {
        let b = p.relus[pair].0;
        match phase {
            Phase::Active => b >= -tol,
            Phase::Inactive => b <= tol,
            Phase::Undecided => true,
        }
    })
}

pub fn query_holds(query: &Query, inputs: &[f64], outputs: &[f64], tol: f64) -> bool {
    let in_box = query
        .input_box()
        .iter()
        .zip(inputs)
        .all(|(&(l, h), &x)| x >= l - tol && x <= h + tol);
    let common = query.constraints.iter().all(|c| c.holds(inputs, outputs, tol));
    let disj = query.disjuncts.is_empty()
        || query
            .disjuncts
            .iter()
            .any(|g| g.iter().all(|c| c.holds(inputs, outputs, tol)));
    in_box && common && disj
}

// ---------------------------------------------------------------------------
// 3-SAT instances

pub fn random_cnf(rng: &mut ChaCha8Rng, max_vars: usize, max_clauses: usize) -> reluplex::reduction::CnfFormula {
    let k = rng.gen_range(3..=max_vars);
    let n = rng.gen_range(1..=max_clauses);
    let clauses = (0..n)
        .map(|_| {
            let width = match rng.gen_range(0..20) {
                0..=2 => 1,
                3..=7 => 2,
                _ => 3,
            };
            let lits: Vec<i32> = (0..width)
                .map(|_| {
                    let v = rng.gen_range(1..=k as i32);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            [lits[0], lits[1 % width], lits[(width - 1).min(2)]]
        })
        .collect();
    reluplex::reduction::CnfFormula::new(k, clauses).unwrap()
}

// ---------------------------------------------------------------------------
// Export evaluators

/// Name → value for every variable an export declares, taken from a witness.
pub fn witness_values(net: &Network, w: &Witness) -> HashMap<String, f64> {
    let mut vals = HashMap::new();
    for (i, &x) in w.inputs.iter().enumerate() {
        vals.insert(format!("x{i}"), x);
    }
    let last = net.layers().len() - 1;
    for (l, layer) in w.hidden.iter().enumerate() {
        for (j, &(b, f)) in layer.iter().enumerate() {
            if l == last {
                vals.insert(format!("yb{j}"), b);
            } else {
                vals.insert(format!("b{}_{j}", l + 1), b);
                vals.insert(format!("f{}_{j}", l + 1), f);
            }
        }
    }
    for (j, &y) in w.outputs.iter().enumerate() {
        vals.insert(format!("y{j}"), y);
    }
    vals
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

pub fn parse_sexps(text: &str) -> Vec<Sexp> {
    let mut tokens = Vec::new();
    for line in text.lines() {
        let line = line.split(';').next().unwrap();
        let spaced = line.replace('(', " ( ").replace(')', " ) ");
        tokens.extend(spaced.split_whitespace().map(str::to_string));
    }
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    for t in tokens {
        match t.as_str() {
            "(" => stack.push(Vec::new()),
            ")" => {
                let done = stack.pop().expect("balanced");
                stack.last_mut().expect("balanced").push(Sexp::List(done));
            }
            _ => stack.last_mut().unwrap().push(Sexp::Atom(t)),
        }
    }
    assert_eq!(stack.len(), 1, "unbalanced parentheses");
    stack.pop().unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Val {
    Num(f64),
    Bool(bool),
}

fn eval(e: &Sexp, vals: &HashMap<String, f64>, tol: f64) -> Result<Val, String> {
    let num = |e: &Sexp| match eval(e, vals, tol)? {
        Val::Num(v) => Ok(v),
        Val::Bool(_) => Err("expected a number".to_string()),
    };
    let boolean = |e: &Sexp| match eval(e, vals, tol)? {
        Val::Bool(b) => Ok(b),
        Val::Num(_) => Err("expected a boolean".to_string()),
    };
    match e {
        Sexp::Atom(a) => {
            if let Ok(v) = a.parse::<f64>() {
                if a.contains('e') || a.contains('E') {
                    return Err(format!("exponent in SMT-LIB numeral {a}"));
                }
                return Ok(Val::Num(v));
            }
            vals.get(a)
                .map(|&v| Val::Num(v))
                .ok_or_else(|| format!("undeclared symbol {a}"))
        }
        Sexp::List(items) => {
            let Some(Sexp::Atom(op)) = items.first() else {
                return Err("empty application".into());
            };
            let args = &items[1..];
            Ok(match op.as_str() {
                "+" => Val::Num(args.iter().map(num).sum::<Result<f64, _>>()?),
                "*" => Val::Num(args.iter().map(num).product::<Result<f64, _>>()?),
                "-" if args.len() == 1 => Val::Num(-num(&args[0])?),
                "-" => Val::Num(num(&args[0])? - args[1..].iter().map(num).sum::<Result<f64, _>>()?),
                "ite" => {
                    if boolean(&args[0])? {
                        eval(&args[1], vals, tol)?
                    } else {
                        eval(&args[2], vals, tol)?
                    }
                }
                ">=" => Val::Bool(num(&args[0])? >= num(&args[1])? - tol),
                "<=" => Val::Bool(num(&args[0])? <= num(&args[1])? + tol),
                "=" => Val::Bool((num(&args[0])? - num(&args[1])?).abs() <= tol),
                "and" => Val::Bool(args.iter().map(boolean).collect::<Result<Vec<_>, _>>()?.iter().all(|&b| b)),
                "or" => Val::Bool(args.iter().map(boolean).collect::<Result<Vec<_>, _>>()?.iter().any(|&b| b)),
                other => return Err(format!("unsupported operator {other}")),
            })
        }
    }
}

/// Checks every assertion of an SMT-LIB script under `vals`; returns the
/// number of assertions checked.
pub fn check_smtlib(text: &str, vals: &HashMap<String, f64>, tol: f64) -> Result<usize, String> {
    let mut declared = Vec::new();
    let mut asserts = 0;
    for cmd in parse_sexps(text) {
        let Sexp::List(items) = &cmd else {
            return Err(format!("top-level atom {cmd:?}"));
        };
        let Some(Sexp::Atom(head)) = items.first() else {
            return Err("empty command".into());
        };
        match head.as_str() {
            "set-logic" | "check-sat" | "get-model" => {}
            "declare-fun" => {
                let Sexp::Atom(name) = &items[1] else {
                    return Err("bad declaration".into());
                };
                if items[2] != Sexp::List(vec![]) || items[3] != Sexp::Atom("Real".into()) {
                    return Err(format!("{name}: expected `() Real`"));
                }
                declared.push(name.clone());
            }
            "assert" => {
                asserts += 1;
                if eval(&items[1], vals, tol)? != Val::Bool(true) {
                    return Err(format!("assertion fails: {:?}", items[1]));
                }
            }
            other => return Err(format!("unexpected command {other}")),
        }
    }
    for name in &declared {
        if !vals.contains_key(name) {
            return Err(format!("no value for declared {name}"));
        }
    }
    Ok(asserts)
}

fn parse_lp_expr(text: &str) -> Result<Vec<(String, f64)>, String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut terms = Vec::new();
    let mut sign = 1.0;
    let mut coeff: Option<f64> = None;
    for t in tokens {
        match t {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            _ => {
                if let Ok(v) = t.parse::<f64>() {
                    coeff = Some(v);
                } else {
                    terms.push((t.to_string(), sign * coeff.take().unwrap_or(1.0)));
                    sign = 1.0;
                }
            }
        }
    }
    if coeff.is_some() {
        return Err(format!("dangling number in `{text}`"));
    }
    Ok(terms)
}

/// Checks every row, bound and integrality declaration of a CPLEX LP file;
/// returns the number of rows checked.
pub fn check_lp(text: &str, vals: &HashMap<String, f64>, tol: f64) -> Result<usize, String> {
    #[derive(PartialEq)]
    enum Section {
        Head,
        Objective,
        Rows,
        Bounds,
        Binaries,
        End,
    }
    let mut section = Section::Head;
    let mut rows = 0;
    let value = |name: &str| {
        vals.get(name)
            .copied()
            .ok_or_else(|| format!("no value for {name}"))
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        match line {
            "Minimize" | "Maximize" => {
                section = Section::Objective;
                continue;
            }
            "Subject To" => {
                section = Section::Rows;
                continue;
            }
            "Bounds" => {
                section = Section::Bounds;
                continue;
            }
            "Binaries" => {
                section = Section::Binaries;
                continue;
            }
            "End" => {
                section = Section::End;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Objective => {}
            Section::Rows => {
                let (_, body) = line.split_once(':').ok_or("row without a name")?;
                let (rel, pos) = ["<=", ">=", "="]
                    .iter()
                    .find_map(|r| body.find(r).map(|p| (*r, p)))
                    .ok_or("row without a relation")?;
                let lhs = parse_lp_expr(&body[..pos])?;
                let rhs: f64 = body[pos + rel.len()..]
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad rhs in `{line}`"))?;
                let mut total = 0.0;
                for (v, c) in &lhs {
                    total += c * value(v)?;
                }
                let ok = match rel {
                    "<=" => total <= rhs + tol,
                    ">=" => total >= rhs - tol,
                    _ => (total - rhs).abs() <= tol,
                };
                if !ok {
                    return Err(format!("row fails ({total} vs {rhs}): {line}"));
                }
                rows += 1;
            }
            Section::Bounds => {
                if let Some(name) = line.strip_suffix(" free") {
                    value(name.trim())?;
                    continue;
                }
                let parts: Vec<&str> = line.split("<=").map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(format!("bad bound `{line}`"));
                }
                let num = |s: &str| match s {
                    "-inf" => Ok(f64::NEG_INFINITY),
                    "+inf" | "inf" => Ok(f64::INFINITY),
                    _ => s.parse::<f64>().map_err(|_| format!("bad bound value {s}")),
                };
                let v = value(parts[1])?;
                if v < num(parts[0])? - tol || v > num(parts[2])? + tol {
                    return Err(format!("bound fails: {line} at {v}"));
                }
            }
            Section::Binaries => {
                for name in line.split_whitespace() {
                    let v = value(name)?;
                    if v != 0.0 && v != 1.0 {
                        return Err(format!("binary {name} = {v}"));
                    }
                }
            }
            Section::Head | Section::End => return Err(format!("stray line `{line}`")),
        }
    }
    if section != Section::End {
        return Err("missing End".into());
    }
    Ok(rows)
}

/// Adds the big-M booleans implied by the witness phases.
pub fn add_big_m_booleans(net: &Network, vals: &mut HashMap<String, f64>) {
    for r in reluplex::export::skeleton(net).relus {
        let active = vals[&r.backward] >= 0.0;
        vals.insert(format!("on_{}", r.forward), if active { 1.0 } else { 0.0 });
        vals.insert(format!("off_{}", r.forward), if active { 0.0 } else { 1.0 });
    }
}
