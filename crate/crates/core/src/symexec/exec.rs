//! One-step symbolic execution from a symbolic initial state.

use std::collections::{BTreeMap, BTreeSet};

use super::expr::{LocMap, SymExpr, SymId, SymOrigin, SymbolTable};
use super::oracle::satisfiable;
use super::simplify::simplify;
use super::SymError;
use crate::ast::{CandidateSet, Location, Mode, Name, Program, Rule, Term, Value};

const GREEK: [&str; 22] = [
    "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa", "lambda", "mu", "nu",
    "xi", "omicron", "pi", "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega",
];

/// Symbolic initial state: the value of every location the program touches,
/// plus an optional constraint relating the symbols.
#[derive(Clone, Debug)]
pub struct SymInit {
    pub table: SymbolTable,
    pub map: LocMap,
    pub constraint: Option<SymExpr>,
}

impl SymInit {
    /// A distinct fresh symbol per location.
    pub fn fresh(program: &Program) -> SymInit {
        Self::build(program, false)
    }

    /// Like [`SymInit::fresh`], but the targets of the program's `assume`
    /// declarations are expressed through the other locations' symbols.
    pub fn with_assumptions(program: &Program) -> SymInit {
        Self::build(program, true)
    }

    fn build(program: &Program, assume: bool) -> SymInit {
        let used = referenced_functions(program);
        let targets: BTreeSet<&Location> = if assume {
            program.assumptions.iter().map(|a| &a.target).collect()
        } else {
            BTreeSet::new()
        };
        let mut table = SymbolTable::default();
        let mut map = LocMap::new();
        let ctl = program.ctl_decl();
        let ctl_loc = Location::nullary(ctl.name.clone());
        let ctl_sym = table.fresh(
            "alpha",
            program.domain(&ctl.result),
            SymOrigin::Location(ctl_loc.clone()),
        );
        map.insert(ctl_loc, SymExpr::sym(ctl_sym));

        let ordered = program
            .functions
            .iter()
            .filter(|d| d.mode == Mode::Monitored)
            .chain(
                program
                    .functions
                    .iter()
                    .filter(|d| d.mode == Mode::Controlled && d.name != ctl.name),
            )
            .filter(|d| used.contains(&d.name));
        let mut greek = 0;
        for decl in ordered {
            let domain = program.domain(&decl.result);
            for loc in program.locations_of(decl) {
                if targets.contains(&loc) {
                    continue;
                }
                let base = if decl.mode == Mode::Monitored {
                    "beta".to_string()
                } else {
                    let n = GREEK[greek.min(GREEK.len() - 1)].to_string();
                    greek += 1;
                    n
                };
                let s = table.fresh(base, domain.clone(), SymOrigin::Location(loc.clone()));
                map.insert(loc, SymExpr::sym(s));
            }
        }
        let mut init = SymInit {
            table,
            map,
            constraint: None,
        };
        if assume {
            for a in &program.assumptions {
                let mut ex = Executor::new(program, &init, false);
                let v = ex
                    .term(&a.value, &Env::default())
                    .expect("validated assumption values read ground locations");
                let v = simplify(&init.table, &v);
                init.map.insert(a.target.clone(), v);
            }
        }
        init
    }

    pub fn symbol_of(&self, loc: &Location) -> Option<SymId> {
        match self.map.get(loc) {
            Some(SymExpr::Sym(s)) => Some(*s),
            _ => None,
        }
    }
}

fn referenced_functions(program: &Program) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    let mut terms: Vec<&Term> = vec![&program.unsafe_formula];
    let rules = program
        .main_rules
        .iter()
        .map(|m| &m.body)
        .chain(program.named_rules.iter().flat_map(|n| n.body.iter()));
    for r in rules {
        r.visit(&mut |x| {
            terms.extend(x.terms());
            if let Rule::Update { func, .. } = x {
                out.insert(func.clone());
            }
        });
    }
    for a in &program.assumptions {
        out.insert(a.target.func.clone());
        terms.push(&a.value);
    }
    for t in terms {
        t.visit(&mut |x| {
            if let Term::App(f, _) = x {
                out.insert(f.clone());
            }
        });
    }
    out.insert(program.ctl.clone());
    out
}

/// One feasible branch combination of a step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymPath {
    pub cond: SymExpr,
    pub loc_map: LocMap,
    pub updated: BTreeSet<Location>,
    /// Main rules whose guard holds on this path; empty for stutter paths.
    pub fired: Vec<Name>,
    /// Indices of the input paths folded into this one by
    /// [`merge_successors`]; empty for unmerged paths.
    pub merged_from: Vec<usize>,
}

impl SymPath {
    pub fn is_stutter(&self) -> bool {
        self.fired.is_empty()
    }
}

/// Result of a symbolic step: the session's symbols and the paths.
#[derive(Clone, Debug)]
pub struct SymOutcome {
    pub table: SymbolTable,
    pub paths: Vec<SymPath>,
}

#[derive(Clone, Debug, Default)]
struct Env {
    vars: Vec<(Name, SymExpr)>,
}

impl Env {
    fn with(&self, var: Name, v: SymExpr) -> Env {
        let mut e = self.clone();
        e.vars.push((var, v));
        e
    }

    fn lookup(&self, v: &str) -> Option<&SymExpr> {
        self.vars
            .iter()
            .rev()
            .find(|(n, _)| &**n == v)
            .map(|(_, x)| x)
    }
}

#[derive(Clone, Debug)]
struct Branch {
    cond: SymExpr,
    updates: Vec<(Location, SymExpr)>,
    fired: Vec<Name>,
}

struct Executor<'a> {
    program: &'a Program,
    map: &'a LocMap,
    table: SymbolTable,
    ctl_abstraction: bool,
    ctl_next: Option<SymId>,
}

impl<'a> Executor<'a> {
    fn new(program: &'a Program, init: &'a SymInit, ctl_abstraction: bool) -> Self {
        Executor {
            program,
            map: &init.map,
            table: init.table.clone(),
            ctl_abstraction,
            ctl_next: None,
        }
    }

    fn ctl_next(&mut self) -> SymExpr {
        let id = match self.ctl_next {
            Some(id) => id,
            None => {
                let dom = self.program.domain(self.program.plain_ctl_sort());
                let id = self.table.fresh("alpha_next", dom, SymOrigin::CtlNext);
                self.ctl_next = Some(id);
                id
            }
        };
        SymExpr::sym(id)
    }

    fn read(&self, loc: &Location) -> Result<SymExpr, SymError> {
        let decl = self
            .program
            .function(&loc.func)
            .ok_or_else(|| SymError::UnknownLocation(loc.clone()))?;
        if decl.mode == Mode::Static {
            return self
                .program
                .initial_state
                .get(loc)
                .cloned()
                .map(SymExpr::Const)
                .ok_or_else(|| SymError::UnknownLocation(loc.clone()));
        }
        self.map
            .get(loc)
            .cloned()
            .ok_or_else(|| SymError::UnknownLocation(loc.clone()))
    }

    /// Argument tuples a symbolic application may denote, with the
    /// condition selecting each one.
    fn tuples(
        &self,
        func: &Name,
        args: &[SymExpr],
    ) -> Result<Vec<(SymExpr, Vec<Value>)>, SymError> {
        let decl = self
            .program
            .function(func)
            .ok_or_else(|| SymError::UnsupportedConstruct(format!("unknown function `{func}`")))?;
        let options: Vec<Vec<Value>> = args
            .iter()
            .zip(&decl.arg_sorts)
            .map(|(a, s)| match a {
                SymExpr::Const(v) => vec![v.clone()],
                _ => self.program.domain(s).iter().collect(),
            })
            .collect();
        Ok(product(&options)
            .into_iter()
            .map(|tuple| {
                let guard = SymExpr::and(
                    args.iter()
                        .zip(&tuple)
                        .map(|(a, v)| SymExpr::eq(a.clone(), SymExpr::Const(v.clone()))),
                );
                (guard, tuple)
            })
            .collect())
    }

    fn term(&mut self, t: &Term, env: &Env) -> Result<SymExpr, SymError> {
        Ok(match t {
            Term::Const(v) => SymExpr::Const(v.clone()),
            Term::Var(x) => env
                .lookup(x)
                .cloned()
                .ok_or_else(|| SymError::UnsupportedConstruct(format!("unbound variable `{x}`")))?,
            Term::App(f, args) => {
                let args = args
                    .iter()
                    .map(|a| self.term(a, env))
                    .collect::<Result<Vec<_>, _>>()?;
                let consts: Option<Vec<Value>> = args
                    .iter()
                    .map(|a| match a {
                        SymExpr::Const(v) => Some(v.clone()),
                        _ => None,
                    })
                    .collect();
                if let Some(vals) = consts {
                    return self.read(&Location::new(f.clone(), vals));
                }
                let mut options = self.tuples(f, &args)?;
                let (_, last) = options.pop().expect("argument sorts are non-empty");
                let mut acc = self.read(&Location::new(f.clone(), last))?;
                for (guard, tuple) in options.into_iter().rev() {
                    let v = self.read(&Location::new(f.clone(), tuple))?;
                    acc = SymExpr::ite(guard, v, acc);
                }
                acc
            }
            Term::Not(a) => SymExpr::not(self.term(a, env)?),
            Term::And(a, b) => SymExpr::and([self.term(a, env)?, self.term(b, env)?]),
            Term::Or(a, b) => SymExpr::or([self.term(a, env)?, self.term(b, env)?]),
            Term::Eq(a, b) => SymExpr::eq(self.term(a, env)?, self.term(b, env)?),
            Term::In(a, set) => SymExpr::member(self.term(a, env)?, set.iter().cloned().collect()),
            Term::Ite(c, a, b) => {
                SymExpr::ite(self.term(c, env)?, self.term(a, env)?, self.term(b, env)?)
            }
            Term::EncIn(..) => {
                return Err(SymError::UnsupportedConstruct(
                    "encoded-state membership cannot be executed symbolically".into(),
                ))
            }
        })
    }

    /// Extends the branch condition, returning `None` when infeasible.
    fn refine(&self, cond: &SymExpr, extra: SymExpr) -> Result<Option<SymExpr>, SymError> {
        let c = simplify(&self.table, &SymExpr::and([cond.clone(), extra]));
        match c.as_bool() {
            Some(false) => Ok(None),
            Some(true) => Ok(Some(c)),
            None => Ok(satisfiable(&self.table, &c)?.map(|_| c)),
        }
    }

    fn rules(
        &mut self,
        rules: &[Rule],
        env: &Env,
        branches: Vec<Branch>,
    ) -> Result<Vec<Branch>, SymError> {
        let mut cur = branches;
        for r in rules {
            let mut next = Vec::new();
            for b in cur {
                next.extend(self.rule(r, env, b)?);
            }
            cur = next;
        }
        Ok(cur)
    }

    fn rule(&mut self, r: &Rule, env: &Env, b: Branch) -> Result<Vec<Branch>, SymError> {
        match r {
            Rule::Update { func, args, value } => {
                let is_ctl = *func == self.program.ctl;
                let v = if is_ctl && self.ctl_abstraction {
                    self.ctl_next()
                } else {
                    let v = self.term(value, env)?;
                    simplify(&self.table, &v)
                };
                let args = args
                    .iter()
                    .map(|a| self.term(a, env))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut out = Vec::new();
                for (guard, tuple) in self.tuples(func, &args)? {
                    if let Some(cond) = self.refine(&b.cond, guard)? {
                        let mut nb = b.clone();
                        nb.cond = cond;
                        nb.updates
                            .push((Location::new(func.clone(), tuple), v.clone()));
                        out.push(nb);
                    }
                }
                Ok(out)
            }
            Rule::Cond {
                guard,
                then_rules,
                else_rules,
            } => {
                let g = self.term(guard, env)?;
                let mut out = Vec::new();
                if let Some(cond) = self.refine(&b.cond, g.clone())? {
                    out.extend(self.rules(then_rules, env, vec![Branch { cond, ..b.clone() }])?);
                }
                if let Some(cond) = self.refine(&b.cond, SymExpr::not(g))? {
                    let nb = Branch { cond, ..b };
                    match else_rules {
                        Some(e) => out.extend(self.rules(e, env, vec![nb])?),
                        None => out.push(nb),
                    }
                }
                Ok(out)
            }
            Rule::Par(rs) => self.rules(rs, env, vec![b]),
            Rule::Choose {
                var,
                sort,
                set,
                body,
            } => {
                let s = self.table.fresh(
                    "choice",
                    self.program.domain(sort),
                    SymOrigin::Choice(var.to_string()),
                );
                let member = match set {
                    CandidateSet::Values(vs) => {
                        SymExpr::member(SymExpr::sym(s), vs.iter().cloned().collect())
                    }
                    CandidateSet::Sort { pred: None, .. } => {
                        SymExpr::member(SymExpr::sym(s), self.program.domain(sort).iter().collect())
                    }
                    CandidateSet::Sort { pred: Some(p), .. } => {
                        self.term(p, &env.with(var.clone(), SymExpr::sym(s)))?
                    }
                };
                // an empty candidate set is a runtime error, so that branch has no successor
                match self.refine(&b.cond, member)? {
                    Some(cond) => self.rules(
                        body,
                        &env.with(var.clone(), SymExpr::sym(s)),
                        vec![Branch { cond, ..b }],
                    ),
                    None => Ok(Vec::new()),
                }
            }
            Rule::Let { var, value, body } => {
                let v = self.term(value, env)?;
                let v = simplify(&self.table, &v);
                self.rules(body, &env.with(var.clone(), v), vec![b])
            }
            Rule::Call { rule, args } => {
                let nr = self.program.named_rule(rule).ok_or_else(|| {
                    SymError::UnsupportedConstruct(format!("unknown rule `{rule}`"))
                })?;
                let mut inner = Env::default();
                for ((p, _), a) in nr.params.iter().zip(args) {
                    let v = self.term(a, env)?;
                    inner = inner.with(p.clone(), simplify(&self.table, &v));
                }
                self.rules(&nr.body, &inner, vec![b])
            }
            Rule::ChooseCtl { .. } => {
                if !self.ctl_abstraction {
                    return Err(SymError::UnsupportedConstruct(
                        "choosectl needs the control-state abstraction".into(),
                    ));
                }
                let v = self.ctl_next();
                let mut b = b;
                b.updates
                    .push((Location::nullary(self.program.ctl.clone()), v));
                Ok(vec![b])
            }
        }
    }

    fn finish(&self, b: Branch) -> Result<SymPath, SymError> {
        let mut writes: BTreeMap<Location, SymExpr> = BTreeMap::new();
        for (loc, v) in b.updates {
            match writes.get(&loc) {
                None => {
                    writes.insert(loc, v);
                }
                Some(prev) if *prev == v => {}
                Some(prev) => {
                    let clash =
                        SymExpr::and([b.cond.clone(), SymExpr::not(SymExpr::eq(prev.clone(), v))]);
                    let clash = simplify(&self.table, &clash);
                    if clash.as_bool() != Some(false) && satisfiable(&self.table, &clash)?.is_some()
                    {
                        return Err(SymError::SymbolicInconsistency { location: loc });
                    }
                }
            }
        }
        let mut loc_map = self.map.clone();
        let updated: BTreeSet<Location> = writes.keys().cloned().collect();
        for (loc, v) in writes {
            if !loc_map.contains_key(&loc) {
                return Err(SymError::UnknownLocation(loc));
            }
            loc_map.insert(loc, v);
        }
        Ok(SymPath {
            cond: b.cond,
            loc_map,
            updated,
            fired: b.fired,
            merged_from: Vec::new(),
        })
    }
}

/// Cartesian product of per-position value lists, first position slowest.
fn product(options: &[Vec<Value>]) -> Vec<Vec<Value>> {
    let mut out = vec![Vec::new()];
    for opts in options {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<Value>| {
                opts.iter().map(move |v| {
                    let mut t = prefix.clone();
                    t.push(v.clone());
                    t
                })
            })
            .collect();
    }
    out
}

/// Symbolic value of a closed term when locations hold the values in `map`.
pub fn symbolic_term(
    program: &Program,
    map: &LocMap,
    table: &SymbolTable,
    t: &Term,
) -> Result<SymExpr, SymError> {
    let mut ex = Executor {
        program,
        map,
        table: table.clone(),
        ctl_abstraction: false,
        ctl_next: None,
    };
    ex.term(t, &Env::default())
}

/// Symbolically executes one step of `program` from `init`. Every feasible
/// combination of guard outcomes yields one path; the combination where no
/// main rule fires is the stutter path. With `ctl_abstraction`, every write
/// of the control state stores the single fresh symbol `alpha_next`.
pub fn symbolic_step(
    program: &Program,
    init: &SymInit,
    ctl_abstraction: bool,
) -> Result<SymOutcome, SymError> {
    let mut ex = Executor::new(program, init, ctl_abstraction);
    let start = init
        .constraint
        .clone()
        .unwrap_or(SymExpr::Const(Value::Bool(true)));
    let start = match ex.refine(&SymExpr::Const(Value::Bool(true)), start)? {
        Some(c) => c,
        None => {
            return Ok(SymOutcome {
                table: ex.table,
                paths: Vec::new(),
            })
        }
    };
    let mut branches = vec![Branch {
        cond: start,
        updates: Vec::new(),
        fired: Vec::new(),
    }];
    let env = Env::default();
    for main in &program.main_rules {
        let Rule::Cond {
            guard, then_rules, ..
        } = &main.body
        else {
            return Err(SymError::UnsupportedConstruct(format!(
                "main rule `{}` is not a conditional",
                main.name
            )));
        };
        let mut next = Vec::new();
        for b in branches {
            let g = ex.term(guard, &env)?;
            if let Some(cond) = ex.refine(&b.cond, g.clone())? {
                let mut fb = Branch { cond, ..b.clone() };
                fb.fired.push(main.name.clone());
                next.extend(ex.rules(then_rules, &env, vec![fb])?);
            }
            if let Some(cond) = ex.refine(&b.cond, SymExpr::not(g))? {
                next.push(Branch { cond, ..b });
            }
        }
        branches = next;
    }
    let paths = branches
        .into_iter()
        .map(|b| ex.finish(b))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SymOutcome {
        table: ex.table,
        paths,
    })
}

/// Groups paths with equal location maps, joining their conditions. Output
/// order follows the first occurrence of each map.
pub fn merge_successors(table: &SymbolTable, paths: &[SymPath]) -> Vec<SymPath> {
    let mut out: Vec<SymPath> = Vec::new();
    let mut conds: Vec<Vec<SymExpr>> = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        match out.iter().position(|q| q.loc_map == p.loc_map) {
            Some(k) => {
                conds[k].push(p.cond.clone());
                out[k].merged_from.push(i);
                out[k].updated.extend(p.updated.iter().cloned());
                for f in &p.fired {
                    if !out[k].fired.contains(f) {
                        out[k].fired.push(f.clone());
                    }
                }
            }
            None => {
                let mut q = p.clone();
                q.merged_from = vec![i];
                out.push(q);
                conds.push(vec![p.cond.clone()]);
            }
        }
    }
    for (q, cs) in out.iter_mut().zip(conds) {
        q.cond = simplify(table, &SymExpr::or(cs));
    }
    out
}

/// Converts a formula over initial-state symbols back into a term over
/// locations. Subexpressions equal to a location's initial value (such as a
/// negated symbol introduced by an assumption) are replaced by that location
/// first; `extra` supplies terms for symbols without a location.
pub fn substitute_initial_terms(
    f: &SymExpr,
    init: &SymInit,
    table: &SymbolTable,
    extra: &dyn Fn(SymId) -> Option<Term>,
) -> Result<Term, SymError> {
    let loc_term = |l: &Location| {
        Term::App(
            l.func.clone(),
            l.args.iter().cloned().map(Term::Const).collect(),
        )
    };
    let exact: BTreeMap<&SymExpr, &Location> = init.map.iter().map(|(l, v)| (v, l)).rev().collect();
    fn go(
        e: &SymExpr,
        exact: &BTreeMap<&SymExpr, &Location>,
        table: &SymbolTable,
        loc_term: &dyn Fn(&Location) -> Term,
        extra: &dyn Fn(SymId) -> Option<Term>,
    ) -> Result<Term, SymError> {
        if let SymExpr::Sym(s) = e {
            if let Some(t) = extra(*s) {
                return Ok(t);
            }
        }
        if let Some(l) = exact.get(e) {
            return Ok(loc_term(l));
        }
        let rec = |x: &SymExpr| go(x, exact, table, loc_term, extra);
        Ok(match e {
            SymExpr::Const(v) => Term::Const(v.clone()),
            SymExpr::Sym(s) => {
                // fall back to a location holding the negated symbol
                let neg = SymExpr::Not(Box::new(e.clone()));
                match exact.get(&neg) {
                    Some(l) => Term::not(loc_term(l)),
                    None => return Err(SymError::UnhousedSymbol(table.get(*s).name.clone())),
                }
            }
            SymExpr::Not(a) => Term::not(rec(a)?),
            SymExpr::And(xs) => Term::conj(xs.iter().map(rec).collect::<Result<Vec<_>, _>>()?),
            SymExpr::Or(xs) => Term::disj(xs.iter().map(rec).collect::<Result<Vec<_>, _>>()?),
            SymExpr::Eq(a, b) => Term::eq(rec(a)?, rec(b)?),
            SymExpr::In(a, set) if set.len() == 1 => {
                Term::eq(rec(a)?, Term::Const(set.iter().next().unwrap().clone()))
            }
            SymExpr::In(a, set) => Term::In(Box::new(rec(a)?), set.iter().cloned().collect()),
            SymExpr::Ite(c, a, b) => Term::ite(rec(c)?, rec(a)?, rec(b)?),
        })
    }
    go(f, &exact, table, &loc_term, extra)
}
