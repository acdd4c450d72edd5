//! Brute-force decision procedures over finite domains.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::expr::{SymExpr, SymId, SymbolTable};
use crate::ast::{eval_term, name, Domain, Env, Location, Mode, Name, Program, State, Term, Value};

/// Largest valuation space the oracle will enumerate.
pub const MAX_VALUATIONS: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("valuation space of {size} exceeds the enumeration cap")]
pub struct DomainTooLarge {
    pub size: u128,
}

/// Outcome of an equivalence check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Equivalence<W> {
    Equivalent,
    Counterexample(W),
}

impl<W> Equivalence<W> {
    pub fn holds(&self) -> bool {
        matches!(self, Equivalence::Equivalent)
    }
}

/// Calls `visit` on every assignment of the given domains, stopping early
/// when it returns `false`. Returns `false` iff stopped early.
pub fn for_each_assignment(
    domains: &[Domain],
    mut visit: impl FnMut(&[Value]) -> bool,
) -> Result<bool, DomainTooLarge> {
    let size: u128 = domains.iter().map(|d| d.len() as u128).product();
    if size > MAX_VALUATIONS as u128 {
        return Err(DomainTooLarge { size });
    }
    if size == 0 {
        return Ok(true);
    }
    let mut idx = vec![0u64; domains.len()];
    let mut cur: Vec<Value> = domains.iter().map(|d| d.nth(0)).collect();
    loop {
        if !visit(&cur) {
            return Ok(false);
        }
        let mut i = domains.len();
        loop {
            if i == 0 {
                return Ok(true);
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < domains[i].len() {
                cur[i] = domains[i].nth(idx[i]);
                break;
            }
            idx[i] = 0;
            cur[i] = domains[i].nth(0);
        }
    }
}

/// Enumerates the valuations of the symbols occurring in `exprs`, laid out
/// as full symbol-indexed vectors. Unused slots hold the symbol's first value.
fn enumerate(
    table: &SymbolTable,
    exprs: &[&SymExpr],
    mut visit: impl FnMut(&[Value]) -> bool,
) -> Result<bool, DomainTooLarge> {
    let syms: BTreeSet<SymId> = exprs.iter().flat_map(|e| e.symbols()).collect();
    let syms: Vec<SymId> = syms.into_iter().collect();
    let domains: Vec<Domain> = syms.iter().map(|s| table.get(*s).domain.clone()).collect();
    let mut full: Vec<Value> = table.iter().map(|(_, s)| s.domain.nth(0)).collect();
    for_each_assignment(&domains, |vals| {
        for (s, v) in syms.iter().zip(vals) {
            full[*s as usize] = v.clone();
        }
        visit(&full)
    })
}

fn witness(table: &SymbolTable, exprs: &[&SymExpr], full: &[Value]) -> BTreeMap<String, Value> {
    exprs
        .iter()
        .flat_map(|e| e.symbols())
        .map(|s| (table.get(s).name.clone(), full[s as usize].clone()))
        .collect()
}

/// A satisfying valuation (by symbol name), if any.
pub fn satisfiable(
    table: &SymbolTable,
    f: &SymExpr,
) -> Result<Option<BTreeMap<String, Value>>, DomainTooLarge> {
    if let Some(b) = f.as_bool() {
        return Ok(b.then(BTreeMap::new));
    }
    let mut found = None;
    enumerate(table, &[f], |val| {
        if f.truth(val) {
            found = Some(witness(table, &[f], val));
            false
        } else {
            true
        }
    })?;
    Ok(found)
}

/// Checks that `f` and `g` take equal values under every valuation of
/// their symbols.
pub fn equivalent(
    table: &SymbolTable,
    f: &SymExpr,
    g: &SymExpr,
) -> Result<Equivalence<BTreeMap<String, Value>>, DomainTooLarge> {
    let mut cex = None;
    enumerate(table, &[f, g], |val| {
        if f.eval(val) != g.eval(val) {
            cex = Some(witness(table, &[f, g], val));
            false
        } else {
            true
        }
    })?;
    Ok(match cex {
        None => Equivalence::Equivalent,
        Some(w) => Equivalence::Counterexample(w),
    })
}

/// A valuation of locations and free variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TermValuation {
    pub locations: BTreeMap<Location, Value>,
    pub vars: BTreeMap<Name, Value>,
}

/// Ground locations a term may read. Applications with non-constant
/// arguments contribute every location of the function.
pub fn term_locations(program: &Program, t: &Term) -> BTreeSet<Location> {
    let mut out = BTreeSet::new();
    t.visit(&mut |x| {
        if let Term::App(f, args) = x {
            let consts: Option<Vec<Value>> = args
                .iter()
                .map(|a| match a {
                    Term::Const(v) => Some(v.clone()),
                    _ => None,
                })
                .collect();
            match (consts, program.function(f)) {
                (Some(c), _) => {
                    out.insert(Location::new(f.clone(), c));
                }
                (None, Some(decl)) => out.extend(program.locations_of(decl)),
                (None, None) => {}
            }
        }
    });
    out
}

/// Checks that two terms evaluate equally in every state over the locations
/// they read, for every assignment of the listed free variables, restricted
/// to states satisfying `constraint` if given.
pub fn equivalent_terms(
    program: &Program,
    f: &Term,
    g: &Term,
    vars: &[(Name, Domain)],
    constraint: Option<&Term>,
) -> Result<Equivalence<TermValuation>, DomainTooLarge> {
    let mut locs = term_locations(program, f);
    locs.extend(term_locations(program, g));
    if let Some(c) = constraint {
        locs.extend(term_locations(program, c));
    }
    let locs: Vec<Location> = locs.into_iter().collect();
    let mut domains: Vec<Domain> = locs
        .iter()
        .map(|l| {
            let decl = program
                .function(&l.func)
                .expect("term reads declared functions");
            program.domain(&decl.result)
        })
        .collect();
    domains.extend(vars.iter().map(|(_, d)| d.clone()));
    let monitored: BTreeSet<Name> = program
        .functions
        .iter()
        .filter(|d| d.mode == Mode::Monitored)
        .map(|d| d.name.clone())
        .collect();
    let mut cex = None;
    for_each_assignment(&domains, |vals| {
        let mut state = State::default();
        for (l, v) in locs.iter().zip(vals) {
            if monitored.contains(&l.func) {
                state.monitored.insert(l.clone(), v.clone());
            } else {
                state.values.insert(l.clone(), v.clone());
            }
        }
        let mut env = Env::new();
        for ((n, _), v) in vars.iter().zip(&vals[locs.len()..]) {
            env.push(n.clone(), v.clone());
        }
        if let Some(c) = constraint {
            if eval_term(c, &state, &env) != Ok(Value::Bool(true)) {
                return true;
            }
        }
        if eval_term(f, &state, &env) != eval_term(g, &state, &env) {
            cex = Some(TermValuation {
                locations: locs.iter().cloned().zip(vals.iter().cloned()).collect(),
                vars: vars
                    .iter()
                    .map(|(n, _)| n.clone())
                    .zip(vals[locs.len()..].iter().cloned())
                    .collect(),
            });
            return false;
        }
        true
    })?;
    Ok(match cex {
        None => Equivalence::Equivalent,
        Some(w) => Equivalence::Counterexample(w),
    })
}

/// Conjunction of a program's assumptions as a term (`true` if none).
pub fn assumptions_term(program: &Program) -> Term {
    Term::conj(program.assumptions.iter().map(|a| {
        Term::eq(
            Term::App(
                a.target.func.clone(),
                a.target.args.iter().cloned().map(Term::Const).collect(),
            ),
            a.value.clone(),
        )
    }))
}

/// Convenience: variable binding list for a single placeholder.
pub fn placeholder(var: &str, domain: Domain) -> Vec<(Name, Domain)> {
    vec![(name(var), domain)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Value;
    use crate::symexec::expr::SymOrigin;

    fn phases() -> Domain {
        Domain::Enum(
            ["Stop1Stop2", "Go1Stop2", "Stop2Stop1", "Go2Stop1"]
                .iter()
                .map(|s| name(s))
                .collect::<Vec<_>>()
                .into(),
        )
    }

    #[test]
    fn distinct_literals_are_not_equivalent() {
        let mut t = SymbolTable::default();
        let a = t.fresh("alpha", phases(), SymOrigin::Placeholder);
        let f = SymExpr::eq(SymExpr::sym(a), SymExpr::lit("Stop1Stop2"));
        let g = SymExpr::eq(SymExpr::sym(a), SymExpr::lit("Go1Stop2"));
        match equivalent(&t, &f, &g).unwrap() {
            Equivalence::Counterexample(w) => {
                assert_eq!(w["alpha"], Value::literal("Stop1Stop2"));
            }
            Equivalence::Equivalent => panic!("expected a counterexample"),
        }
    }

    #[test]
    fn cap_is_enforced() {
        let mut t = SymbolTable::default();
        let syms: Vec<SymExpr> = (0..25)
            .map(|i| SymExpr::sym(t.fresh(format!("b{i}"), Domain::Bool, SymOrigin::Placeholder)))
            .collect();
        let f = SymExpr::and(syms);
        assert!(equivalent(&t, &f, &f).is_err());
    }

    #[test]
    fn assignment_count() {
        let mut n = 0;
        for_each_assignment(&[Domain::Bool, Domain::Int { lo: 1, hi: 3 }], |_| {
            n += 1;
            true
        })
        .unwrap();
        assert_eq!(n, 6);
    }
}
