//! Symbols and symbolic expressions.

use std::collections::{BTreeMap, BTreeSet};

use crate::ast::{name, Domain, Location, Term, Value};

pub type SymId = u32;

/// Where a symbol came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SymOrigin {
    /// Initial value of a location.
    Location(Location),
    /// Abstracted next value of the control state.
    CtlNext,
    /// Value picked by a source-level `choose`.
    Choice(String),
    /// Free placeholder introduced by an analysis.
    Placeholder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Symbol {
    pub name: String,
    pub domain: Domain,
    pub origin: SymOrigin,
}

/// Symbols of one analysis session.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolTable {
    syms: Vec<Symbol>,
}

impl SymbolTable {
    pub fn fresh(&mut self, name: impl Into<String>, domain: Domain, origin: SymOrigin) -> SymId {
        let mut base: String = name.into();
        if self.syms.iter().any(|s| s.name == base) {
            let stem = base.clone();
            let mut k = 2;
            while self.syms.iter().any(|s| s.name == base) {
                base = format!("{stem}{k}");
                k += 1;
            }
        }
        self.syms.push(Symbol {
            name: base,
            domain,
            origin,
        });
        (self.syms.len() - 1) as SymId
    }

    pub fn get(&self, id: SymId) -> &Symbol {
        &self.syms[id as usize]
    }

    pub fn len(&self) -> usize {
        self.syms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.syms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SymId, &Symbol)> {
        self.syms.iter().enumerate().map(|(i, s)| (i as SymId, s))
    }

    pub fn by_name(&self, n: &str) -> Option<SymId> {
        self.syms
            .iter()
            .position(|s| s.name == n)
            .map(|i| i as SymId)
    }
}

/// Formula or value over symbols and constants.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymExpr {
    Const(Value),
    Sym(SymId),
    Not(Box<SymExpr>),
    And(Vec<SymExpr>),
    Or(Vec<SymExpr>),
    Eq(Box<SymExpr>, Box<SymExpr>),
    In(Box<SymExpr>, BTreeSet<Value>),
    Ite(Box<SymExpr>, Box<SymExpr>, Box<SymExpr>),
}

pub const TRUE: SymExpr = SymExpr::Const(Value::Bool(true));
pub const FALSE: SymExpr = SymExpr::Const(Value::Bool(false));

impl SymExpr {
    pub fn sym(id: SymId) -> SymExpr {
        SymExpr::Sym(id)
    }

    pub fn lit(v: impl Into<Value>) -> SymExpr {
        SymExpr::Const(v.into())
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            SymExpr::Const(Value::Bool(b)) => Some(*b),
            _ => None,
        }
    }

    /// Negation with constant folding and double-negation removal.
    #[allow(clippy::should_implement_trait)]
    pub fn not(e: SymExpr) -> SymExpr {
        match e {
            SymExpr::Const(Value::Bool(b)) => SymExpr::Const(Value::Bool(!b)),
            SymExpr::Not(inner) => *inner,
            e => SymExpr::Not(Box::new(e)),
        }
    }

    /// Conjunction with flattening and constant folding.
    pub fn and(parts: impl IntoIterator<Item = SymExpr>) -> SymExpr {
        let mut out = Vec::new();
        for p in parts {
            match p {
                SymExpr::Const(Value::Bool(true)) => {}
                SymExpr::Const(Value::Bool(false)) => return FALSE,
                SymExpr::And(inner) => out.extend(inner),
                p => out.push(p),
            }
        }
        match out.len() {
            0 => TRUE,
            1 => out.pop().unwrap(),
            _ => SymExpr::And(out),
        }
    }

    /// Disjunction with flattening and constant folding.
    pub fn or(parts: impl IntoIterator<Item = SymExpr>) -> SymExpr {
        let mut out = Vec::new();
        for p in parts {
            match p {
                SymExpr::Const(Value::Bool(false)) => {}
                SymExpr::Const(Value::Bool(true)) => return TRUE,
                SymExpr::Or(inner) => out.extend(inner),
                p => out.push(p),
            }
        }
        match out.len() {
            0 => FALSE,
            1 => out.pop().unwrap(),
            _ => SymExpr::Or(out),
        }
    }

    pub fn eq(a: SymExpr, b: SymExpr) -> SymExpr {
        match (&a, &b) {
            (SymExpr::Const(x), SymExpr::Const(y)) => SymExpr::Const(Value::Bool(x == y)),
            _ if a == b => TRUE,
            _ => SymExpr::Eq(Box::new(a), Box::new(b)),
        }
    }

    pub fn member(a: SymExpr, set: BTreeSet<Value>) -> SymExpr {
        match &a {
            SymExpr::Const(v) => SymExpr::Const(Value::Bool(set.contains(v))),
            _ => SymExpr::In(Box::new(a), set),
        }
    }

    pub fn ite(c: SymExpr, a: SymExpr, b: SymExpr) -> SymExpr {
        match c.as_bool() {
            Some(true) => a,
            Some(false) => b,
            None if a == b => a,
            None => SymExpr::Ite(Box::new(c), Box::new(a), Box::new(b)),
        }
    }

    /// Node count; membership sets count one per element.
    pub fn size(&self) -> usize {
        match self {
            SymExpr::Const(_) | SymExpr::Sym(_) => 1,
            SymExpr::Not(a) => 1 + a.size(),
            SymExpr::And(xs) | SymExpr::Or(xs) => 1 + xs.iter().map(SymExpr::size).sum::<usize>(),
            SymExpr::Eq(a, b) => 1 + a.size() + b.size(),
            SymExpr::In(a, s) => 1 + a.size() + s.len(),
            SymExpr::Ite(c, a, b) => 1 + c.size() + a.size() + b.size(),
        }
    }

    pub fn symbols(&self) -> BTreeSet<SymId> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<SymId>) {
        match self {
            SymExpr::Const(_) => {}
            SymExpr::Sym(s) => {
                out.insert(*s);
            }
            SymExpr::Not(a) | SymExpr::In(a, _) => a.collect_symbols(out),
            SymExpr::And(xs) | SymExpr::Or(xs) => xs.iter().for_each(|x| x.collect_symbols(out)),
            SymExpr::Eq(a, b) => {
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
            SymExpr::Ite(c, a, b) => {
                c.collect_symbols(out);
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
        }
    }

    pub fn mentions(&self, s: SymId) -> bool {
        self.symbols().contains(&s)
    }

    /// Replaces symbols by expressions, folding constants on the way up.
    pub fn subst(&self, f: &impl Fn(SymId) -> Option<SymExpr>) -> SymExpr {
        match self {
            SymExpr::Const(_) => self.clone(),
            SymExpr::Sym(s) => f(*s).unwrap_or_else(|| self.clone()),
            SymExpr::Not(a) => SymExpr::not(a.subst(f)),
            SymExpr::And(xs) => SymExpr::and(xs.iter().map(|x| x.subst(f))),
            SymExpr::Or(xs) => SymExpr::or(xs.iter().map(|x| x.subst(f))),
            SymExpr::Eq(a, b) => SymExpr::eq(a.subst(f), b.subst(f)),
            SymExpr::In(a, set) => SymExpr::member(a.subst(f), set.clone()),
            SymExpr::Ite(c, a, b) => SymExpr::ite(c.subst(f), a.subst(f), b.subst(f)),
        }
    }

    /// Value under a total valuation indexed by symbol id.
    pub fn eval(&self, val: &[Value]) -> Value {
        match self {
            SymExpr::Const(v) => v.clone(),
            SymExpr::Sym(s) => val[*s as usize].clone(),
            SymExpr::Not(a) => Value::Bool(!a.truth(val)),
            SymExpr::And(xs) => Value::Bool(xs.iter().all(|x| x.truth(val))),
            SymExpr::Or(xs) => Value::Bool(xs.iter().any(|x| x.truth(val))),
            SymExpr::Eq(a, b) => Value::Bool(a.eval(val) == b.eval(val)),
            SymExpr::In(a, set) => Value::Bool(set.contains(&a.eval(val))),
            SymExpr::Ite(c, a, b) => {
                if c.truth(val) {
                    a.eval(val)
                } else {
                    b.eval(val)
                }
            }
        }
    }

    pub fn truth(&self, val: &[Value]) -> bool {
        self.eval(val) == Value::Bool(true)
    }

    /// The expression as a DSL term, symbols rendered as variables.
    pub fn to_term(&self, table: &SymbolTable) -> Term {
        self.to_term_with(&|s| Term::Var(name(&table.get(s).name)))
    }

    pub fn to_term_with(&self, f: &impl Fn(SymId) -> Term) -> Term {
        match self {
            SymExpr::Const(v) => Term::Const(v.clone()),
            SymExpr::Sym(s) => f(*s),
            SymExpr::Not(a) => Term::not(a.to_term_with(f)),
            SymExpr::And(xs) => xs
                .iter()
                .map(|x| x.to_term_with(f))
                .reduce(Term::and)
                .unwrap_or(Term::lit(true)),
            SymExpr::Or(xs) => xs
                .iter()
                .map(|x| x.to_term_with(f))
                .reduce(Term::or)
                .unwrap_or(Term::lit(false)),
            SymExpr::Eq(a, b) => Term::eq(a.to_term_with(f), b.to_term_with(f)),
            SymExpr::In(a, set) if set.len() == 1 => Term::eq(
                a.to_term_with(f),
                Term::Const(set.iter().next().unwrap().clone()),
            ),
            SymExpr::In(a, set) => {
                Term::In(Box::new(a.to_term_with(f)), set.iter().cloned().collect())
            }
            SymExpr::Ite(c, a, b) => {
                Term::ite(c.to_term_with(f), a.to_term_with(f), b.to_term_with(f))
            }
        }
    }

    pub fn display(&self, table: &SymbolTable) -> String {
        crate::parser::print_term(&self.to_term(table))
    }
}

/// A symbolic location map.
pub type LocMap = BTreeMap<Location, SymExpr>;
