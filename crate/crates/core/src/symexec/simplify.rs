//! Equivalence-preserving rewriting of symbolic formulas.

use std::collections::{BTreeMap, BTreeSet};

use super::expr::{SymExpr, SymId, SymbolTable, FALSE, TRUE};
use crate::ast::Value;

/// Known value sets of symbols, used to rewrite subformulas under context.
type Ctx = BTreeMap<SymId, BTreeSet<Value>>;

const MAX_ROUNDS: usize = 4;

/// Rewrites `f` into an equivalent formula that is never larger under
/// [`SymExpr::size`].
pub fn simplify(table: &SymbolTable, f: &SymExpr) -> SymExpr {
    let out = Simplifier { table }.simp(f);
    if out.size() <= f.size() {
        out
    } else {
        f.clone()
    }
}

/// Existentially eliminates `s`: the disjunction of `f` over every value of
/// the symbol's domain, simplified.
pub fn elim_symbol(table: &SymbolTable, f: &SymExpr, s: SymId) -> SymExpr {
    if !f.mentions(s) {
        return simplify(table, f);
    }
    let parts: Vec<SymExpr> = table
        .get(s)
        .domain
        .iter()
        .map(|v| f.subst(&|x| (x == s).then(|| SymExpr::Const(v.clone()))))
        .collect();
    let g = SymExpr::or(parts);
    let out = simplify(table, &g);
    debug_assert!(!out.mentions(s));
    out
}

struct Simplifier<'a> {
    table: &'a SymbolTable,
}

impl Simplifier<'_> {
    fn domain_set(&self, s: SymId) -> BTreeSet<Value> {
        self.table.get(s).domain.iter().collect()
    }

    fn is_bool_sym(&self, s: SymId) -> bool {
        matches!(self.table.get(s).domain, crate::ast::Domain::Bool)
    }

    /// True when `e` is certainly boolean-sorted.
    fn is_bool(&self, e: &SymExpr) -> bool {
        match e {
            SymExpr::Const(v) => matches!(v, Value::Bool(_)),
            SymExpr::Sym(s) => self.is_bool_sym(*s),
            SymExpr::Not(_)
            | SymExpr::And(_)
            | SymExpr::Or(_)
            | SymExpr::Eq(..)
            | SymExpr::In(..) => true,
            SymExpr::Ite(_, a, b) => self.is_bool(a) || self.is_bool(b),
        }
    }

    /// Canonical form of the formula `s in set`.
    fn literal(&self, s: SymId, set: BTreeSet<Value>) -> SymExpr {
        let dom = self.domain_set(s);
        let set: BTreeSet<Value> = set.intersection(&dom).cloned().collect();
        if set.is_empty() {
            return FALSE;
        }
        if set.len() == dom.len() {
            return TRUE;
        }
        if self.is_bool_sym(s) {
            return if set.contains(&Value::Bool(true)) {
                SymExpr::Sym(s)
            } else {
                SymExpr::Not(Box::new(SymExpr::Sym(s)))
            };
        }
        SymExpr::In(Box::new(SymExpr::Sym(s)), set)
    }

    fn as_literal(&self, e: &SymExpr) -> Option<(SymId, BTreeSet<Value>)> {
        match e {
            SymExpr::Sym(s) if self.is_bool_sym(*s) => Some((*s, [Value::Bool(true)].into())),
            SymExpr::Not(inner) => match &**inner {
                SymExpr::Sym(s) if self.is_bool_sym(*s) => Some((*s, [Value::Bool(false)].into())),
                _ => None,
            },
            SymExpr::In(a, set) => match &**a {
                SymExpr::Sym(s) => Some((*s, set.clone())),
                _ => None,
            },
            _ => None,
        }
    }

    fn negate(&self, e: &SymExpr) -> SymExpr {
        self.simp(&SymExpr::not(e.clone()))
    }

    fn simp(&self, e: &SymExpr) -> SymExpr {
        match e {
            SymExpr::Const(_) | SymExpr::Sym(_) => e.clone(),
            SymExpr::Not(a) => {
                let a = self.simp(a);
                if let Some((s, set)) = self.as_literal(&a) {
                    let rest = self.domain_set(s).difference(&set).cloned().collect();
                    return self.literal(s, rest);
                }
                match a {
                    SymExpr::Not(inner) => *inner,
                    SymExpr::Const(Value::Bool(b)) => SymExpr::Const(Value::Bool(!b)),
                    a => SymExpr::Not(Box::new(a)),
                }
            }
            SymExpr::Eq(a, b) => self.simp_eq(self.simp(a), self.simp(b)),
            SymExpr::In(a, set) => self.simp_in(self.simp(a), set.clone()),
            SymExpr::Ite(c, a, b) => self.simp_ite(self.simp(c), self.simp(a), self.simp(b)),
            SymExpr::And(xs) => {
                self.simp_junction(xs.iter().map(|x| self.simp(x)).collect(), true, 0)
            }
            SymExpr::Or(xs) => {
                self.simp_junction(xs.iter().map(|x| self.simp(x)).collect(), false, 0)
            }
        }
    }

    fn simp_eq(&self, a: SymExpr, b: SymExpr) -> SymExpr {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        match (&a, &b) {
            (SymExpr::Const(x), SymExpr::Const(y)) => return SymExpr::Const(Value::Bool(x == y)),
            _ if a == b => return TRUE,
            (SymExpr::Const(c), SymExpr::Sym(s)) | (SymExpr::Sym(s), SymExpr::Const(c)) => {
                return self.literal(*s, [c.clone()].into());
            }
            (SymExpr::Const(Value::Bool(t)), x) | (x, SymExpr::Const(Value::Bool(t)))
                if self.is_bool(x) =>
            {
                return if *t { x.clone() } else { self.negate(x) };
            }
            (SymExpr::Const(c), SymExpr::Ite(..)) | (SymExpr::Ite(..), SymExpr::Const(c)) => {
                let other = if matches!(a, SymExpr::Ite(..)) {
                    &a
                } else {
                    &b
                };
                if let Some(r) = self.push_into_ite(other, &[c.clone()].into()) {
                    return r;
                }
            }
            _ => {}
        }
        if self.is_bool(&a) && self.is_bool(&b) && self.negate(&a) == b {
            return FALSE;
        }
        SymExpr::Eq(Box::new(a), Box::new(b))
    }

    fn simp_in(&self, a: SymExpr, set: BTreeSet<Value>) -> SymExpr {
        match &a {
            SymExpr::Const(v) => SymExpr::Const(Value::Bool(set.contains(v))),
            SymExpr::Sym(s) => self.literal(*s, set),
            SymExpr::Ite(..) => self
                .push_into_ite(&a, &set)
                .unwrap_or_else(|| SymExpr::In(Box::new(a), set)),
            _ if set.is_empty() => FALSE,
            _ => SymExpr::In(Box::new(a), set),
        }
    }

    /// Rewrites `ite(c, x, y) in set` into a boolean combination when that
    /// does not grow the formula.
    fn push_into_ite(&self, ite: &SymExpr, set: &BTreeSet<Value>) -> Option<SymExpr> {
        let SymExpr::Ite(c, x, y) = ite else {
            return None;
        };
        let x = self.simp_in((**x).clone(), set.clone());
        let y = self.simp_in((**y).clone(), set.clone());
        let r = self.simp_ite((**c).clone(), x, y);
        (r.size() <= ite.size() + 1 + set.len()).then_some(r)
    }

    fn simp_ite(&self, c: SymExpr, a: SymExpr, b: SymExpr) -> SymExpr {
        if let Some(t) = c.as_bool() {
            return if t { a } else { b };
        }
        if a == b {
            return a;
        }
        // narrow each branch with what the condition tells about a symbol
        let (a, b) = match self.as_literal(&c) {
            Some((s, set)) => {
                let mut ct = Ctx::new();
                ct.insert(s, set.clone());
                let mut ce = Ctx::new();
                ce.insert(s, self.domain_set(s).difference(&set).cloned().collect());
                (
                    self.simp(&self.restrict(&a, &ct)),
                    self.simp(&self.restrict(&b, &ce)),
                )
            }
            None => (a, b),
        };
        if a == b {
            return a;
        }
        match (a.as_bool(), b.as_bool()) {
            (Some(true), Some(false)) => c,
            (Some(false), Some(true)) => self.negate(&c),
            (Some(true), None) => self.simp_junction(vec![c, b], false, 0),
            (Some(false), None) => self.simp_junction(vec![self.negate(&c), b], true, 0),
            (None, Some(true)) => self.simp_junction(vec![self.negate(&c), a], false, 0),
            (None, Some(false)) => self.simp_junction(vec![c, a], true, 0),
            _ => SymExpr::Ite(Box::new(c), Box::new(a), Box::new(b)),
        }
    }

    /// Rewrites `e` assuming each symbol in `ctx` takes a value of its set.
    fn restrict(&self, e: &SymExpr, ctx: &Ctx) -> SymExpr {
        match e {
            SymExpr::Const(_) => e.clone(),
            SymExpr::Sym(s) => match ctx.get(s) {
                Some(d) if d.len() == 1 => SymExpr::Const(d.iter().next().unwrap().clone()),
                _ => e.clone(),
            },
            SymExpr::Not(a) => SymExpr::not(self.restrict(a, ctx)),
            SymExpr::And(xs) => SymExpr::and(xs.iter().map(|x| self.restrict(x, ctx))),
            SymExpr::Or(xs) => SymExpr::or(xs.iter().map(|x| self.restrict(x, ctx))),
            SymExpr::Eq(a, b) => {
                let (a, b) = (self.restrict(a, ctx), self.restrict(b, ctx));
                match (&a, &b) {
                    (SymExpr::Sym(s), SymExpr::Const(c)) | (SymExpr::Const(c), SymExpr::Sym(s)) => {
                        self.restrict_literal(*s, [c.clone()].into(), ctx)
                    }
                    _ => SymExpr::eq(a, b),
                }
            }
            SymExpr::In(a, set) => match self.restrict(a, ctx) {
                SymExpr::Sym(s) => self.restrict_literal(s, set.clone(), ctx),
                a => SymExpr::member(a, set.clone()),
            },
            SymExpr::Ite(c, a, b) => {
                let c = self.restrict(c, ctx);
                if let Some(t) = c.as_bool() {
                    return self.restrict(if t { a } else { b }, ctx);
                }
                match self.as_literal(&self.simp(&c)) {
                    Some((s, set)) => {
                        let base = ctx.get(&s).cloned().unwrap_or_else(|| self.domain_set(s));
                        let mut ct = ctx.clone();
                        ct.insert(s, base.intersection(&set).cloned().collect());
                        let mut ce = ctx.clone();
                        ce.insert(s, base.difference(&set).cloned().collect());
                        SymExpr::ite(c, self.restrict(a, &ct), self.restrict(b, &ce))
                    }
                    None => SymExpr::ite(c, self.restrict(a, ctx), self.restrict(b, ctx)),
                }
            }
        }
    }

    fn restrict_literal(&self, s: SymId, set: BTreeSet<Value>, ctx: &Ctx) -> SymExpr {
        match ctx.get(&s) {
            Some(d) if d.is_subset(&set) => TRUE,
            Some(d) if d.is_disjoint(&set) => FALSE,
            _ => self.literal(s, set),
        }
    }

    /// Simplifies a conjunction (`conj`) or disjunction of already
    /// simplified parts.
    fn simp_junction(&self, parts: Vec<SymExpr>, conj: bool, round: usize) -> SymExpr {
        let (unit, zero) = if conj { (TRUE, FALSE) } else { (FALSE, TRUE) };
        let mut flat = Vec::new();
        for p in parts {
            match p {
                SymExpr::And(xs) if conj => flat.extend(xs),
                SymExpr::Or(xs) if !conj => flat.extend(xs),
                p if p == unit => {}
                p if p == zero => return zero,
                p => flat.push(p),
            }
        }

        // fuse literals on the same symbol
        let mut lits: BTreeMap<SymId, BTreeSet<Value>> = BTreeMap::new();
        let mut others: BTreeSet<SymExpr> = BTreeSet::new();
        for p in flat {
            match self.as_literal(&p) {
                Some((s, set)) => {
                    let entry = lits.entry(s).or_insert_with(|| {
                        if conj {
                            self.domain_set(s)
                        } else {
                            BTreeSet::new()
                        }
                    });
                    *entry = if conj {
                        entry.intersection(&set).cloned().collect()
                    } else {
                        entry.union(&set).cloned().collect()
                    };
                }
                None => {
                    others.insert(p);
                }
            }
        }
        let mut items: Vec<SymExpr> = Vec::new();
        for (s, set) in &lits {
            let l = self.literal(*s, set.clone());
            if l == zero {
                return zero;
            }
            if l != unit {
                items.push(l);
            }
        }

        // complement law on non-literal parts
        for o in &others {
            if others.contains(&self.negate(o)) {
                return zero;
            }
        }

        // context: within a conjunction each part may assume the literals;
        // within a disjunction each part may assume the literals are false
        let ctx: Ctx = lits
            .iter()
            .map(|(s, set)| {
                let set = if conj {
                    set.clone()
                } else {
                    self.domain_set(*s).difference(set).cloned().collect()
                };
                (*s, set)
            })
            .collect();
        let mut changed = false;
        let mut rest: Vec<SymExpr> = Vec::new();
        for o in others {
            let r = if ctx.is_empty() {
                o.clone()
            } else {
                self.simp(&self.restrict(&o, &ctx))
            };
            if r != o {
                changed = true;
            }
            rest.push(r);
        }
        if changed && round < MAX_ROUNDS {
            items.extend(rest);
            return self.simp_junction(items, conj, round + 1);
        }
        items.extend(rest);

        let items = self.merge_pairs(items, conj);
        if items.len() == 1 {
            return items.into_iter().next().unwrap();
        }
        if items.is_empty() {
            return unit;
        }
        if let Some(f) = self.factor(&items, conj) {
            if round < MAX_ROUNDS {
                let g = self.simp(&f);
                if g.size() < build(items.clone(), conj).size() {
                    return g;
                }
            }
        }
        build(items, conj)
    }

    /// Views a part of an `outer` junction as a set of inner operands:
    /// disjuncts of an Or are conjunct sets, conjuncts of an And are
    /// disjunct sets.
    fn operands(e: &SymExpr, conj: bool) -> BTreeSet<SymExpr> {
        match (e, conj) {
            (SymExpr::Or(xs), true) | (SymExpr::And(xs), false) => xs.iter().cloned().collect(),
            _ => [e.clone()].into(),
        }
    }

    /// Pairwise absorption and resolution-style merging of parts that
    /// differ in a single operand.
    fn merge_pairs(&self, items: Vec<SymExpr>, conj: bool) -> Vec<SymExpr> {
        let mut sets: Vec<BTreeSet<SymExpr>> =
            items.iter().map(|i| Self::operands(i, conj)).collect();
        'outer: loop {
            for i in 0..sets.len() {
                for j in 0..sets.len() {
                    if i == j {
                        continue;
                    }
                    // absorption: x op (x op' y) = x
                    if sets[i].is_subset(&sets[j]) {
                        sets.remove(j);
                        continue 'outer;
                    }
                    if i > j {
                        continue;
                    }
                    let only_i: Vec<&SymExpr> = sets[i].difference(&sets[j]).collect();
                    let only_j: Vec<&SymExpr> = sets[j].difference(&sets[i]).collect();
                    if only_i.len() != 1 || only_j.len() != 1 {
                        continue;
                    }
                    let (a, b) = (only_i[0], only_j[0]);
                    let merged = match (self.as_literal(a), self.as_literal(b)) {
                        (Some((s, x)), Some((t, y))) if s == t => {
                            // Or of Ands unions the sets; And of Ors intersects them
                            let set = if conj {
                                x.intersection(&y).cloned().collect()
                            } else {
                                x.union(&y).cloned().collect()
                            };
                            Some(self.literal(s, set))
                        }
                        _ if self.negate(a) == *b => Some(if conj { FALSE } else { TRUE }),
                        _ => None,
                    };
                    let Some(m) = merged else { continue };
                    let mut common: BTreeSet<SymExpr> =
                        sets[i].intersection(&sets[j]).cloned().collect();
                    // inner unit drops out; inner zero collapses the part
                    let inner_unit = if conj { FALSE } else { TRUE };
                    let inner_zero = if conj { TRUE } else { FALSE };
                    if m == inner_zero {
                        common.clear();
                        common.insert(inner_zero);
                    } else if m != inner_unit {
                        common.insert(m);
                    }
                    sets[i] = common;
                    sets.remove(j);
                    continue 'outer;
                }
            }
            break;
        }
        let mut out: Vec<SymExpr> = Vec::new();
        for s in sets {
            let part = if conj {
                self.simp_inner(s.into_iter().collect(), false)
            } else {
                self.simp_inner(s.into_iter().collect(), true)
            };
            if conj && part == FALSE || !conj && part == TRUE {
                return vec![part];
            }
            if conj && part == TRUE || !conj && part == FALSE {
                continue;
            }
            out.push(part);
        }
        out.sort();
        out.dedup();
        out
    }

    fn simp_inner(&self, parts: Vec<SymExpr>, conj: bool) -> SymExpr {
        if parts.len() == 1 {
            return parts.into_iter().next().unwrap();
        }
        build(parts, conj)
    }

    /// Pulls operands shared by every part out of the junction.
    fn factor(&self, items: &[SymExpr], conj: bool) -> Option<SymExpr> {
        let sets: Vec<BTreeSet<SymExpr>> = items.iter().map(|i| Self::operands(i, conj)).collect();
        let mut common = sets[0].clone();
        for s in &sets[1..] {
            common = common.intersection(s).cloned().collect();
        }
        if common.is_empty() {
            return None;
        }
        let residues: Vec<SymExpr> = sets
            .iter()
            .map(|s| {
                let r: Vec<SymExpr> = s.difference(&common).cloned().collect();
                // an empty residue is the inner unit
                if r.is_empty() {
                    if conj {
                        FALSE
                    } else {
                        TRUE
                    }
                } else {
                    build(r, !conj)
                }
            })
            .collect();
        let mut outer: Vec<SymExpr> = common.into_iter().collect();
        outer.push(build(residues, conj));
        Some(build(outer, !conj))
    }
}

fn build(mut parts: Vec<SymExpr>, conj: bool) -> SymExpr {
    parts.sort();
    parts.dedup();
    if conj {
        SymExpr::and(parts)
    } else {
        SymExpr::or(parts)
    }
}
