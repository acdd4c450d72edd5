//! Name resolution, sort checking and shape validation of a parsed program.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::syntax::{
    RChooseSet, RDeclKind, RInit, RProgram, RRule, RSort, RStmt, RStmtKind, RTerm, RTermKind,
    SpannedSort,
};
use super::{Diagnostic, Span};
use crate::ast::{
    cartesian, name, Assumption, CandidateSet, CondX, EnumDecl, FunctionDecl, Location, MainRule,
    Mode, Name, NamedRule, Program, ProtectionInfo, Rule, Sort, State, Term, Value,
};

/// Upper bound on the number of ground locations of a single function.
const MAX_LOCATIONS: u64 = 1 << 16;

type Scope = Vec<(String, Sort)>;

struct Protected {
    plain: Sort,
    response_bits: u32,
    init_token: u64,
}

struct Elab {
    diags: Vec<Diagnostic>,
    enums: Vec<EnumDecl>,
    literal_of: HashMap<String, Name>,
    funcs: Vec<FunctionDecl>,
    func_index: HashMap<String, usize>,
    /// Parameter sorts of callable rules; `None` for main rules.
    rule_sigs: HashMap<String, Option<Vec<Sort>>>,
    ctl: Option<Name>,
    protected: Option<Protected>,
}

fn compatible(a: &Sort, b: &Sort) -> bool {
    match (a, b) {
        (Sort::Bool, Sort::Bool) | (Sort::Int { .. }, Sort::Int { .. }) => true,
        (Sort::Enum(x), Sort::Enum(y)) => x == y,
        _ => false,
    }
}

fn join(a: Sort, b: &Sort) -> Sort {
    match (a, b) {
        (Sort::Int { lo, hi }, Sort::Int { lo: l2, hi: h2 }) => Sort::Int {
            lo: lo.min(*l2),
            hi: hi.max(*h2),
        },
        (a, _) => a,
    }
}

pub fn elaborate(raw: &RProgram) -> Result<Program, Vec<Diagnostic>> {
    let mut e = Elab {
        diags: Vec::new(),
        enums: Vec::new(),
        literal_of: HashMap::new(),
        funcs: Vec::new(),
        func_index: HashMap::new(),
        rule_sigs: HashMap::new(),
        ctl: None,
        protected: None,
    };
    let program = e.program(raw);
    if e.diags.iter().any(|d| d.severity == super::Severity::Error) {
        return Err(e.diags);
    }
    Ok(program.expect("no errors implies a program"))
}

impl Elab {
    fn err(&mut self, code: &'static str, msg: impl Into<String>, span: Span) {
        self.diags.push(Diagnostic::error(code, msg, span));
    }

    fn failed(&self) -> bool {
        !self.diags.is_empty()
    }

    fn func(&self, f: &str) -> Option<&FunctionDecl> {
        self.func_index.get(f).map(|&i| &self.funcs[i])
    }

    fn domain_len(&self, sort: &Sort) -> u64 {
        match sort {
            Sort::Bool => 2,
            Sort::Int { lo, hi } => (hi - lo + 1).max(0) as u64,
            Sort::Enum(n) => self
                .enums
                .iter()
                .find(|d| d.name == *n)
                .map(|d| d.literals.len() as u64)
                .unwrap_or(0),
        }
    }

    fn domain_values(&self, sort: &Sort) -> Vec<Value> {
        match sort {
            Sort::Bool => vec![Value::Bool(false), Value::Bool(true)],
            Sort::Int { lo, hi } => (*lo..=*hi).map(Value::Int).collect(),
            Sort::Enum(n) => self
                .enums
                .iter()
                .find(|d| d.name == *n)
                .map(|d| d.literals.iter().map(|l| Value::Enum(l.clone())).collect())
                .unwrap_or_default(),
        }
    }

    fn program(&mut self, raw: &RProgram) -> Option<Program> {
        self.declare_enums(raw);
        self.declare_functions(raw);
        self.declare_ctl(raw);
        self.declare_protection(raw);
        let unsafe_formula = self.unsafe_formula(raw);
        self.register_rules(raw);
        let condx = self.condx(raw);
        let mut named_rules = Vec::new();
        let mut main_rules = Vec::new();
        for r in &raw.rules {
            match &r.params {
                Some(params) => {
                    if let Some(nr) = self.named_rule(r, params) {
                        named_rules.push(nr);
                    }
                }
                None => {
                    if let Some(mr) = self.main_rule(r) {
                        main_rules.push(mr);
                    }
                }
            }
        }
        self.check_recursion(raw, &named_rules);
        let initial_state = self.initial_state();
        let assumptions = self.assumptions(raw, &initial_state);
        if self.failed() {
            return None;
        }
        let protection = self.protected.as_ref().map(|p| ProtectionInfo {
            plain_sort: p.plain.clone(),
            response_bits: p.response_bits,
            init_token: p.init_token,
            condx: condx.clone().expect("validated"),
        });
        Some(Program {
            name: name(&raw.name),
            enums: self.enums.clone(),
            functions: self.funcs.clone(),
            named_rules,
            main_rules,
            ctl: self.ctl.clone()?,
            unsafe_formula: unsafe_formula?,
            assumptions,
            protection,
            initial_state,
        })
    }

    fn declare_enums(&mut self, raw: &RProgram) {
        for d in &raw.decls {
            let RDeclKind::Enum(n, lits) = &d.kind else {
                continue;
            };
            if self.enums.iter().any(|e| &*e.name == n) {
                self.err(
                    "E-DUPLICATE",
                    format!("enumeration `{n}` is declared twice"),
                    d.span,
                );
                continue;
            }
            if lits.is_empty() {
                self.err(
                    "E-EMPTY-SORT",
                    format!("enumeration `{n}` has no literals"),
                    d.span,
                );
            }
            let mut literals = Vec::new();
            for (l, span) in lits {
                if self.literal_of.contains_key(l) {
                    self.err(
                        "E-DUPLICATE",
                        format!("literal `{l}` is declared twice"),
                        *span,
                    );
                    continue;
                }
                self.literal_of.insert(l.clone(), name(n));
                literals.push(name(l));
            }
            self.enums.push(EnumDecl {
                name: name(n),
                literals,
            });
        }
    }

    fn sort(&mut self, s: &SpannedSort) -> Option<Sort> {
        match &s.sort {
            RSort::Bool => Some(Sort::Bool),
            RSort::Int(lo, hi) => {
                if lo > hi {
                    self.err(
                        "E-EMPTY-SORT",
                        format!("integer range {lo}..{hi} is empty"),
                        s.span,
                    );
                    return None;
                }
                Some(Sort::Int { lo: *lo, hi: *hi })
            }
            RSort::Named(n) => {
                if self.enums.iter().any(|e| &*e.name == n) {
                    Some(Sort::Enum(name(n)))
                } else {
                    self.err("E-UNKNOWN-SORT", format!("unknown sort `{n}`"), s.span);
                    None
                }
            }
        }
    }

    fn declare_functions(&mut self, raw: &RProgram) {
        for d in &raw.decls {
            let RDeclKind::Func {
                mode,
                name: fname,
                args,
                result,
                init,
            } = &d.kind
            else {
                continue;
            };
            if self.func_index.contains_key(fname) {
                self.err(
                    "E-DUPLICATE",
                    format!("function `{fname}` is declared twice"),
                    d.span,
                );
                continue;
            }
            if self.literal_of.contains_key(fname) {
                self.err(
                    "E-DUPLICATE",
                    format!("function `{fname}` clashes with a literal"),
                    d.span,
                );
                continue;
            }
            let arg_sorts: Option<Vec<Sort>> = args.iter().map(|s| self.sort(s)).collect();
            let result = self.sort(result);
            let (Some(arg_sorts), Some(result)) = (arg_sorts, result) else {
                continue;
            };
            let count = arg_sorts
                .iter()
                .map(|s| self.domain_len(s))
                .try_fold(1u64, |acc, n| acc.checked_mul(n))
                .unwrap_or(u64::MAX);
            if count > MAX_LOCATIONS {
                self.err(
                    "E-SORT",
                    format!("function `{fname}` has too many locations ({count})"),
                    d.span,
                );
                continue;
            }
            let init = match (mode, init) {
                (Mode::Monitored, Some(_)) => {
                    self.err(
                        "E-MONITORED-INIT",
                        format!("monitored function `{fname}` cannot have an initializer"),
                        d.span,
                    );
                    None
                }
                (Mode::Monitored, None) => None,
                (_, None) => {
                    self.err(
                        "E-UNINIT",
                        format!("{mode} function `{fname}` needs an initializer"),
                        d.span,
                    );
                    None
                }
                (_, Some(init)) => self.init_map(fname, &arg_sorts, &result, init, d.span),
            };
            self.func_index.insert(fname.clone(), self.funcs.len());
            self.funcs.push(FunctionDecl {
                name: name(fname),
                arg_sorts,
                result,
                mode: *mode,
                init,
            });
        }
    }

    fn init_map(
        &mut self,
        fname: &str,
        arg_sorts: &[Sort],
        result: &Sort,
        init: &RInit,
        span: Span,
    ) -> Option<BTreeMap<Vec<Value>, Value>> {
        let domains: Vec<_> = arg_sorts
            .iter()
            .map(|s| crate::ast::Domain::Int {
                lo: 0,
                hi: self.domain_len(s) as i64 - 1,
            })
            .collect();
        let tuples: Vec<Vec<Value>> = cartesian(&domains)
            .into_iter()
            .map(|idx| {
                idx.iter()
                    .zip(arg_sorts)
                    .map(|(i, s)| self.domain_values(s)[i.as_int().unwrap() as usize].clone())
                    .collect()
            })
            .collect();
        match init {
            RInit::Single(t) => {
                let v = self.const_value(t, result, true)?;
                Some(tuples.into_iter().map(|k| (k, v.clone())).collect())
            }
            RInit::Map(entries) => {
                let mut explicit = BTreeMap::new();
                let mut default = None;
                let mut ok = true;
                for (key, value, espan) in entries {
                    let v = self.const_value(value, result, true);
                    match key {
                        None => {
                            if default.is_some() {
                                self.err("E-DUPLICATE", "initializer has two `_` entries", *espan);
                            }
                            default = v;
                        }
                        Some(key) => {
                            if key.len() != arg_sorts.len() {
                                self.err(
                                    "E-ARITY",
                                    format!(
                                        "`{fname}` takes {} arguments, key has {}",
                                        arg_sorts.len(),
                                        key.len()
                                    ),
                                    *espan,
                                );
                                ok = false;
                                continue;
                            }
                            let k: Option<Vec<Value>> = key
                                .iter()
                                .zip(arg_sorts)
                                .map(|(t, s)| self.const_value(t, s, true))
                                .collect();
                            match (k, v) {
                                (Some(k), Some(v)) => {
                                    if explicit.insert(k, v).is_some() {
                                        self.err(
                                            "E-DUPLICATE",
                                            "initializer lists a key twice",
                                            *espan,
                                        );
                                    }
                                }
                                _ => ok = false,
                            }
                        }
                    }
                }
                if !ok {
                    return None;
                }
                let mut out = BTreeMap::new();
                for k in tuples {
                    match explicit.get(&k).or(default.as_ref()) {
                        Some(v) => {
                            out.insert(k, v.clone());
                        }
                        None => {
                            let shown: Vec<String> = k.iter().map(|v| v.to_string()).collect();
                            self.err(
                                "E-UNINIT",
                                format!(
                                    "initializer of `{fname}` does not cover ({})",
                                    shown.join(", ")
                                ),
                                span,
                            );
                            return None;
                        }
                    }
                }
                Some(out)
            }
        }
    }

    /// A constant of the expected sort. With `strict`, integers must lie in
    /// the range of the sort.
    fn const_value(&mut self, t: &RTerm, expected: &Sort, strict: bool) -> Option<Value> {
        let (v, sort) = self.literal(t)?;
        let fits = match (&v, expected) {
            (Value::Int(i), Sort::Int { lo, hi }) => !strict || (lo <= i && i <= hi),
            _ => compatible(&sort, expected),
        };
        if !fits {
            self.err(
                "E-SORT",
                format!("expected a value of sort {expected}, found `{v}`"),
                t.span,
            );
            return None;
        }
        Some(v)
    }

    fn literal(&mut self, t: &RTerm) -> Option<(Value, Sort)> {
        match &t.kind {
            RTermKind::Int(i) => Some((Value::Int(*i), Sort::Int { lo: *i, hi: *i })),
            RTermKind::Bool(b) => Some((Value::Bool(*b), Sort::Bool)),
            RTermKind::Ident(x) => match self.literal_of.get(x) {
                Some(e) => Some((Value::literal(x), Sort::Enum(e.clone()))),
                None => {
                    self.err(
                        "E-UNKNOWN-LITERAL",
                        format!("unknown literal `{x}`"),
                        t.span,
                    );
                    None
                }
            },
            _ => {
                self.err("E-SYNTAX", "expected a constant", t.span);
                None
            }
        }
    }

    fn declare_ctl(&mut self, raw: &RProgram) {
        let decls: Vec<_> = raw
            .decls
            .iter()
            .filter_map(|d| match &d.kind {
                RDeclKind::CtlState(c) => Some((c.clone(), d.span)),
                _ => None,
            })
            .collect();
        match decls.as_slice() {
            [] => self.err("E-CTL", "missing `ctlstate` declaration", Span::START),
            [(c, span)] => {
                let problem = match self.func(c) {
                    None => Some(format!("control-state function `{c}` is not declared")),
                    Some(f) if f.mode != Mode::Controlled => {
                        Some(format!("`{c}` must be a controlled function"))
                    }
                    Some(f) if !f.arg_sorts.is_empty() => Some(format!("`{c}` must be nullary")),
                    Some(f) if f.result == Sort::Bool => Some(format!(
                        "`{c}` must range over an enumeration or an integer range"
                    )),
                    Some(_) => None,
                };
                match problem {
                    Some(msg) => self.err("E-CTL", msg, *span),
                    None => self.ctl = Some(name(c)),
                }
            }
            [_, (_, span), ..] => self.err("E-CTL", "more than one `ctlstate` declaration", *span),
        }
    }

    fn declare_protection(&mut self, raw: &RProgram) {
        let mut seen = false;
        for d in &raw.decls {
            let RDeclKind::Protected {
                ctl,
                plain,
                responses,
                init_token,
            } = &d.kind
            else {
                continue;
            };
            if seen {
                self.err("E-PROTECT", "more than one `protected` declaration", d.span);
                continue;
            }
            seen = true;
            let Some(plain) = self.sort(plain) else {
                continue;
            };
            if plain == Sort::Bool {
                self.err(
                    "E-PROTECT",
                    "plain control states cannot be boolean",
                    d.span,
                );
                continue;
            }
            if !(1..=32).contains(responses) {
                self.err(
                    "E-PROTECT",
                    "responses must be between 1 and 32 bits",
                    d.span,
                );
                continue;
            }
            let top = (1i64 << responses) - 1;
            if self.ctl.as_deref() != Some(ctl.as_str()) {
                self.err(
                    "E-PROTECT",
                    format!("`{ctl}` is not the control-state function"),
                    d.span,
                );
                continue;
            }
            let decl = self.func(ctl).expect("ctl checked");
            if decl.result != (Sort::Int { lo: 0, hi: top }) {
                let msg = format!("protected `{ctl}` must have sort int[0..{top}]");
                self.err("E-PROTECT", msg, d.span);
                continue;
            }
            let init_ok = decl
                .init
                .as_ref()
                .and_then(|m| m.get(&Vec::new()))
                .is_some_and(|v| *v == Value::Int(*init_token as i64));
            if !init_ok {
                self.err(
                    "E-PROTECT",
                    format!("`{ctl}` must be initialized to the init token"),
                    d.span,
                );
                continue;
            }
            self.protected = Some(Protected {
                plain,
                response_bits: *responses as u32,
                init_token: *init_token,
            });
        }
    }

    fn unsafe_formula(&mut self, raw: &RProgram) -> Option<Term> {
        let decls: Vec<_> = raw
            .decls
            .iter()
            .filter_map(|d| match &d.kind {
                RDeclKind::Unsafe(t) => Some((t, d.span)),
                _ => None,
            })
            .collect();
        match decls.as_slice() {
            [] => {
                self.err("E-UNSAFE", "missing `unsafe` declaration", Span::START);
                None
            }
            [(t, span)] => {
                let (term, sort) = self.term(t, &mut Vec::new())?;
                if sort != Sort::Bool {
                    self.err("E-UNSAFE", "the violation predicate must be boolean", *span);
                    return None;
                }
                let mut monitored = None;
                term.visit(&mut |t| {
                    if let Term::App(f, _) = t {
                        if self.func(f).is_some_and(|d| d.mode == Mode::Monitored) {
                            monitored = Some(f.clone());
                        }
                    }
                });
                if let Some(f) = monitored {
                    let msg =
                        format!("the violation predicate cannot read monitored function `{f}`");
                    self.err("E-UNSAFE", msg, *span);
                    return None;
                }
                Some(term)
            }
            [_, (_, span), ..] => {
                self.err("E-UNSAFE", "more than one `unsafe` declaration", *span);
                None
            }
        }
    }

    fn condx(&mut self, raw: &RProgram) -> Option<CondX> {
        let decls: Vec<_> = raw
            .decls
            .iter()
            .filter_map(|d| match &d.kind {
                RDeclKind::CondX(v, t) => Some((v, t, d.span)),
                _ => None,
            })
            .collect();
        let plain = self.protected.as_ref().map(|p| p.plain.clone());
        match (decls.as_slice(), plain) {
            ([], None) => None,
            ([], Some(_)) => {
                self.err(
                    "E-PROTECT",
                    "protected program lacks a `condx` declaration",
                    Span::START,
                );
                None
            }
            ([(_, _, span), ..], None) => {
                self.err(
                    "E-PROTECT",
                    "`condx` is only allowed in protected programs",
                    *span,
                );
                None
            }
            ([(var, t, span)], Some(plain)) => {
                if !self.binder_ok(var, *span) {
                    return None;
                }
                let mut scope = vec![((*var).clone(), plain)];
                let (formula, sort) = self.term(t, &mut scope)?;
                if sort != Sort::Bool {
                    self.err("E-SORT", "`condx` must be boolean", *span);
                    return None;
                }
                Some(CondX {
                    var: name(var),
                    formula,
                })
            }
            ([_, (_, _, span), ..], Some(_)) => {
                self.err("E-PROTECT", "more than one `condx` declaration", *span);
                None
            }
        }
    }

    fn binder_ok(&mut self, var: &str, span: Span) -> bool {
        if self.literal_of.contains_key(var) || self.func_index.contains_key(var) {
            self.err(
                "E-DUPLICATE",
                format!("variable `{var}` shadows a declaration"),
                span,
            );
            return false;
        }
        true
    }

    fn register_rules(&mut self, raw: &RProgram) {
        for r in &raw.rules {
            if self.rule_sigs.contains_key(&r.name) {
                self.err(
                    "E-DUPLICATE",
                    format!("rule `{}` is declared twice", r.name),
                    r.span,
                );
                continue;
            }
            let sig = r.params.as_ref().map(|ps| {
                ps.iter()
                    .map(|(_, s)| self.sort(s).unwrap_or(Sort::Bool))
                    .collect::<Vec<_>>()
            });
            self.rule_sigs.insert(r.name.clone(), sig);
        }
    }

    fn named_rule(&mut self, r: &RRule, params: &[(String, SpannedSort)]) -> Option<NamedRule> {
        let sorts = self.rule_sigs.get(&r.name).cloned().flatten()?;
        let mut scope = Vec::new();
        let mut seen = BTreeSet::new();
        for ((p, _), s) in params.iter().zip(&sorts) {
            if !seen.insert(p.clone()) {
                self.err(
                    "E-DUPLICATE",
                    format!("parameter `{p}` is declared twice"),
                    r.span,
                );
            }
            self.binder_ok(p, r.span);
            scope.push((p.clone(), s.clone()));
        }
        let body = self.stmts(&r.body, &mut scope, false)?;
        Some(NamedRule {
            name: name(&r.name),
            params: params
                .iter()
                .zip(sorts)
                .map(|((p, _), s)| (name(p), s))
                .collect(),
            body,
        })
    }

    fn main_rule(&mut self, r: &RRule) -> Option<MainRule> {
        let shaped = matches!(
            r.body.as_slice(),
            [RStmt {
                kind: RStmtKind::If(..),
                ..
            }]
        );
        if !shaped {
            self.err(
                "E-CTLSHAPE",
                format!(
                    "main rule `{}` must be a single `if` on the control state",
                    r.name
                ),
                r.span,
            );
            return None;
        }
        let mut body = self.stmts(&r.body, &mut Vec::new(), true)?;
        let body = body.pop()?;
        if let (Rule::Cond { guard, .. }, Some(ctl)) = (&body, &self.ctl) {
            if !guard.reads(ctl) {
                let msg = format!("guard of main rule `{}` does not constrain `{ctl}`", r.name);
                self.err("E-CTLSHAPE", msg, r.body[0].span);
                return None;
            }
        }
        Some(MainRule {
            name: name(&r.name),
            body,
        })
    }

    fn stmts(&mut self, stmts: &[RStmt], scope: &mut Scope, main: bool) -> Option<Vec<Rule>> {
        let out: Vec<Option<Rule>> = stmts.iter().map(|s| self.stmt(s, scope, main)).collect();
        out.into_iter().collect()
    }

    fn bool_term(&mut self, t: &RTerm, scope: &mut Scope) -> Option<Term> {
        let (term, sort) = self.term(t, scope)?;
        if sort != Sort::Bool {
            self.err(
                "E-SORT",
                format!("expected a boolean, found sort {sort}"),
                t.span,
            );
            return None;
        }
        Some(term)
    }

    fn stmt(&mut self, s: &RStmt, scope: &mut Scope, main: bool) -> Option<Rule> {
        match &s.kind {
            RStmtKind::If(g, then_b, else_b) => {
                let guard = self.bool_term(g, scope);
                let then_rules = self.stmts(then_b, scope, main);
                let else_rules = match else_b {
                    Some(b) => Some(self.stmts(b, scope, main)?),
                    None => None,
                };
                Some(Rule::Cond {
                    guard: guard?,
                    then_rules: then_rules?,
                    else_rules,
                })
            }
            RStmtKind::Update(f, args, value) => self.update(f, args, value, s.span, scope, main),
            RStmtKind::Par(body) => Some(Rule::Par(self.stmts(body, scope, main)?)),
            RStmtKind::Choose(var, set, body) => {
                if !self.binder_ok(var, s.span) {
                    return None;
                }
                let (sort, set) = match set {
                    RChooseSet::Values(vals) => {
                        let lits: Option<Vec<(Value, Sort)>> =
                            vals.iter().map(|v| self.literal(v)).collect();
                        let lits = lits?;
                        let Some((_, first)) = lits.first().cloned() else {
                            self.err("E-SORT", "candidate set of `choose` is empty", s.span);
                            return None;
                        };
                        let mut sort = first;
                        for (v, vs) in &lits {
                            if !compatible(&sort, vs) {
                                self.err(
                                    "E-SORT",
                                    format!("candidate `{v}` has sort {vs}, expected {sort}"),
                                    s.span,
                                );
                                return None;
                            }
                            sort = join(sort, vs);
                        }
                        (
                            sort,
                            CandidateSet::Values(lits.into_iter().map(|(v, _)| v).collect()),
                        )
                    }
                    RChooseSet::Sort(ss, pred) => {
                        let sort = self.sort(ss)?;
                        let pred = match pred {
                            Some(p) => {
                                scope.push((var.clone(), sort.clone()));
                                let t = self.bool_term(p, scope);
                                scope.pop();
                                Some(t?)
                            }
                            None => None,
                        };
                        (sort.clone(), CandidateSet::Sort { sort, pred })
                    }
                };
                scope.push((var.clone(), sort.clone()));
                let body = self.stmts(body, scope, main);
                scope.pop();
                Some(Rule::Choose {
                    var: name(var),
                    sort,
                    set,
                    body: body?,
                })
            }
            RStmtKind::Let(var, value, body) => {
                if !self.binder_ok(var, s.span) {
                    return None;
                }
                let (value, sort) = self.term(value, scope)?;
                scope.push((var.clone(), sort));
                let body = self.stmts(body, scope, main);
                scope.pop();
                Some(Rule::Let {
                    var: name(var),
                    value,
                    body: body?,
                })
            }
            RStmtKind::Call(r, args) => {
                let sig = match self.rule_sigs.get(r).cloned() {
                    Some(Some(sig)) => sig,
                    Some(None) => {
                        self.err(
                            "E-UNKNOWN-RULE",
                            format!("main rule `{r}` cannot be called"),
                            s.span,
                        );
                        return None;
                    }
                    None => {
                        self.err("E-UNKNOWN-RULE", format!("unknown rule `{r}`"), s.span);
                        return None;
                    }
                };
                if sig.len() != args.len() {
                    let msg = format!(
                        "rule `{r}` takes {} arguments, {} given",
                        sig.len(),
                        args.len()
                    );
                    self.err("E-ARITY", msg, s.span);
                    return None;
                }
                let args = self.args(args, &sig, scope)?;
                Some(Rule::Call {
                    rule: name(r),
                    args,
                })
            }
            RStmtKind::ChooseCtl(c) => {
                if self.protected.is_none() {
                    self.err(
                        "E-PROTECT",
                        "`choosectl` is only allowed in protected programs",
                        s.span,
                    );
                    return None;
                }
                if !main {
                    self.err(
                        "E-CTLSHAPE",
                        "`choosectl` may only occur in main rules",
                        s.span,
                    );
                    return None;
                }
                Some(Rule::ChooseCtl { challenge: *c })
            }
        }
    }

    fn args(&mut self, args: &[RTerm], sorts: &[Sort], scope: &mut Scope) -> Option<Vec<Term>> {
        let mut out = Vec::new();
        let mut ok = true;
        for (a, s) in args.iter().zip(sorts) {
            match self.term(a, scope) {
                Some((t, ts)) if compatible(&ts, s) => out.push(t),
                Some((_, ts)) => {
                    self.err(
                        "E-SORT",
                        format!("expected an argument of sort {s}, found sort {ts}"),
                        a.span,
                    );
                    ok = false;
                }
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn update(
        &mut self,
        f: &str,
        args: &[RTerm],
        value: &RTerm,
        span: Span,
        scope: &mut Scope,
        main: bool,
    ) -> Option<Rule> {
        let Some(decl) = self.func(f).cloned() else {
            if self.literal_of.contains_key(f) {
                self.err(
                    "E-UPDATE-TARGET",
                    format!("`{f}` is a literal and cannot be updated"),
                    span,
                );
            } else {
                self.err(
                    "E-UNKNOWN-FUNCTION",
                    format!("unknown function `{f}`"),
                    span,
                );
            }
            return None;
        };
        if decl.mode != Mode::Controlled {
            self.err(
                "E-UPDATE-TARGET",
                format!("{} function `{f}` cannot be updated", decl.mode),
                span,
            );
            return None;
        }
        if decl.arg_sorts.len() != args.len() {
            let msg = format!(
                "`{f}` takes {} arguments, {} given",
                decl.arg_sorts.len(),
                args.len()
            );
            self.err("E-ARITY", msg, span);
            return None;
        }
        let args = self.args(args, &decl.arg_sorts, scope);
        let (vterm, vsort) = self.term(value, scope)?;
        if !compatible(&vsort, &decl.result) {
            let msg = format!(
                "`{f}` has sort {}, assigned a value of sort {vsort}",
                decl.result
            );
            self.err("E-SORT", msg, value.span);
            return None;
        }
        if let (Term::Const(Value::Int(i)), Sort::Int { lo, hi }) = (&vterm, &decl.result) {
            if i < lo || i > hi {
                self.err(
                    "E-SORT",
                    format!("`{i}` is outside the range of `{f}`"),
                    value.span,
                );
                return None;
            }
        }
        if self.ctl.as_deref() == Some(f) {
            if self.protected.is_some() {
                self.err(
                    "E-CTLSHAPE",
                    "protected programs change the control state only via `choosectl`",
                    span,
                );
                return None;
            }
            if !main {
                self.err(
                    "E-CTLSHAPE",
                    format!("`{f}` may only be updated inside main rules"),
                    span,
                );
                return None;
            }
            if !matches!(vterm, Term::Const(_)) {
                self.err(
                    "E-CTLSHAPE",
                    format!("updates of `{f}` must assign a constant"),
                    value.span,
                );
                return None;
            }
        }
        Some(Rule::Update {
            func: name(f),
            args: args?,
            value: vterm,
        })
    }

    fn term(&mut self, t: &RTerm, scope: &mut Scope) -> Option<(Term, Sort)> {
        match &t.kind {
            RTermKind::Int(i) => Some((Term::Const(Value::Int(*i)), Sort::Int { lo: *i, hi: *i })),
            RTermKind::Bool(b) => Some((Term::Const(Value::Bool(*b)), Sort::Bool)),
            RTermKind::Ident(x) => {
                if let Some((_, s)) = scope.iter().rev().find(|(n, _)| n == x) {
                    return Some((Term::Var(name(x)), s.clone()));
                }
                if let Some(decl) = self.func(x) {
                    if !decl.arg_sorts.is_empty() {
                        let msg =
                            format!("`{x}` takes {} arguments, 0 given", decl.arg_sorts.len());
                        self.err("E-ARITY", msg, t.span);
                        return None;
                    }
                    return Some((Term::App(name(x), Vec::new()), decl.result.clone()));
                }
                let (v, s) = self.literal(t)?;
                Some((Term::Const(v), s))
            }
            RTermKind::App(f, args) => {
                let Some(decl) = self.func(f).cloned() else {
                    self.err(
                        "E-UNKNOWN-FUNCTION",
                        format!("unknown function `{f}`"),
                        t.span,
                    );
                    return None;
                };
                if decl.arg_sorts.len() != args.len() {
                    let msg = format!(
                        "`{f}` takes {} arguments, {} given",
                        decl.arg_sorts.len(),
                        args.len()
                    );
                    self.err("E-ARITY", msg, t.span);
                    return None;
                }
                let args = self.args(args, &decl.arg_sorts, scope)?;
                Some((Term::App(name(f), args), decl.result))
            }
            RTermKind::Not(a) => Some((Term::not(self.bool_term(a, scope)?), Sort::Bool)),
            RTermKind::And(a, b) | RTermKind::Or(a, b) => {
                let x = self.bool_term(a, scope);
                let y = self.bool_term(b, scope);
                let (x, y) = (x?, y?);
                let t = if matches!(t.kind, RTermKind::And(..)) {
                    Term::and(x, y)
                } else {
                    Term::or(x, y)
                };
                Some((t, Sort::Bool))
            }
            RTermKind::Eq(a, b) | RTermKind::Neq(a, b) => {
                let x = self.term(a, scope);
                let y = self.term(b, scope);
                let ((x, xs), (y, ys)) = (x?, y?);
                if !compatible(&xs, &ys) {
                    self.err(
                        "E-SORT",
                        format!("cannot compare sort {xs} with sort {ys}"),
                        t.span,
                    );
                    return None;
                }
                let eq = Term::eq(x, y);
                let t = if matches!(t.kind, RTermKind::Neq(..)) {
                    Term::not(eq)
                } else {
                    eq
                };
                Some((t, Sort::Bool))
            }
            RTermKind::In(a, set) => {
                let (x, xs) = self.term(a, scope)?;
                let vals: Option<Vec<Value>> = set
                    .iter()
                    .map(|v| self.const_value(v, &xs, false))
                    .collect();
                Some((Term::In(Box::new(x), vals?), Sort::Bool))
            }
            RTermKind::EncIn(a, table) => {
                let Some(p) = self.protected.as_ref() else {
                    self.err(
                        "E-PROTECT",
                        "`enc` is only allowed in protected programs",
                        t.span,
                    );
                    return None;
                };
                let (plain, top) = (p.plain.clone(), (1u64 << p.response_bits) - 1);
                let (x, xs) = self.term(a, scope)?;
                if !matches!(xs, Sort::Int { .. }) {
                    self.err(
                        "E-SORT",
                        "encoded membership needs an integer operand",
                        t.span,
                    );
                    return None;
                }
                let mut out = Vec::new();
                for (key, responses) in table {
                    let k = self.const_value(key, &plain, true)?;
                    if let Some(r) = responses.iter().find(|r| **r > top) {
                        self.err(
                            "E-PROTECT",
                            format!("response {r} exceeds the response width"),
                            key.span,
                        );
                        return None;
                    }
                    out.push((k, responses.clone()));
                }
                Some((Term::EncIn(Box::new(x), out), Sort::Bool))
            }
            RTermKind::Ite(c, a, b) => {
                let c = self.bool_term(c, scope);
                let x = self.term(a, scope);
                let y = self.term(b, scope);
                let (c, (x, xs), (y, ys)) = (c?, x?, y?);
                if !compatible(&xs, &ys) {
                    self.err(
                        "E-SORT",
                        format!("`ite` branches have sorts {xs} and {ys}"),
                        t.span,
                    );
                    return None;
                }
                Some((Term::ite(c, x, y), join(xs, &ys)))
            }
        }
    }

    fn check_recursion(&mut self, raw: &RProgram, rules: &[NamedRule]) {
        let calls: HashMap<&str, Vec<&str>> = rules
            .iter()
            .map(|r| {
                let mut callees = Vec::new();
                for b in &r.body {
                    b.visit(&mut |x| {
                        if let Rule::Call { rule, .. } = x {
                            callees.push(&**rule);
                        }
                    });
                }
                (&*r.name, callees)
            })
            .collect();
        for r in rules {
            // depth-first search for a path back to `r`
            let mut stack = calls.get(&*r.name).cloned().unwrap_or_default();
            let mut seen = BTreeSet::new();
            while let Some(c) = stack.pop() {
                if c == &*r.name {
                    let span = raw.rules.iter().find(|x| x.name == *r.name).map(|x| x.span);
                    self.err(
                        "E-RECURSION",
                        format!("rule `{}` calls itself", r.name),
                        span.unwrap_or(Span::START),
                    );
                    break;
                }
                if seen.insert(c) {
                    stack.extend(calls.get(c).cloned().unwrap_or_default());
                }
            }
        }
    }

    fn initial_state(&self) -> State {
        let mut s = State::default();
        for f in &self.funcs {
            if let Some(init) = &f.init {
                for (k, v) in init {
                    s.values
                        .insert(Location::new(f.name.clone(), k.clone()), v.clone());
                }
            }
        }
        s
    }

    fn assumptions(&mut self, raw: &RProgram, init: &State) -> Vec<Assumption> {
        let mut out: Vec<(Assumption, Span)> = Vec::new();
        for d in &raw.decls {
            let RDeclKind::Assume(lhs, rhs) = &d.kind else {
                continue;
            };
            let Some((target, tsort)) = self.term(lhs, &mut Vec::new()) else {
                continue;
            };
            let loc = match &target {
                Term::App(f, args) => {
                    let consts: Option<Vec<Value>> = args
                        .iter()
                        .map(|a| match a {
                            Term::Const(v) => Some(v.clone()),
                            _ => None,
                        })
                        .collect();
                    consts.map(|c| Location::new(f.clone(), c))
                }
                _ => None,
            };
            let Some(loc) = loc else {
                self.err(
                    "E-ASSUME",
                    "an assumption must name a ground location",
                    lhs.span,
                );
                continue;
            };
            let decl = self.func(&loc.func).expect("resolved");
            if decl.mode != Mode::Controlled || Some(&loc.func) == self.ctl.as_ref() {
                let msg =
                    format!("assumed location {loc} must be controlled and not the control state");
                self.err("E-ASSUME", msg, lhs.span);
                continue;
            }
            let Some((value, vsort)) = self.term(rhs, &mut Vec::new()) else {
                continue;
            };
            if !compatible(&tsort, &vsort) {
                self.err(
                    "E-SORT",
                    format!("cannot equate sort {tsort} with sort {vsort}"),
                    rhs.span,
                );
                continue;
            }
            let mut reads_monitored = false;
            value.visit(&mut |t| {
                if let Term::App(f, _) = t {
                    reads_monitored |= self.func(f).is_some_and(|d| d.mode == Mode::Monitored);
                }
            });
            if reads_monitored {
                self.err(
                    "E-ASSUME",
                    "assumptions cannot read monitored functions",
                    rhs.span,
                );
                continue;
            }
            if out.iter().any(|(a, _)| a.target == loc) {
                self.err("E-DUPLICATE", format!("{loc} is assumed twice"), d.span);
                continue;
            }
            out.push((Assumption { target: loc, value }, d.span));
        }
        let targets: Vec<Location> = out.iter().map(|(a, _)| a.target.clone()).collect();
        for (a, span) in &out {
            let mut chained = false;
            a.value.visit(&mut |t| {
                if let Term::App(f, args) = t {
                    chained |= targets
                        .iter()
                        .any(|l| l.func == *f && l.args.len() == args.len());
                }
            });
            if chained {
                self.err(
                    "E-ASSUME",
                    "assumptions cannot read assumed locations",
                    *span,
                );
                continue;
            }
            if self.failed() {
                continue;
            }
            let holds = crate::ast::eval_term(&a.value, init, &crate::ast::Env::new())
                .ok()
                .zip(init.get(&a.target))
                .is_some_and(|(v, w)| v == *w);
            if !holds {
                self.err(
                    "E-ASSUME",
                    format!("initial state violates the assumption on {}", a.target),
                    *span,
                );
            }
        }
        out.into_iter().map(|(a, _)| a).collect()
    }
}
