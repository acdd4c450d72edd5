//! Data model for control-state abstract state machines.
//!
//! A [`Program`] is a signature (enumerations and function declarations), a
//! set of rules, a designated control-state function and a violation
//! predicate. Concrete states are finite maps from [`Location`]s to
//! [`Value`]s; one machine step produces an [`UpdateSet`].

mod eval;
mod interest;
mod state;
mod value;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

pub use eval::{eval_term, Env, EvalError};
pub use interest::{locations_of_interest, locations_touched, InterestError};
pub use state::{apply_updates, InconsistentUpdate, Location, State, UpdateSet};
pub use value::{Domain, Value};

/// Interned identifier.
pub type Name = Arc<str>;

pub fn name(s: &str) -> Name {
    Arc::from(s)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sort {
    Bool,
    Int { lo: i64, hi: i64 },
    Enum(Name),
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sort::Bool => f.write_str("bool"),
            Sort::Int { lo, hi } => write!(f, "int[{lo}..{hi}]"),
            Sort::Enum(n) => f.write_str(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnumDecl {
    pub name: Name,
    pub literals: Vec<Name>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Controlled,
    Monitored,
    Static,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Controlled => "controlled",
            Mode::Monitored => "monitored",
            Mode::Static => "static",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionDecl {
    pub name: Name,
    pub arg_sorts: Vec<Sort>,
    pub result: Sort,
    pub mode: Mode,
    /// Total initializer keyed by argument tuple; `None` for monitored functions.
    pub init: Option<BTreeMap<Vec<Value>, Value>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Const(Value),
    Var(Name),
    App(Name, Vec<Term>),
    Not(Box<Term>),
    And(Box<Term>, Box<Term>),
    Or(Box<Term>, Box<Term>),
    Eq(Box<Term>, Box<Term>),
    In(Box<Term>, Vec<Value>),
    Ite(Box<Term>, Box<Term>, Box<Term>),
    /// Membership of a response-valued term in the encodings of the listed
    /// plain control states. Only occurs in protected programs.
    EncIn(Box<Term>, Vec<(Value, Vec<u64>)>),
}

impl Term {
    pub fn app0(f: &str) -> Term {
        Term::App(name(f), Vec::new())
    }

    pub fn app(f: &str, args: Vec<Term>) -> Term {
        Term::App(name(f), args)
    }

    pub fn lit(v: impl Into<Value>) -> Term {
        Term::Const(v.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(t: Term) -> Term {
        Term::Not(Box::new(t))
    }

    pub fn and(a: Term, b: Term) -> Term {
        Term::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Term, b: Term) -> Term {
        Term::Or(Box::new(a), Box::new(b))
    }

    pub fn eq(a: Term, b: Term) -> Term {
        Term::Eq(Box::new(a), Box::new(b))
    }

    pub fn ite(c: Term, a: Term, b: Term) -> Term {
        Term::Ite(Box::new(c), Box::new(a), Box::new(b))
    }

    /// Left-nested conjunction; `true` when empty.
    pub fn conj(terms: impl IntoIterator<Item = Term>) -> Term {
        terms
            .into_iter()
            .reduce(Term::and)
            .unwrap_or(Term::Const(Value::Bool(true)))
    }

    /// Left-nested disjunction; `false` when empty.
    pub fn disj(terms: impl IntoIterator<Item = Term>) -> Term {
        terms
            .into_iter()
            .reduce(Term::or)
            .unwrap_or(Term::Const(Value::Bool(false)))
    }

    /// Pre-order visit of every subterm.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Term)) {
        f(self);
        match self {
            Term::Const(_) | Term::Var(_) => {}
            Term::App(_, args) => args.iter().for_each(|a| a.visit(f)),
            Term::Not(a) | Term::In(a, _) | Term::EncIn(a, _) => a.visit(f),
            Term::And(a, b) | Term::Or(a, b) | Term::Eq(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Term::Ite(c, a, b) => {
                c.visit(f);
                a.visit(f);
                b.visit(f);
            }
        }
    }

    pub fn has_vars(&self) -> bool {
        let mut found = false;
        self.visit(&mut |t| found |= matches!(t, Term::Var(_)));
        found
    }

    pub fn reads(&self, func: &str) -> bool {
        let mut found = false;
        self.visit(&mut |t| {
            if let Term::App(f, _) = t {
                found |= &**f == func;
            }
        });
        found
    }

    /// Number of nodes; set elements count one each.
    pub fn size(&self) -> usize {
        match self {
            Term::Const(_) | Term::Var(_) => 1,
            Term::App(_, args) => 1 + args.iter().map(Term::size).sum::<usize>(),
            Term::Not(a) => 1 + a.size(),
            Term::And(a, b) | Term::Or(a, b) | Term::Eq(a, b) => 1 + a.size() + b.size(),
            Term::In(a, s) => 1 + a.size() + s.len(),
            Term::EncIn(a, t) => 1 + a.size() + t.iter().map(|(_, r)| 1 + r.len()).sum::<usize>(),
            Term::Ite(c, a, b) => 1 + c.size() + a.size() + b.size(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CandidateSet {
    Values(Vec<Value>),
    /// Every value of the sort, optionally filtered by a predicate over the
    /// chosen variable.
    Sort {
        sort: Sort,
        pred: Option<Term>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rule {
    Update {
        func: Name,
        args: Vec<Term>,
        value: Term,
    },
    Cond {
        guard: Term,
        then_rules: Vec<Rule>,
        else_rules: Option<Vec<Rule>>,
    },
    Par(Vec<Rule>),
    Choose {
        var: Name,
        sort: Sort,
        set: CandidateSet,
        body: Vec<Rule>,
    },
    Let {
        var: Name,
        value: Term,
        body: Vec<Rule>,
    },
    Call {
        rule: Name,
        args: Vec<Term>,
    },
    /// PUF-bound choice of the next control state. Only occurs in protected
    /// programs; the challenge is the only trace of the original target.
    ChooseCtl {
        challenge: u64,
    },
}

impl Rule {
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Rule)) {
        f(self);
        for child in self.children() {
            child.visit(f);
        }
    }

    pub fn children(&self) -> Vec<&Rule> {
        match self {
            Rule::Update { .. } | Rule::Call { .. } | Rule::ChooseCtl { .. } => Vec::new(),
            Rule::Cond {
                then_rules,
                else_rules,
                ..
            } => then_rules
                .iter()
                .chain(else_rules.iter().flatten())
                .collect(),
            Rule::Par(rs) => rs.iter().collect(),
            Rule::Choose { body, .. } | Rule::Let { body, .. } => body.iter().collect(),
        }
    }

    /// Every term directly held by this rule (not by its children).
    pub fn terms(&self) -> Vec<&Term> {
        match self {
            Rule::Update { args, value, .. } => args.iter().chain(std::iter::once(value)).collect(),
            Rule::Cond { guard, .. } => vec![guard],
            Rule::Par(_) | Rule::ChooseCtl { .. } => Vec::new(),
            Rule::Choose { set, .. } => match set {
                CandidateSet::Sort { pred: Some(p), .. } => vec![p],
                _ => Vec::new(),
            },
            Rule::Let { value, .. } => vec![value],
            Rule::Call { args, .. } => args.iter().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedRule {
    pub name: Name,
    pub params: Vec<(Name, Sort)>,
    pub body: Vec<Rule>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MainRule {
    pub name: Name,
    pub body: Rule,
}

/// Symbolic-initial-state correlation: in the analysis, `target` is not given
/// its own symbol but expressed through the other locations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assumption {
    pub target: Location,
    pub value: Term,
}

/// Compiled safe-state predicate: `formula` is true for a candidate plain
/// control state bound to `var` when entering it may lead to a violation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CondX {
    pub var: Name,
    pub formula: Term,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtectionInfo {
    pub plain_sort: Sort,
    pub response_bits: u32,
    pub init_token: u64,
    pub condx: CondX,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub name: Name,
    pub enums: Vec<EnumDecl>,
    pub functions: Vec<FunctionDecl>,
    pub named_rules: Vec<NamedRule>,
    pub main_rules: Vec<MainRule>,
    pub ctl: Name,
    pub unsafe_formula: Term,
    pub assumptions: Vec<Assumption>,
    pub protection: Option<ProtectionInfo>,
    pub initial_state: State,
}

impl Program {
    pub fn function(&self, f: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|d| &*d.name == f)
    }

    pub fn named_rule(&self, r: &str) -> Option<&NamedRule> {
        self.named_rules.iter().find(|d| &*d.name == r)
    }

    pub fn enum_decl(&self, e: &str) -> Option<&EnumDecl> {
        self.enums.iter().find(|d| &*d.name == e)
    }

    pub fn ctl_decl(&self) -> &FunctionDecl {
        self.function(&self.ctl)
            .expect("validated program declares its control-state function")
    }

    /// Sort of the plain control states (before any protection widening).
    pub fn plain_ctl_sort(&self) -> &Sort {
        match &self.protection {
            Some(p) => &p.plain_sort,
            None => &self.ctl_decl().result,
        }
    }

    pub fn domain(&self, sort: &Sort) -> Domain {
        match sort {
            Sort::Bool => Domain::Bool,
            Sort::Int { lo, hi } => Domain::Int { lo: *lo, hi: *hi },
            Sort::Enum(e) => Domain::Enum(
                self.enum_decl(e)
                    .map(|d| d.literals.clone().into())
                    .unwrap_or_else(|| Arc::from(Vec::new())),
            ),
        }
    }

    /// Enumeration the literal belongs to, if any.
    pub fn enum_of_literal(&self, lit: &str) -> Option<&EnumDecl> {
        self.enums
            .iter()
            .find(|d| d.literals.iter().any(|l| &**l == lit))
    }

    /// Position of a value inside its sort's canonical order.
    pub fn value_rank(&self, v: &Value) -> i64 {
        match v {
            Value::Bool(b) => *b as i64,
            Value::Int(i) => *i,
            Value::Enum(l) => self
                .enum_of_literal(l)
                .and_then(|d| d.literals.iter().position(|x| x == l))
                .map(|p| p as i64)
                .unwrap_or(i64::MAX),
        }
    }

    /// Every ground location of a function, in argument order.
    pub fn locations_of(&self, decl: &FunctionDecl) -> Vec<Location> {
        let domains: Vec<Domain> = decl.arg_sorts.iter().map(|s| self.domain(s)).collect();
        cartesian(&domains)
            .into_iter()
            .map(|args| Location::new(decl.name.clone(), args))
            .collect()
    }

    /// All ground monitored locations.
    pub fn monitored_locations(&self) -> Vec<Location> {
        self.functions
            .iter()
            .filter(|d| d.mode == Mode::Monitored)
            .flat_map(|d| self.locations_of(d))
            .collect()
    }

    /// Initial plain control state; for protected programs this is the state
    /// encoded by the init token, resolved through the enrollment elsewhere.
    pub fn initial_ctl(&self) -> &Value {
        self.initial_state
            .get(&Location::nullary(self.ctl.clone()))
            .expect("initial state is total")
    }
}

/// All argument tuples over the given domains, first argument slowest.
pub fn cartesian(domains: &[Domain]) -> Vec<Vec<Value>> {
    let mut out = vec![Vec::new()];
    for d in domains {
        let mut next = Vec::with_capacity(out.len() * d.len() as usize);
        for prefix in &out {
            for v in d.iter() {
                let mut t = prefix.clone();
                t.push(v);
                next.push(t);
            }
        }
        out = next;
    }
    out
}
