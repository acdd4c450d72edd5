//! Rewriting a plain program into its protected form.

use std::collections::BTreeMap;

use crate::ast::{
    Assumption, CandidateSet, CondX, Location, Program, ProtectionInfo, Rule, Sort, Term, Value,
};
use crate::puf::Enrollment;

use super::transitions::map_ctl_updates;
use super::{ProtectError, ProtectWarning};

/// Encodings accepted for each plain state: the enrolled responses of the
/// transitions entering it, plus the init token for the initial state.
pub fn state_codes(program: &Program, enrollment: &Enrollment) -> Vec<(Value, Vec<u64>)> {
    let enc = enrollment.encodings();
    program
        .domain(program.plain_ctl_sort())
        .iter()
        .map(|v| {
            let mut codes = enc.get(&v).cloned().unwrap_or_default();
            if v == enrollment.init_state {
                codes.push(enrollment.init_token);
            }
            (v, codes)
        })
        .collect()
}

struct Rewriter<'a> {
    ctl: &'a str,
    codes: BTreeMap<Value, Vec<u64>>,
    /// Encodable states in domain order, for decode chains.
    encodable: Vec<Value>,
}

impl Rewriter<'_> {
    fn ctl_term(&self) -> Term {
        Term::app0(self.ctl)
    }

    fn is_ctl(&self, t: &Term) -> bool {
        matches!(t, Term::App(f, args) if &**f == self.ctl && args.is_empty())
    }

    fn enc_in(&self, states: &[Value]) -> Term {
        let table = states
            .iter()
            .map(|v| (v.clone(), self.codes.get(v).cloned().unwrap_or_default()))
            .collect();
        Term::EncIn(Box::new(self.ctl_term()), table)
    }

    /// The plain state the stored control value stands for.
    fn decode_chain(&self) -> Term {
        let Some((last, rest)) = self.encodable.split_last() else {
            return self.ctl_term();
        };
        rest.iter().rev().fold(Term::Const(last.clone()), |acc, v| {
            Term::ite(
                self.enc_in(std::slice::from_ref(v)),
                Term::Const(v.clone()),
                acc,
            )
        })
    }

    fn term(&self, t: &Term) -> Term {
        let rec = |x: &Term| Box::new(self.term(x));
        match t {
            Term::Eq(a, b) => match (&**a, &**b) {
                (x, Term::Const(v)) | (Term::Const(v), x) if self.is_ctl(x) => {
                    self.enc_in(std::slice::from_ref(v))
                }
                _ => Term::Eq(rec(a), rec(b)),
            },
            Term::In(a, set) if self.is_ctl(a) => self.enc_in(set),
            _ if self.is_ctl(t) => self.decode_chain(),
            Term::Const(_) | Term::Var(_) | Term::EncIn(..) => t.clone(),
            Term::App(f, args) => Term::App(f.clone(), args.iter().map(|a| self.term(a)).collect()),
            Term::Not(a) => Term::Not(rec(a)),
            Term::And(a, b) => Term::And(rec(a), rec(b)),
            Term::Or(a, b) => Term::Or(rec(a), rec(b)),
            Term::In(a, set) => Term::In(rec(a), set.clone()),
            Term::Ite(c, a, b) => Term::Ite(rec(c), rec(a), rec(b)),
        }
    }

    fn rules(&self, rs: &[Rule]) -> Vec<Rule> {
        rs.iter().map(|r| self.rule(r)).collect()
    }

    fn rule(&self, r: &Rule) -> Rule {
        match r {
            Rule::Update { func, args, value } => Rule::Update {
                func: func.clone(),
                args: args.iter().map(|a| self.term(a)).collect(),
                value: self.term(value),
            },
            Rule::Cond {
                guard,
                then_rules,
                else_rules,
            } => Rule::Cond {
                guard: self.term(guard),
                then_rules: self.rules(then_rules),
                else_rules: else_rules.as_ref().map(|e| self.rules(e)),
            },
            Rule::Par(rs) => Rule::Par(self.rules(rs)),
            Rule::Choose {
                var,
                sort,
                set,
                body,
            } => Rule::Choose {
                var: var.clone(),
                sort: sort.clone(),
                set: match set {
                    CandidateSet::Sort { sort, pred } => CandidateSet::Sort {
                        sort: sort.clone(),
                        pred: pred.as_ref().map(|p| self.term(p)),
                    },
                    vs => vs.clone(),
                },
                body: self.rules(body),
            },
            Rule::Let { var, value, body } => Rule::Let {
                var: var.clone(),
                value: self.term(value),
                body: self.rules(body),
            },
            Rule::Call { rule, args } => Rule::Call {
                rule: rule.clone(),
                args: args.iter().map(|a| self.term(a)).collect(),
            },
            Rule::ChooseCtl { .. } => r.clone(),
        }
    }
}

/// Replaces every `ctl := j` by a `choosectl` site carrying the enrolled
/// challenge of its transition, turns control-state tests into encoded
/// membership, widens the control state to the response space and embeds
/// condX.
pub fn rewrite_program(
    program: &Program,
    enrollment: &Enrollment,
    condx: &CondX,
) -> Result<(Program, Vec<ProtectWarning>), ProtectError> {
    let mut warnings = Vec::new();
    let plain_sort = program.ctl_decl().result.clone();
    let all: Vec<Value> = program.domain(&plain_sort).iter().collect();
    let codes = state_codes(program, enrollment);
    for (v, c) in &codes {
        if c.is_empty() {
            warnings.push(ProtectWarning::UnEncodableState(v.clone()));
        }
    }
    if enrollment.transitions.is_empty() {
        warnings.push(ProtectWarning::EmptyTransitionSet);
    }
    let rw = Rewriter {
        ctl: &program.ctl,
        encodable: codes
            .iter()
            .filter(|(_, c)| !c.is_empty())
            .map(|(v, _)| v.clone())
            .collect(),
        codes: codes.into_iter().collect(),
    };

    let mut out = program.clone();
    for main in &mut out.main_rules {
        let body = map_ctl_updates(
            program,
            &main.body,
            &all,
            true,
            &mut |target, sources, _| {
                let mut arms = Vec::new();
                for i in sources {
                    let challenge = enrollment.challenge_for(i, target).ok_or_else(|| {
                        ProtectError::MissingEnrollment(i.clone(), target.clone())
                    })?;
                    arms.push((i.clone(), Rule::ChooseCtl { challenge }));
                }
                Ok(match arms.len() {
                    0 => Rule::Par(Vec::new()),
                    1 => arms.pop().expect("one arm").1,
                    _ => {
                        // one guarded site per possible source state
                        let mut chain: Option<Vec<Rule>> = None;
                        for (i, site) in arms.into_iter().rev() {
                            chain = Some(vec![Rule::Cond {
                                guard: Term::In(Box::new(Term::app0(&program.ctl)), vec![i]),
                                then_rules: vec![site],
                                else_rules: chain,
                            }]);
                        }
                        chain.expect("several arms").remove(0)
                    }
                })
            },
        )?;
        main.body = rw.rule(&body);
    }
    for nr in &mut out.named_rules {
        nr.body = rw.rules(&nr.body);
    }
    out.unsafe_formula = rw.term(&program.unsafe_formula);
    out.assumptions = program
        .assumptions
        .iter()
        .map(|a| Assumption {
            target: a.target.clone(),
            value: rw.term(&a.value),
        })
        .collect();

    let top = (1i64 << enrollment.response_bits) - 1;
    let token = Value::Int(enrollment.init_token as i64);
    let decl = out
        .functions
        .iter_mut()
        .find(|d| d.name == program.ctl)
        .expect("validated program declares its control state");
    decl.result = Sort::Int { lo: 0, hi: top };
    decl.init = Some(BTreeMap::from([(Vec::new(), token.clone())]));
    out.initial_state
        .values
        .insert(Location::nullary(program.ctl.clone()), token);
    out.protection = Some(ProtectionInfo {
        plain_sort,
        response_bits: enrollment.response_bits,
        init_token: enrollment.init_token,
        condx: condx.clone(),
    });
    Ok((out, warnings))
}
