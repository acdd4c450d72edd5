use thiserror::Error;

use super::{Location, Name, State, Term, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(Name),
    #[error("sort mismatch: {0}")]
    SortMismatch(String),
    #[error("location {0} has no value in the state")]
    MissingLocation(Location),
}

/// Variable bindings introduced by `let` and `choose`; innermost last.
#[derive(Clone, Debug, Default)]
pub struct Env {
    vars: Vec<(Name, Value)>,
}

impl Env {
    pub fn new() -> Self {
        Env::default()
    }

    pub fn lookup(&self, v: &str) -> Option<&Value> {
        self.vars
            .iter()
            .rev()
            .find(|(n, _)| &**n == v)
            .map(|(_, x)| x)
    }

    pub fn push(&mut self, var: Name, value: Value) {
        self.vars.push((var, value));
    }

    pub fn pop(&mut self) {
        self.vars.pop();
    }

    pub fn with(mut self, var: Name, value: Value) -> Self {
        self.push(var, value);
        self
    }
}

fn boolean(v: Value, ctx: &str) -> Result<bool, EvalError> {
    v.as_bool()
        .ok_or_else(|| EvalError::SortMismatch(format!("{ctx} expects a boolean, got {v}")))
}

/// Evaluates a term in a concrete state. Pure: neither the state nor the
/// environment is modified.
pub fn eval_term(term: &Term, state: &State, env: &Env) -> Result<Value, EvalError> {
    match term {
        Term::Const(v) => Ok(v.clone()),
        Term::Var(x) => env
            .lookup(x)
            .cloned()
            .ok_or_else(|| EvalError::UnboundVariable(x.clone())),
        Term::App(f, args) => {
            let args = args
                .iter()
                .map(|a| eval_term(a, state, env))
                .collect::<Result<Vec<_>, _>>()?;
            let loc = Location::new(f.clone(), args);
            match state.get(&loc) {
                Some(v) => Ok(v.clone()),
                None => Err(EvalError::MissingLocation(loc)),
            }
        }
        Term::Not(a) => Ok(Value::Bool(!boolean(eval_term(a, state, env)?, "not")?)),
        Term::And(a, b) => {
            if !boolean(eval_term(a, state, env)?, "and")? {
                return Ok(Value::Bool(false));
            }
            Ok(Value::Bool(boolean(eval_term(b, state, env)?, "and")?))
        }
        Term::Or(a, b) => {
            if boolean(eval_term(a, state, env)?, "or")? {
                return Ok(Value::Bool(true));
            }
            Ok(Value::Bool(boolean(eval_term(b, state, env)?, "or")?))
        }
        Term::Eq(a, b) => Ok(Value::Bool(
            eval_term(a, state, env)? == eval_term(b, state, env)?,
        )),
        Term::In(a, set) => {
            let v = eval_term(a, state, env)?;
            Ok(Value::Bool(set.contains(&v)))
        }
        Term::Ite(c, a, b) => {
            if boolean(eval_term(c, state, env)?, "ite")? {
                eval_term(a, state, env)
            } else {
                eval_term(b, state, env)
            }
        }
        Term::EncIn(a, table) => {
            let v = eval_term(a, state, env)?;
            let r = v.as_int().ok_or_else(|| {
                EvalError::SortMismatch(format!("encoded membership expects a response, got {v}"))
            })?;
            Ok(Value::Bool(
                r >= 0 && table.iter().any(|(_, rs)| rs.contains(&(r as u64))),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::name;

    const PHASES: [&str; 4] = ["Stop1Stop2", "Go1Stop2", "Stop2Stop1", "Go2Stop1"];

    fn state_with_phase(p: &str) -> State {
        let mut s = State::default();
        s.values
            .insert(Location::nullary(name("phase")), Value::literal(p));
        s
    }

    #[test]
    fn equality_on_control_state() {
        let s = state_with_phase("Stop1Stop2");
        let t = Term::eq(Term::app0("phase"), Term::lit("Stop1Stop2"));
        assert_eq!(eval_term(&t, &s, &Env::new()).unwrap(), Value::Bool(true));
    }

    #[test]
    fn negated_constant() {
        let t = Term::not(Term::lit(false));
        assert_eq!(
            eval_term(&t, &State::default(), &Env::new()).unwrap(),
            Value::Bool(true)
        );
    }

    #[test]
    fn membership_matches_truth_table() {
        let g1 = ["Stop1Stop2", "Go1Stop2"];
        let g2 = ["Stop2Stop1", "Go2Stop1"];
        for p in PHASES {
            let s = state_with_phase(p);
            for (set, expected) in [(g1, g1.contains(&p)), (g2, g2.contains(&p))] {
                let t = Term::In(
                    Box::new(Term::app0("phase")),
                    set.iter().map(|l| Value::literal(l)).collect(),
                );
                assert_eq!(
                    eval_term(&t, &s, &Env::new()).unwrap(),
                    Value::Bool(expected),
                    "phase={p}"
                );
            }
        }
        let t = Term::In(
            Box::new(Term::app0("phase")),
            vec![Value::literal("Stop2Stop1"), Value::literal("Go2Stop1")],
        );
        assert_eq!(
            eval_term(&t, &state_with_phase("Go1Stop2"), &Env::new()).unwrap(),
            Value::Bool(false)
        );
    }

    #[test]
    fn unbound_variable_is_reported() {
        let t = Term::Var(name("x"));
        assert_eq!(
            eval_term(&t, &State::default(), &Env::new()),
            Err(EvalError::UnboundVariable(name("x")))
        );
    }

    #[test]
    fn evaluation_is_repeatable() {
        let s = state_with_phase("Go2Stop1");
        let t = Term::ite(
            Term::eq(Term::app0("phase"), Term::lit("Go2Stop1")),
            Term::lit(1),
            Term::lit(2),
        );
        let a = eval_term(&t, &s, &Env::new()).unwrap();
        let b = eval_term(&t, &s, &Env::new()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, Value::Int(1));
    }
}
