use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{Name, Value};

/// A function name together with a ground argument tuple.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Location {
    pub func: Name,
    pub args: Vec<Value>,
}

impl Location {
    pub fn new(func: Name, args: Vec<Value>) -> Self {
        Location { func, args }
    }

    pub fn nullary(func: Name) -> Self {
        Location {
            func,
            args: Vec::new(),
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.func)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Concrete machine state: controlled and static locations, plus the
/// monitored valuation in effect for the current step.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct State {
    pub values: BTreeMap<Location, Value>,
    pub monitored: BTreeMap<Location, Value>,
}

impl State {
    pub fn get(&self, loc: &Location) -> Option<&Value> {
        self.values.get(loc).or_else(|| self.monitored.get(loc))
    }

    pub fn with_monitored(mut self, monitored: BTreeMap<Location, Value>) -> Self {
        self.monitored = monitored;
        self
    }
}

/// The writes of one step, in collection order.
pub type UpdateSet = Vec<(Location, Value)>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("inconsistent update of {location}: {first} vs {second}")]
pub struct InconsistentUpdate {
    pub location: Location,
    pub first: Value,
    pub second: Value,
}

/// Checks the update set for clashing writes and, if consistent, returns the
/// successor state. Nothing is applied when a clash is found.
pub fn apply_updates(
    state: &State,
    updates: &[(Location, Value)],
) -> Result<State, InconsistentUpdate> {
    let mut merged: BTreeMap<&Location, &Value> = BTreeMap::new();
    for (loc, v) in updates {
        if let Some(prev) = merged.insert(loc, v) {
            if prev != v {
                // report the pair in a permutation-independent order
                let (first, second) = if prev <= v { (prev, v) } else { (v, prev) };
                return Err(InconsistentUpdate {
                    location: loc.clone(),
                    first: first.clone(),
                    second: second.clone(),
                });
            }
        }
    }
    let mut next = state.clone();
    for (loc, v) in merged {
        next.values.insert(loc.clone(), v.clone());
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::name;

    fn loc(f: &str, args: Vec<Value>) -> Location {
        Location::new(name(f), args)
    }

    fn sample() -> State {
        let mut s = State::default();
        s.values
            .insert(loc("phase", vec![]), Value::literal("Stop1Stop2"));
        for i in 1..=2 {
            s.values
                .insert(loc("GoLight", vec![Value::Int(i)]), Value::Bool(false));
            s.values
                .insert(loc("StopLight", vec![Value::Int(i)]), Value::Bool(true));
        }
        s
    }

    #[test]
    fn toggles_both_lights() {
        let s = sample();
        let u = vec![
            (loc("GoLight", vec![Value::Int(1)]), Value::Bool(true)),
            (loc("StopLight", vec![Value::Int(1)]), Value::Bool(false)),
        ];
        let next = apply_updates(&s, &u).unwrap();
        assert_eq!(
            next.values[&loc("GoLight", vec![Value::Int(1)])],
            Value::Bool(true)
        );
        assert_eq!(
            next.values[&loc("StopLight", vec![Value::Int(1)])],
            Value::Bool(false)
        );
        let changed: Vec<_> = s
            .values
            .iter()
            .filter(|(k, v)| next.values[*k] != **v)
            .map(|(k, _)| k.clone())
            .collect();
        assert_eq!(changed.len(), 2);
    }

    #[test]
    fn empty_update_set_is_identity() {
        let s = sample();
        assert_eq!(apply_updates(&s, &[]).unwrap(), s);
    }

    #[test]
    fn clashing_writes_are_rejected() {
        let s = sample();
        let u = vec![
            (loc("phase", vec![]), Value::literal("Go1Stop2")),
            (loc("phase", vec![]), Value::literal("Stop2Stop1")),
        ];
        let err = apply_updates(&s, &u).unwrap_err();
        assert_eq!(err.location, loc("phase", vec![]));
    }

    #[test]
    fn duplicate_equal_writes_are_consistent() {
        let s = sample();
        let u = vec![
            (loc("phase", vec![]), Value::literal("Go1Stop2")),
            (loc("phase", vec![]), Value::literal("Go1Stop2")),
        ];
        assert!(apply_updates(&s, &u).is_ok());
    }
}
