//! Control-state transitions licensed by the rule structure.

use std::collections::BTreeSet;

use crate::ast::{Mode, Name, Program, Rule, Term, Value};

use super::ProtectError;

/// Three-valued evaluation result.
#[derive(Clone, Debug, PartialEq, Eq)]
enum V3 {
    Known(Value),
    Unknown,
}

impl V3 {
    fn truth(&self) -> Option<bool> {
        match self {
            V3::Known(Value::Bool(b)) => Some(*b),
            _ => None,
        }
    }
}

/// Evaluates `t` with the control state fixed to `ctl` and every other
/// dynamic read unknown.
fn eval3(program: &Program, t: &Term, ctl: &Value) -> V3 {
    let kb = |b: bool| V3::Known(Value::Bool(b));
    match t {
        Term::Const(v) => V3::Known(v.clone()),
        Term::Var(_) | Term::EncIn(..) => V3::Unknown,
        Term::App(f, args) => {
            if *f == program.ctl && args.is_empty() {
                return V3::Known(ctl.clone());
            }
            let is_static = program.function(f).is_some_and(|d| d.mode == Mode::Static);
            if !is_static {
                return V3::Unknown;
            }
            let mut vals = Vec::new();
            for a in args {
                match eval3(program, a, ctl) {
                    V3::Known(v) => vals.push(v),
                    V3::Unknown => return V3::Unknown,
                }
            }
            program
                .initial_state
                .get(&crate::ast::Location::new(f.clone(), vals))
                .cloned()
                .map_or(V3::Unknown, V3::Known)
        }
        Term::Not(a) => match eval3(program, a, ctl).truth() {
            Some(b) => kb(!b),
            None => V3::Unknown,
        },
        Term::And(a, b) => match (
            eval3(program, a, ctl).truth(),
            eval3(program, b, ctl).truth(),
        ) {
            (Some(false), _) | (_, Some(false)) => kb(false),
            (Some(true), Some(true)) => kb(true),
            _ => V3::Unknown,
        },
        Term::Or(a, b) => match (
            eval3(program, a, ctl).truth(),
            eval3(program, b, ctl).truth(),
        ) {
            (Some(true), _) | (_, Some(true)) => kb(true),
            (Some(false), Some(false)) => kb(false),
            _ => V3::Unknown,
        },
        Term::Eq(a, b) => match (eval3(program, a, ctl), eval3(program, b, ctl)) {
            (V3::Known(x), V3::Known(y)) => kb(x == y),
            _ => V3::Unknown,
        },
        Term::In(a, set) => match eval3(program, a, ctl) {
            V3::Known(x) => kb(set.contains(&x)),
            V3::Unknown => V3::Unknown,
        },
        Term::Ite(c, a, b) => match eval3(program, c, ctl).truth() {
            Some(true) => eval3(program, a, ctl),
            Some(false) => eval3(program, b, ctl),
            None => match (eval3(program, a, ctl), eval3(program, b, ctl)) {
                (V3::Known(x), V3::Known(y)) if x == y => V3::Known(x),
                _ => V3::Unknown,
            },
        },
    }
}

/// Control states (from `possible`) for which the guard may hold, and those
/// for which it may fail.
pub(crate) fn narrow(
    program: &Program,
    guard: &Term,
    possible: &[Value],
) -> (Vec<Value>, Vec<Value>) {
    let mut then_set = Vec::new();
    let mut else_set = Vec::new();
    for c in possible {
        match eval3(program, guard, c).truth() {
            Some(true) => then_set.push(c.clone()),
            Some(false) => else_set.push(c.clone()),
            None => {
                then_set.push(c.clone());
                else_set.push(c.clone());
            }
        }
    }
    (then_set, else_set)
}

/// A `ctl := target` update inside a main rule, with the control states it
/// may be executed from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CtlSite {
    pub rule: Name,
    /// Pre-order index of the update among the rule's control-state updates.
    pub ordinal: usize,
    pub sources: Vec<Value>,
    pub target: Value,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionSet {
    /// Pairs sorted by the declaration order of their states.
    pub pairs: Vec<(Value, Value)>,
    pub sites: Vec<CtlSite>,
}

/// Callback for one control-state update: target, possible source states,
/// and whether an enclosing guard reads the control state.
pub(crate) type SiteFn<'a> = dyn FnMut(&Value, &[Value], bool) -> Result<Rule, ProtectError> + 'a;

/// Rebuilds the rules of a main rule, calling `on_site` for each control
/// state update with the states it may run from.
pub(crate) fn map_ctl_updates(
    program: &Program,
    rule: &Rule,
    possible: &[Value],
    constrained: bool,
    on_site: &mut SiteFn<'_>,
) -> Result<Rule, ProtectError> {
    let map_all = |rs: &[Rule], possible: &[Value], constrained: bool, on_site: &mut SiteFn<'_>| {
        rs.iter()
            .map(|r| map_ctl_updates(program, r, possible, constrained, on_site))
            .collect::<Result<Vec<_>, _>>()
    };
    Ok(match rule {
        Rule::Update { func, value, .. } if *func == program.ctl => {
            let Term::Const(target) = value else {
                return Err(ProtectError::NonConstantCtlUpdate);
            };
            on_site(target, possible, constrained)?
        }
        Rule::Cond {
            guard,
            then_rules,
            else_rules,
        } => {
            let (t, e) = narrow(program, guard, possible);
            let c = constrained || guard.reads(&program.ctl);
            Rule::Cond {
                guard: guard.clone(),
                then_rules: map_all(then_rules, &t, c, on_site)?,
                else_rules: match else_rules {
                    Some(rs) => Some(map_all(rs, &e, c, on_site)?),
                    None => None,
                },
            }
        }
        Rule::Par(rs) => Rule::Par(map_all(rs, possible, constrained, on_site)?),
        Rule::Choose {
            var,
            sort,
            set,
            body,
        } => Rule::Choose {
            var: var.clone(),
            sort: sort.clone(),
            set: set.clone(),
            body: map_all(body, possible, constrained, on_site)?,
        },
        Rule::Let { var, value, body } => Rule::Let {
            var: var.clone(),
            value: value.clone(),
            body: map_all(body, possible, constrained, on_site)?,
        },
        other => other.clone(),
    })
}

/// The set A of (source, target) control-state pairs: `(i, j)` is in A when
/// some main rule can execute `ctl := j` while the control state is `i`.
pub fn compute_transition_set(program: &Program) -> Result<TransitionSet, ProtectError> {
    if program.protection.is_some() {
        return Err(ProtectError::AlreadyProtected);
    }
    let all: Vec<Value> = program.domain(program.plain_ctl_sort()).iter().collect();
    let mut sites = Vec::new();
    for main in &program.main_rules {
        let mut ordinal = 0;
        map_ctl_updates(
            program,
            &main.body,
            &all,
            false,
            &mut |target, sources, constrained| {
                if !constrained {
                    return Err(ProtectError::AmbiguousSource {
                        rule: main.name.clone(),
                        target: target.clone(),
                    });
                }
                sites.push(CtlSite {
                    rule: main.name.clone(),
                    ordinal,
                    sources: sources.to_vec(),
                    target: target.clone(),
                });
                ordinal += 1;
                Ok(Rule::Par(Vec::new()))
            },
        )?;
    }
    let mut pairs: BTreeSet<(i64, i64, Value, Value)> = BTreeSet::new();
    for s in &sites {
        for i in &s.sources {
            pairs.insert((
                program.value_rank(i),
                program.value_rank(&s.target),
                i.clone(),
                s.target.clone(),
            ));
        }
    }
    Ok(TransitionSet {
        pairs: pairs.into_iter().map(|(_, _, i, j)| (i, j)).collect(),
        sites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{step, NoCtlRuntime, ScriptedChoices};
    use crate::parser::parse_program;
    use crate::{ast, programs};

    fn lit(s: &str) -> Value {
        Value::literal(s)
    }

    #[test]
    fn traffic_light_cycle() {
        let a = compute_transition_set(&programs::traffic_light()).unwrap();
        let expected = vec![
            (lit("Stop1Stop2"), lit("Go1Stop2")),
            (lit("Go1Stop2"), lit("Stop2Stop1")),
            (lit("Stop2Stop1"), lit("Go2Stop1")),
            (lit("Go2Stop1"), lit("Stop1Stop2")),
        ];
        assert_eq!(a.pairs, expected);
        assert_eq!(a.sites.len(), 4);
    }

    #[test]
    fn self_loop() {
        let p = parse_program(
            "asm L
controlled c int[1..3] init 1
ctlstate c
unsafe false
rule r : if c = 1 then c := 1 endif
",
        )
        .unwrap();
        let a = compute_transition_set(&p).unwrap();
        assert_eq!(a.pairs, vec![(Value::Int(1), Value::Int(1))]);
    }

    const MULTI: &str = "asm M
controlled c int[1..3] init 1
controlled v bool init false
monitored m bool
ctlstate c
unsafe false
rule r : if c in {1, 2} then
  v := m
  c := 3
endif
rule s : if c = 3 and m then c := 1 else v := true endif
";

    #[test]
    fn membership_guard_contributes_each_member() {
        let p = parse_program(MULTI).unwrap();
        let a = compute_transition_set(&p).unwrap();
        let has = |i: i64, j: i64| a.pairs.contains(&(Value::Int(i), Value::Int(j)));
        assert!(has(1, 3) && has(2, 3) && has(3, 1));
        assert_eq!(a.pairs.len(), 3);
    }

    /// Every ctl change the interpreter can make from any state is in A.
    #[test]
    fn observed_transitions_are_licensed() {
        for p in [
            parse_program(MULTI).unwrap(),
            programs::traffic_light(),
            programs::faulty_traffic_light(),
            programs::batch_mixer(),
        ] {
            let a = compute_transition_set(&p).unwrap();
            let ctl = ast::Location::nullary(p.ctl.clone());
            let controlled: Vec<ast::Location> = p
                .functions
                .iter()
                .filter(|d| d.mode == Mode::Controlled)
                .flat_map(|d| p.locations_of(d))
                .collect();
            let domains: Vec<ast::Domain> = controlled
                .iter()
                .map(|l| p.domain(&p.function(&l.func).unwrap().result))
                .collect();
            let monitored = p.monitored_locations();
            let mdomains: Vec<ast::Domain> = monitored
                .iter()
                .map(|l| p.domain(&p.function(&l.func).unwrap().result))
                .collect();
            for vals in ast::cartesian(&domains) {
                let s = ast::State {
                    values: controlled.iter().cloned().zip(vals).collect(),
                    ..Default::default()
                };
                for mv in ast::cartesian(&mdomains) {
                    let st = s
                        .clone()
                        .with_monitored(monitored.iter().cloned().zip(mv).collect());
                    let mut choices = ScriptedChoices::new(Vec::new());
                    loop {
                        let out = step(&p, &st, 0, &mut choices, &mut NoCtlRuntime).unwrap();
                        let (from, to) = (&st.values[&ctl], &out.state.values[&ctl]);
                        let wrote = !out.fired.is_empty()
                            && (from != to || a.pairs.contains(&(from.clone(), to.clone())));
                        if wrote && from != to {
                            assert!(
                                a.pairs.contains(&(from.clone(), to.clone())),
                                "{from} -> {to}"
                            );
                        }
                        match choices.next_script() {
                            Some(next) => choices = ScriptedChoices::new(next),
                            None => break,
                        }
                    }
                }
            }
        }
    }
}
