//! Derivation of the safe-state predicate condX.

use serde::Serialize;

use crate::ast::{name, CondX, Location, Mode, Name, Program, Term};
use crate::symexec::{
    elim_symbol, merge_successors, simplify, substitute_initial_terms, symbolic_step,
    symbolic_term, SymExpr, SymInit, SymOrigin, SymPath,
};

use super::ProtectError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CondReport {
    /// Non-stutter paths of the symbolic step.
    pub paths: usize,
    /// Groups left after merging paths with equal successor maps.
    pub merged: usize,
    pub eliminated: Vec<String>,
    pub formula_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SafeCondition {
    pub condx: CondX,
    pub report: CondReport,
}

/// A binder name that clashes with no function, enumeration or literal.
fn placeholder_name(program: &Program) -> Name {
    let taken = |s: &str| {
        program.function(s).is_some()
            || program.enum_decl(s).is_some()
            || program.enum_of_literal(s).is_some()
    };
    let mut candidate = "x".to_string();
    let mut k = 1;
    while taken(&candidate) {
        candidate = format!("x{k}");
        k += 1;
    }
    name(&candidate)
}

/// condX(x) holds in a state when some one-step successor of that state,
/// with the control state replaced by `x`, violates the unsafe formula.
///
/// Each merged non-stutter path contributes `cond_i and unsafe(L_i)`. The
/// pre-state control symbol becomes the placeholder, while the next control
/// state, monitored inputs and `choose` picks are eliminated existentially.
pub fn derive_safe_condition(program: &Program) -> Result<SafeCondition, ProtectError> {
    let init = SymInit::with_assumptions(program);
    let out = symbolic_step(program, &init, true)?;
    let mut table = out.table;
    let moving: Vec<SymPath> = out.paths.into_iter().filter(|p| !p.is_stutter()).collect();
    let merged = merge_successors(&table, &moving);

    let mut disjuncts = Vec::new();
    for p in &merged {
        let psi = symbolic_term(program, &p.loc_map, &table, &program.unsafe_formula)?;
        disjuncts.push(SymExpr::and([p.cond.clone(), psi]));
    }
    let alpha = init
        .symbol_of(&Location::nullary(program.ctl.clone()))
        .expect("the control state always has its own symbol");
    let var = placeholder_name(program);
    let x = table.fresh(
        &*var,
        program.domain(program.plain_ctl_sort()),
        SymOrigin::Placeholder,
    );
    let mut f = SymExpr::or(disjuncts).subst(&|s| (s == alpha).then(|| SymExpr::sym(x)));
    f = simplify(&table, &f);

    let existential: Vec<_> = table
        .iter()
        .filter(|(_, s)| match &s.origin {
            SymOrigin::CtlNext | SymOrigin::Choice(_) => true,
            SymOrigin::Location(l) => program
                .function(&l.func)
                .is_some_and(|d| d.mode == Mode::Monitored),
            SymOrigin::Placeholder => false,
        })
        .map(|(id, s)| (id, s.name.clone()))
        .collect();
    let mut eliminated = Vec::new();
    for (id, n) in existential {
        if f.mentions(id) {
            f = elim_symbol(&table, &f, id);
            eliminated.push(n);
        }
    }
    let f = simplify(&table, &f);
    let formula = substitute_initial_terms(&f, &init, &table, &|s| {
        (s == x).then(|| Term::Var(var.clone()))
    })?;
    Ok(SafeCondition {
        report: CondReport {
            paths: moving.len(),
            merged: merged.len(),
            eliminated,
            formula_size: formula.size(),
        },
        condx: CondX { var, formula },
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::ast::{cartesian, eval_term, Domain, Env, State, Value};
    use crate::interp::{step, NoCtlRuntime, ScriptedChoices};
    use crate::programs;

    const PHASES: [&str; 4] = ["Stop1Stop2", "Go1Stop2", "Stop2Stop1", "Go2Stop1"];

    fn light(f: &str, i: i64) -> Location {
        Location::new(name(f), vec![Value::Int(i)])
    }

    fn lights(g1: bool, g2: bool) -> State {
        let mut s = programs::traffic_light().initial_state;
        for (i, g) in [(1, g1), (2, g2)] {
            s.values.insert(light("GoLight", i), Value::Bool(g));
            s.values.insert(light("StopLight", i), Value::Bool(!g));
        }
        s
    }

    fn holds(c: &CondX, state: &State, x: &Value) -> bool {
        let env = Env::new().with(c.var.clone(), x.clone());
        eval_term(&c.formula, state, &env)
            .unwrap()
            .as_bool()
            .unwrap()
    }

    /// The expected condition, written out by hand.
    fn reference(x: &str, g1: bool, g2: bool) -> bool {
        let side1 = x == PHASES[0] || x == PHASES[1];
        (side1 && !g1 && g2) || (!side1 && !g2 && g1)
    }

    #[test]
    fn traffic_light_condition_matches_reference_on_all_combinations() {
        let c = derive_safe_condition(&programs::traffic_light()).unwrap();
        assert!(!c.condx.formula.reads("Passed"));
        assert!(!c.condx.formula.reads("phase"));
        let mut checked = 0;
        for x in PHASES {
            for g1 in [false, true] {
                for g2 in [false, true] {
                    let got = holds(&c.condx, &lights(g1, g2), &Value::literal(x));
                    assert_eq!(got, reference(x, g1, g2), "x={x} g1={g1} g2={g2}");
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, 16);
        assert_eq!(c.report.paths, 4);
        assert_eq!(c.report.merged, 2);
    }

    fn safe_set(c: &CondX, s: &State) -> Vec<&'static str> {
        PHASES
            .into_iter()
            .filter(|x| !holds(c, s, &Value::literal(x)))
            .collect()
    }

    #[test]
    fn all_red_allows_every_phase() {
        let c = derive_safe_condition(&programs::traffic_light()).unwrap();
        assert_eq!(safe_set(&c.condx, &lights(false, false)), PHASES.to_vec());
    }

    #[test]
    fn side_one_green_allows_only_side_one_phases() {
        let c = derive_safe_condition(&programs::traffic_light()).unwrap();
        assert_eq!(
            safe_set(&c.condx, &lights(true, false)),
            vec![PHASES[0], PHASES[1]]
        );
    }

    /// Whether some monitored valuation and choice script takes `s` to an
    /// unsafe state in one step.
    fn can_violate(p: &Program, s: &State) -> bool {
        let monitored = p.monitored_locations();
        let domains: Vec<Domain> = monitored
            .iter()
            .map(|l| p.domain(&p.function(&l.func).unwrap().result))
            .collect();
        for mv in cartesian(&domains) {
            let st = s
                .clone()
                .with_monitored(monitored.iter().cloned().zip(mv).collect());
            let mut script = Some(Vec::new());
            while let Some(sc) = script {
                let mut choices = ScriptedChoices::new(sc);
                let out = step(p, &st, 0, &mut choices, &mut NoCtlRuntime).unwrap();
                if eval_term(&p.unsafe_formula, &out.state, &Env::new()) == Ok(Value::Bool(true)) {
                    return true;
                }
                script = choices.next_script();
            }
        }
        false
    }

    /// Over every safe controlled state consistent with the assumptions, condX(x)
    /// holds exactly when stepping from the state with ctl replaced by x can
    /// reach an unsafe state.
    fn check_exact(p: &Program) {
        let c = derive_safe_condition(p).unwrap();
        let ctl = Location::nullary(p.ctl.clone());
        let controlled: Vec<Location> = p
            .functions
            .iter()
            .filter(|d| d.mode == Mode::Controlled && d.name != p.ctl)
            .flat_map(|d| p.locations_of(d))
            .collect();
        let domains: Vec<Domain> = controlled
            .iter()
            .map(|l| p.domain(&p.function(&l.func).unwrap().result))
            .collect();
        let assumptions = crate::symexec::oracle::assumptions_term(p);
        let mut checked = 0;
        for vals in cartesian(&domains) {
            let mut s = p.initial_state.clone();
            let m: BTreeMap<Location, Value> = controlled.iter().cloned().zip(vals).collect();
            s.values.extend(m);
            // stutter steps keep an unsafe state unsafe; condX only speaks
            // about safe ones
            if eval_term(&assumptions, &s, &Env::new()) != Ok(Value::Bool(true))
                || eval_term(&p.unsafe_formula, &s, &Env::new()) == Ok(Value::Bool(true))
            {
                continue;
            }
            for x in p.domain(p.plain_ctl_sort()).iter() {
                let mut sx = s.clone();
                sx.values.insert(ctl.clone(), x.clone());
                assert_eq!(
                    holds(&c.condx, &s, &x),
                    can_violate(p, &sx),
                    "x={x} state={:?}",
                    s.values
                );
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn traffic_light_condition_is_exact() {
        check_exact(&programs::traffic_light());
    }

    #[test]
    fn faulty_and_mixer_conditions_are_exact() {
        check_exact(&programs::faulty_traffic_light());
        check_exact(&programs::batch_mixer());
    }

    #[test]
    fn placeholder_avoids_declared_names() {
        let p = crate::parser::parse_program(
            "asm P
enum S = { A, B }
controlled c S init A
controlled x bool init false
ctlstate c
unsafe x
rule r : if c = A then x := true c := B endif
",
        )
        .unwrap();
        let c = derive_safe_condition(&p).unwrap();
        assert_eq!(&*c.condx.var, "x1");
        let s = p.initial_state.clone();
        assert!(holds(&c.condx, &s, &Value::literal("A")));
        assert!(!holds(&c.condx, &s, &Value::literal("B")));
    }
}
