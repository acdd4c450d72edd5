mod support;

use std::collections::BTreeSet;
use std::sync::LazyLock;

use proptest::prelude::*;

use pufbind_core::ast::{cartesian, Location, Name, Program, Rule, State, Value};
use pufbind_core::interp::{run_with, step, MonitoredOracle, NoCtlRuntime, SeededChoices};
use pufbind_core::parser::parse_program;
use pufbind_core::programs;

use support::*;

/// Functions assigned anywhere in the program, including named rules.
fn update_targets(p: &Program) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    let mut collect = |r: &Rule| {
        if let Rule::Update { func, .. } = r {
            out.insert(func.clone());
        }
    };
    for m in &p.main_rules {
        m.body.visit(&mut collect);
    }
    for n in &p.named_rules {
        for r in &n.body {
            r.visit(&mut collect);
        }
    }
    out
}

/// States visited by a short seeded run, stopping at the first failing step.
fn visited(p: &Program, seed: u64, steps: u64) -> Vec<State> {
    let oracle = MonitoredOracle::Random { seed };
    let mut s = p.initial_state.clone();
    let mut out = Vec::new();
    for k in 0..steps {
        let Ok(mv) = oracle.valuation(p, k) else {
            break;
        };
        s.monitored = mv;
        out.push(s.clone());
        match step(p, &s, k, &mut SeededChoices::new(seed), &mut NoCtlRuntime) {
            Ok(o) => s = o.state,
            Err(_) => break,
        }
    }
    out
}

proptest! {
    #![proptest_config(config(1000))]

    #[test]
    fn fuzzed_programs_round_trip(text in program_text()) {
        check_round_trip(&text)?;
    }

    #[test]
    fn simplify_and_elim_preserve_meaning(f in formula()) {
        check_simplify_and_elim(&f)?;
    }
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn runs_are_deterministic(text in program_text(), seed in any::<u64>()) {
        let p = parse_program(&text).unwrap();
        let oracle = MonitoredOracle::Random { seed };
        let go = || run_with(&p, p.initial_state.clone(), 20, &oracle, &mut SeededChoices::new(seed), &mut NoCtlRuntime);
        prop_assert_eq!(go(), go());
    }

    #[test]
    fn unassigned_locations_keep_their_values(text in program_text(), seed in any::<u64>()) {
        let p = parse_program(&text).unwrap();
        let targets = update_targets(&p);
        for (k, s) in visited(&p, seed, 15).into_iter().enumerate() {
            let Ok(o) = step(&p, &s, k as u64, &mut SeededChoices::new(seed), &mut NoCtlRuntime) else { break };
            for (l, v) in &o.state.values {
                if s.values.get(l) != Some(v) {
                    prop_assert!(targets.contains(&l.func), "{} changed without an update", l);
                }
            }
            if o.fired.is_empty() {
                prop_assert_eq!(&o.state.values, &s.values, "a step with no enabled rule must stutter");
            }
        }
    }
}

fn mixer_at(stage: &str, full: bool) -> State {
    let p = programs::batch_mixer();
    let mut s = p.initial_state.clone();
    s.values.insert(loc("stage", &[]), Value::literal(stage));
    let mut m = MonitoredOracle::always_true(&p).valuation(&p, 0).unwrap();
    m.insert(loc("Full", &[]), Value::Bool(full));
    s.with_monitored(m)
}

fn frequencies(
    p: &Program,
    s: &State,
    target: &Location,
    draws: u64,
) -> std::collections::BTreeMap<Value, f64> {
    let mut counts = std::collections::BTreeMap::new();
    for seed in 0..draws {
        let o = step(p, s, 0, &mut SeededChoices::new(seed), &mut NoCtlRuntime).unwrap();
        *counts.entry(o.state.values[target].clone()).or_insert(0u64) += 1;
    }
    counts
        .into_iter()
        .map(|(v, c)| (v, c as f64 / draws as f64))
        .collect()
}

#[test]
fn choose_is_uniform_within_five_points() {
    let p = programs::batch_mixer();
    let f = frequencies(&p, &mixer_at("Fill", true), &loc("Speed", &[]), 10_000);
    assert_eq!(f.len(), 2);
    for share in f.values() {
        assert!((share - 0.5).abs() <= 0.05, "{f:?}");
    }

    let q = parse_program(
        "asm C
enum S = { A }
controlled c S init A
controlled v int[0..3] init 0
controlled w int[0..3] init 0
ctlstate c
unsafe false
rule R :
  if c = A then
    choose z in {0, 1, 2} do
      v := z
    endchoose
    choose y in int[0..3] with y != 1 do
      w := y
    endchoose
  endif
",
    )
    .unwrap();
    let s = q.initial_state.clone();
    for (target, n) in [("v", 3.0), ("w", 3.0)] {
        let f = frequencies(&q, &s, &loc(target, &[]), 10_000);
        assert_eq!(f.len(), 3, "{target}: {f:?}");
        for share in f.values() {
            assert!((share - 1.0 / n).abs() <= 0.05, "{target}: {f:?}");
        }
    }
    assert!(!frequencies(&q, &s, &loc("w", &[]), 2_000).contains_key(&Value::Int(1)));
}

#[test]
fn noise_rate_is_calibrated_within_two_points() {
    for (noise, seed) in [(0.0, 1), (0.01, 2), (0.05, 3), (0.25, 4)] {
        let got = noisy_fraction(noise, 10_000, seed);
        assert!((got - noise).abs() <= 0.02, "noise {noise}: observed {got}");
    }
}

#[test]
fn symbolic_step_concretizes_to_the_interpreter() {
    assert_eq!(
        check_concretization(&programs::traffic_light()),
        4 * 16 * 16
    );
    assert!(check_concretization(&programs::faulty_traffic_light()) > 0);
}

struct MixerCase {
    program: Program,
    condx: pufbind_core::ast::CondX,
    states: Vec<State>,
    ctls: Vec<Value>,
}

static MIXER: LazyLock<MixerCase> = LazyLock::new(|| {
    let program = programs::batch_mixer();
    let condx = pufbind_core::protect::derive_safe_condition(&program)
        .unwrap()
        .condx;
    let data = data_locations(&program);
    let domains: Vec<_> = data.iter().map(|l| domain_of(&program, l)).collect();
    let states = cartesian(&domains)
        .into_iter()
        .map(|vals| {
            let mut s = program.initial_state.clone();
            s.values.extend(data.iter().cloned().zip(vals));
            s
        })
        .filter(|s| !is_true(&program.unsafe_formula, s))
        .collect();
    let ctls = program.domain(program.plain_ctl_sort()).iter().collect();
    MixerCase {
        program,
        condx,
        states,
        ctls,
    }
});

proptest! {
    #![proptest_config(config(10_000))]

    /// Sampled safe states of the mixer: condX(x) holds exactly when a step
    /// from the state with control state x can reach an unsafe state.
    #[test]
    fn mixer_condition_is_sound_and_complete(i in any::<prop::sample::Index>(), j in any::<prop::sample::Index>()) {
        let m = &*MIXER;
        let s = i.get(&m.states);
        let x = j.get(&m.ctls);
        let env = pufbind_core::ast::Env::new().with(m.condx.var.clone(), x.clone());
        let predicted = pufbind_core::ast::eval_term(&m.condx.formula, s, &env).unwrap() == Value::Bool(true);
        let mut sx = s.clone();
        sx.values.insert(loc(&m.program.ctl, &[]), x.clone());
        prop_assert_eq!(predicted, can_violate(&m.program, &sx), "x={} state={:?}", x, s.values);
    }
}
