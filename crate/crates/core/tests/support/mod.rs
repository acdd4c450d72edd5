//! Generators and independent oracles shared by integration and acceptance
//! tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use pufbind_core::ast::{
    cartesian, eval_term, name, Domain, Env, Location, Mode, Program, State, Value,
};
use pufbind_core::interp::{step, NoCtlRuntime, ScriptedChoices};
use pufbind_core::parser::{parse_program, pretty_print};
use pufbind_core::programs;
use pufbind_core::symexec::{elim_symbol, simplify, SymExpr, SymId, SymOrigin, SymbolTable};

pub const PHASES: [&str; 4] = ["Stop1Stop2", "Go1Stop2", "Stop2Stop1", "Go2Stop1"];

pub fn loc(f: &str, args: &[Value]) -> Location {
    Location::new(name(f), args.to_vec())
}

/// Expected condX of the one-way light, written out by hand.
pub fn reference_cond(x: &str, g1: bool, g2: bool) -> bool {
    let side1 = x == PHASES[0] || x == PHASES[1];
    (side1 && !g1 && g2) || (!side1 && !g2 && g1)
}

/// Traffic-light state with the given green lamps and matching red lamps.
pub fn lights(g1: bool, g2: bool) -> State {
    let mut s = programs::traffic_light().initial_state;
    for (i, g) in [(1, g1), (2, g2)] {
        s.values
            .insert(loc("GoLight", &[Value::Int(i)]), Value::Bool(g));
        s.values
            .insert(loc("StopLight", &[Value::Int(i)]), Value::Bool(!g));
    }
    s
}

pub fn is_true(t: &pufbind_core::ast::Term, s: &State) -> bool {
    eval_term(t, s, &Env::new()) == Ok(Value::Bool(true))
}

/// Whether any monitored valuation and choice script takes `s` to an
/// unsafe state in one step of the plain program.
pub fn can_violate(p: &Program, s: &State) -> bool {
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
            if is_true(&p.unsafe_formula, &out.state) {
                return true;
            }
            script = choices.next_script();
        }
    }
    false
}

/// Controlled locations other than the control state.
pub fn data_locations(p: &Program) -> Vec<Location> {
    p.functions
        .iter()
        .filter(|d| d.mode == Mode::Controlled && d.name != p.ctl)
        .flat_map(|d| p.locations_of(d))
        .collect()
}

pub fn domain_of(p: &Program, l: &Location) -> Domain {
    p.domain(&p.function(&l.func).unwrap().result)
}

// ---- fuzzed programs ------------------------------------------------------

const HEADER: &str = "asm Fuzz

enum Mode = { M0, M1, M2 }

controlled c Mode init M0
controlled b0 bool init false
controlled b1 bool init true
controlled v int[0..3] init 0
controlled f : int[0..2] -> bool init { (1) -> true, _ -> false }
monitored m0 bool
monitored m1 bool
static k int[0..2] init 2

ctlstate c
";

#[derive(Clone, Debug, Default)]
struct Scope {
    bools: Vec<String>,
    ints: Vec<String>,
    monitored: bool,
    main: bool,
    depth: u32,
}

fn one_of(items: Vec<String>) -> BoxedStrategy<String> {
    proptest::sample::select(items).boxed()
}

fn int_term(sc: &Scope, depth: u32) -> BoxedStrategy<String> {
    let mut leaves: Vec<String> = ["0", "1", "2", "v", "k"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    leaves.extend(sc.ints.iter().cloned());
    let leaf = one_of(leaves);
    if depth == 0 {
        return leaf;
    }
    let sc2 = sc.clone();
    prop_oneof![
        3 => leaf,
        1 => (bool_term(&sc2, depth - 1), int_term(&sc2, depth - 1), int_term(&sc2, depth - 1))
            .prop_map(|(c, a, b)| format!("ite({c}, {a}, {b})")),
    ]
    .boxed()
}

/// Terms valid as an argument of `f`.
fn index_term(sc: &Scope) -> BoxedStrategy<String> {
    let mut leaves: Vec<String> = ["0", "1", "2", "k"].iter().map(|s| s.to_string()).collect();
    leaves.extend(sc.ints.iter().cloned());
    one_of(leaves)
}

fn bool_term(sc: &Scope, depth: u32) -> BoxedStrategy<String> {
    let mut leaves: Vec<String> = [
        "true",
        "false",
        "b0",
        "b1",
        "(c = M1)",
        "(c in {M0, M2})",
        "(v in {0, 3})",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if sc.monitored {
        leaves.extend(["m0".to_string(), "m1".to_string()]);
    }
    leaves.extend(sc.bools.iter().cloned());
    let leaf = prop_oneof![
        4 => one_of(leaves),
        1 => index_term(sc).prop_map(|i| format!("f({i})")),
    ];
    if depth == 0 {
        return leaf.boxed();
    }
    let b = || bool_term(sc, depth - 1);
    let i = || int_term(sc, depth - 1);
    prop_oneof![
        4 => leaf,
        1 => b().prop_map(|a| format!("(not ({a}))")),
        2 => (b(), b()).prop_map(|(a, c)| format!("({a} and {c})")),
        2 => (b(), b()).prop_map(|(a, c)| format!("({a} or {c})")),
        1 => (i(), i()).prop_map(|(a, c)| format!("({a} = {c})")),
        1 => (b(), b()).prop_map(|(a, c)| format!("({a} != {c})")),
        1 => (b(), b(), b()).prop_map(|(a, c, d)| format!("ite({a}, {c}, {d})")),
    ]
    .boxed()
}

fn stmt(sc: &Scope) -> BoxedStrategy<String> {
    let t = || bool_term(sc, 2);
    let mut leaf = vec![
        t().prop_map(|b| format!("b0 := {b}")).boxed(),
        t().prop_map(|b| format!("b1 := {b}")).boxed(),
        int_term(sc, 2).prop_map(|i| format!("v := {i}")).boxed(),
        (index_term(sc), t())
            .prop_map(|(i, b)| format!("f({i}) := {b}"))
            .boxed(),
        t().prop_map(|b| format!("Set({b})")).boxed(),
    ];
    if sc.main {
        leaf.push(one_of(vec![
            "c := M0".into(),
            "c := M1".into(),
            "c := M2".into(),
        ]));
    }
    let leaf = proptest::strategy::Union::new(leaf).boxed();
    if sc.depth >= 2 {
        return leaf;
    }
    let mut inner = sc.clone();
    inner.depth += 1;
    let d = inner.depth;
    let body = |s: &Scope| proptest::collection::vec(stmt(s), 1..3).prop_map(|v| v.join("\n"));
    let mut with_y = inner.clone();
    with_y.bools.push(format!("y{d}"));
    let mut with_z = inner.clone();
    with_z.ints.push(format!("z{d}"));
    prop_oneof![
        6 => leaf,
        2 => (bool_term(sc, 2), body(&inner), proptest::option::of(body(&inner))).prop_map(|(g, a, e)| match e {
            Some(e) => format!("if {g} then\n{a}\nelse\n{e}\nendif"),
            None => format!("if {g} then\n{a}\nendif"),
        }),
        1 => body(&inner).prop_map(|b| format!("par\n{b}\nendpar")),
        1 => (bool_term(sc, 2), body(&with_y)).prop_map(move |(v, b)| format!("let y{d} = {v} in\n{b}\nendlet")),
        1 => body(&with_z).prop_map(move |b| format!("choose z{d} in {{0, 1, 2}} do\n{b}\nendchoose")),
        1 => body(&with_z).prop_map(move |b| format!("choose z{d} in int[0..2] with z{d} != 1 do\n{b}\nendchoose")),
    ]
    .boxed()
}

fn main_rule() -> BoxedStrategy<(String, String)> {
    let sc = Scope {
        monitored: true,
        main: true,
        ..Scope::default()
    };
    let guard = one_of(vec![
        "c = M0".into(),
        "c = M1".into(),
        "c in {M1, M2}".into(),
    ]);
    (
        guard,
        proptest::option::of(bool_term(&sc, 1)),
        proptest::collection::vec(stmt(&sc), 1..4),
    )
        .prop_map(|(g, extra, body)| {
            let g = match extra {
                Some(e) => format!("{g} and {e}"),
                None => g,
            };
            (g, body.join("\n"))
        })
        .boxed()
}

/// Source text of a random well-formed program over a fixed signature.
pub fn program_text() -> impl Strategy<Value = String> {
    (
        bool_term(&Scope::default(), 2),
        any::<bool>(),
        proptest::collection::vec(main_rule(), 1..4),
    )
        .prop_map(|(unsafe_f, assume, rules)| {
            let mut s = String::from(HEADER);
            s.push_str(&format!("unsafe {unsafe_f}\n"));
            if assume {
                s.push_str("assume b0 = not b1\n");
            }
            s.push('\n');
            for (i, (g, body)) in rules.iter().enumerate() {
                s.push_str(&format!("rule R{i} :\n  if {g} then\n{body}\n  endif\n\n"));
            }
            s.push_str("rule Set(a : bool) :\n  b1 := a\n");
            s
        })
}

/// Deterministic configuration with no regression files.
pub fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x70_75_66),
        ..ProptestConfig::default()
    }
}

/// Parse, print, reparse: the programs agree and printing is a fixed point.
pub fn check_round_trip(text: &str) -> Result<(), TestCaseError> {
    let p = parse_program(text).map_err(|d| TestCaseError::fail(format!("{d:?}\n{text}")))?;
    let printed = pretty_print(&p);
    let q =
        parse_program(&printed).map_err(|d| TestCaseError::fail(format!("{d:?}\n{printed}")))?;
    prop_assert_eq!(&q, &p);
    prop_assert_eq!(pretty_print(&q), printed);
    Ok(())
}

// ---- fuzzed formulas ------------------------------------------------------

/// Symbols p, q, r : bool, n : int[0..2], e : {A, B, C}.
pub fn formula_table() -> SymbolTable {
    let mut t = SymbolTable::default();
    for s in ["p", "q", "r"] {
        t.fresh(s, Domain::Bool, SymOrigin::Placeholder);
    }
    t.fresh("n", Domain::Int { lo: 0, hi: 2 }, SymOrigin::Placeholder);
    t.fresh(
        "e",
        Domain::Enum(vec![name("A"), name("B"), name("C")].into()),
        SymOrigin::Placeholder,
    );
    t
}

const N: SymId = 3;
const E: SymId = 4;

fn value_set(vals: Vec<Value>, mask: u8) -> BTreeSet<Value> {
    vals.into_iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, v)| v)
        .collect()
}

fn int_expr() -> impl Strategy<Value = SymExpr> {
    prop_oneof![
        (0i64..3).prop_map(SymExpr::lit),
        Just(SymExpr::Sym(N)),
        ((0u32..3), (0i64..3)).prop_map(|(b, k)| SymExpr::Ite(
            Box::new(SymExpr::Sym(b)),
            Box::new(SymExpr::lit(k)),
            Box::new(SymExpr::Sym(N))
        )),
    ]
}

fn enum_lit() -> impl Strategy<Value = Value> {
    proptest::sample::select(vec!["A", "B", "C"]).prop_map(Value::literal)
}

/// Boolean formulas built from raw constructors, so `simplify` sees them
/// unnormalized.
pub fn formula() -> impl Strategy<Value = SymExpr> {
    let leaf = prop_oneof![
        any::<bool>().prop_map(SymExpr::lit),
        (0u32..3).prop_map(SymExpr::Sym),
        (int_expr(), 0i64..3)
            .prop_map(|(a, k)| SymExpr::Eq(Box::new(a), Box::new(SymExpr::lit(k)))),
        enum_lit()
            .prop_map(|v| SymExpr::Eq(Box::new(SymExpr::Sym(E)), Box::new(SymExpr::Const(v)))),
        (0u8..8).prop_map(|m| SymExpr::In(
            Box::new(SymExpr::Sym(N)),
            value_set((0..3).map(Value::Int).collect(), m)
        )),
        (0u8..8).prop_map(|m| SymExpr::In(
            Box::new(SymExpr::Sym(E)),
            value_set(["A", "B", "C"].map(Value::literal).to_vec(), m)
        )),
        (int_expr(), int_expr()).prop_map(|(a, b)| SymExpr::Eq(Box::new(a), Box::new(b))),
    ];
    leaf.prop_recursive(4, 40, 4, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| SymExpr::Not(Box::new(a))),
            proptest::collection::vec(inner.clone(), 0..4).prop_map(SymExpr::And),
            proptest::collection::vec(inner.clone(), 0..4).prop_map(SymExpr::Or),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| SymExpr::Eq(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone(), inner).prop_map(|(a, b, c)| SymExpr::Ite(
                Box::new(a),
                Box::new(b),
                Box::new(c)
            )),
        ]
    })
}

/// Every valuation of the formula table.
pub fn valuations(t: &SymbolTable) -> Vec<Vec<Value>> {
    let domains: Vec<Domain> = t.iter().map(|(_, s)| s.domain.clone()).collect();
    cartesian(&domains)
}

/// `simplify` preserves meaning and never grows a formula; `elim_symbol`
/// drops the symbol and equals the disjunction over its values.
pub fn check_simplify_and_elim(f: &SymExpr) -> Result<(), TestCaseError> {
    let t = formula_table();
    let vals = valuations(&t);
    let s = simplify(&t, f);
    prop_assert!(s.size() <= f.size());
    for v in &vals {
        prop_assert_eq!(
            s.eval(v),
            f.eval(v),
            "simplify changed the value at {:?}",
            v
        );
    }
    for (id, sym) in t.iter() {
        let g = elim_symbol(&t, f, id);
        prop_assert!(!g.mentions(id), "{} survived elimination", sym.name);
        for v in &vals {
            let expected = sym.domain.iter().any(|x| {
                let mut w = v.clone();
                w[id as usize] = x;
                f.truth(&w)
            });
            prop_assert_eq!(g.truth(v), expected);
        }
    }
    Ok(())
}

/// Relative frequency of noisy readouts for one device.
pub fn noisy_fraction(noise: f64, queries: u32, seed: u64) -> f64 {
    use pufbind_core::puf::{Puf, PufDevice};
    use rand::SeedableRng;
    let d = PufDevice::new(seed, 16, 16, noise).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut flips = 0u32;
    for k in 0..queries {
        let c = u64::from(k) % d.challenge_count();
        if d.query(c, &mut rng).unwrap() != d.stable(c) {
            flips += 1;
        }
    }
    f64::from(flips) / f64::from(queries)
}

/// Monitored valuation as a map, for building states by hand.
pub fn monitored_map(p: &Program, vals: Vec<Value>) -> BTreeMap<Location, Value> {
    p.monitored_locations().into_iter().zip(vals).collect()
}

/// Every concrete state of a `choose`-free `p` satisfies exactly one path
/// condition of the unabstracted symbolic step, and that path's successor
/// map evaluates to the interpreter's successor. Returns the number of states checked.
pub fn check_concretization(p: &Program) -> u64 {
    use pufbind_core::symexec::{oracle::for_each_assignment, symbolic_step, SymInit, SymPath};
    let init = SymInit::fresh(p);
    let out = symbolic_step(p, &init, false).unwrap();
    let table = &out.table;
    let domains: Vec<Domain> = table.iter().map(|(_, s)| s.domain.clone()).collect();
    let mut checked = 0u64;
    for_each_assignment(&domains, |val| {
        let mut state = p.initial_state.clone();
        let mut monitored = BTreeMap::new();
        for (id, s) in table.iter() {
            if let SymOrigin::Location(l) = &s.origin {
                if p.function(&l.func).unwrap().mode == Mode::Monitored {
                    monitored.insert(l.clone(), val[id as usize].clone());
                } else {
                    state.values.insert(l.clone(), val[id as usize].clone());
                }
            }
        }
        let state = state.with_monitored(monitored);
        let taken: Vec<&SymPath> = out.paths.iter().filter(|x| x.cond.truth(val)).collect();
        assert_eq!(taken.len(), 1, "{} paths taken", taken.len());
        let next = step(
            p,
            &state,
            0,
            &mut ScriptedChoices::new(Vec::new()),
            &mut NoCtlRuntime,
        )
        .unwrap();
        for (l, v) in &taken[0].loc_map {
            if p.function(&l.func).unwrap().mode == Mode::Controlled {
                assert_eq!(v.eval(val), next.state.values[l], "{l}");
            }
        }
        checked += 1;
        true
    })
    .unwrap();
    checked
}
