//! Concrete execution: one synchronous step of all main rules, seeded
//! resolution of `choose`, monitored-input provisioning and traces.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::ast::{
    apply_updates, eval_term, CandidateSet, Env, EvalError, InconsistentUpdate, Location, Mode,
    Name, Program, Rule, State, UpdateSet, Value,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error(transparent)]
    Inconsistent(#[from] InconsistentUpdate),
    #[error("choose in rule `{rule}` has an empty candidate set")]
    EmptyChooseSet { rule: Name },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("`choosectl` site reached without a protected runtime")]
    NoCtlRuntime,
    #[error("call of undeclared rule `{0}`")]
    UnknownRule(Name),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("monitored script has no valuation for step {step}")]
    ScriptExhausted { step: u64 },
    #[error("monitored valuation lacks {0}")]
    MissingLocation(Location),
    #[error("unknown monitored location `{0}`")]
    UnknownLocation(String),
    #[error("invalid monitored script: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("step {step}: {source}")]
    Step { step: u64, source: StepError },
    #[error("step {step}: {source}")]
    Oracle { step: u64, source: OracleError },
}

/// Tags attached to trace entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventTag {
    Stall,
    FallbackTaken,
    BoundOk,
    SafeStall,
}

/// Identifies one nondeterministic choice within a run.
#[derive(Clone, Copy, Debug)]
pub struct ChoiceSite<'a> {
    pub step: u64,
    pub rule: &'a str,
    pub ordinal: u32,
}

pub trait ChoiceSource {
    /// Index in `0..n` of the candidate to take; `n >= 1`.
    fn pick(&mut self, site: ChoiceSite<'_>, n: usize) -> usize;
}

/// Uniform choices from a generator keyed by (seed, step, rule, ordinal), so
/// that one site's draws do not depend on any other site.
#[derive(Clone, Debug)]
pub struct SeededChoices {
    pub seed: u64,
}

impl SeededChoices {
    pub fn new(seed: u64) -> Self {
        SeededChoices { seed }
    }
}

impl ChoiceSource for SeededChoices {
    fn pick(&mut self, site: ChoiceSite<'_>, n: usize) -> usize {
        let key = seed::derive(&[
            self.seed,
            site.step,
            seed::fnv1a(site.rule.as_bytes()),
            site.ordinal as u64,
        ]);
        ChaCha8Rng::seed_from_u64(key).gen_range(0..n)
    }
}

/// Replays a fixed list of choice indices and records the arity of every
/// choice it answers. Choices beyond the script take index 0.
#[derive(Clone, Debug, Default)]
pub struct ScriptedChoices {
    pub script: Vec<usize>,
    pub arities: Vec<usize>,
}

impl ScriptedChoices {
    pub fn new(script: Vec<usize>) -> Self {
        ScriptedChoices {
            script,
            arities: Vec::new(),
        }
    }

    /// The next script in odometer order over the recorded arities, or
    /// `None` once every combination has been produced.
    pub fn next_script(&self) -> Option<Vec<usize>> {
        let mut s: Vec<usize> = (0..self.arities.len())
            .map(|i| self.script.get(i).copied().unwrap_or(0))
            .collect();
        for i in (0..s.len()).rev() {
            if s[i] + 1 < self.arities[i] {
                s[i] += 1;
                s.truncate(i + 1);
                return Some(s);
            }
        }
        None
    }
}

impl ChoiceSource for ScriptedChoices {
    fn pick(&mut self, _site: ChoiceSite<'_>, n: usize) -> usize {
        let i = self.arities.len();
        self.arities.push(n);
        self.script.get(i).copied().unwrap_or(0).min(n - 1)
    }
}

/// Resolves `choosectl` sites of protected programs.
pub trait CtlResolver {
    /// Called once per site after the step's other updates are known;
    /// `post` is the pre-state with those updates applied.
    fn resolve(
        &mut self,
        challenge: u64,
        post: &State,
        choices: &mut dyn ChoiceSource,
        site: ChoiceSite<'_>,
    ) -> Result<(Value, EventTag), StepError>;
}

/// Resolver for plain programs, which contain no `choosectl` sites.
pub struct NoCtlRuntime;

impl CtlResolver for NoCtlRuntime {
    fn resolve(
        &mut self,
        _challenge: u64,
        _post: &State,
        _choices: &mut dyn ChoiceSource,
        _site: ChoiceSite<'_>,
    ) -> Result<(Value, EventTag), StepError> {
        Err(StepError::NoCtlRuntime)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub state: State,
    pub fired: Vec<Name>,
    pub events: Vec<EventTag>,
}

struct Collector<'a> {
    program: &'a Program,
    step: u64,
    rule: &'a str,
    ordinal: u32,
    updates: UpdateSet,
    ctl_sites: Vec<(u64, &'a str)>,
}

impl<'a> Collector<'a> {
    fn rules(
        &mut self,
        rules: &'a [Rule],
        state: &State,
        env: &mut Env,
        choices: &mut dyn ChoiceSource,
    ) -> Result<(), StepError> {
        for r in rules {
            self.rule(r, state, env, choices)?;
        }
        Ok(())
    }

    fn rule(
        &mut self,
        r: &'a Rule,
        state: &State,
        env: &mut Env,
        choices: &mut dyn ChoiceSource,
    ) -> Result<(), StepError> {
        match r {
            Rule::Update { func, args, value } => {
                let args = args
                    .iter()
                    .map(|a| eval_term(a, state, env))
                    .collect::<Result<Vec<_>, _>>()?;
                let v = eval_term(value, state, env)?;
                self.updates.push((Location::new(func.clone(), args), v));
            }
            Rule::Cond {
                guard,
                then_rules,
                else_rules,
            } => {
                if truth(guard, state, env)? {
                    self.rules(then_rules, state, env, choices)?;
                } else if let Some(e) = else_rules {
                    self.rules(e, state, env, choices)?;
                }
            }
            Rule::Par(rs) => self.rules(rs, state, env, choices)?,
            Rule::Choose { var, set, body, .. } => {
                let candidates = candidates(self.program, set, var, state, env)?;
                if candidates.is_empty() {
                    return Err(StepError::EmptyChooseSet {
                        rule: self.rule.into(),
                    });
                }
                let site = ChoiceSite {
                    step: self.step,
                    rule: self.rule,
                    ordinal: self.ordinal,
                };
                self.ordinal += 1;
                let k = choices.pick(site, candidates.len());
                env.push(var.clone(), candidates[k].clone());
                let res = self.rules(body, state, env, choices);
                env.pop();
                res?;
            }
            Rule::Let { var, value, body } => {
                let v = eval_term(value, state, env)?;
                env.push(var.clone(), v);
                let res = self.rules(body, state, env, choices);
                env.pop();
                res?;
            }
            Rule::Call { rule, args } => {
                let nr = self
                    .program
                    .named_rule(rule)
                    .ok_or_else(|| StepError::UnknownRule(rule.clone()))?;
                let mut inner = Env::new();
                for ((p, _), a) in nr.params.iter().zip(args) {
                    inner.push(p.clone(), eval_term(a, state, env)?);
                }
                self.rules(&nr.body, state, &mut inner, choices)?;
            }
            Rule::ChooseCtl { challenge } => self.ctl_sites.push((*challenge, self.rule)),
        }
        Ok(())
    }
}

fn truth(t: &crate::ast::Term, state: &State, env: &Env) -> Result<bool, StepError> {
    match eval_term(t, state, env)? {
        Value::Bool(b) => Ok(b),
        v => Err(EvalError::SortMismatch(format!("guard evaluated to {v}")).into()),
    }
}

fn candidates(
    program: &Program,
    set: &CandidateSet,
    var: &Name,
    state: &State,
    env: &mut Env,
) -> Result<Vec<Value>, StepError> {
    match set {
        CandidateSet::Values(vs) => Ok(vs.clone()),
        CandidateSet::Sort { sort, pred } => {
            let mut out = Vec::new();
            for v in program.domain(sort).iter() {
                let keep = match pred {
                    None => true,
                    Some(p) => {
                        env.push(var.clone(), v.clone());
                        let r = truth(p, state, env);
                        env.pop();
                        r?
                    }
                };
                if keep {
                    out.push(v);
                }
            }
            Ok(out)
        }
    }
}

/// One machine step. `state.monitored` must hold the valuation for this
/// step. If no main rule's guard holds the state is returned unchanged and
/// tagged `STALL`.
pub fn step(
    program: &Program,
    state: &State,
    step_index: u64,
    choices: &mut dyn ChoiceSource,
    resolver: &mut dyn CtlResolver,
) -> Result<StepOutcome, StepError> {
    let mut fired = Vec::new();
    let mut updates = UpdateSet::new();
    let mut sites = Vec::new();
    for main in &program.main_rules {
        let Rule::Cond { guard, .. } = &main.body else {
            unreachable!("validated main rules are conditionals");
        };
        if !truth(guard, state, &Env::new())? {
            continue;
        }
        fired.push(main.name.clone());
        let mut c = Collector {
            program,
            step: step_index,
            rule: &main.name,
            ordinal: 0,
            updates: Vec::new(),
            ctl_sites: Vec::new(),
        };
        c.rule(&main.body, state, &mut Env::new(), choices)?;
        updates.extend(c.updates);
        sites.extend(c.ctl_sites);
    }
    if fired.is_empty() {
        return Ok(StepOutcome {
            state: state.clone(),
            fired,
            events: vec![EventTag::Stall],
        });
    }
    let mut events = Vec::new();
    if !sites.is_empty() {
        let post = apply_updates(state, &updates)?;
        let ctl = Location::nullary(program.ctl.clone());
        for (ordinal, (challenge, rule)) in sites.into_iter().enumerate() {
            let site = ChoiceSite {
                step: step_index,
                rule,
                ordinal: ordinal as u32,
            };
            let (v, tag) = resolver.resolve(challenge, &post, choices, site)?;
            updates.push((ctl.clone(), v));
            events.push(tag);
        }
    }
    let next = apply_updates(state, &updates)?;
    Ok(StepOutcome {
        state: next,
        fired,
        events,
    })
}

/// Source of monitored valuations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MonitoredOracle {
    /// Each location's value is a pure function of (seed, step, location).
    Random {
        seed: u64,
    },
    Scripted(Vec<BTreeMap<Location, Value>>),
    Constant(BTreeMap<Location, Value>),
}

impl MonitoredOracle {
    /// Every boolean monitored location true; others take their first value.
    pub fn always_true(program: &Program) -> Self {
        let mut m = BTreeMap::new();
        for f in program
            .functions
            .iter()
            .filter(|f| f.mode == Mode::Monitored)
        {
            let v = match program.domain(&f.result) {
                crate::ast::Domain::Bool => Value::Bool(true),
                d => d.nth(0),
            };
            for loc in program.locations_of(f) {
                m.insert(loc, v.clone());
            }
        }
        MonitoredOracle::Constant(m)
    }

    /// Parses a JSON list of objects keyed by location text, e.g.
    /// `[{"Passed(Stop1Stop2)": true, ...}, ...]`.
    pub fn scripted_from_json(program: &Program, text: &str) -> Result<Self, OracleError> {
        let raw: Vec<BTreeMap<String, Value>> =
            serde_json::from_str(text).map_err(|e| OracleError::Format(e.to_string()))?;
        let by_name: BTreeMap<String, Location> = program
            .monitored_locations()
            .into_iter()
            .map(|l| (l.to_string(), l))
            .collect();
        let mut steps = Vec::new();
        for entry in raw {
            let mut m = BTreeMap::new();
            for (k, v) in entry {
                let loc = by_name
                    .get(&k.replace(' ', "").replace(',', ", "))
                    .ok_or_else(|| OracleError::UnknownLocation(k.clone()))?;
                m.insert(loc.clone(), v);
            }
            steps.push(m);
        }
        Ok(MonitoredOracle::Scripted(steps))
    }

    pub fn valuation(
        &self,
        program: &Program,
        step: u64,
    ) -> Result<BTreeMap<Location, Value>, OracleError> {
        let locations = program.monitored_locations();
        match self {
            MonitoredOracle::Random { seed } => Ok(locations
                .into_iter()
                .map(|loc| {
                    let d = program.domain(
                        &program
                            .function(&loc.func)
                            .expect("monitored location of a declared function")
                            .result,
                    );
                    let h = seed::derive(&[*seed, step, seed::fnv1a(loc.to_string().as_bytes())]);
                    let v = d.nth(h % d.len());
                    (loc, v)
                })
                .collect()),
            MonitoredOracle::Scripted(steps) => {
                let m = steps
                    .get(step as usize)
                    .ok_or(OracleError::ScriptExhausted { step })?;
                check_total(&locations, m)?;
                Ok(m.clone())
            }
            MonitoredOracle::Constant(m) => {
                check_total(&locations, m)?;
                Ok(m.clone())
            }
        }
    }
}

fn check_total(locations: &[Location], m: &BTreeMap<Location, Value>) -> Result<(), OracleError> {
    match locations.iter().find(|l| !m.contains_key(*l)) {
        Some(l) => Err(OracleError::MissingLocation(l.clone())),
        None => Ok(()),
    }
}

fn serialize_locations<S: Serializer>(
    m: &BTreeMap<Location, Value>,
    s: S,
) -> Result<S::Ok, S::Error> {
    let mut map = s.serialize_map(Some(m.len()))?;
    for (k, v) in m {
        map.serialize_entry(&k.to_string(), v)?;
    }
    map.end()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub step: u64,
    /// Controlled locations after the step.
    #[serde(serialize_with = "serialize_locations")]
    pub state: BTreeMap<Location, Value>,
    /// Monitored valuation the step reacted to; empty for the initial entry.
    #[serde(serialize_with = "serialize_locations")]
    pub monitored: BTreeMap<Location, Value>,
    pub fired: Vec<Name>,
    pub events: Vec<EventTag>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("trace entries serialize"));
            out.push('\n');
        }
        out
    }

    /// Values of one location along the trace.
    pub fn column(&self, loc: &Location) -> Vec<Option<Value>> {
        self.entries
            .iter()
            .map(|e| e.state.get(loc).cloned())
            .collect()
    }
}

pub fn controlled_snapshot(program: &Program, state: &State) -> BTreeMap<Location, Value> {
    state
        .values
        .iter()
        .filter(|(l, _)| {
            program
                .function(&l.func)
                .is_some_and(|f| f.mode == Mode::Controlled)
        })
        .map(|(l, v)| (l.clone(), v.clone()))
        .collect()
}

/// Runs `steps` steps from the program's initial state with uniform seeded
/// choices.
pub fn run(
    program: &Program,
    steps: u64,
    oracle: &MonitoredOracle,
    seed: u64,
) -> Result<Trace, RunError> {
    run_with(
        program,
        program.initial_state.clone(),
        steps,
        oracle,
        &mut SeededChoices::new(seed),
        &mut NoCtlRuntime,
    )
}

pub fn run_with(
    program: &Program,
    initial: State,
    steps: u64,
    oracle: &MonitoredOracle,
    choices: &mut dyn ChoiceSource,
    resolver: &mut dyn CtlResolver,
) -> Result<Trace, RunError> {
    let mut entries = vec![TraceEntry {
        step: 0,
        state: controlled_snapshot(program, &initial),
        monitored: BTreeMap::new(),
        fired: Vec::new(),
        events: Vec::new(),
    }];
    let mut state = initial;
    for k in 0..steps {
        let monitored = oracle
            .valuation(program, k)
            .map_err(|source| RunError::Oracle { step: k, source })?;
        state.monitored = monitored;
        let out = step(program, &state, k, choices, resolver)
            .map_err(|source| RunError::Step { step: k, source })?;
        entries.push(TraceEntry {
            step: k + 1,
            state: controlled_snapshot(program, &out.state),
            monitored: out.state.monitored.clone(),
            fired: out.fired,
            events: out.events,
        });
        state = out.state;
    }
    Ok(Trace { entries })
}
