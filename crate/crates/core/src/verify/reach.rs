//! Breadth-first reachability over the full transition relation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::ast::{cartesian, eval_term, Domain, Env, Location, Mode, Program, State, Value};
use crate::interp::{
    run_with, step, ChoiceSite, ChoiceSource, CtlResolver, MonitoredOracle, NoCtlRuntime,
    ScriptedChoices, StepError, Trace,
};
use crate::par::Execution;
use crate::protect::{ProtectedRuntime, PufModel};
use crate::puf::{Enrollment, Puf};

use super::VerifyError;

/// Largest state space (controlled states times monitored valuations)
/// explored.
pub const MAX_STATE_SPACE: u128 = 1 << 20;

/// Responses available to a protected program.
#[derive(Clone, Copy)]
pub enum PufSpace<'a> {
    /// Any enrolled response, the init token or one unenrolled value.
    Adversarial,
    /// The given device, queried with a fixed stream.
    Device(&'a (dyn Puf + Sync)),
}

#[derive(Clone, Copy)]
pub enum ReachSubject<'a> {
    Plain(&'a Program),
    Protected {
        program: &'a Program,
        enrollment: &'a Enrollment,
        puf: PufSpace<'a>,
    },
}

impl<'a> ReachSubject<'a> {
    pub fn program(&self) -> &'a Program {
        match self {
            ReachSubject::Plain(p) => p,
            ReachSubject::Protected { program, .. } => program,
        }
    }

    fn with_resolver<R>(&self, f: impl FnOnce(&mut dyn CtlResolver) -> R) -> R {
        match *self {
            ReachSubject::Plain(_) => f(&mut NoCtlRuntime),
            ReachSubject::Protected {
                program,
                enrollment,
                puf,
            } => {
                let model = match puf {
                    PufSpace::Adversarial => PufModel::Adversarial {
                        candidates: adversarial_responses(enrollment),
                    },
                    PufSpace::Device(d) => PufModel::Device {
                        puf: d,
                        query_seed: 0,
                    },
                };
                f(&mut ProtectedRuntime::new(program, enrollment, model))
            }
        }
    }
}

/// Enrolled responses, the init token and the smallest value that decodes
/// to nothing.
pub fn adversarial_responses(enrollment: &Enrollment) -> Vec<u64> {
    let mut out: BTreeSet<u64> = enrollment.transitions.iter().map(|t| t.response).collect();
    out.insert(enrollment.init_token);
    let spare = (0..1u64 << enrollment.response_bits).find(|r| !out.contains(r));
    let mut out: Vec<u64> = out.into_iter().collect();
    out.extend(spare);
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WitnessStep {
    #[serde(serialize_with = "locations")]
    pub monitored: BTreeMap<Location, Value>,
    /// Every pick made during the step, in order.
    pub choices: Vec<usize>,
    /// Controlled locations after the step.
    #[serde(serialize_with = "locations")]
    pub state: BTreeMap<Location, Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Witness {
    #[serde(serialize_with = "locations")]
    pub initial: BTreeMap<Location, Value>,
    pub steps: Vec<WitnessStep>,
}

fn locations<S: serde::Serializer>(m: &BTreeMap<Location, Value>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(m.len()))?;
    for (k, v) in m {
        map.serialize_entry(&k.to_string(), v)?;
    }
    map.end()
}

impl Witness {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Monitored oracle and choice source that reproduce the witness.
    pub fn inputs(&self) -> (MonitoredOracle, ScriptedChoices) {
        let oracle =
            MonitoredOracle::Scripted(self.steps.iter().map(|s| s.monitored.clone()).collect());
        let picks = self
            .steps
            .iter()
            .flat_map(|s| s.choices.iter().copied())
            .collect();
        (oracle, ScriptedChoices::new(picks))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReachabilityReport {
    pub explored_states: u64,
    pub transition_count: u64,
    pub unsafe_reachable: bool,
    pub witness: Option<Witness>,
}

/// Records the picks actually taken, padding the script with zeros.
struct Recording {
    inner: ScriptedChoices,
    taken: Vec<usize>,
}

impl ChoiceSource for Recording {
    fn pick(&mut self, site: ChoiceSite<'_>, n: usize) -> usize {
        let k = self.inner.pick(site, n);
        self.taken.push(k);
        k
    }
}

struct Successor {
    values: Vec<Value>,
    monitored: usize,
    picks: Vec<usize>,
    unsafe_: bool,
}

struct Explorer<'a> {
    subject: ReachSubject<'a>,
    program: &'a Program,
    controlled: Vec<Location>,
    valuations: Vec<BTreeMap<Location, Value>>,
}

impl Explorer<'_> {
    fn state(&self, values: &[Value]) -> State {
        let mut s = self.program.initial_state.clone();
        for (l, v) in self.controlled.iter().zip(values) {
            s.values.insert(l.clone(), v.clone());
        }
        s
    }

    fn values(&self, s: &State) -> Vec<Value> {
        self.controlled
            .iter()
            .map(|l| s.values[l].clone())
            .collect()
    }

    fn is_unsafe(&self, s: &State) -> Result<bool, StepError> {
        Ok(eval_term(&self.program.unsafe_formula, s, &Env::new())? == Value::Bool(true))
    }

    fn expand(&self, values: &[Value]) -> Result<Vec<Successor>, StepError> {
        let base = self.state(values);
        let mut out = Vec::new();
        for (mi, mv) in self.valuations.iter().enumerate() {
            let st = base.clone().with_monitored(mv.clone());
            let mut script = Some(Vec::new());
            while let Some(sc) = script {
                let mut rec = Recording {
                    inner: ScriptedChoices::new(sc),
                    taken: Vec::new(),
                };
                let next = self
                    .subject
                    .with_resolver(|r| step(self.program, &st, 0, &mut rec, r))?;
                out.push(Successor {
                    values: self.values(&next.state),
                    monitored: mi,
                    picks: rec.taken,
                    unsafe_: self.is_unsafe(&next.state)?,
                });
                script = rec.inner.next_script();
            }
        }
        Ok(out)
    }
}

/// Explores every state reachable from the initial state under every
/// monitored valuation and every resolution of nondeterminism. Stops at the
/// first breadth-first level containing an unsafe state, so the witness is
/// a shortest one.
pub fn exhaustive_safety_check(
    subject: &ReachSubject<'_>,
    exec: Execution,
) -> Result<ReachabilityReport, VerifyError> {
    let program = subject.program();
    let controlled: Vec<Location> = program
        .functions
        .iter()
        .filter(|d| d.mode == Mode::Controlled)
        .flat_map(|d| program.locations_of(d))
        .collect();
    let monitored = program.monitored_locations();
    let mdomains: Vec<Domain> = monitored
        .iter()
        .map(|l| program.domain(&program.function(&l.func).expect("declared").result))
        .collect();

    let ctl = Location::nullary(program.ctl.clone());
    let mut size: u128 = mdomains.iter().map(|d| d.len() as u128).product();
    for l in &controlled {
        let n = match subject {
            ReachSubject::Protected { enrollment, .. } if *l == ctl => {
                adversarial_responses(enrollment).len() as u128
            }
            _ => program
                .domain(&program.function(&l.func).expect("declared").result)
                .len() as u128,
        };
        size = size.saturating_mul(n);
    }
    if size > MAX_STATE_SPACE {
        return Err(VerifyError::StateSpaceTooLarge {
            size,
            limit: MAX_STATE_SPACE,
        });
    }
    let valuations: Vec<BTreeMap<Location, Value>> = cartesian(&mdomains)
        .into_iter()
        .map(|vs| monitored.iter().cloned().zip(vs).collect())
        .collect();
    let ex = Explorer {
        subject: *subject,
        program,
        controlled,
        valuations,
    };

    let init = ex.values(&program.initial_state);
    let mut found = ex.is_unsafe(&program.initial_state)?.then_some(0usize);
    let mut states = vec![init.clone()];
    let mut index: HashMap<Vec<Value>, usize> = HashMap::from([(init, 0)]);
    let mut parent: Vec<Option<(usize, usize, Vec<usize>)>> = vec![None];
    let mut frontier = vec![0usize];
    let mut transitions = 0u64;
    while found.is_none() && !frontier.is_empty() {
        let expanded = exec.map(&frontier, |&i| ex.expand(&states[i]));
        let mut next = Vec::new();
        for (&i, succs) in frontier.iter().zip(expanded) {
            for s in succs? {
                transitions += 1;
                if index.contains_key(&s.values) {
                    continue;
                }
                let k = states.len();
                index.insert(s.values.clone(), k);
                states.push(s.values);
                parent.push(Some((i, s.monitored, s.picks)));
                if s.unsafe_ && found.is_none() {
                    found = Some(k);
                }
                next.push(k);
            }
        }
        frontier = next;
    }

    let snapshot = |vals: &[Value]| -> BTreeMap<Location, Value> {
        ex.controlled
            .iter()
            .cloned()
            .zip(vals.iter().cloned())
            .collect()
    };
    let witness = found.map(|mut k| {
        let mut steps = Vec::new();
        while let Some((p, mi, picks)) = &parent[k] {
            steps.push(WitnessStep {
                monitored: ex.valuations[*mi].clone(),
                choices: picks.clone(),
                state: snapshot(&states[k]),
            });
            k = *p;
        }
        steps.reverse();
        Witness {
            initial: snapshot(&states[0]),
            steps,
        }
    });
    Ok(ReachabilityReport {
        explored_states: states.len() as u64,
        transition_count: transitions,
        unsafe_reachable: witness.is_some(),
        witness,
    })
}

/// Replays a witness through the concrete runtime. Returns the trace if it
/// visits the witness states and ends in an unsafe state.
pub fn replay_witness(
    subject: &ReachSubject<'_>,
    witness: &Witness,
) -> Result<Option<Trace>, VerifyError> {
    let program = subject.program();
    let (oracle, mut choices) = witness.inputs();
    let trace = subject.with_resolver(|r| {
        run_with(
            program,
            program.initial_state.clone(),
            witness.len() as u64,
            &oracle,
            &mut choices,
            r,
        )
    })?;
    let visits = trace
        .entries
        .iter()
        .skip(1)
        .zip(&witness.steps)
        .all(|(e, w)| e.state == w.state);
    let last = trace.entries.last().expect("initial entry");
    let mut s = program.initial_state.clone();
    s.values.extend(last.state.clone());
    let ends_unsafe = eval_term(&program.unsafe_formula, &s, &Env::new())
        .map_err(StepError::from)?
        == Value::Bool(true);
    Ok((visits && ends_unsafe).then_some(trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::run;
    use crate::programs;
    use crate::protect::{protect, DEFAULT_ATTEMPT_BUDGET};
    use crate::puf::PufDevice;

    #[test]
    fn original_light_is_safe() {
        let p = programs::traffic_light();
        let r = exhaustive_safety_check(&ReachSubject::Plain(&p), Execution::Sequential).unwrap();
        assert!(!r.unsafe_reachable);
        assert!(r.witness.is_none());
        assert!(r.explored_states <= 4 * 16 * 16);
        assert!(r.explored_states >= 4);
    }

    #[test]
    fn faulty_light_has_a_short_witness_that_replays() {
        let p = programs::faulty_traffic_light();
        let subject = ReachSubject::Plain(&p);
        let r = exhaustive_safety_check(&subject, Execution::Parallel).unwrap();
        assert!(r.unsafe_reachable);
        let w = r.witness.unwrap();
        assert!(w.len() <= 3, "{}", w.len());
        assert!(replay_witness(&subject, &w).unwrap().is_some());
    }

    #[test]
    fn protected_light_is_safe_against_any_response() {
        let d = PufDevice::new(42, 16, 16, 0.0).unwrap();
        let pp = protect(&programs::traffic_light(), &d, DEFAULT_ATTEMPT_BUDGET).unwrap();
        let subject = ReachSubject::Protected {
            program: &pp.program,
            enrollment: &pp.enrollment,
            puf: PufSpace::Adversarial,
        };
        let r = exhaustive_safety_check(&subject, Execution::Parallel).unwrap();
        assert!(!r.unsafe_reachable);
        let on_target = ReachSubject::Protected {
            program: &pp.program,
            enrollment: &pp.enrollment,
            puf: PufSpace::Device(&d),
        };
        let t = exhaustive_safety_check(&on_target, Execution::Sequential).unwrap();
        assert!(!t.unsafe_reachable);
        assert!(t.explored_states <= r.explored_states);
    }

    #[test]
    fn strategies_agree() {
        let p = programs::batch_mixer();
        let a = exhaustive_safety_check(&ReachSubject::Plain(&p), Execution::Parallel).unwrap();
        let b = exhaustive_safety_check(&ReachSubject::Plain(&p), Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(!a.unsafe_reachable);
    }

    /// Random runs never reach an unsafe state of a program the checker
    /// declares safe, and every state they visit was explored.
    #[test]
    fn random_runs_agree_with_the_checker() {
        let p = programs::traffic_light();
        let r = exhaustive_safety_check(&ReachSubject::Plain(&p), Execution::Sequential).unwrap();
        let mut seen = BTreeSet::new();
        for seed in 0..20 {
            let t = run(&p, 500, &MonitoredOracle::Random { seed }, seed).unwrap();
            for e in &t.entries {
                let mut s = p.initial_state.clone();
                s.values.extend(e.state.clone());
                assert_eq!(
                    eval_term(&p.unsafe_formula, &s, &Env::new()).unwrap(),
                    Value::Bool(false)
                );
                seen.insert(e.state.clone());
            }
        }
        assert!(seen.len() as u64 <= r.explored_states);
    }

    #[test]
    fn oversized_spaces_are_refused() {
        let src = "asm Big
controlled c int[0..3] init 0
controlled v : int[0..15] -> int[0..3] init 0
ctlstate c
unsafe false
rule r : if c = 0 then c := 1 endif
";
        let p = crate::parser::parse_program(src).unwrap();
        let err =
            exhaustive_safety_check(&ReachSubject::Plain(&p), Execution::Sequential).unwrap_err();
        assert!(matches!(err, VerifyError::StateSpaceTooLarge { .. }));
    }
}
