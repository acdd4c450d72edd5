//! Runtime semantics of `choosectl` sites.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ast::{eval_term, CondX, Env, Location, Program, State, Value};
use crate::interp::{ChoiceSite, ChoiceSource, CtlResolver, EventTag, StepError};
use crate::puf::{Enrollment, Puf};
use crate::seed;

/// Where responses come from.
pub enum PufModel<'a> {
    /// A (simulated) device queried with a stream keyed by (seed, step,
    /// site), so one query never shifts another.
    Device { puf: &'a dyn Puf, query_seed: u64 },
    /// Any of the listed responses, picked by the choice source under the
    /// rule name `#puf`. Used for exhaustive checking.
    Adversarial { candidates: Vec<u64> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RuntimeStats {
    pub bound_ok: u64,
    pub fallback: u64,
    pub safe_stall: u64,
    pub puf_errors: u64,
}

pub struct ProtectedRuntime<'a> {
    program: &'a Program,
    enrollment: &'a Enrollment,
    condx: &'a CondX,
    model: PufModel<'a>,
    /// Encodable plain states in domain order with their stored value.
    fallback: Vec<(Value, u64)>,
    pub stats: RuntimeStats,
}

pub const PUF_RULE: &str = "#puf";
pub const FALLBACK_RULE: &str = "#fallback";

impl<'a> ProtectedRuntime<'a> {
    /// `program` must be a protected program.
    pub fn new(program: &'a Program, enrollment: &'a Enrollment, model: PufModel<'a>) -> Self {
        let protection = program
            .protection
            .as_ref()
            .expect("runtime needs a protected program");
        let fallback = program
            .domain(&protection.plain_sort)
            .iter()
            .filter_map(|v| enrollment.encode(&v).map(|r| (v, r)))
            .collect();
        ProtectedRuntime {
            program,
            enrollment,
            condx: &protection.condx,
            model,
            fallback,
            stats: RuntimeStats::default(),
        }
    }

    fn unsafe_target(&self, x: &Value, post: &State) -> Result<bool, StepError> {
        let env = Env::new().with(self.condx.var.clone(), x.clone());
        Ok(eval_term(&self.condx.formula, post, &env)?
            .as_bool()
            .unwrap_or(true))
    }

    fn response(
        &mut self,
        challenge: u64,
        choices: &mut dyn ChoiceSource,
        site: ChoiceSite<'_>,
    ) -> Option<u64> {
        match &self.model {
            PufModel::Device { puf, query_seed } => {
                let key = seed::derive(&[*query_seed, site.step, site.ordinal as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                match puf.query(challenge, &mut rng) {
                    Ok(r) => Some(r),
                    Err(_) => {
                        self.stats.puf_errors += 1;
                        None
                    }
                }
            }
            PufModel::Adversarial { candidates } => {
                let k = choices.pick(
                    ChoiceSite {
                        rule: PUF_RULE,
                        ..site
                    },
                    candidates.len(),
                );
                Some(candidates[k])
            }
        }
    }
}

impl CtlResolver for ProtectedRuntime<'_> {
    fn resolve(
        &mut self,
        challenge: u64,
        post: &State,
        choices: &mut dyn ChoiceSource,
        site: ChoiceSite<'_>,
    ) -> Result<(Value, EventTag), StepError> {
        if let Some(r) = self.response(challenge, choices, site) {
            if let Some(j) = self.enrollment.decode(r) {
                if !self.unsafe_target(j, post)? {
                    self.stats.bound_ok += 1;
                    return Ok((Value::Int(r as i64), EventTag::BoundOk));
                }
            }
        }
        let mut safe = Vec::new();
        for (v, r) in &self.fallback {
            if !self.unsafe_target(v, post)? {
                safe.push(*r);
            }
        }
        if safe.is_empty() {
            self.stats.safe_stall += 1;
            let current = post
                .get(&Location::nullary(self.program.ctl.clone()))
                .cloned()
                .ok_or_else(|| {
                    crate::ast::EvalError::MissingLocation(Location::nullary(
                        self.program.ctl.clone(),
                    ))
                })?;
            return Ok((current, EventTag::SafeStall));
        }
        let k = choices.pick(
            ChoiceSite {
                rule: FALLBACK_RULE,
                ..site
            },
            safe.len(),
        );
        self.stats.fallback += 1;
        Ok((Value::Int(safe[k] as i64), EventTag::FallbackTaken))
    }
}

/// Plain view of a protected state: ctl decoded through the enrollment.
pub fn decode_state(program: &Program, enrollment: &Enrollment, state: &State) -> State {
    let mut out = state.clone();
    let ctl = Location::nullary(program.ctl.clone());
    if let Some(v) = out.values.get(&ctl).and_then(Value::as_int) {
        if let Some(plain) = enrollment.decode(v as u64) {
            out.values.insert(ctl, plain.clone());
        }
    }
    out
}
