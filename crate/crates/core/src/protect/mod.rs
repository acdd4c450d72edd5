//! Binding a control-state program to one PUF device.
//!
//! [`protect`] computes the licensed control-state transitions, enrolls one
//! challenge per transition on the device, derives condX and rewrites the
//! program so that every control-state change goes through the device.
//! [`ProtectedRuntime`] gives `choosectl` sites their meaning at run time.

mod cond;
mod rewrite;
mod runtime;
mod transitions;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ast::{Location, Name, Program, Rule, Term, Value};
use crate::parser::{pretty_print, DIALECT_VERSION};
use crate::puf::{enroll, Enrollment, PufDevice, PufError};
use crate::seed::fnv1a;
use crate::symexec::SymError;

pub use cond::{derive_safe_condition, CondReport, SafeCondition};
pub use rewrite::{rewrite_program, state_codes};
pub use runtime::{
    decode_state, ProtectedRuntime, PufModel, RuntimeStats, FALLBACK_RULE, PUF_RULE,
};
pub use transitions::{compute_transition_set, CtlSite, TransitionSet};

/// Challenges read during enrollment unless told otherwise.
pub const DEFAULT_ATTEMPT_BUDGET: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtectError {
    #[error("program is already protected")]
    AlreadyProtected,
    #[error("control-state updates must assign a constant")]
    NonConstantCtlUpdate,
    #[error(
        "update to {target} in rule `{rule}` is not dominated by a guard on the control state"
    )]
    AmbiguousSource { rule: Name, target: Value },
    #[error("enrollment has no challenge for the transition {0} -> {1}")]
    MissingEnrollment(Value, Value),
    #[error("enrollment does not match the protected program: {0}")]
    EnrollmentMismatch(String),
    #[error(transparent)]
    Analysis(#[from] SymError),
    #[error(transparent)]
    Enrollment(#[from] PufError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtectWarning {
    /// No rule changes the control state; nothing is bound to the device.
    EmptyTransitionSet,
    /// No transition enters this state and it is not initial, so it has no
    /// stored representation and is never a fallback target.
    UnEncodableState(Value),
}

impl fmt::Display for ProtectWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtectWarning::EmptyTransitionSet => f.write_str(
                "no rule changes the control state; the program is not bound to the device",
            ),
            ProtectWarning::UnEncodableState(v) => {
                write!(
                    f,
                    "control state {v} has no encoding and is excluded from fallback"
                )
            }
        }
    }
}

/// Where a protected program came from. The device seed is deliberately
/// not recorded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Provenance {
    pub program: String,
    pub source_hash: String,
    pub challenge_bits: u32,
    pub response_bits: u32,
    pub transitions: usize,
    pub dialect: String,
}

#[derive(Clone, Debug)]
pub struct ProtectedProgram {
    pub program: Program,
    pub enrollment: Enrollment,
    pub transitions: TransitionSet,
    pub condition: SafeCondition,
    pub warnings: Vec<ProtectWarning>,
    pub provenance: Provenance,
}

impl ProtectedProgram {
    pub fn text(&self) -> String {
        pretty_print(&self.program)
    }

    pub fn provenance_json(&self) -> String {
        let v = serde_json::json!({
            "provenance": self.provenance,
            "condition": self.condition.report,
            "warnings": self.warnings.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
        });
        serde_json::to_string_pretty(&v).expect("provenance serializes") + "\n"
    }
}

pub fn source_hash(program: &Program) -> String {
    format!("{:016x}", fnv1a(pretty_print(program).as_bytes()))
}

/// Full pipeline: transitions, enrollment, condX, rewrite. Nothing is
/// returned unless every stage succeeds.
pub fn protect(
    program: &Program,
    device: &PufDevice,
    budget: u64,
) -> Result<ProtectedProgram, ProtectError> {
    let transitions = compute_transition_set(program)?;
    let enrollment = enroll(
        device,
        &program.ctl,
        &transitions.pairs,
        program.initial_ctl(),
        budget,
    )?;
    let condition = derive_safe_condition(program)?;
    let (protected, warnings) = rewrite_program(program, &enrollment, &condition.condx)?;
    let provenance = Provenance {
        program: program.name.to_string(),
        source_hash: source_hash(program),
        challenge_bits: device.challenge_bits,
        response_bits: device.response_bits,
        transitions: transitions.pairs.len(),
        dialect: DIALECT_VERSION.to_string(),
    };
    Ok(ProtectedProgram {
        program: protected,
        enrollment,
        transitions,
        condition,
        warnings,
        provenance,
    })
}

/// Checks that an enrollment file belongs to a protected program.
pub fn check_enrollment(program: &Program, enrollment: &Enrollment) -> Result<(), ProtectError> {
    let mismatch = |m: String| Err(ProtectError::EnrollmentMismatch(m));
    let Some(p) = &program.protection else {
        return mismatch("program is not protected".into());
    };
    if enrollment.ctl_function != *program.ctl {
        return mismatch(format!(
            "control function `{}` vs `{}`",
            enrollment.ctl_function, program.ctl
        ));
    }
    if enrollment.init_token != p.init_token || enrollment.response_bits != p.response_bits {
        return mismatch("init token or response width differ".into());
    }
    let plain = program.domain(&p.plain_sort);
    if let Some(t) = enrollment
        .transitions
        .iter()
        .find(|t| !plain.contains(&t.from) || !plain.contains(&t.to))
    {
        return mismatch(format!(
            "transition {} -> {} outside the control states",
            t.from, t.to
        ));
    }
    if program
        .initial_state
        .get(&Location::nullary(program.ctl.clone()))
        != Some(&Value::Int(p.init_token as i64))
    {
        return mismatch("initial control value is not the init token".into());
    }
    let codes: BTreeMap<Value, BTreeSet<u64>> = state_codes(program, enrollment)
        .into_iter()
        .map(|(v, c)| (v, c.into_iter().collect()))
        .collect();
    let challenges: BTreeSet<u64> = enrollment.transitions.iter().map(|t| t.challenge).collect();
    let mut problem = None;
    let check_term = |t: &Term, problem: &mut Option<String>| {
        t.visit(&mut |x| {
            if let Term::EncIn(_, entries) = x {
                for (v, c) in entries {
                    let c: BTreeSet<u64> = c.iter().copied().collect();
                    if problem.is_none() && codes.get(v) != Some(&c) {
                        *problem = Some(format!("codes of {v} differ from the enrollment"));
                    }
                }
            }
        })
    };
    let mut rules: Vec<&Rule> = program.main_rules.iter().map(|m| &m.body).collect();
    rules.extend(program.named_rules.iter().flat_map(|n| &n.body));
    for r in rules {
        r.visit(&mut |x| {
            if let Rule::ChooseCtl { challenge } = x {
                if problem.is_none() && !challenges.contains(challenge) {
                    problem = Some(format!("challenge {challenge} is not enrolled"));
                }
            }
            for t in x.terms() {
                check_term(t, &mut problem);
            }
        });
    }
    check_term(&program.unsafe_formula, &mut problem);
    check_term(&p.condx.formula, &mut problem);
    for a in &program.assumptions {
        check_term(&a.value, &mut problem);
    }
    match problem {
        Some(m) => mismatch(m),
        None => Ok(()),
    }
}
