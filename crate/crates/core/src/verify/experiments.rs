//! Target-fidelity and clone-divergence experiments.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::ast::{eval_term, Env, Location, Mode, Program, State, Value};
use crate::interp::{step, MonitoredOracle, NoCtlRuntime, SeededChoices, StepError};
use crate::par::Execution;
use crate::protect::{decode_state, ProtectedRuntime, PufModel, RuntimeStats};
use crate::puf::{Enrollment, Puf, PufDevice};
use crate::seed;

use super::VerifyError;

/// Clone runs are expected to depart from the original within this many
/// steps.
pub const DIVERGENCE_HORIZON: u64 = 32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Equal,
    Mismatch { step: u64, location: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub steps: u64,
    pub bound_ok: u64,
    pub fallbacks: u64,
}

fn controlled(program: &Program) -> Vec<Location> {
    program
        .functions
        .iter()
        .filter(|d| d.mode == Mode::Controlled)
        .flat_map(|d| program.locations_of(d))
        .collect()
}

fn query_seed(run_seed: u64, device_seed: u64) -> u64 {
    seed::derive(&[run_seed, device_seed, 0x0071_7565_7279])
}

/// Runs the original and the protected program side by side under the
/// same monitored oracle and choice seed, comparing every controlled
/// location after each step with the protected control state decoded.
#[allow(clippy::too_many_arguments)]
pub fn compare_target_traces(
    original: &Program,
    protected: &Program,
    enrollment: &Enrollment,
    device: &dyn Puf,
    device_seed: u64,
    steps: u64,
    oracle: &MonitoredOracle,
    run_seed: u64,
) -> Result<Comparison, VerifyError> {
    let locs = controlled(original);
    let mut rt = ProtectedRuntime::new(
        protected,
        enrollment,
        PufModel::Device {
            puf: device,
            query_seed: query_seed(run_seed, device_seed),
        },
    );
    let first_difference = |a: &State, b: &State| -> Option<String> {
        let b = decode_state(protected, enrollment, b);
        locs.iter()
            .find(|l| a.values.get(l) != b.values.get(l))
            .map(|l| l.to_string())
    };
    let mut a = original.initial_state.clone();
    let mut b = protected.initial_state.clone();
    let mut verdict = Verdict::Equal;
    if let Some(location) = first_difference(&a, &b) {
        verdict = Verdict::Mismatch { step: 0, location };
    }
    let mut k = 0;
    while k < steps && verdict == Verdict::Equal {
        let mv = oracle.valuation(original, k)?;
        a.monitored = mv.clone();
        b.monitored = mv;
        a = step(
            original,
            &a,
            k,
            &mut SeededChoices::new(run_seed),
            &mut NoCtlRuntime,
        )?
        .state;
        b = step(protected, &b, k, &mut SeededChoices::new(run_seed), &mut rt)?.state;
        k += 1;
        if let Some(location) = first_difference(&a, &b) {
            verdict = Verdict::Mismatch { step: k, location };
        }
    }
    Ok(Comparison {
        verdict,
        steps: k,
        bound_ok: rt.stats.bound_ok,
        fallbacks: rt.stats.fallback,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialResult {
    pub device_seed: u64,
    pub safety_violations: u64,
    /// First step whose decoded control state differs from the original run.
    pub first_divergence: Option<u64>,
    pub bound_ok: u64,
    pub fallbacks: u64,
    pub safe_stalls: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DivergenceReport {
    pub trials: usize,
    pub steps_per_trial: u64,
    pub noise: f64,
    pub safety_violations: u64,
    pub trials_diverged: usize,
    /// Diverged trials whose first divergence is within the horizon.
    pub diverged_within_horizon: usize,
    pub first_divergence_histogram: BTreeMap<u64, usize>,
    /// Fallbacks over all resolved `choosectl` sites.
    pub fallback_rate: f64,
    /// Trials that never fell back and never diverged: most likely the
    /// enrollment device itself.
    pub flagged_seeds: Vec<u64>,
    pub per_trial: Vec<TrialResult>,
}

/// Runs a protected program on devices other than the enrolled one.
pub struct CloneExperiment<'a> {
    pub original: &'a Program,
    pub protected: &'a Program,
    pub enrollment: &'a Enrollment,
    pub oracle: MonitoredOracle,
    pub run_seed: u64,
    pub steps: u64,
    pub noise: f64,
}

impl CloneExperiment<'_> {
    /// Control states of the original program along the run.
    fn original_ctl(&self) -> Result<Vec<Value>, VerifyError> {
        let ctl = Location::nullary(self.original.ctl.clone());
        let mut s = self.original.initial_state.clone();
        let mut out = vec![s.values[&ctl].clone()];
        for k in 0..self.steps {
            s.monitored = self.oracle.valuation(self.original, k)?;
            s = step(
                self.original,
                &s,
                k,
                &mut SeededChoices::new(self.run_seed),
                &mut NoCtlRuntime,
            )?
            .state;
            out.push(s.values[&ctl].clone());
        }
        Ok(out)
    }

    fn trial(&self, device_seed: u64, reference: &[Value]) -> Result<TrialResult, VerifyError> {
        let device = PufDevice::new(
            device_seed,
            self.enrollment.challenge_bits,
            self.enrollment.response_bits,
            self.noise,
        )?;
        let mut rt = ProtectedRuntime::new(
            self.protected,
            self.enrollment,
            PufModel::Device {
                puf: &device,
                query_seed: query_seed(self.run_seed, device_seed),
            },
        );
        let ctl = Location::nullary(self.protected.ctl.clone());
        let psi = &self.original.unsafe_formula;
        let psi_reads_ctl = psi.reads(&self.original.ctl);
        let decode = |s: &State| -> Option<Value> {
            let r = s.values[&ctl].as_int()?;
            self.enrollment.decode(r as u64).cloned()
        };
        let mut s = self.protected.initial_state.clone();
        let mut violations = 0;
        let mut first_divergence = None;
        for k in 0..self.steps {
            s.monitored = self.oracle.valuation(self.original, k)?;
            s = step(
                self.protected,
                &s,
                k,
                &mut SeededChoices::new(self.run_seed),
                &mut rt,
            )?
            .state;
            if first_divergence.is_none() && decode(&s).as_ref() != reference.get(k as usize + 1) {
                first_divergence = Some(k + 1);
            }
            let bad = if psi_reads_ctl {
                eval_term(
                    psi,
                    &decode_state(self.protected, self.enrollment, &s),
                    &Env::new(),
                )
            } else {
                eval_term(psi, &s, &Env::new())
            };
            if bad.map_err(StepError::from)? == Value::Bool(true) {
                violations += 1;
            }
        }
        let RuntimeStats {
            bound_ok,
            fallback,
            safe_stall,
            ..
        } = rt.stats;
        Ok(TrialResult {
            device_seed,
            safety_violations: violations,
            first_divergence,
            bound_ok,
            fallbacks: fallback,
            safe_stalls: safe_stall,
        })
    }

    pub fn run(
        &self,
        device_seeds: &[u64],
        exec: Execution,
    ) -> Result<DivergenceReport, VerifyError> {
        let reference = self.original_ctl()?;
        let per_trial = exec
            .map(device_seeds, |&d| self.trial(d, &reference))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let mut histogram = BTreeMap::new();
        for t in &per_trial {
            if let Some(k) = t.first_divergence {
                *histogram.entry(k).or_insert(0) += 1;
            }
        }
        let resolved: u64 = per_trial
            .iter()
            .map(|t| t.bound_ok + t.fallbacks + t.safe_stalls)
            .sum();
        let fallbacks: u64 = per_trial.iter().map(|t| t.fallbacks).sum();
        Ok(DivergenceReport {
            trials: per_trial.len(),
            steps_per_trial: self.steps,
            noise: self.noise,
            safety_violations: per_trial.iter().map(|t| t.safety_violations).sum(),
            trials_diverged: per_trial
                .iter()
                .filter(|t| t.first_divergence.is_some())
                .count(),
            diverged_within_horizon: per_trial
                .iter()
                .filter(|t| t.first_divergence.is_some_and(|k| k <= DIVERGENCE_HORIZON))
                .count(),
            first_divergence_histogram: histogram,
            fallback_rate: if resolved == 0 {
                0.0
            } else {
                fallbacks as f64 / resolved as f64
            },
            flagged_seeds: per_trial
                .iter()
                .filter(|t| t.fallbacks == 0 && t.first_divergence.is_none())
                .map(|t| t.device_seed)
                .collect(),
            per_trial,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::programs;
    use crate::protect::{protect, DEFAULT_ATTEMPT_BUDGET};

    fn setup() -> (Program, crate::protect::ProtectedProgram, PufDevice) {
        let p = programs::traffic_light();
        let d = PufDevice::new(42, 16, 16, 0.0).unwrap();
        let pp = protect(&p, &d, DEFAULT_ATTEMPT_BUDGET).unwrap();
        (p, pp, d)
    }

    #[test]
    fn target_traces_are_equal() {
        let (p, pp, d) = setup();
        let oracle = MonitoredOracle::always_true(&p);
        let c = compare_target_traces(&p, &pp.program, &pp.enrollment, &d, 42, 1000, &oracle, 1)
            .unwrap();
        assert_eq!(c.verdict, Verdict::Equal);
        assert_eq!(c.fallbacks, 0);
        assert_eq!(c.bound_ok, 1000);
        let z =
            compare_target_traces(&p, &pp.program, &pp.enrollment, &d, 42, 0, &oracle, 1).unwrap();
        assert_eq!(z.verdict, Verdict::Equal);
    }

    #[test]
    fn clone_traces_mismatch_early() {
        let (p, pp, _) = setup();
        let oracle = MonitoredOracle::always_true(&p);
        let mut early = 0;
        for seed in 1000..1100 {
            let clone = PufDevice::new(seed, 16, 16, 0.0).unwrap();
            let c = compare_target_traces(
                &p,
                &pp.program,
                &pp.enrollment,
                &clone,
                seed,
                100,
                &oracle,
                1,
            )
            .unwrap();
            if matches!(c.verdict, Verdict::Mismatch { step, .. } if step <= DIVERGENCE_HORIZON) {
                early += 1;
            }
        }
        assert!(early >= 99, "{early}");
    }

    #[test]
    fn clone_report_counts_and_flags() {
        let (p, pp, _) = setup();
        let exp = CloneExperiment {
            original: &p,
            protected: &pp.program,
            enrollment: &pp.enrollment,
            oracle: MonitoredOracle::Random { seed: 3 },
            run_seed: 3,
            steps: 400,
            noise: 0.0,
        };
        let seeds: Vec<u64> = (1..=10).chain([42]).collect();
        let r = exp.run(&seeds, Execution::Parallel).unwrap();
        assert_eq!(r.trials, 11);
        assert_eq!(r.safety_violations, 0);
        assert_eq!(r.flagged_seeds, vec![42]);
        assert!(r.trials_diverged >= 9);
        assert!(r.fallback_rate > 0.5);
        let s = exp.run(&seeds, Execution::Sequential).unwrap();
        assert_eq!(r, s);
    }
}
