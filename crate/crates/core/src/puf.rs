//! Simulated physically unclonable functions and enrollment.
//!
//! A [`PufDevice`] answers a challenge with a stable response derived from
//! its seed: `mix64(mix64(seed ^ K) + challenge)` truncated to the top
//! `response_bits` bits, where `mix64` is the splitmix64 finalizer. With
//! probability `noise` a query instead returns a uniformly drawn different
//! response.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::Value;
use crate::seed::{derive, fnv1a, mix64};

const DEVICE_KEY: u64 = 0x7075_665f_6b65_7931;
const ENROLL_STREAM: u64 = 0x656e_726f_6c6c;
const TOKEN_STREAM: u64 = 0x0074_6f6b_656e;
const ORDER_STREAM: u64 = 0x006f_7264_6572;

/// Challenge spaces up to this many bits are scanned in ascending order.
pub const EXHAUSTIVE_SCAN_BITS: u32 = 16;
/// Reads per challenge during enrollment.
pub const MAJORITY_READS: usize = 9;
pub const ENROLLMENT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PufError {
    #[error("{0}")]
    Parameter(String),
    #[error("challenge {challenge} outside the {bits}-bit challenge space")]
    ChallengeOutOfRange { challenge: u64, bits: u32 },
    #[error(
        "the PUF is not big enough to encode {needed} transitions: found {found} usable challenges"
    )]
    EnrollmentExhausted { needed: usize, found: usize },
    #[error("majority voting did not stabilize any of {tried} challenges")]
    NoisyReadout { tried: u64 },
    #[error("challenge {0} is not in the trace")]
    NotInTrace(u64),
    #[error("malformed trace: {0}")]
    Trace(String),
}

/// Anything that answers challenges.
pub trait Puf {
    fn challenge_bits(&self) -> u32;
    fn response_bits(&self) -> u32;
    fn query(&self, challenge: u64, rng: &mut dyn RngCore) -> Result<u64, PufError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct PufDevice {
    pub seed: u64,
    pub challenge_bits: u32,
    pub response_bits: u32,
    pub noise: f64,
    key: u64,
}

impl PufDevice {
    pub fn new(
        seed: u64,
        challenge_bits: u32,
        response_bits: u32,
        noise: f64,
    ) -> Result<Self, PufError> {
        if !(1..=32).contains(&challenge_bits) {
            return Err(PufError::Parameter(format!(
                "challenge bits must be 1..=32, got {challenge_bits}"
            )));
        }
        if !(1..=32).contains(&response_bits) {
            return Err(PufError::Parameter(format!(
                "response bits must be 1..=32, got {response_bits}"
            )));
        }
        if !(0.0..=1.0).contains(&noise) {
            return Err(PufError::Parameter(format!(
                "noise rate must be in [0, 1], got {noise}"
            )));
        }
        Ok(PufDevice {
            seed,
            challenge_bits,
            response_bits,
            noise,
            key: mix64(seed ^ DEVICE_KEY),
        })
    }

    pub fn challenge_count(&self) -> u64 {
        1 << self.challenge_bits
    }

    /// Noise-free response.
    pub fn stable(&self, challenge: u64) -> u64 {
        mix64(self.key.wrapping_add(challenge)) >> (64 - self.response_bits)
    }

    /// The same device with a different noise rate.
    pub fn with_noise(&self, noise: f64) -> Result<Self, PufError> {
        PufDevice::new(self.seed, self.challenge_bits, self.response_bits, noise)
    }
}

impl Puf for PufDevice {
    fn challenge_bits(&self) -> u32 {
        self.challenge_bits
    }

    fn response_bits(&self) -> u32 {
        self.response_bits
    }

    fn query(&self, challenge: u64, rng: &mut dyn RngCore) -> Result<u64, PufError> {
        if challenge >= self.challenge_count() {
            return Err(PufError::ChallengeOutOfRange {
                challenge,
                bits: self.challenge_bits,
            });
        }
        let stable = self.stable(challenge);
        if self.noise > 0.0 && rng.gen::<f64>() < self.noise {
            let span = (1u64 << self.response_bits) - 1;
            let r = rng.gen_range(0..span);
            return Ok(if r >= stable { r + 1 } else { r });
        }
        Ok(stable)
    }
}

/// Scripted challenge-response table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceDevice {
    pub challenge_bits: u32,
    pub response_bits: u32,
    pub table: BTreeMap<u64, u64>,
}

impl TraceDevice {
    /// Parses a JSON object mapping decimal challenges to responses.
    pub fn from_json(
        text: &str,
        challenge_bits: u32,
        response_bits: u32,
    ) -> Result<Self, PufError> {
        let raw: BTreeMap<String, u64> =
            serde_json::from_str(text).map_err(|e| PufError::Trace(e.to_string()))?;
        let mut table = BTreeMap::new();
        for (k, v) in raw {
            let c: u64 = k
                .parse()
                .map_err(|_| PufError::Trace(format!("challenge `{k}` is not a number")))?;
            table.insert(c, v);
        }
        Ok(TraceDevice {
            challenge_bits,
            response_bits,
            table,
        })
    }

    pub fn to_json(&self) -> String {
        let m: BTreeMap<String, u64> = self
            .table
            .iter()
            .map(|(c, r)| (c.to_string(), *r))
            .collect();
        serde_json::to_string_pretty(&m).expect("string map serializes")
    }
}

impl Puf for TraceDevice {
    fn challenge_bits(&self) -> u32 {
        self.challenge_bits
    }

    fn response_bits(&self) -> u32 {
        self.response_bits
    }

    fn query(&self, challenge: u64, _rng: &mut dyn RngCore) -> Result<u64, PufError> {
        self.table
            .get(&challenge)
            .copied()
            .ok_or(PufError::NotInTrace(challenge))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrolledTransition {
    pub from: Value,
    pub to: Value,
    pub challenge: u64,
    pub response: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Enrollment {
    pub version: u32,
    pub ctl_function: String,
    pub init_state: Value,
    pub init_token: u64,
    pub challenge_bits: u32,
    pub response_bits: u32,
    pub device_fingerprint: String,
    pub transitions: Vec<EnrolledTransition>,
}

impl Enrollment {
    /// Enrolled responses of the transitions entering each state, in
    /// transition order.
    pub fn encodings(&self) -> BTreeMap<Value, Vec<u64>> {
        let mut out: BTreeMap<Value, Vec<u64>> = BTreeMap::new();
        for t in &self.transitions {
            out.entry(t.to.clone()).or_default().push(t.response);
        }
        out
    }

    /// Plain state a stored control value stands for.
    pub fn decode(&self, response: u64) -> Option<&Value> {
        if response == self.init_token {
            return Some(&self.init_state);
        }
        self.transitions
            .iter()
            .find(|t| t.response == response)
            .map(|t| &t.to)
    }

    pub fn challenge_for(&self, from: &Value, to: &Value) -> Option<u64> {
        self.transitions
            .iter()
            .find(|t| t.from == *from && t.to == *to)
            .map(|t| t.challenge)
    }

    /// The value stored for a plain state: its first enrolled encoding, or
    /// the init token for an initial state nothing enters.
    pub fn encode(&self, state: &Value) -> Option<u64> {
        self.transitions
            .iter()
            .find(|t| t.to == *state)
            .map(|t| t.response)
            .or_else(|| (*state == self.init_state).then_some(self.init_token))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("enrollment serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Order in which enrollment tries challenges: ascending for small spaces,
/// otherwise a seeded affine permutation of the challenge space.
fn challenge_order(device: &PufDevice) -> impl Iterator<Item = u64> + '_ {
    let n = device.challenge_count();
    let h = derive(&[device.seed, ORDER_STREAM]);
    let (a, b) = if device.challenge_bits <= EXHAUSTIVE_SCAN_BITS {
        (1, 0)
    } else {
        (h | 1, h >> 17)
    };
    (0..n).map(move |k| a.wrapping_mul(k).wrapping_add(b) & (n - 1))
}

/// Majority-of-nine readout; `None` if no response wins a majority.
fn majority(device: &PufDevice, challenge: u64, rng: &mut ChaCha8Rng) -> Option<u64> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for _ in 0..MAJORITY_READS {
        let r = device
            .query(challenge, rng)
            .expect("scan stays inside the challenge space");
        *counts.entry(r).or_default() += 1;
    }
    counts
        .into_iter()
        .find(|(_, n)| *n > MAJORITY_READS / 2)
        .map(|(r, _)| r)
}

/// Selects one challenge per transition with pairwise distinct responses,
/// plus an init token outside the enrolled responses. Transitions keep the
/// given order. At most `budget` challenges are read.
pub fn enroll(
    device: &PufDevice,
    ctl_function: &str,
    transitions: &[(Value, Value)],
    init_state: &Value,
    budget: u64,
) -> Result<Enrollment, PufError> {
    let needed = transitions.len();
    let space = 1u64 << device.response_bits;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(&[device.seed, ENROLL_STREAM]));
    let mut picked: Vec<(u64, u64)> = Vec::new();
    let mut used: BTreeSet<u64> = BTreeSet::new();
    let mut tried = 0u64;
    let mut stable_reads = 0u64;
    // one response value must stay free for the init token
    if needed as u64 >= space {
        return Err(PufError::EnrollmentExhausted { needed, found: 0 });
    }
    for c in challenge_order(device) {
        if picked.len() == needed || tried >= budget {
            break;
        }
        tried += 1;
        let Some(r) = majority(device, c, &mut rng) else {
            continue;
        };
        stable_reads += 1;
        if used.insert(r) {
            picked.push((c, r));
        }
    }
    if picked.len() < needed {
        if stable_reads == 0 && tried > 0 {
            return Err(PufError::NoisyReadout { tried });
        }
        return Err(PufError::EnrollmentExhausted {
            needed,
            found: picked.len(),
        });
    }
    let start = derive(&[device.seed, TOKEN_STREAM]) & (space - 1);
    let init_token = (0..space)
        .map(|k| (start + k) & (space - 1))
        .find(|t| !used.contains(t))
        .expect("a free response value was reserved");
    let transitions: Vec<EnrolledTransition> = transitions
        .iter()
        .zip(picked)
        .map(|((from, to), (challenge, response))| EnrolledTransition {
            from: from.clone(),
            to: to.clone(),
            challenge,
            response,
        })
        .collect();
    let mut readout = Vec::new();
    for t in &transitions {
        readout.extend_from_slice(&t.challenge.to_le_bytes());
        readout.extend_from_slice(&t.response.to_le_bytes());
    }
    Ok(Enrollment {
        version: ENROLLMENT_VERSION,
        ctl_function: ctl_function.to_string(),
        init_state: init_state.clone(),
        init_token,
        challenge_bits: device.challenge_bits,
        response_bits: device.response_bits,
        device_fingerprint: format!("{:016x}", fnv1a(&readout)),
        transitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phases() -> Vec<(Value, Value)> {
        let p = ["Stop1Stop2", "Go1Stop2", "Stop2Stop1", "Go2Stop1"];
        (0..4)
            .map(|i| (Value::literal(p[i]), Value::literal(p[(i + 1) % 4])))
            .collect()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn noiseless_queries_are_deterministic() {
        let d = PufDevice::new(42, 16, 16, 0.0).unwrap();
        for c in [0, 1, 999, 65535] {
            assert_eq!(
                d.query(c, &mut rng()).unwrap(),
                d.query(c, &mut rng()).unwrap()
            );
        }
        let twin = PufDevice::new(42, 16, 16, 0.0).unwrap();
        assert!((0..1000).all(|c| d.stable(c) == twin.stable(c)));
    }

    #[test]
    fn forced_noise_always_flips() {
        let d = PufDevice::new(42, 8, 4, 1.0).unwrap();
        let mut r = rng();
        for c in 0..256 {
            assert_ne!(d.query(c, &mut r).unwrap(), d.stable(c));
        }
    }

    #[test]
    fn small_challenge_space() {
        let d = PufDevice::new(1, 2, 8, 0.0).unwrap();
        assert_eq!(d.challenge_count(), 4);
        assert!(d.query(4, &mut rng()).is_err());
        assert!(PufDevice::new(1, 0, 8, 0.0).is_err());
        assert!(PufDevice::new(1, 8, 33, 0.0).is_err());
        assert!(PufDevice::new(1, 8, 8, 1.5).is_err());
    }

    #[test]
    fn response_histogram_is_not_degenerate() {
        let d = PufDevice::new(42, 8, 8, 0.0).unwrap();
        let mut h: BTreeMap<u64, usize> = BTreeMap::new();
        for c in 0..256 {
            *h.entry(d.stable(c)).or_default() += 1;
        }
        assert!(h.values().all(|n| *n <= 8), "{h:?}");
    }

    #[test]
    fn enrollment_of_four_transitions() {
        let d = PufDevice::new(42, 16, 16, 0.0).unwrap();
        let init = Value::literal("Stop1Stop2");
        let e = enroll(&d, "phase", &phases(), &init, 1 << 16).unwrap();
        assert_eq!(e.transitions.len(), 4);
        let cs: BTreeSet<u64> = e.transitions.iter().map(|t| t.challenge).collect();
        let rs: BTreeSet<u64> = e.transitions.iter().map(|t| t.response).collect();
        assert_eq!((cs.len(), rs.len()), (4, 4));
        assert!(!rs.contains(&e.init_token));
        for t in &e.transitions {
            assert_eq!(d.stable(t.challenge), t.response);
            assert_eq!(e.decode(t.response), Some(&t.to));
        }
        assert_eq!(e.decode(e.init_token), Some(&init));
        let again = enroll(&d, "phase", &phases(), &init, 1 << 16).unwrap();
        assert_eq!(e.to_json(), again.to_json());
        assert_eq!(Enrollment::from_json(&e.to_json()).unwrap(), e);
    }

    #[test]
    fn pigeonhole_exhaustion() {
        let init = Value::literal("Stop1Stop2");
        for (cb, rb) in [(1, 16), (16, 1), (2, 2)] {
            let d = PufDevice::new(42, cb, rb, 0.0).unwrap();
            let err = enroll(&d, "phase", &phases(), &init, 1 << 20).unwrap_err();
            assert!(
                matches!(err, PufError::EnrollmentExhausted { .. }),
                "{cb}/{rb}: {err}"
            );
        }
    }

    #[test]
    fn noisy_device_still_enrolls_ground_truth() {
        let d = PufDevice::new(5, 12, 12, 0.1).unwrap();
        let e = enroll(&d, "phase", &phases(), &Value::literal("Stop1Stop2"), 4096).unwrap();
        for t in &e.transitions {
            assert_eq!(d.stable(t.challenge), t.response);
        }
    }

    #[test]
    fn wide_spaces_use_a_permuted_order() {
        let d = PufDevice::new(9, 20, 16, 0.0).unwrap();
        let first: Vec<u64> = challenge_order(&d).take(4).collect();
        assert_ne!(first, vec![0, 1, 2, 3]);
        let all: BTreeSet<u64> = challenge_order(&d).take(1 << 12).collect();
        assert_eq!(all.len(), 1 << 12);
    }

    #[test]
    fn trace_device_round_trip() {
        let t = TraceDevice::from_json(r#"{"3": 17, "5": 2}"#, 4, 8).unwrap();
        assert_eq!(t.query(3, &mut rng()).unwrap(), 17);
        assert_eq!(t.query(4, &mut rng()), Err(PufError::NotInTrace(4)));
        assert_eq!(TraceDevice::from_json(&t.to_json(), 4, 8).unwrap(), t);
    }
}
