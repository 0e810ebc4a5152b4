//! Colluding honest-but-curious agents.
//!
//! The adversary set follows the protocol but pools everything it sees:
//! its own states, every message it sends or receives, and the public
//! constants (schedule, `N`, `a`, `b`, `epsilon`, `K`, `w(0) = 1`).
//!
//! * [`privacy_condition`] classifies a target structurally.
//! * [`attack_reconstruct`] recovers the initial value of a target whose
//!   neighbors are all adversarial, by replaying the weight flux, reading
//!   `s_i(k')` off a post-`K` message and unwinding the mass flux.
//! * [`attack_conventional`] reads `x0 = delta_s / delta_w` off a round-0
//!   message of conventional push-sum.
//! * [`indistinguishability_test`] compares adversary observables under two
//!   initial vectors with the same honest sum.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run, trial_seed, Transcript};
use crate::error::{Error, Result};
use crate::graph::GraphSchedule;
use crate::protocol::{frac_finite, AgentState, ProtocolParams, RoundMessage};
use crate::scenario::{Algorithm, InitialValues, RecordMode, ScenarioConfig};
use crate::stats::ks_two_sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// An honest in/out neighbor exists at some round `k* <= K`.
    Protected,
    /// Every in/out neighbor is adversarial in every round.
    Vulnerable,
    /// Neither condition holds.
    Unknown,
}

/// Honest neighbor `neighbor` of the target at round `round <= K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub neighbor: usize,
    pub round: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyVerdict {
    pub target: usize,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
}

fn neighbors_at(
    schedule: &GraphSchedule,
    agent: usize,
    k: usize,
) -> impl Iterator<Item = usize> + '_ {
    let edges = schedule.edges_at(k);
    edges
        .in_neighbors(agent)
        .iter()
        .chain(edges.out_neighbors(agent))
        .copied()
}

pub fn privacy_condition(
    schedule: &GraphSchedule,
    adversaries: &BTreeSet<usize>,
    target: usize,
    params: &ProtocolParams,
) -> Result<PrivacyVerdict> {
    if target >= schedule.n_agents() {
        return Err(Error::InvalidQuery(format!("no agent {}", target + 1)));
    }
    if adversaries.contains(&target) {
        return Err(Error::InvalidQuery(format!(
            "target {} belongs to the adversary set",
            target + 1
        )));
    }
    for k in 0..=params.big_k {
        let mut nbrs: Vec<usize> = neighbors_at(schedule, target, k)
            .filter(|l| !adversaries.contains(l))
            .collect();
        nbrs.sort_unstable();
        if let Some(&neighbor) = nbrs.first() {
            return Ok(PrivacyVerdict {
                target,
                verdict: Verdict::Protected,
                witness: Some(Witness { neighbor, round: k }),
            });
        }
    }
    // Every distinct round occurs in [0, max(K + 1, prefix) + period).
    let scan = (params.big_k + 1).max(schedule.prefix_len()) + schedule.period();
    let surrounded =
        (0..scan).all(|k| neighbors_at(schedule, target, k).all(|l| adversaries.contains(&l)));
    Ok(PrivacyVerdict {
        target,
        verdict: if surrounded {
            Verdict::Vulnerable
        } else {
            Verdict::Unknown
        },
        witness: None,
    })
}

/// Constants every agent knows.
#[derive(Clone, Debug)]
pub struct PublicKnowledge {
    pub params: ProtocolParams,
    pub algorithm: Algorithm,
    pub schedule: Arc<GraphSchedule>,
    pub initial_weight: f64,
}

/// Everything the adversary set can see in one execution.
#[derive(Clone, Debug)]
pub struct AdversaryView {
    pub adversaries: BTreeSet<usize>,
    pub knowledge: PublicKnowledge,
    /// Messages of round `k` with sender or receiver in the adversary set.
    pub messages: Vec<Vec<RoundMessage>>,
    /// Adversary states at time `k = 0..=rounds`.
    pub own_states: Vec<Vec<AgentState>>,
}

impl AdversaryView {
    pub fn rounds(&self) -> usize {
        self.messages.len()
    }

    pub fn all_messages(&self) -> impl Iterator<Item = &RoundMessage> {
        self.messages.iter().flatten()
    }
}

pub fn observe(transcript: &Transcript, adversaries: &BTreeSet<usize>) -> Result<AdversaryView> {
    if !transcript.has_messages() {
        return Err(Error::InsufficientRecord);
    }
    let n = transcript.n_agents();
    if let Some(&bad) = adversaries.iter().find(|&&a| a >= n) {
        return Err(Error::InvalidQuery(format!("no agent {}", bad + 1)));
    }
    let messages = transcript
        .rounds
        .iter()
        .map(|rec| {
            rec.messages
                .iter()
                .filter(|m| adversaries.contains(&m.sender) || adversaries.contains(&m.receiver))
                .copied()
                .collect()
        })
        .collect();
    let own_states = (0..=transcript.rounds.len())
        .map(|k| {
            transcript
                .states_at(k)
                .iter()
                .filter(|s| adversaries.contains(&s.id))
                .copied()
                .collect()
        })
        .collect();
    Ok(AdversaryView {
        adversaries: adversaries.clone(),
        knowledge: PublicKnowledge {
            params: transcript.config.params.clone(),
            algorithm: transcript.config.algorithm,
            schedule: Arc::clone(&transcript.schedule),
            initial_weight: 1.0,
        },
        messages,
        own_states,
    })
}

/// Intermediate results of the reconstruction attack.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub recovered: f64,
    /// Round whose outgoing message revealed `s_i(k')`.
    pub k_prime: usize,
    /// Reconstructed `w_i(k)` for `k = 0..=k'`.
    pub weights: Vec<f64>,
    pub s_at_k_prime: f64,
    pub s_after_randomization: f64,
    pub s_initial: f64,
}

fn flux(round: &[RoundMessage], target: usize) -> (f64, f64) {
    let mut ds = 0.0;
    let mut dw = 0.0;
    for m in round {
        if m.receiver == target {
            ds += m.delta_s;
            dw += m.delta_w;
        } else if m.sender == target {
            ds -= m.delta_s;
            dw -= m.delta_w;
        }
    }
    (ds, dw)
}

/// Full reconstruction against a surrounded target.
pub fn reconstruct(view: &AdversaryView, target: usize) -> Result<Reconstruction> {
    let k = &view.knowledge;
    let params = &k.params;
    let verdict = privacy_condition(&k.schedule, &view.adversaries, target, params)?;
    if verdict.verdict != Verdict::Vulnerable {
        return Err(Error::AttackInfeasible(format!(
            "agent {} is {:?}, not surrounded by adversaries",
            target + 1,
            verdict.verdict
        )));
    }
    params.validate_encoding()?;
    let big_k = params.big_k;

    let (k_prime, reveal) = (big_k + 1..view.rounds())
        .find_map(|r| {
            view.messages[r]
                .iter()
                .find(|m| m.sender == target)
                .map(|m| (r, *m))
        })
        .ok_or_else(|| {
            Error::AttackInfeasible(format!(
                "agent {} sent nothing to the adversaries after round {big_k}",
                target + 1
            ))
        })?;

    let mut weights = Vec::with_capacity(k_prime + 1);
    weights.push(k.initial_weight);
    for r in 0..k_prime {
        let (_, dw) = flux(&view.messages[r], target);
        weights.push(weights[r] + dw);
    }
    let s_at_k_prime = reveal.delta_s / reveal.delta_w * weights[k_prime];

    let mut s_after_randomization = s_at_k_prime;
    for r in big_k + 1..k_prime {
        s_after_randomization -= flux(&view.messages[r], target).0;
    }
    let mut unwound = s_after_randomization;
    for r in 0..=big_k {
        unwound -= flux(&view.messages[r], target).0;
    }
    let s_initial = frac_finite(unwound);
    let n = params.n as f64;
    let recovered = (params.b - params.a) / (n - 2.0) * (n * n * s_initial - 1.0) + params.a;
    Ok(Reconstruction {
        recovered,
        k_prime,
        weights,
        s_at_k_prime,
        s_after_randomization,
        s_initial,
    })
}

/// Recovered initial value of a target whose neighbors are all adversarial.
pub fn attack_reconstruct(view: &AdversaryView, target: usize) -> Result<f64> {
    reconstruct(view, target).map(|r| r.recovered)
}

/// `delta_s / delta_w` of the first round-0 message the target sent to the
/// adversaries.
pub fn attack_conventional(view: &AdversaryView, target: usize) -> Result<f64> {
    view.messages
        .first()
        .and_then(|round| round.iter().find(|m| m.sender == target))
        .map(|m| m.delta_s / m.delta_w)
        .ok_or_else(|| {
            Error::AttackInfeasible(format!(
                "agent {} sent nothing to the adversaries in round 0",
                target + 1
            ))
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticPValue {
    pub statistic_id: String,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndistinguishabilityReport {
    pub pass: bool,
    pub rejections: usize,
    pub allowed_rejections: usize,
    pub rejection_fraction: f64,
    pub p_values: Vec<StatisticPValue>,
}

/// Runs `trials` executions under `x0` and under the shifted vector
/// (`x_target + shift`, `x_partner - shift`) and KS-tests every
/// adversary-observable scalar: `delta_s`, `delta_w` and their ratio on every
/// adversary-incident edge in rounds `0..=K+2`, and each adversary's final
/// estimate.
///
/// Both populations use the same seed schedule, so a zero shift gives
/// identical samples. Passes iff at most `max(1, ceil(2 alpha m))` of the
/// `m` statistics are rejected at level `alpha`.
pub fn indistinguishability_test(
    base: &ScenarioConfig,
    target: usize,
    partner: usize,
    shift: f64,
    trials: usize,
    significance: f64,
) -> Result<IndistinguishabilityReport> {
    if trials < 2 {
        return Err(Error::Config("need at least two trials".into()));
    }
    if !(significance > 0.0 && significance < 1.0) {
        return Err(Error::Config(format!(
            "significance {significance} outside (0, 1)"
        )));
    }
    let schedule = base.schedule.resolve()?;
    let n = base.params.n;
    let adversaries: BTreeSet<usize> = base.adversaries.iter().copied().collect();
    if target >= n || partner >= n || target == partner {
        return Err(Error::InvalidPair(format!(
            "target {} and partner {} must be distinct agents",
            target + 1,
            partner + 1
        )));
    }
    if adversaries.contains(&target) || adversaries.contains(&partner) {
        return Err(Error::InvalidPair(
            "target and partner must be honest".into(),
        ));
    }
    let adjacent =
        (0..=base.params.big_k).any(|k| neighbors_at(&schedule, target, k).any(|l| l == partner));
    if !adjacent {
        return Err(Error::InvalidPair(format!(
            "agent {} never neighbors agent {} in rounds 0..={}",
            partner + 1,
            target + 1,
            base.params.big_k
        )));
    }

    let x0 = base.resolve_initial_values()?;
    let mut shifted = x0.clone();
    shifted[target] += shift;
    shifted[partner] -= shift;
    let (a, b) = (base.params.a, base.params.b);
    if shifted.iter().any(|&x| !(x >= a && x <= b)) {
        return Err(Error::InvalidPair(format!(
            "shift {shift} moves an initial value outside [{a}, {b}]"
        )));
    }

    let population = |values: Vec<f64>| ScenarioConfig {
        initial_values: InitialValues::Explicit(values),
        record: Some(RecordMode::Full),
        stop_tolerance: 0.0,
        ..base.clone()
    };
    let original = population(x0);
    let altered = population(shifted);

    let last_round = (base.params.big_k + 2).min(base.horizon.saturating_sub(1));
    let ids = statistic_ids(&schedule, &adversaries, last_round);
    let sample = |cfg: &ScenarioConfig| -> Result<Vec<Vec<f64>>> {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let tr = run(&cfg.with_seed(trial_seed(cfg.seed, t, 1)))?;
                Ok(observables(&tr, &adversaries, last_round))
            })
            .collect()
    };
    let left = sample(&original)?;
    let right = sample(&altered)?;

    let m = ids.len();
    let mut p_values = Vec::with_capacity(m);
    let mut rejections = 0;
    for (s, statistic_id) in ids.into_iter().enumerate() {
        let xs: Vec<f64> = left.iter().map(|row| row[s]).collect();
        let ys: Vec<f64> = right.iter().map(|row| row[s]).collect();
        let p_value = ks_two_sample(&xs, &ys).p_value;
        if p_value < significance {
            rejections += 1;
        }
        p_values.push(StatisticPValue {
            statistic_id,
            p_value,
        });
    }
    let allowed_rejections = ((2.0 * significance * m as f64).ceil() as usize).max(1);
    Ok(IndistinguishabilityReport {
        pass: rejections <= allowed_rejections,
        rejections,
        allowed_rejections,
        rejection_fraction: rejections as f64 / m.max(1) as f64,
        p_values,
    })
}

fn incident(adversaries: &BTreeSet<usize>, sender: usize, receiver: usize) -> bool {
    adversaries.contains(&sender) || adversaries.contains(&receiver)
}

fn statistic_ids(
    schedule: &GraphSchedule,
    adversaries: &BTreeSet<usize>,
    last_round: usize,
) -> Vec<String> {
    let mut ids = Vec::new();
    for k in 0..=last_round {
        for e in schedule.edges_at(k).edges() {
            if incident(adversaries, e.sender, e.receiver) {
                for kind in ["ds", "dw", "ratio"] {
                    ids.push(format!("k{k}:{}->{}:{kind}", e.sender + 1, e.receiver + 1));
                }
            }
        }
    }
    ids.extend(adversaries.iter().map(|j| format!("final:pi:{}", j + 1)));
    ids
}

/// Same order as [`statistic_ids`]: messages are stored in edge order.
fn observables(tr: &Transcript, adversaries: &BTreeSet<usize>, last_round: usize) -> Vec<f64> {
    let mut values = Vec::new();
    for rec in &tr.rounds[..=last_round] {
        for m in &rec.messages {
            if incident(adversaries, m.sender, m.receiver) {
                values.push(m.delta_s);
                values.push(m.delta_w);
                values.push(m.delta_s / m.delta_w);
            }
        }
    }
    let finals = tr.final_estimates();
    values.extend(adversaries.iter().map(|&j| finals[j]));
    values
}
