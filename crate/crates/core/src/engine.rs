//! Synchronous-round executor.
//!
//! Each round every agent builds its outgoing shares from its pre-round
//! state, then every agent folds its inbox. Random draws come from per
//! `(agent, round)` streams, so a transcript depends only on the config.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::GraphSchedule;
use crate::metrics::{audit_transcript, error_norm, Violation};
use crate::protocol::{
    apply_incoming_confidential, apply_incoming_conventional, decode_unchecked, encode_initial,
    make_outgoing_confidential, make_outgoing_conventional, AgentState, Outgoing, RoundMessage,
    WeightVector,
};
use crate::rng::agent_round_rng;
use crate::scenario::{Algorithm, RecordMode, ScenarioConfig};

/// Agents are computed in parallel within a round above this size.
const PARALLEL_AGENTS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Sorted by `(receiver, sender)`; empty in states-only mode.
    pub messages: Vec<RoundMessage>,
    pub states_after: Vec<AgentState>,
    /// Column `j` of the realized weight matrix is `weights[j]`; empty in
    /// states-only mode.
    pub weights: Vec<WeightVector>,
}

#[derive(Clone, Debug)]
pub struct Transcript {
    pub config: ScenarioConfig,
    pub schedule: Arc<GraphSchedule>,
    pub record: RecordMode,
    pub t_bound: Option<usize>,
    pub initial_values: Vec<f64>,
    pub initial_states: Vec<AgentState>,
    pub rounds: Vec<RoundRecord>,
    pub ground_truth_mean: f64,
    /// `e(k)` for `k = 0..=rounds.len()`.
    pub errors: Vec<f64>,
    /// Post-run invariant audit.
    pub violations: Vec<Violation>,
}

impl Transcript {
    pub fn n_agents(&self) -> usize {
        self.config.params.n
    }

    pub fn rounds_run(&self) -> usize {
        self.rounds.len()
    }

    /// States at time `k`: the initial states for `k = 0`, otherwise the
    /// states after round `k - 1`.
    pub fn states_at(&self, k: usize) -> &[AgentState] {
        if k == 0 {
            &self.initial_states
        } else {
            &self.rounds[k - 1].states_after
        }
    }

    pub fn estimate(&self, state: &AgentState) -> f64 {
        estimate(self.config.algorithm, state, &self.config)
    }

    pub fn estimates_at(&self, k: usize) -> Vec<f64> {
        self.states_at(k).iter().map(|s| self.estimate(s)).collect()
    }

    pub fn final_estimates(&self) -> Vec<f64> {
        self.estimates_at(self.rounds.len())
    }

    pub fn final_error(&self) -> f64 {
        *self
            .errors
            .last()
            .expect("error series has the initial entry")
    }

    pub fn has_messages(&self) -> bool {
        self.record == RecordMode::Full
    }
}

fn estimate(algorithm: Algorithm, state: &AgentState, config: &ScenarioConfig) -> f64 {
    match algorithm {
        Algorithm::Conventional => state.s / state.w,
        Algorithm::Confidential => decode_unchecked(state.s, state.w, &config.params),
    }
}

/// Runs one scenario to its horizon (or early stop).
pub fn run(config: &ScenarioConfig) -> Result<Transcript> {
    let params = &config.params;
    match config.algorithm {
        Algorithm::Confidential => params.validate_encoding()?,
        Algorithm::Conventional => params.validate()?,
    }
    let schedule = Arc::new(config.schedule.resolve()?);
    let n = params.n;
    if schedule.n_agents() != n {
        return Err(Error::Config(format!(
            "schedule has {} agents, scenario has {n}",
            schedule.n_agents()
        )));
    }
    if let Some(&bad) = config.adversaries.iter().find(|&&a| a >= n) {
        return Err(Error::Config(format!(
            "adversary {} outside 1..={n}",
            bad + 1
        )));
    }
    let report = schedule.verify_assumptions();
    if !report.holds() && !config.override_assumptions {
        return Err(Error::Assumptions(format!(
            "schedule `{}`: strongly connected = {}, interval bound = {:?}",
            schedule.name(),
            report.strongly_connected,
            report.t_bound
        )));
    }
    params.check_feasible(schedule.max_out_degree())?;

    let initial_values = config.resolve_initial_values()?;
    let ground_truth_mean = initial_values.iter().sum::<f64>() / n as f64;
    let initial_states: Vec<AgentState> = initial_values
        .iter()
        .enumerate()
        .map(|(id, &x)| {
            let s = match config.algorithm {
                Algorithm::Conventional => x,
                Algorithm::Confidential => encode_initial(x, params)?,
            };
            Ok(AgentState { id, s, w: 1.0 })
        })
        .collect::<Result<_>>()?;

    let record = config.record_mode();
    let est = |st: &AgentState| estimate(config.algorithm, st, config);
    let mut errors = Vec::with_capacity(config.horizon + 1);
    errors.push(error_norm(
        &initial_states.iter().map(est).collect::<Vec<_>>(),
        ground_truth_mean,
    ));

    let mut rounds = Vec::with_capacity(config.horizon);
    let mut states = initial_states.clone();
    for k in 0..config.horizon {
        let edges = schedule.edges_at(k);
        let send = |st: &AgentState| -> Result<Outgoing> {
            let mut rng = agent_round_rng(config.seed, st.id, k);
            let out = edges.out_neighbors(st.id);
            match config.algorithm {
                Algorithm::Confidential => make_outgoing_confidential(st, out, k, params, &mut rng),
                Algorithm::Conventional => make_outgoing_conventional(st, out, k, params, &mut rng),
            }
        };
        let outgoing: Vec<Outgoing> = if n >= PARALLEL_AGENTS {
            states.par_iter().map(send).collect::<Result<_>>()?
        } else {
            states.iter().map(send).collect::<Result<_>>()?
        };

        let mut messages: Vec<RoundMessage> = outgoing
            .iter()
            .flat_map(|o| o.messages.iter().copied())
            .collect();
        messages.sort_unstable_by_key(|m| (m.receiver, m.sender));

        let mut next = Vec::with_capacity(n);
        let mut cursor = 0;
        for (st, out) in states.iter().zip(&outgoing) {
            let start = cursor;
            while cursor < messages.len() && messages[cursor].receiver == st.id {
                cursor += 1;
            }
            let inbox = &messages[start..cursor];
            next.push(match config.algorithm {
                Algorithm::Confidential => apply_incoming_confidential(
                    st,
                    inbox,
                    out.self_delta_s,
                    out.self_delta_w,
                    k,
                    params,
                ),
                Algorithm::Conventional => {
                    apply_incoming_conventional(st, inbox, out.self_delta_s, out.self_delta_w)
                }
            });
        }
        debug_assert_eq!(cursor, messages.len());

        let e = error_norm(&next.iter().map(est).collect::<Vec<_>>(), ground_truth_mean);
        errors.push(e);
        states = next;
        rounds.push(match record {
            RecordMode::Full => RoundRecord {
                round: k,
                messages,
                states_after: states.clone(),
                weights: outgoing.into_iter().map(|o| o.weights).collect(),
            },
            RecordMode::StatesOnly => RoundRecord {
                round: k,
                messages: Vec::new(),
                states_after: states.clone(),
                weights: Vec::new(),
            },
        });
        if config.stop_tolerance > 0.0 && e < config.stop_tolerance {
            break;
        }
    }

    let mut transcript = Transcript {
        config: config.clone(),
        schedule,
        record,
        t_bound: report.t_bound,
        initial_values,
        initial_states,
        rounds,
        ground_truth_mean,
        errors,
        violations: Vec::new(),
    };
    transcript.violations = audit_transcript(&transcript);
    Ok(transcript)
}

/// Independent trials with seeds `seed + t * seed_stride`, run in parallel.
pub fn run_trials(
    config: &ScenarioConfig,
    trials: usize,
    seed_stride: u64,
) -> Result<Vec<Transcript>> {
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| run(&config.with_seed(trial_seed(config.seed, t, seed_stride))))
        .collect()
}

pub fn trial_seed(seed: u64, trial: usize, stride: u64) -> u64 {
    seed.wrapping_add((trial as u64).wrapping_mul(stride))
}
