//! Per-agent push-sum logic.
//!
//! Two protocols share the same message shape `(delta_s, delta_w)`:
//!
//! * conventional push-sum: every agent splits `s` and `w` with the same
//!   column-stochastic weights in every round;
//! * confidential push-sum: initial values are encoded into `[1/N^2, (N-1)/N^2]`,
//!   and for rounds `k <= K` the mass shares sent to out-neighbors are
//!   independent uniform draws on `[0, 1)`. The agent keeps
//!   `frac(s - sum of shares)` for itself and the receivers fold everything
//!   with `frac`, so `frac(sum s)` is conserved. From round `K + 1` on the
//!   agent switches to ordinary weighted splitting.
//!
//! The estimate of the confidential protocol is decoded from `N s / w` via
//! [`decode_estimate`].

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeSet;

/// Fractional part `x - floor(x)`, in `[0, 1)`.
pub fn frac(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("frac of non-finite value {x}")));
    }
    Ok(frac_finite(x))
}

#[inline]
pub(crate) fn frac_finite(x: f64) -> f64 {
    let r = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// How each agent picks its splitting weights `p_ji(k)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightPolicy {
    /// Fresh random weights in `(epsilon, 1)` every round.
    #[default]
    Random,
    /// `1 / (out_degree + 1)` for every recipient.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
    pub big_k: usize,
    #[serde(default)]
    pub weights: WeightPolicy,
}

impl ProtocolParams {
    pub fn new(n: usize, a: f64, b: f64, epsilon: f64, big_k: usize) -> Result<Self> {
        let params = ProtocolParams {
            n,
            a,
            b,
            epsilon,
            big_k,
            weights: WeightPolicy::Random,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_weights(mut self, weights: WeightPolicy) -> Self {
        self.weights = weights;
        self
    }

    /// Checks the parameters shared by both protocols. The confidential
    /// protocol additionally needs [`ProtocolParams::validate_encoding`].
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!(
                "need at least 2 agents, got {}",
                self.n
            )));
        }
        if !(self.a.is_finite() && self.b.is_finite() && self.a < self.b) {
            return Err(Error::Config(format!(
                "bounds must satisfy a < b, got a = {}, b = {}",
                self.a, self.b
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// The encoding divides by `N - 2`.
    pub fn validate_encoding(&self) -> Result<()> {
        self.validate()?;
        if self.n < 3 {
            return Err(Error::Config(format!(
                "confidential push-sum needs at least 3 agents, got {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Random weights over `max_out_degree + 1` recipients must be able to
    /// exceed epsilon.
    pub fn check_feasible(&self, max_out_degree: usize) -> Result<()> {
        let recipients = max_out_degree + 1;
        if recipients > 1 && recipients as f64 * self.epsilon >= 1.0 {
            return Err(Error::InfeasibleEpsilon {
                epsilon: self.epsilon,
                recipients,
            });
        }
        Ok(())
    }
}

/// Maps `x0 in [a, b]` to `s(0) in [1/N^2, (N-1)/N^2]`.
pub fn encode_initial(x0: f64, params: &ProtocolParams) -> Result<f64> {
    params.validate_encoding()?;
    if !(x0 >= params.a && x0 <= params.b) {
        return Err(Error::OutOfRange {
            value: x0,
            a: params.a,
            b: params.b,
        });
    }
    let n = params.n as f64;
    let n2 = n * n;
    Ok(1.0 / n2 + (n - 2.0) * (x0 - params.a) / ((params.b - params.a) * n2))
}

/// `(b - a) / (N - 2) * (N * frac(N s / w) - 1) + a`.
pub fn decode_estimate(s: f64, w: f64, params: &ProtocolParams) -> Result<f64> {
    params.validate_encoding()?;
    if !(w > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("cannot decode s = {s}, w = {w}")));
    }
    Ok(decode_unchecked(s, w, params))
}

#[inline]
pub(crate) fn decode_unchecked(s: f64, w: f64, params: &ProtocolParams) -> f64 {
    let n = params.n as f64;
    (params.b - params.a) / (n - 2.0) * (n * frac_finite(n * s / w) - 1.0) + params.a
}

/// Splitting weights of one agent for one round, keyed by recipient
/// (out-neighbors and the agent itself), ascending by recipient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    entries: Vec<(usize, f64)>,
}

impl WeightVector {
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn get(&self, recipient: usize) -> Option<f64> {
        self.entries
            .binary_search_by_key(&recipient, |&(r, _)| r)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn sorted_recipients(recipients: &[usize]) -> Result<Vec<usize>> {
    let mut ids = recipients.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::Config(
            "weight vector needs at least one recipient".into(),
        ));
    }
    Ok(ids)
}

/// Draws weights strictly inside `(epsilon, 1)` that sum to one.
///
/// With `m` recipients: `p = epsilon + (1 - m * epsilon) * u / sum(u)` for iid
/// `u` on the open unit interval.
pub fn gen_weights<R: Rng + ?Sized>(
    rng: &mut R,
    recipients: &[usize],
    epsilon: f64,
) -> Result<WeightVector> {
    let ids = sorted_recipients(recipients)?;
    let m = ids.len();
    if m == 1 {
        return Ok(WeightVector {
            entries: vec![(ids[0], 1.0)],
        });
    }
    if !(epsilon > 0.0) || m as f64 * epsilon >= 1.0 {
        return Err(Error::InfeasibleEpsilon {
            epsilon,
            recipients: m,
        });
    }
    let draws: Vec<f64> = (0..m).map(|_| rng.sample(Open01)).collect();
    let total: f64 = draws.iter().sum();
    let spread = 1.0 - m as f64 * epsilon;
    let entries = ids
        .into_iter()
        .zip(draws)
        .map(|(id, u)| (id, epsilon + spread * u / total))
        .collect();
    Ok(WeightVector { entries })
}

/// Deterministic `1 / m` weights.
pub fn uniform_weights(recipients: &[usize]) -> Result<WeightVector> {
    let ids = sorted_recipients(recipients)?;
    let p = 1.0 / ids.len() as f64;
    Ok(WeightVector {
        entries: ids.into_iter().map(|id| (id, p)).collect(),
    })
}

fn round_weights<R: Rng + ?Sized>(
    rng: &mut R,
    agent: usize,
    out_nbrs: &[usize],
    params: &ProtocolParams,
) -> Result<WeightVector> {
    let mut recipients = Vec::with_capacity(out_nbrs.len() + 1);
    recipients.extend_from_slice(out_nbrs);
    recipients.push(agent);
    match params.weights {
        WeightPolicy::Random => gen_weights(rng, &recipients, params.epsilon),
        WeightPolicy::Uniform => {
            params.check_feasible(out_nbrs.len())?;
            uniform_weights(&recipients)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub s: f64,
    pub w: f64,
}

/// One directed transmission of round `round`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMessage {
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
    pub delta_s: f64,
    pub delta_w: f64,
}

/// Everything an agent produces at the start of a round. The self share
/// never leaves the agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing {
    pub messages: Vec<RoundMessage>,
    pub self_delta_s: f64,
    pub self_delta_w: f64,
    pub weights: WeightVector,
}

/// Confidential push-sum send step. `out_nbrs` must be ascending.
///
/// Random draw order: the weights first, then one mass share per
/// out-neighbor (rounds `k <= K` only).
pub fn make_outgoing_confidential<R: Rng + ?Sized>(
    state: &AgentState,
    out_nbrs: &[usize],
    k: usize,
    params: &ProtocolParams,
    rng: &mut R,
) -> Result<Outgoing> {
    let weights = round_weights(rng, state.id, out_nbrs, params)?;
    Ok(confidential_shares(
        state, out_nbrs, k, params, weights, rng,
    ))
}

pub(crate) fn confidential_shares<R: Rng + ?Sized>(
    state: &AgentState,
    out_nbrs: &[usize],
    k: usize,
    params: &ProtocolParams,
    weights: WeightVector,
    rng: &mut R,
) -> Outgoing {
    let mut messages = Vec::with_capacity(out_nbrs.len());
    let (self_delta_s, self_delta_w);
    if k <= params.big_k {
        let mut sent = 0.0;
        for &j in out_nbrs {
            let delta_s: f64 = rng.random();
            sent += delta_s;
            messages.push(RoundMessage {
                round: k,
                sender: state.id,
                receiver: j,
                delta_s,
                delta_w: weight_of(&weights, j) * state.w,
            });
        }
        self_delta_s = frac_finite(state.s - sent);
    } else {
        for &j in out_nbrs {
            let p = weight_of(&weights, j);
            messages.push(RoundMessage {
                round: k,
                sender: state.id,
                receiver: j,
                delta_s: p * state.s,
                delta_w: p * state.w,
            });
        }
        self_delta_s = weight_of(&weights, state.id) * state.s;
    }
    self_delta_w = weight_of(&weights, state.id) * state.w;
    Outgoing {
        messages,
        self_delta_s,
        self_delta_w,
        weights,
    }
}

/// Conventional push-sum send step: `(p s, p w)` to everyone, every round.
pub fn make_outgoing_conventional<R: Rng + ?Sized>(
    state: &AgentState,
    out_nbrs: &[usize],
    k: usize,
    params: &ProtocolParams,
    rng: &mut R,
) -> Result<Outgoing> {
    let weights = round_weights(rng, state.id, out_nbrs, params)?;
    let messages = out_nbrs
        .iter()
        .map(|&j| {
            let p = weight_of(&weights, j);
            RoundMessage {
                round: k,
                sender: state.id,
                receiver: j,
                delta_s: p * state.s,
                delta_w: p * state.w,
            }
        })
        .collect();
    let p_self = weight_of(&weights, state.id);
    Ok(Outgoing {
        messages,
        self_delta_s: p_self * state.s,
        self_delta_w: p_self * state.w,
        weights,
    })
}

fn weight_of(weights: &WeightVector, recipient: usize) -> f64 {
    weights
        .get(recipient)
        .expect("recipient present in weight vector")
}

/// Confidential push-sum receive step. `inbox` must be sorted by sender.
///
/// Mass shares are summed in inbox order, the self share is added last and
/// `frac` is applied once for `k <= K`.
pub fn apply_incoming_confidential(
    state: &AgentState,
    inbox: &[RoundMessage],
    self_delta_s: f64,
    self_delta_w: f64,
    k: usize,
    params: &ProtocolParams,
) -> AgentState {
    let (s, w) = accumulate(inbox, self_delta_s, self_delta_w);
    AgentState {
        id: state.id,
        s: if k <= params.big_k { frac_finite(s) } else { s },
        w,
    }
}

/// Conventional push-sum receive step: plain sums.
pub fn apply_incoming_conventional(
    state: &AgentState,
    inbox: &[RoundMessage],
    self_delta_s: f64,
    self_delta_w: f64,
) -> AgentState {
    let (s, w) = accumulate(inbox, self_delta_s, self_delta_w);
    AgentState { id: state.id, s, w }
}

fn accumulate(inbox: &[RoundMessage], self_delta_s: f64, self_delta_w: f64) -> (f64, f64) {
    let mut s = 0.0;
    let mut w = 0.0;
    for m in inbox {
        s += m.delta_s;
        w += m.delta_w;
    }
    (s + self_delta_s, w + self_delta_w)
}

/// Dense row-major `N x N` matrix; entry `(i, j)` is the share agent `j`
/// sends to agent `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(n: usize) -> Self {
        WeightMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Validation("matrix must be square".into()));
        }
        Ok(WeightMatrix {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Column `j` is agent `j`'s weight vector.
    pub fn from_weight_vectors(n: usize, columns: &[WeightVector]) -> Self {
        let mut m = Self::zeros(n);
        for (j, col) in columns.iter().enumerate() {
            for &(i, p) in col.entries() {
                m.set(i, j, p);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.get(i, j)).sum())
            .collect()
    }

    pub fn mul(&self, rhs: &WeightMatrix) -> WeightMatrix {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for l in 0..n {
                let a = self.get(i, l);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.get(l, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }
}

/// One round of conventional push-sum in matrix form: `s <- P s`, `w <- P w`.
///
/// `P` must be nonnegative, column-stochastic within `1e-12`, and supported
/// on `edges` plus the diagonal.
pub fn conventional_step(
    states: &[AgentState],
    matrix: &WeightMatrix,
    edges: &EdgeSet,
) -> Result<Vec<AgentState>> {
    let n = matrix.n();
    if states.len() != n || edges.n_agents() != n {
        return Err(Error::Validation(format!(
            "dimension mismatch: {} states, {}x{} matrix, {} agents in edge set",
            states.len(),
            n,
            n,
            edges.n_agents()
        )));
    }
    for j in 0..n {
        let mut sum = 0.0;
        for i in 0..n {
            let p = matrix.get(i, j);
            if p < 0.0 || !p.is_finite() {
                return Err(Error::Validation(format!(
                    "entry ({}, {}) = {p}",
                    i + 1,
                    j + 1
                )));
            }
            if p != 0.0 && i != j && !edges.contains(crate::graph::Edge::new(i, j)) {
                return Err(Error::Validation(format!(
                    "entry ({}, {}) is nonzero without an edge",
                    i + 1,
                    j + 1
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("column {} sums to {sum}", j + 1)));
        }
    }
    let s: Vec<f64> = states.iter().map(|st| st.s).collect();
    let w: Vec<f64> = states.iter().map(|st| st.w).collect();
    let s = matrix.mul_vec(&s);
    let w = matrix.mul_vec(&w);
    Ok(states
        .iter()
        .zip(s.into_iter().zip(w))
        .map(|(st, (s, w))| AgentState { id: st.id, s, w })
        .collect())
}
