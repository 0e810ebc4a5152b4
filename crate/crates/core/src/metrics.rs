//! Convergence and conservation diagnostics.

use serde::{Deserialize, Serialize};

use crate::engine::Transcript;
use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::protocol::{frac_finite, WeightMatrix};
use crate::scenario::Algorithm;

/// Below this the error series is rounding noise.
pub const RATE_FIT_FLOOR: f64 = 1e-10;
pub const CONVERGED_BELOW: f64 = 1e-6;
pub const CONVERGED_PERSIST: usize = 5;

/// Euclidean distance between the estimates and the true mean.
pub fn error_norm(estimates: &[f64], true_mean: f64) -> f64 {
    estimates
        .iter()
        .map(|&p| (p - true_mean) * (p - true_mean))
        .sum::<f64>()
        .sqrt()
}

/// Worst-case geometric rate `gamma = (1 - eps^M)^(1/M)`, `M = T (N - 1)`,
/// and the constant `C0 = 2 (1 + eps^-M) / (1 - eps^M)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub gamma: f64,
    /// `1 - gamma`, kept separately since `gamma` itself may round to 1.
    pub one_minus_gamma: f64,
    pub c0: f64,
    pub ln_c0: f64,
    /// `eps^M` is below machine epsilon: the bound says nothing useful at
    /// double precision.
    pub vacuous: bool,
}

pub fn theoretical_rate(epsilon: f64, t_bound: usize, n: usize) -> Result<RateBound> {
    if !(epsilon > 0.0 && epsilon < 1.0) || t_bound < 1 || n < 2 {
        return Err(Error::Domain(format!(
            "rate bound needs epsilon in (0, 1), T >= 1, N >= 2; got {epsilon}, {t_bound}, {n}"
        )));
    }
    let m = (t_bound * (n - 1)) as f64;
    let ln_x = m * epsilon.ln();
    let x = epsilon.powf(m);
    let vacuous = x < f64::EPSILON;
    let (one_minus_gamma, c0, ln_c0) = if x >= f64::MIN_POSITIVE {
        let omg = if vacuous {
            x / m
        } else {
            -((-x).ln_1p() / m).exp_m1()
        };
        let c0 = 2.0 * (1.0 + 1.0 / x) / (1.0 - x);
        (omg, c0, c0.ln())
    } else {
        // eps^M underflows: ln C0 = ln 2 - ln eps^M to double precision
        let ln_c0 = std::f64::consts::LN_2 - ln_x;
        ((ln_x - m.ln()).exp(), ln_c0.exp(), ln_c0)
    };
    Ok(RateBound {
        gamma: 1.0 - one_minus_gamma,
        one_minus_gamma,
        c0,
        ln_c0,
        vacuous,
    })
}

/// `exp(slope)` of a least-squares fit of `ln e(k)` on `k` over
/// `window_start..window_end`.
pub fn estimate_rate(errors: &[f64], window_start: usize, window_end: usize) -> Result<f64> {
    let end = window_end.min(errors.len());
    if end < window_start + 2 {
        return Err(Error::FitDegenerate(format!(
            "window {window_start}..{end} holds fewer than two points"
        )));
    }
    let window = &errors[window_start..end];
    if let Some(pos) = window.iter().position(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::FitDegenerate(format!(
            "e({}) = {} cannot be log-fitted",
            window_start + pos,
            window[pos]
        )));
    }
    let count = window.len() as f64;
    let mean_k = window_start as f64 + (count - 1.0) / 2.0;
    let mean_y = window.iter().map(|e| e.ln()).sum::<f64>() / count;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, e) in window.iter().enumerate() {
        let dk = (window_start + i) as f64 - mean_k;
        sxy += dk * (e.ln() - mean_y);
        sxx += dk * dk;
    }
    Ok((sxy / sxx).exp())
}

/// `[K + 2, first k with e(k) < 1e-10)`, clipped to the series.
pub fn default_rate_window(errors: &[f64], big_k: usize) -> (usize, usize) {
    let start = big_k + 2;
    let end = errors
        .iter()
        .enumerate()
        .skip(start)
        .find(|(_, &e)| e < RATE_FIT_FLOOR)
        .map_or(errors.len(), |(k, _)| k);
    (start, end)
}

/// First `k` with `e < 1e-6` that stays there for five consecutive rounds.
pub fn converged_at(errors: &[f64]) -> Option<usize> {
    (0..errors.len().saturating_sub(CONVERGED_PERSIST - 1)).find(|&k| {
        errors[k..k + CONVERGED_PERSIST]
            .iter()
            .all(|&e| e < CONVERGED_BELOW)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    /// `frac(sum s)` drifted during the randomized phase.
    FracSum,
    /// `sum s` drifted in the weighted phase.
    TotalMass,
    /// `sum w != N`.
    WeightSum,
    /// Some `w_i(k)` fell below `eps^(T (N - 1))`.
    WeightFloor,
    /// A realized weight column does not sum to one.
    ColumnStochastic,
    /// Messages do not match the round's edge set.
    Messages,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Time index the check refers to (state time for sums, round for
    /// weights and messages).
    pub round: usize,
    /// 0-based agent, where one is involved.
    pub agent: Option<usize>,
    pub value: f64,
}

fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

/// Checks conservation, the weight floor and (for full transcripts) the
/// realized matrices and message pattern of every round.
pub fn audit_transcript(transcript: &Transcript) -> Vec<Violation> {
    let n = transcript.n_agents();
    let params = &transcript.config.params;
    let tol = 1e-9 * n as f64;
    let last = transcript.rounds.len();
    let mut out = Vec::new();
    let sum_s = |k: usize| transcript.states_at(k).iter().map(|s| s.s).sum::<f64>();

    // Randomized phase ends at time K + 1 for the confidential protocol; the
    // conventional protocol conserves plain mass from the start.
    let linear_from = match transcript.config.algorithm {
        Algorithm::Confidential => {
            let reference = frac_finite(sum_s(0));
            for k in 1..=(params.big_k + 1).min(last) {
                let gap = circular_gap(frac_finite(sum_s(k)), reference);
                if gap > tol {
                    out.push(Violation {
                        kind: ViolationKind::FracSum,
                        round: k,
                        agent: None,
                        value: gap,
                    });
                }
            }
            params.big_k + 1
        }
        Algorithm::Conventional => 0,
    };
    if linear_from <= last {
        let reference = sum_s(linear_from);
        for k in linear_from + 1..=last {
            let drift = (sum_s(k) - reference).abs();
            if drift > tol {
                out.push(Violation {
                    kind: ViolationKind::TotalMass,
                    round: k,
                    agent: None,
                    value: drift,
                });
            }
        }
    }

    let floor = transcript
        .t_bound
        .map(|t| params.epsilon.powf((t * (n - 1)) as f64));
    for k in 0..=last {
        let states = transcript.states_at(k);
        let drift = (states.iter().map(|s| s.w).sum::<f64>() - n as f64).abs();
        if drift > tol {
            out.push(Violation {
                kind: ViolationKind::WeightSum,
                round: k,
                agent: None,
                value: drift,
            });
        }
        if let (Some(floor), true) = (floor, k >= 1) {
            for st in states.iter().filter(|st| !(st.w >= floor)) {
                out.push(Violation {
                    kind: ViolationKind::WeightFloor,
                    round: k,
                    agent: Some(st.id),
                    value: st.w,
                });
            }
        }
    }

    if transcript.has_messages() {
        for rec in &transcript.rounds {
            for (j, col) in rec.weights.iter().enumerate() {
                let gap = (col.sum() - 1.0).abs();
                if gap > 1e-12 {
                    out.push(Violation {
                        kind: ViolationKind::ColumnStochastic,
                        round: rec.round,
                        agent: Some(j),
                        value: gap,
                    });
                }
            }
            let edges = transcript.schedule.edges_at(rec.round);
            let matches = rec.messages.len() == edges.len()
                && rec
                    .messages
                    .iter()
                    .zip(edges.edges())
                    .all(|(m, e)| Edge::new(m.receiver, m.sender) == *e);
            if !matches {
                out.push(Violation {
                    kind: ViolationKind::Messages,
                    round: rec.round,
                    agent: None,
                    value: rec.messages.len() as f64,
                });
            }
        }
    }
    out
}

/// Realized weight matrix `P(k)` of a full transcript.
pub fn realized_matrix(transcript: &Transcript, round: usize) -> Result<WeightMatrix> {
    if !transcript.has_messages() {
        return Err(Error::InsufficientRecord);
    }
    let rec = transcript
        .rounds
        .get(round)
        .ok_or_else(|| Error::InvalidQuery(format!("round {round} was not simulated")))?;
    Ok(WeightMatrix::from_weight_vectors(
        transcript.n_agents(),
        &rec.weights,
    ))
}

/// `Phi(last:first) = P(last) P(last - 1) ... P(first)`.
pub fn transition_product(
    transcript: &Transcript,
    first: usize,
    last: usize,
) -> Result<WeightMatrix> {
    if first > last {
        return Err(Error::InvalidQuery(format!(
            "empty product {first}..={last}"
        )));
    }
    let mut product = realized_matrix(transcript, first)?;
    for k in first + 1..=last {
        product = realized_matrix(transcript, k)?.mul(&product);
    }
    Ok(product)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub error_series: Vec<f64>,
    pub gamma_theoretical: Option<f64>,
    pub one_minus_gamma_theoretical: Option<f64>,
    pub c0: Option<f64>,
    pub bound_vacuous: Option<bool>,
    pub gamma_hat: Option<f64>,
    pub converged_at: Option<usize>,
    pub invariant_violations: Vec<Violation>,
}

impl ConvergenceReport {
    pub fn from_transcript(transcript: &Transcript) -> Self {
        let params = &transcript.config.params;
        let bound = transcript
            .t_bound
            .and_then(|t| theoretical_rate(params.epsilon, t, params.n).ok());
        let big_k = match transcript.config.algorithm {
            Algorithm::Confidential => params.big_k,
            Algorithm::Conventional => 0,
        };
        let (start, end) = default_rate_window(&transcript.errors, big_k);
        let gamma_hat = estimate_rate(&transcript.errors, start, end)
            .ok()
            .filter(|g| *g > 0.0 && *g < 1.0);
        ConvergenceReport {
            error_series: transcript.errors.clone(),
            gamma_theoretical: bound.map(|b| b.gamma),
            one_minus_gamma_theoretical: bound.map(|b| b.one_minus_gamma),
            c0: bound.map(|b| b.c0),
            bound_vacuous: bound.map(|b| b.vacuous),
            gamma_hat,
            converged_at: converged_at(&transcript.errors),
            invariant_violations: transcript.violations.clone(),
        }
    }
}
