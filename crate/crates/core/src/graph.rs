//! Time-varying directed communication graphs.
//!
//! An edge `(receiver, sender)` means `sender` can transmit to `receiver` in
//! that round. Agents are indexed `0..n` inside the library; schedule files
//! and every exported artifact use 1-based indices.
//!
//! A [`GraphSchedule`] is an optional finite prefix followed by a terminal
//! cycle that repeats forever. Purely periodic schedules have an empty prefix.
//! The edges that occur infinitely often are exactly the edges of the cycle.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Directed edge: `sender` transmits to `receiver`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub receiver: usize,
    pub sender: usize,
}

impl Edge {
    pub fn new(receiver: usize, sender: usize) -> Self {
        Edge { receiver, sender }
    }
}

/// The edge set of one round, ordered lexicographically by `(receiver, sender)`.
///
/// The position of an edge in [`EdgeSet::edges`] is its column in the
/// incidence matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    n: usize,
    edges: Vec<Edge>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl EdgeSet {
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut edges: Vec<Edge> = edges.into_iter().collect();
        for e in &edges {
            if e.receiver >= n || e.sender >= n || e.receiver == e.sender {
                return Err(Error::InvalidEdge {
                    receiver: e.receiver + 1,
                    sender: e.sender + 1,
                    n,
                });
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidSchedule(format!(
                "duplicate edge ({}, {})",
                w[0].receiver + 1,
                w[0].sender + 1
            )));
        }
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for e in &edges {
            in_adj[e.receiver].push(e.sender);
            out_adj[e.sender].push(e.receiver);
        }
        for list in &mut out_adj {
            list.sort_unstable();
        }
        Ok(EdgeSet {
            n,
            edges,
            out_adj,
            in_adj,
        })
    }

    pub fn empty(n: usize) -> Self {
        EdgeSet {
            n,
            edges: Vec::new(),
            out_adj: vec![Vec::new(); n],
            in_adj: vec![Vec::new(); n],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, edge: Edge) -> bool {
        self.edges.binary_search(&edge).is_ok()
    }

    /// Agents that receive from `agent` this round, ascending.
    pub fn out_neighbors(&self, agent: usize) -> &[usize] {
        &self.out_adj[agent]
    }

    /// Agents that send to `agent` this round, ascending.
    pub fn in_neighbors(&self, agent: usize) -> &[usize] {
        &self.in_adj[agent]
    }

    pub fn out_degree(&self, agent: usize) -> usize {
        self.out_adj[agent].len()
    }

    pub fn in_degree(&self, agent: usize) -> usize {
        self.in_adj[agent].len()
    }

    pub fn max_out_degree(&self) -> usize {
        self.out_adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn incidence_matrix(&self) -> IncidenceMatrix {
        incidence_matrix(&self.edges, self.n).expect("edge set endpoints validated at construction")
    }
}

/// Dense `N x E` incidence matrix with entries in `{-1, 0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncidenceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl IncidenceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.data[col * self.rows + row]
    }

    pub fn column(&self, col: usize) -> &[i8] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn column_sums(&self) -> Vec<i64> {
        (0..self.cols)
            .map(|c| self.column(c).iter().map(|&v| i64::from(v)).sum())
            .collect()
    }
}

/// Column `l` carries `+1` at the receiver and `-1` at the sender of the
/// `l`-th edge.
pub fn incidence_matrix(edges: &[Edge], n: usize) -> Result<IncidenceMatrix> {
    let mut data = vec![0i8; n * edges.len()];
    for (l, e) in edges.iter().enumerate() {
        if e.receiver >= n || e.sender >= n {
            return Err(Error::InvalidEdge {
                receiver: e.receiver + 1,
                sender: e.sender + 1,
                n,
            });
        }
        data[l * n + e.receiver] += 1;
        data[l * n + e.sender] -= 1;
    }
    Ok(IncidenceMatrix {
        rows: n,
        cols: edges.len(),
        data,
    })
}

/// Result of checking strong connectivity and the intercommunication bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub strongly_connected: bool,
    /// Smallest `T` such that every recurring edge shows up in every window
    /// of `T` consecutive rounds.
    pub t_bound: Option<usize>,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.strongly_connected && self.t_bound.is_some()
    }
}

/// A round-indexed sequence of edge sets: finite prefix, then a repeating cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSchedule {
    name: String,
    n: usize,
    prefix: Vec<EdgeSet>,
    cycle: Vec<EdgeSet>,
}

impl GraphSchedule {
    pub fn new(
        name: impl Into<String>,
        n: usize,
        prefix: Vec<EdgeSet>,
        cycle: Vec<EdgeSet>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSchedule(
                "schedule needs at least one agent".into(),
            ));
        }
        if cycle.is_empty() {
            return Err(Error::InvalidSchedule("period must be positive".into()));
        }
        if let Some(bad) = prefix.iter().chain(&cycle).find(|s| s.n_agents() != n) {
            return Err(Error::InvalidSchedule(format!(
                "edge set built for {} agents in a schedule of {n}",
                bad.n_agents()
            )));
        }
        Ok(GraphSchedule {
            name: name.into(),
            n,
            prefix,
            cycle,
        })
    }

    pub fn periodic(name: impl Into<String>, n: usize, cycle: Vec<EdgeSet>) -> Result<Self> {
        Self::new(name, n, Vec::new(), cycle)
    }

    /// The same edge set in every round.
    pub fn constant(name: impl Into<String>, n: usize, edges: Vec<Edge>) -> Result<Self> {
        Self::periodic(name, n, vec![EdgeSet::new(n, edges)?])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> usize {
        self.cycle.len()
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix.len()
    }

    pub fn edges_at(&self, k: usize) -> &EdgeSet {
        if k < self.prefix.len() {
            &self.prefix[k]
        } else {
            &self.cycle[(k - self.prefix.len()) % self.cycle.len()]
        }
    }

    /// Largest out-degree over all rounds.
    pub fn max_out_degree(&self) -> usize {
        self.prefix
            .iter()
            .chain(&self.cycle)
            .map(EdgeSet::max_out_degree)
            .max()
            .unwrap_or(0)
    }

    /// Edges occurring in infinitely many rounds: the union over the terminal cycle.
    pub fn infinite_edge_set(&self) -> EdgeSet {
        let union: BTreeSet<Edge> = self
            .cycle
            .iter()
            .flat_map(|s| s.edges().iter().copied())
            .collect();
        EdgeSet::new(self.n, union).expect("union of valid edge sets is valid")
    }

    pub fn verify_assumptions(&self) -> AssumptionReport {
        let inf = self.infinite_edge_set();
        AssumptionReport {
            strongly_connected: is_strongly_connected(&inf),
            t_bound: self.intercommunication_bound(&inf),
        }
    }

    /// Scans the prefix plus two full cycles; beyond that every window repeats.
    fn intercommunication_bound(&self, inf: &EdgeSet) -> Option<usize> {
        let horizon = self.prefix.len() + 2 * self.cycle.len();
        let mut t = 1usize;
        for &edge in inf.edges() {
            let mut last: Option<usize> = None;
            for k in 0..horizon {
                if self.edges_at(k).contains(edge) {
                    let gap = match last {
                        None => k + 1,
                        Some(prev) => k - prev,
                    };
                    t = t.max(gap);
                    last = Some(k);
                }
            }
            last?;
        }
        Some(t)
    }

    /// Built-in benchmark schedules: `alternating5` and `ring1000`.
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "alternating5" => Ok(Self::alternating5()),
            "ring1000" => Self::ring(1000),
            other => Err(Error::UnknownSchedule(other.to_string())),
        }
    }

    /// Five agents. Even rounds: directed 5-cycle `i -> i+1`. Odd rounds:
    /// stride-2 cycle `i -> i+2` (indices mod 5).
    pub fn alternating5() -> Self {
        let n = 5;
        let even = EdgeSet::new(n, (0..n).map(|i| Edge::new((i + 1) % n, i))).unwrap();
        let odd = EdgeSet::new(n, (0..n).map(|i| Edge::new((i + 2) % n, i))).unwrap();
        Self::periodic("alternating5", n, vec![even, odd]).unwrap()
    }

    /// Each agent has three out-neighbors: the next three agents on the ring
    /// in even rounds, the previous three in odd rounds.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidSchedule(format!(
                "ring schedule needs at least 4 agents, got {n}"
            )));
        }
        let ni = n as i64;
        // 1-based formula: even {i mod n + 1, (i+1) mod n + 1, (i+2) mod n + 1},
        // odd {(i-2) mod n + 1, (i-3) mod n + 1, (i-4) mod n + 1}.
        let build = |offsets: [i64; 3]| {
            let edges = (1..=ni).flat_map(move |i| {
                offsets.into_iter().map(move |o| {
                    let recv_1based = (i + o).rem_euclid(ni) + 1;
                    Edge::new((recv_1based - 1) as usize, (i - 1) as usize)
                })
            });
            EdgeSet::new(n, edges)
        };
        let even = build([0, 1, 2])?;
        let odd = build([-2, -3, -4])?;
        Self::periodic(format!("ring{n}"), n, vec![even, odd])
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ScheduleFile = serde_json::from_str(&text)?;
        file.into_schedule()
    }

    pub fn to_file_format(&self) -> ScheduleFile {
        let to_pairs = |s: &EdgeSet| {
            s.edges()
                .iter()
                .map(|e| [e.receiver + 1, e.sender + 1])
                .collect::<Vec<_>>()
        };
        ScheduleFile {
            n: self.n,
            period: self.cycle.len(),
            rounds: self
                .prefix
                .iter()
                .chain(&self.cycle)
                .map(to_pairs)
                .collect(),
        }
    }
}

/// On-disk schedule: 1-based `(receiver, sender)` pairs per round.
///
/// The last `period` entries of `rounds` form the repeating cycle; any
/// entries before them are played once as a prefix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub n: usize,
    pub period: usize,
    pub rounds: Vec<Vec<[usize; 2]>>,
}

impl ScheduleFile {
    pub fn into_schedule(self) -> Result<GraphSchedule> {
        if self.period == 0 || self.rounds.len() < self.period {
            return Err(Error::InvalidSchedule(format!(
                "period {} with {} rounds listed",
                self.period,
                self.rounds.len()
            )));
        }
        let n = self.n;
        let mut sets = Vec::with_capacity(self.rounds.len());
        for round in &self.rounds {
            let mut edges = Vec::with_capacity(round.len());
            for &[r, s] in round {
                if r == 0 || s == 0 || r > n || s > n || r == s {
                    return Err(Error::InvalidEdge {
                        receiver: r,
                        sender: s,
                        n,
                    });
                }
                edges.push(Edge::new(r - 1, s - 1));
            }
            sets.push(EdgeSet::new(n, edges)?);
        }
        let cycle = sets.split_off(sets.len() - self.period);
        GraphSchedule::new("custom", n, sets, cycle)
    }
}

fn is_strongly_connected(set: &EdgeSet) -> bool {
    let n = set.n_agents();
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            let next = if forward {
                set.out_neighbors(v)
            } else {
                set.in_neighbors(v)
            };
            for &u in next {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|b| b)
    };
    reach(true) && reach(false)
}
