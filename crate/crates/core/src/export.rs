//! Text artifacts. Agent ids are written 1-based; floats use the shortest
//! representation that round-trips, so identical transcripts give
//! byte-identical files.

use std::io::{self, Write};

use serde::Serialize;

use crate::engine::Transcript;
use crate::error::{Error, Result};
use crate::protocol::RoundMessage;

/// `round,e`
pub fn write_errors_csv<W: Write>(transcript: &Transcript, mut out: W) -> io::Result<()> {
    writeln!(out, "round,e")?;
    for (k, e) in transcript.errors.iter().enumerate() {
        writeln!(out, "{k},{e}")?;
    }
    Ok(())
}

/// `round,agent,s,w,pi`, one row per agent per time index.
pub fn write_states_csv<W: Write>(transcript: &Transcript, mut out: W) -> io::Result<()> {
    writeln!(out, "round,agent,s,w,pi")?;
    for k in 0..=transcript.rounds_run() {
        for st in transcript.states_at(k) {
            writeln!(
                out,
                "{k},{},{},{},{}",
                st.id + 1,
                st.s,
                st.w,
                transcript.estimate(st)
            )?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct LoggedMessage {
    sender: usize,
    receiver: usize,
    delta_s: f64,
    delta_w: f64,
}

#[derive(Serialize)]
struct LoggedRound {
    round: usize,
    messages: Vec<LoggedMessage>,
}

#[derive(Serialize)]
struct MessageLog {
    n: usize,
    big_k: usize,
    rounds: Vec<LoggedRound>,
}

fn logged(m: &RoundMessage) -> LoggedMessage {
    LoggedMessage {
        sender: m.sender + 1,
        receiver: m.receiver + 1,
        delta_s: m.delta_s,
        delta_w: m.delta_w,
    }
}

/// JSON message log: `{"n", "big_k", "rounds": [{"round", "messages": [...]}]}`.
pub fn write_message_log<W: Write>(transcript: &Transcript, out: W) -> Result<()> {
    if !transcript.has_messages() {
        return Err(Error::InsufficientRecord);
    }
    let log = MessageLog {
        n: transcript.n_agents(),
        big_k: transcript.config.params.big_k,
        rounds: transcript
            .rounds
            .iter()
            .map(|r| LoggedRound {
                round: r.round,
                messages: r.messages.iter().map(logged).collect(),
            })
            .collect(),
    };
    serde_json::to_writer(out, &log)?;
    Ok(())
}
