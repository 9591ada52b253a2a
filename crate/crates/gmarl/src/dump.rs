//! Line-oriented trajectory dumps.
//!
//! ```text
//! gmarl-trajectory 1
//! nodes <N_0>
//! signal <x_0 comma-separated>
//! edge <i> <j> <w>            (one per undirected initial edge)
//! step <t> <idx:w,...|-> <truth> <x_t comma-separated>
//! ```
//!
//! Floats are printed in shortest round-trip form, so a parsed dump replays
//! the recorded episode exactly.

use std::fmt::Write as _;

use gmarl_core::episode::{Episode, Trajectory};
use gmarl_core::graph::{AdjacencyMatrix, AttachmentSpec, AttachmentVector, ExpandingGraphState, SignalModel};

use crate::error::{Error, Result};

const MAGIC: &str = "gmarl-trajectory 1";

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

/// Serializes a trajectory simulated with records kept.
pub fn write_dump(traj: &Trajectory) -> Result<String> {
    if traj.records.len() != traj.steps.len() {
        return Err(Error::Data("trajectory was simulated without records".into()));
    }
    let mut out = String::new();
    let init = &traj.initial;
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "nodes {}", init.n());
    let _ = writeln!(out, "signal {}", join(&init.signal));
    for i in 0..init.n() {
        for &(j, w) in init.adj.neighbors(i) {
            if j > i {
                let _ = writeln!(out, "edge {i} {j} {w:?}");
            }
        }
    }
    for (t, (rec, obs)) in traj.records.iter().zip(&traj.steps).enumerate() {
        let att: Vec<String> = rec.attachment.support().map(|(i, w)| format!("{i}:{w:?}")).collect();
        let att = if att.is_empty() { "-".to_string() } else { att.join(",") };
        let _ = writeln!(out, "step {} {att} {:?} {}", t + 1, obs.ground_truth, join(&rec.signal));
    }
    Ok(out)
}

fn floats(s: &str, line: usize) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| v.parse().map_err(|_| Error::Data(format!("dump line {line}: bad number {v:?}"))))
        .collect()
}

/// Parses a dump into a replay episode (recorded attachments and signals).
pub fn parse_dump(text: &str) -> Result<Episode> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let bad = |line: usize, what: &str| Error::Data(format!("dump line {line}: {what}"));
    match lines.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(Error::Data(format!("not a trajectory dump (expected {MAGIC:?} header)"))),
    }
    let (ln, l) = lines.next().ok_or_else(|| bad(2, "missing node count"))?;
    let n: usize = l
        .strip_prefix("nodes ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(ln, "expected `nodes <count>`"))?;
    let (ln, l) = lines.next().ok_or_else(|| bad(3, "missing initial signal"))?;
    let signal = floats(l.strip_prefix("signal").ok_or_else(|| bad(ln, "expected `signal`"))?.trim(), ln)?;
    let mut adj = AdjacencyMatrix::zeros(n);
    let mut attachments = Vec::new();
    let mut signals = Vec::new();
    for (ln, l) in lines {
        let fields: Vec<&str> = l.split_whitespace().collect();
        match fields.first().copied() {
            Some("edge") if fields.len() == 4 && attachments.is_empty() => {
                let i: usize = fields[1].parse().map_err(|_| bad(ln, "bad edge index"))?;
                let j: usize = fields[2].parse().map_err(|_| bad(ln, "bad edge index"))?;
                let w: f64 = fields[3].parse().map_err(|_| bad(ln, "bad edge weight"))?;
                adj.set_edge(i, j, w)?;
            }
            Some("step") if fields.len() == 4 || fields.len() == 5 => {
                let t: usize = fields[1].parse().map_err(|_| bad(ln, "bad step index"))?;
                if t != attachments.len() + 1 {
                    return Err(bad(ln, "steps out of order"));
                }
                let size = n + t - 1;
                let mut entries = Vec::new();
                if fields[2] != "-" {
                    for part in fields[2].split(',') {
                        let (i, w) = part.split_once(':').ok_or_else(|| bad(ln, "attachment entry needs idx:w"))?;
                        entries.push((
                            i.parse().map_err(|_| bad(ln, "bad attachment index"))?,
                            w.parse().map_err(|_| bad(ln, "bad attachment weight"))?,
                        ));
                    }
                }
                let truth: f64 = fields[3].parse().map_err(|_| bad(ln, "bad ground truth"))?;
                let x = floats(fields.get(4).copied().unwrap_or(""), ln)?;
                if x.len() != size + 1 {
                    return Err(bad(ln, "signal length does not match the graph size"));
                }
                if x[size] != truth {
                    return Err(bad(ln, "ground truth differs from the incoming node's signal"));
                }
                attachments.push(AttachmentVector::from_sparse(size, &entries)?);
                signals.push(x);
            }
            _ => return Err(bad(ln, "unrecognized record")),
        }
    }
    Ok(Episode {
        state: ExpandingGraphState::new(adj, signal)?,
        attachment: AttachmentSpec::Replay(attachments),
        signal: SignalModel::Recorded(signals),
    })
}
