//! Checks over the complete transmission log of a run.

use super::engine::{TxKind, TxRecord};
use crate::time::Micros;

pub struct AuditInput<'a> {
    pub tx_log: &'a [TxRecord],
    /// Busy intervals of each channel's primary user.
    pub pu_busy: &'a [Vec<(Micros, Micros)>],
    /// Windows in which each channel was sensed busy.
    pub suppressed: &'a [Vec<(Micros, Micros)>],
    /// Longest time a PU can be active before the next sensing catches it.
    pub detection_latency: Micros,
}

fn overlaps(a: (Micros, Micros), b: (Micros, Micros)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Returns one message per violated transmission rule.
///
/// NUS control packets are exempt from the overlap rule because colliding
/// there is how contention works.
pub fn check_transmissions(input: &AuditInput) -> Vec<String> {
    let mut out = Vec::new();
    for (ci, (busy, suppressed)) in input.pu_busy.iter().zip(input.suppressed).enumerate() {
        let mut txs: Vec<&TxRecord> = input
            .tx_log
            .iter()
            .filter(|t| t.channel.0 as usize == ci)
            .collect();
        txs.sort_by_key(|t| (t.start, t.end));

        let scheduled: Vec<&&TxRecord> = txs.iter().filter(|t| t.kind != TxKind::NusControl).collect();
        let mut latest: Option<&TxRecord> = None;
        for t in scheduled {
            if let Some(prev) = latest {
                if t.start < prev.end {
                    out.push(format!(
                        "c{ci}: {:?} by {} at {}us overlaps {:?} by {} ending {}us",
                        t.kind, t.node, t.start.0, prev.kind, prev.node, prev.end.0
                    ));
                }
            }
            if latest.is_none_or(|p| t.end > p.end) {
                latest = Some(t);
            }
        }

        for t in &txs {
            let span = (t.start, t.end);
            if let Some(w) = suppressed.iter().find(|&&w| overlaps(w, span)) {
                out.push(format!(
                    "c{ci}: {:?} by {} at {}us inside suppressed window {}..{}us",
                    t.kind, t.node, t.start.0, w.0 .0, w.1 .0
                ));
            }
            if let Some(b) = busy.iter().find(|&&b| overlaps(b, span)) {
                let lag = t.start.0.saturating_sub(b.0 .0);
                if lag > input.detection_latency.0 {
                    out.push(format!(
                        "c{ci}: {:?} by {} at {}us during pu activity since {}us",
                        t.kind, t.node, t.start.0, b.0 .0
                    ));
                }
            }
        }
    }
    out
}
