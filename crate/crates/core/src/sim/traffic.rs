//! Constant-bit-rate traffic sources.

use crate::time::Micros;
use crate::types::{DataType, NodeId};

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSource {
    pub src: NodeId,
    pub dst: NodeId,
    pub packet_bytes: u32,
    pub interval: Micros,
    pub data_type: DataType,
    /// Fixed priority index announced instead of the computed one.
    pub pi_override: Option<u8>,
    pub start: Micros,
    /// Generation stops before this time; `None` runs to the end.
    pub stop: Option<Micros>,
}

impl TrafficSource {
    /// Time of the `k`-th packet, if the source is still active then.
    pub fn arrival(&self, k: u64) -> Option<Micros> {
        let t = self.start + self.interval * k;
        match self.stop {
            Some(stop) if t >= stop => None,
            _ => Some(t),
        }
    }

    /// Bytes generated in `[0, end)`.
    pub fn offered_bytes(&self, end: Micros) -> u64 {
        let until = self.stop.map_or(end, |s| s.min(end));
        if until <= self.start || self.interval.0 == 0 {
            return 0;
        }
        let n = (until - self.start).0.div_ceil(self.interval.0);
        n * u64::from(self.packet_bytes)
    }
}
