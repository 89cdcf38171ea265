//! Packet types and their wire encoding.
//!
//! Every packet starts with a 16-bit big-endian header word: the 4-bit
//! indicator in the high nibble and the 12-bit sync pattern `0xACE` below
//! it. The rest is big-endian as well:
//!
//! | bytes | field                                  |
//! |-------|----------------------------------------|
//! | 0..2  | indicator (4 bits) + sync (12 bits)    |
//! | 2..4  | source node id                         |
//! | 4..6  | destination node id, `0xFFFF` = broadcast |
//! | 6..8  | transmit power in mW                   |
//! | 8..   | body                                   |
//!
//! Bodies:
//!
//! * control `0000`: priority index (u8), slots requested (u16)
//! * data `0001`: payload length in bytes (u16); payload content is not carried
//! * channel control `0010`: channel count (u8), then one u16 per channel
//! * data ack `1001`: empty
//! * channel-control ack `1010`: selected channel (u16), `0xFFFF` = no common channel

use thiserror::Error;

use crate::types::{ChannelId, NodeId};

pub const SYNC_WORD: u16 = 0xACE;
pub const BROADCAST_ID: u16 = 0xFFFF;
const NO_CHANNEL: u16 = 0xFFFF;
pub const MAX_PRIORITY_INDEX: u8 = 21;
pub const HEADER_LEN: usize = 8;

/// The 4-bit packet type code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Indicator {
    Control,
    Data,
    ChannelControl,
    DataAck,
    ChannelControlAck,
}

impl Indicator {
    pub fn code(self) -> u8 {
        match self {
            Indicator::Control => 0b0000,
            Indicator::Data => 0b0001,
            Indicator::ChannelControl => 0b0010,
            Indicator::DataAck => 0b1001,
            Indicator::ChannelControlAck => 0b1010,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, PacketError> {
        match code {
            0b0000 => Ok(Indicator::Control),
            0b0001 => Ok(Indicator::Data),
            0b0010 => Ok(Indicator::ChannelControl),
            0b1001 => Ok(Indicator::DataAck),
            0b1010 => Ok(Indicator::ChannelControlAck),
            other => Err(PacketError::UnknownIndicator(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Destination {
    Node(NodeId),
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AckKind {
    Data,
    /// Reply to a channel-control packet carrying the receiver's choice.
    ChannelControl { selected: Option<ChannelId> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Body {
    Control { priority_index: u8, slots_requested: u16 },
    Data { payload_len: u16 },
    Ack(AckKind),
    ChannelControl { channels: Vec<ChannelId> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Packet {
    pub source: NodeId,
    pub dest: Destination,
    pub tx_power_mw: u16,
    pub body: Body,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("unknown indicator {0:04b}")]
    UnknownIndicator(u8),
    #[error("bad sync pattern {0:#05x}")]
    BadSync(u16),
    #[error("truncated packet: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{0} trailing bytes after body")]
    TrailingBytes(usize),
    #[error("priority index {0} out of range 0..=21")]
    PriorityOutOfRange(u8),
    #[error("transmit power must be positive")]
    ZeroPower,
    #[error("node id 0xFFFF is reserved for broadcast")]
    ReservedNodeId,
    #[error("channel list of {0} entries does not fit the length byte")]
    ChannelListTooLong(usize),
    #[error("channel id 0xFFFF is reserved")]
    ReservedChannelId,
}

impl Packet {
    pub fn indicator(&self) -> Indicator {
        match &self.body {
            Body::Control { .. } => Indicator::Control,
            Body::Data { .. } => Indicator::Data,
            Body::ChannelControl { .. } => Indicator::ChannelControl,
            Body::Ack(AckKind::Data) => Indicator::DataAck,
            Body::Ack(AckKind::ChannelControl { .. }) => Indicator::ChannelControlAck,
        }
    }

    pub fn validate(&self) -> Result<(), PacketError> {
        if self.tx_power_mw == 0 {
            return Err(PacketError::ZeroPower);
        }
        if self.source.0 == BROADCAST_ID || self.dest == Destination::Node(NodeId(BROADCAST_ID)) {
            return Err(PacketError::ReservedNodeId);
        }
        match &self.body {
            Body::Control { priority_index, .. } if *priority_index > MAX_PRIORITY_INDEX => {
                Err(PacketError::PriorityOutOfRange(*priority_index))
            }
            Body::ChannelControl { channels } if channels.len() > u8::MAX as usize => {
                Err(PacketError::ChannelListTooLong(channels.len()))
            }
            Body::ChannelControl { channels } if channels.iter().any(|c| c.0 == NO_CHANNEL) => {
                Err(PacketError::ReservedChannelId)
            }
            Body::Ack(AckKind::ChannelControl { selected: Some(c) }) if c.0 == NO_CHANNEL => {
                Err(PacketError::ReservedChannelId)
            }
            _ => Ok(()),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, PacketError> {
        self.validate()?;
        let mut out = Vec::with_capacity(HEADER_LEN + 4);
        let header = (u16::from(self.indicator().code()) << 12) | SYNC_WORD;
        out.extend_from_slice(&header.to_be_bytes());
        out.extend_from_slice(&self.source.0.to_be_bytes());
        let dest = match self.dest {
            Destination::Node(n) => n.0,
            Destination::Broadcast => BROADCAST_ID,
        };
        out.extend_from_slice(&dest.to_be_bytes());
        out.extend_from_slice(&self.tx_power_mw.to_be_bytes());
        match &self.body {
            Body::Control {
                priority_index,
                slots_requested,
            } => {
                out.push(*priority_index);
                out.extend_from_slice(&slots_requested.to_be_bytes());
            }
            Body::Data { payload_len } => out.extend_from_slice(&payload_len.to_be_bytes()),
            Body::Ack(AckKind::Data) => {}
            Body::Ack(AckKind::ChannelControl { selected }) => {
                let c = selected.map_or(NO_CHANNEL, |c| c.0);
                out.extend_from_slice(&c.to_be_bytes());
            }
            Body::ChannelControl { channels } => {
                out.push(channels.len() as u8);
                for c in channels {
                    out.extend_from_slice(&c.0.to_be_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Packet, PacketError> {
        let mut r = Reader { bytes, pos: 0 };
        let header = r.u16()?;
        let indicator = Indicator::from_code((header >> 12) as u8)?;
        let sync = header & 0x0FFF;
        if sync != SYNC_WORD {
            return Err(PacketError::BadSync(sync));
        }
        let source = NodeId(r.u16()?);
        let dest = match r.u16()? {
            BROADCAST_ID => Destination::Broadcast,
            n => Destination::Node(NodeId(n)),
        };
        let tx_power_mw = r.u16()?;
        let body = match indicator {
            Indicator::Control => Body::Control {
                priority_index: r.u8()?,
                slots_requested: r.u16()?,
            },
            Indicator::Data => Body::Data {
                payload_len: r.u16()?,
            },
            Indicator::DataAck => Body::Ack(AckKind::Data),
            Indicator::ChannelControlAck => {
                let c = r.u16()?;
                Body::Ack(AckKind::ChannelControl {
                    selected: (c != NO_CHANNEL).then_some(ChannelId(c)),
                })
            }
            Indicator::ChannelControl => {
                let n = r.u8()? as usize;
                let mut channels = Vec::with_capacity(n);
                for _ in 0..n {
                    channels.push(ChannelId(r.u16()?));
                }
                Body::ChannelControl { channels }
            }
        };
        if r.pos != bytes.len() {
            return Err(PacketError::TrailingBytes(bytes.len() - r.pos));
        }
        let p = Packet {
            source,
            dest,
            tx_power_mw,
            body,
        };
        p.validate()?;
        Ok(p)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], PacketError> {
        if self.pos + n > self.bytes.len() {
            return Err(PacketError::Truncated {
                needed: self.pos + n,
                have: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PacketError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PacketError> {
        let s = self.take(2)?;
        Ok(u16::from_be_bytes([s[0], s[1]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn control(pi: u8) -> Packet {
        Packet {
            source: NodeId(1),
            dest: Destination::Node(NodeId(4)),
            tx_power_mw: 1500,
            body: Body::Control {
                priority_index: pi,
                slots_requested: 1,
            },
        }
    }

    fn fixtures() -> BTreeMap<String, Vec<u8>> {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/packets.txt");
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| {
                let (name, hex) = l.split_once(' ').unwrap();
                let hex: String = hex.chars().filter(|c| !c.is_whitespace()).collect();
                let bytes = (0..hex.len()).step_by(2).map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap()).collect();
                (name.to_string(), bytes)
            })
            .collect()
    }

    fn unicast(from: u16, to: u16, power: u16, body: Body) -> Packet {
        Packet { source: NodeId(from), dest: Destination::Node(NodeId(to)), tx_power_mw: power, body }
    }

    #[test]
    fn golden_vectors_round_trip() {
        let expected = [
            (
                "control_broadcast",
                Packet {
                    source: NodeId(3),
                    dest: Destination::Broadcast,
                    tx_power_mw: 1500,
                    body: Body::Control { priority_index: 12, slots_requested: 25 },
                },
            ),
            ("data_unicast", unicast(1, 2, 1500, Body::Data { payload_len: 125 })),
            ("data_ack", unicast(2, 1, 1500, Body::Ack(AckKind::Data))),
            ("channel_control", unicast(1, 2, 40, Body::ChannelControl { channels: vec![ChannelId(0), ChannelId(2)] })),
            ("channel_ack_selected", unicast(2, 1, 40, Body::Ack(AckKind::ChannelControl { selected: Some(ChannelId(2)) }))),
            ("channel_ack_none", unicast(2, 1, 40, Body::Ack(AckKind::ChannelControl { selected: None }))),
        ];
        let vectors = fixtures();
        assert_eq!(vectors.len(), expected.len());
        for (name, packet) in expected {
            let bytes = &vectors[name];
            assert_eq!(&packet.encode().unwrap(), bytes, "{name}");
            assert_eq!(Packet::decode(bytes).unwrap(), packet, "{name}");
        }
    }

    #[test]
    fn control_packet_leads_with_zero_indicator() {
        let bytes = control(3).encode().unwrap();
        assert_eq!(bytes[0] >> 4, 0b0000);
        assert_eq!(u16::from_be_bytes([bytes[0], bytes[1]]) & 0x0FFF, SYNC_WORD);
    }

    #[test]
    fn unknown_indicator_is_rejected() {
        let mut bytes = control(3).encode().unwrap();
        bytes[0] = (0b0111 << 4) | (bytes[0] & 0x0F);
        assert_eq!(Packet::decode(&bytes), Err(PacketError::UnknownIndicator(0b0111)));
    }

    #[test]
    fn truncated_body_is_rejected() {
        let bytes = control(3).encode().unwrap();
        assert!(matches!(
            Packet::decode(&bytes[..bytes.len() - 1]),
            Err(PacketError::Truncated { .. })
        ));
        assert!(matches!(Packet::decode(&bytes[..1]), Err(PacketError::Truncated { .. })));
    }

    #[test]
    fn bad_sync_and_trailing_bytes() {
        let mut bytes = control(3).encode().unwrap();
        bytes[1] ^= 0x01;
        assert!(matches!(Packet::decode(&bytes), Err(PacketError::BadSync(_))));
        let mut bytes = control(3).encode().unwrap();
        bytes.push(0);
        assert_eq!(Packet::decode(&bytes), Err(PacketError::TrailingBytes(1)));
    }

    #[test]
    fn invalid_fields_rejected() {
        assert_eq!(control(22).encode(), Err(PacketError::PriorityOutOfRange(22)));
        let mut p = control(3);
        p.tx_power_mw = 0;
        assert_eq!(p.encode(), Err(PacketError::ZeroPower));
        let mut bytes = control(3).encode().unwrap();
        bytes[8] = 30;
        assert_eq!(Packet::decode(&bytes), Err(PacketError::PriorityOutOfRange(30)));
    }

    #[test]
    fn indicator_matches_body() {
        let cases = [
            (Body::Data { payload_len: 10 }, 0b0001),
            (Body::ChannelControl { channels: vec![ChannelId(1)] }, 0b0010),
            (Body::Ack(AckKind::Data), 0b1001),
            (Body::Ack(AckKind::ChannelControl { selected: None }), 0b1010),
        ];
        for (body, code) in cases {
            let p = Packet {
                body,
                ..control(0)
            };
            assert_eq!(p.indicator().code(), code);
            assert_eq!(p.encode().unwrap()[0] >> 4, code);
        }
    }

    fn packet_strategy() -> impl Strategy<Value = Packet> {
        let body = prop_oneof![
            (0u8..=21, any::<u16>()).prop_map(|(pi, s)| Body::Control {
                priority_index: pi,
                slots_requested: s
            }),
            any::<u16>().prop_map(|l| Body::Data { payload_len: l }),
            Just(Body::Ack(AckKind::Data)),
            proptest::option::of(0u16..0xFFFF).prop_map(|c| Body::Ack(AckKind::ChannelControl {
                selected: c.map(ChannelId)
            })),
            proptest::collection::vec(0u16..0xFFFF, 0..20).prop_map(|v| Body::ChannelControl {
                channels: v.into_iter().map(ChannelId).collect()
            }),
        ];
        (
            0u16..0xFFFF,
            proptest::option::of(0u16..0xFFFF),
            1u16..,
            body,
        )
            .prop_map(|(s, d, p, body)| Packet {
                source: NodeId(s),
                dest: d.map_or(Destination::Broadcast, |d| Destination::Node(NodeId(d))),
                tx_power_mw: p,
                body,
            })
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(p in packet_strategy()) {
            let bytes = p.encode().unwrap();
            prop_assert_eq!(Packet::decode(&bytes).unwrap(), p);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..40)) {
            let _ = Packet::decode(&bytes);
        }
    }
}
