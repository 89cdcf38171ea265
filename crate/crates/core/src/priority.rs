//! Priority index calculation.
//!
//! The index combines three sub-priorities, each in `0..=3`:
//! `PI = 3 * data_type + queue_length + 3 * head_delay`, so it ranges over
//! `0..=21`. Where the band edges overlap (5/10/20 packets, 2/5/10
//! superframes) the edge value goes to the lower band.

use crate::types::DataType;

pub const MAX_PI: u8 = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorityInputs {
    pub data_type: DataType,
    /// Packets waiting in the transmit queue.
    pub queue_length: usize,
    /// Superframes the oldest queued packet has waited.
    pub head_delay: u64,
}

pub fn sub_priority_dt(data_type: DataType) -> u8 {
    match data_type {
        DataType::TextFile => 0,
        DataType::RealTimeAV => 1,
        DataType::ControlData => 2,
        DataType::SafetyCritical => 3,
    }
}

pub fn sub_priority_ql(queue_length: usize) -> u8 {
    match queue_length {
        0..=5 => 0,
        6..=10 => 1,
        11..=20 => 2,
        _ => 3,
    }
}

pub fn sub_priority_pd(head_delay: u64) -> u8 {
    match head_delay {
        0..=1 => 0,
        2..=5 => 1,
        6..=10 => 2,
        _ => 3,
    }
}

pub fn priority_index(inputs: &PriorityInputs) -> u8 {
    3 * sub_priority_dt(inputs.data_type)
        + sub_priority_ql(inputs.queue_length)
        + 3 * sub_priority_pd(inputs.head_delay)
}
