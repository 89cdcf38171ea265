//! Superframe timing and the capacity bounds derived from it.
//!
//! Layout of one superframe of length `superframe`:
//!
//! ```text
//! |<------------- quiet ------------->|<- N x control ->|<- M x (data + ack) ->| idle |
//!                    |<- NUS (2 x c) ->|
//! ```
//!
//! The new-user slot occupies the last two control-slot widths of the quiet
//! period, so the capacity arithmetic only charges the quiet period, one
//! control slot per registered user and one data+ack pair per data slot.

use thiserror::Error;

use crate::time::Micros;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimingError {
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("quiet period plus one control slot ({needed}) exceeds the superframe ({superframe})")]
    NoRoomForUser { needed: Micros, superframe: Micros },
    #[error("quiet period ({quiet}) is shorter than the new-user slot ({nus})")]
    QuietShorterThanNus { quiet: Micros, nus: Micros },
}

/// All timing constants of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameTiming {
    /// Superframe period.
    pub superframe: Micros,
    /// Quiet (sensing) period at the head of every superframe.
    pub quiet: Micros,
    /// One current-user control slot.
    pub control: Micros,
    /// One data slot.
    pub data: Micros,
    /// One acknowledgement slot, paired with every data slot.
    pub ack: Micros,
    /// Wait before abandoning a PU-blocked channel.
    pub wait: Micros,
    /// Re-sensing interval while a primary user occupies the channel.
    pub detect_interval: Micros,
}

impl FrameTiming {
    pub fn validate(&self) -> Result<(), TimingError> {
        for (name, v) in [
            ("t_superframe", self.superframe),
            ("t_quiet", self.quiet),
            ("t_control", self.control),
            ("t_data", self.data),
            ("t_ack", self.ack),
            ("t_wait", self.wait),
            ("t_detect_interval", self.detect_interval),
        ] {
            if v.0 == 0 {
                return Err(TimingError::NonPositive(name));
            }
        }
        let needed = self.quiet + self.control;
        if needed > self.superframe {
            return Err(TimingError::NoRoomForUser {
                needed,
                superframe: self.superframe,
            });
        }
        if self.quiet < self.nus() {
            return Err(TimingError::QuietShorterThanNus {
                quiet: self.quiet,
                nus: self.nus(),
            });
        }
        Ok(())
    }

    /// Duration of the new-user slot: always two control slots.
    pub fn nus(&self) -> Micros {
        self.control * 2
    }

    /// One data slot together with its acknowledgement slot.
    pub fn data_pair(&self) -> Micros {
        self.data + self.ack
    }

    /// Offset of the new-user slot from the start of the superframe.
    pub fn nus_offset(&self) -> Micros {
        self.quiet - self.nus()
    }

    /// Offset of current-user slot `index` from the start of the superframe.
    pub fn cus_offset(&self, index: usize) -> Micros {
        self.quiet + self.control * index as u64
    }

    /// Offset of the first data slot when `n_users` control slots precede it.
    pub fn data_offset(&self, n_users: usize) -> Micros {
        self.cus_offset(n_users)
    }

    /// Offset of data slot `slot` (its ack slot follows `data` later).
    pub fn data_slot_offset(&self, n_users: usize, slot: usize) -> Micros {
        self.data_offset(n_users) + self.data_pair() * slot as u64
    }

    /// Superframes per second.
    pub fn frames_per_sec(&self) -> f64 {
        1.0 / self.superframe.as_secs_f64()
    }
}

/// Largest `N` with `quiet + N * control <= superframe`.
pub fn capacity_max_users(timing: &FrameTiming) -> usize {
    let budget = timing.superframe.0.saturating_sub(timing.quiet.0);
    (budget / timing.control.0) as usize
}

/// Largest `M` with `quiet + n_users * control + M * (data + ack) <= superframe`.
///
/// Returns 0 when the control sequence alone already fills the superframe.
pub fn capacity_max_data_slots(timing: &FrameTiming, n_users: usize) -> usize {
    let used = timing.quiet.0 + timing.control.0 * n_users as u64;
    let budget = timing.superframe.0.saturating_sub(used);
    (budget / timing.data_pair().0) as usize
}

#[cfg(test)]
pub(crate) fn ms_timing(superframe: &str, quiet: &str, control: &str, data: &str, ack: &str) -> FrameTiming {
    let p = |s: &str| Micros::parse_ms(s).unwrap();
    FrameTiming {
        superframe: p(superframe),
        quiet: p(quiet),
        control: p(control),
        data: p(data),
        ack: p(ack),
        wait: p(superframe),
        detect_interval: p(superframe),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn max_users_examples() {
        assert_eq!(capacity_max_users(&ms_timing("60", "20", "1", "1", "0.5")), 40);
        assert_eq!(capacity_max_users(&ms_timing("80", "20", "1", "2", "0.5")), 60);
        // T_s = T_q + T_c
        assert_eq!(capacity_max_users(&ms_timing("21", "20", "1", "1", "0.5")), 1);
    }

    #[test]
    fn max_data_slot_examples() {
        assert_eq!(capacity_max_data_slots(&ms_timing("60", "20", "1", "1", "0.5"), 6), 22);
        assert_eq!(capacity_max_data_slots(&ms_timing("80", "20", "1.5", "2", "0.5"), 8), 19);
        let t = ms_timing("60", "20", "1", "1", "0.5");
        assert_eq!(capacity_max_data_slots(&t, capacity_max_users(&t)), 0);
        // past the user bound the result saturates at zero
        assert_eq!(capacity_max_data_slots(&t, 100), 0);
    }

    #[test]
    fn validation() {
        assert!(ms_timing("60", "20", "1", "1", "0.5").validate().is_ok());
        assert_eq!(
            ms_timing("20", "20", "1", "1", "0.5").validate(),
            Err(TimingError::NoRoomForUser {
                needed: Micros::from_ms(21),
                superframe: Micros::from_ms(20)
            })
        );
        assert!(matches!(
            ms_timing("60", "1", "1", "1", "0.5").validate(),
            Err(TimingError::QuietShorterThanNus { .. })
        ));
        let mut t = ms_timing("60", "20", "1", "1", "0.5");
        t.ack = Micros::ZERO;
        assert_eq!(t.validate(), Err(TimingError::NonPositive("t_ack")));
    }

    #[test]
    fn slot_offsets() {
        let t = ms_timing("60", "20", "1", "1", "0.5");
        assert_eq!(t.nus_offset(), Micros::from_ms(18));
        assert_eq!(t.cus_offset(2), Micros::from_ms(22));
        assert_eq!(t.data_slot_offset(2, 3), Micros(26_500));
    }

    fn timing_strategy() -> impl Strategy<Value = FrameTiming> {
        (1u64..200, 1u64..50, 1u64..20, 1u64..20, 1u64..10).prop_map(|(extra, q, c, d, a)| {
            let quiet = Micros(q * 1000 + 2 * c * 500);
            let control = Micros(c * 500);
            FrameTiming {
                superframe: quiet + control + Micros(extra * 500),
                quiet,
                control,
                data: Micros(d * 500),
                ack: Micros(a * 250),
                wait: Micros::from_ms(10),
                detect_interval: Micros::from_ms(10),
            }
        })
    }

    proptest! {
        #[test]
        fn data_slots_non_increasing_in_users(t in timing_strategy(), n in 0usize..60) {
            prop_assert!(capacity_max_data_slots(&t, n + 1) <= capacity_max_data_slots(&t, n));
        }

        #[test]
        fn data_slots_non_increasing_in_quiet(t in timing_strategy(), n in 0usize..10, dq in 1u64..5000) {
            let mut longer = t;
            longer.quiet = t.quiet + Micros(dq);
            prop_assert!(capacity_max_data_slots(&longer, n) <= capacity_max_data_slots(&t, n));
        }

        #[test]
        fn capacity_bounds_are_tight(t in timing_strategy()) {
            prop_assert!(t.validate().is_ok());
            let n = capacity_max_users(&t);
            prop_assert!(n >= 1);
            prop_assert!(t.quiet + t.control * n as u64 <= t.superframe);
            prop_assert!(t.quiet + t.control * (n as u64 + 1) > t.superframe);
            let users = n / 2;
            let m = capacity_max_data_slots(&t, users) as u64;
            let used = t.quiet + t.control * users as u64;
            prop_assert!(used + t.data_pair() * m <= t.superframe);
            prop_assert!(used + t.data_pair() * (m + 1) > t.superframe);
        }
    }
}
