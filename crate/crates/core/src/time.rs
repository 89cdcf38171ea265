use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use thiserror::Error;

/// Simulation time or duration in integer microseconds.
///
/// All millisecond values used by the protocol (1.5 ms control slots, 0.5 ms
/// ack slots, ...) are exact on this grid, which keeps event ordering free of
/// floating-point ties.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Micros(pub u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimeParseError {
    #[error("`{0}` is not a number of milliseconds")]
    NotANumber(String),
    #[error("`{0}` ms is negative")]
    Negative(String),
    #[error("`{0}` ms is finer than one microsecond")]
    TooFine(String),
}

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub const fn from_us(us: u64) -> Self {
        Micros(us)
    }

    pub const fn from_ms(ms: u64) -> Self {
        Micros(ms * 1_000)
    }

    /// Parses a decimal millisecond literal such as `1.5` or `20`.
    pub fn parse_ms(text: &str) -> Result<Self, TimeParseError> {
        let t = text.trim();
        if t.starts_with('-') {
            return Err(TimeParseError::Negative(t.to_string()));
        }
        let (whole, frac) = match t.split_once('.') {
            Some((w, f)) => (w, f),
            None => (t, ""),
        };
        let digits_ok = |s: &str| s.chars().all(|c| c.is_ascii_digit());
        if (whole.is_empty() && frac.is_empty()) || !digits_ok(whole) || !digits_ok(frac) {
            return Err(TimeParseError::NotANumber(t.to_string()));
        }
        let frac = frac.trim_end_matches('0');
        if frac.len() > 3 {
            return Err(TimeParseError::TooFine(t.to_string()));
        }
        let whole: u64 = if whole.is_empty() {
            0
        } else {
            whole
                .parse()
                .map_err(|_| TimeParseError::NotANumber(t.to_string()))?
        };
        let mut frac_us = 0u64;
        for (i, c) in frac.chars().enumerate() {
            frac_us += (c as u64 - '0' as u64) * 10u64.pow(2 - i as u32);
        }
        Ok(Micros(whole * 1_000 + frac_us))
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 * 1e-3
    }

    pub fn saturating_sub(self, rhs: Micros) -> Micros {
        Micros(self.0.saturating_sub(rhs.0))
    }
}

/// Formats as milliseconds with the shortest exact decimal expansion.
impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = self.0 / 1_000;
        let rem = self.0 % 1_000;
        if rem == 0 {
            write!(f, "{ms}")
        } else {
            let s = format!("{rem:03}");
            write!(f, "{ms}.{}", s.trim_end_matches('0'))
        }
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl Sub for Micros {
    type Output = Micros;
    fn sub(self, rhs: Micros) -> Micros {
        Micros(self.0 - rhs.0)
    }
}

impl Mul<u64> for Micros {
    type Output = Micros;
    fn mul(self, rhs: u64) -> Micros {
        Micros(self.0 * rhs)
    }
}
