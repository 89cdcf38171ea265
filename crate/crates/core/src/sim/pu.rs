//! Primary-user activity on a licensed channel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::time::Micros;

#[derive(Debug, Clone, PartialEq)]
pub enum PuActivityModel {
    AlwaysIdle,
    /// Busy exactly during each `[on, off)` interval.
    Scripted(Vec<(Micros, Micros)>),
    /// Alternating exponential holding times with the given means.
    TwoStateMarkov { mean_on: Micros, mean_off: Micros },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PuModelError {
    #[error("busy interval {0}..{1} ms is empty")]
    EmptyInterval(Micros, Micros),
    #[error("busy interval starting at {0} ms overlaps or precedes the previous one")]
    Unordered(Micros),
    #[error("markov holding-time means must be positive")]
    ZeroMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PuStateChange {
    pub time: Micros,
    pub busy: bool,
}

impl PuActivityModel {
    pub fn validate(&self) -> Result<(), PuModelError> {
        match self {
            PuActivityModel::AlwaysIdle => Ok(()),
            PuActivityModel::Scripted(iv) => {
                let mut prev_end: Option<Micros> = None;
                for &(on, off) in iv {
                    if off <= on {
                        return Err(PuModelError::EmptyInterval(on, off));
                    }
                    if prev_end.is_some_and(|e| on < e) {
                        return Err(PuModelError::Unordered(on));
                    }
                    prev_end = Some(off);
                }
                Ok(())
            }
            PuActivityModel::TwoStateMarkov { mean_on, mean_off } => {
                if mean_on.0 == 0 || mean_off.0 == 0 {
                    Err(PuModelError::ZeroMean)
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Long-run fraction of time the channel is busy (scripted: over `horizon`).
    pub fn expected_duty(&self, horizon: Micros) -> f64 {
        match self {
            PuActivityModel::AlwaysIdle => 0.0,
            PuActivityModel::Scripted(iv) => {
                if horizon.0 == 0 {
                    return 0.0;
                }
                let busy: u64 = iv
                    .iter()
                    .map(|&(on, off)| off.min(horizon).0.saturating_sub(on.0))
                    .sum();
                busy as f64 / horizon.0 as f64
            }
            PuActivityModel::TwoStateMarkov { mean_on, mean_off } => {
                mean_on.0 as f64 / (mean_on.0 + mean_off.0) as f64
            }
        }
    }

    /// Scripted intervals with touching neighbours merged.
    fn merged(&self) -> PuActivityModel {
        match self {
            PuActivityModel::Scripted(iv) => {
                let mut out: Vec<(Micros, Micros)> = Vec::new();
                for &(on, off) in iv {
                    match out.last_mut() {
                        Some(last) if last.1 >= on => last.1 = last.1.max(off),
                        _ => out.push((on, off)),
                    }
                }
                PuActivityModel::Scripted(out)
            }
            other => other.clone(),
        }
    }
}

/// State at time zero.
pub fn initial_pu_state(model: &PuActivityModel, rng: &mut ChaCha8Rng) -> bool {
    match model {
        PuActivityModel::AlwaysIdle => false,
        PuActivityModel::Scripted(iv) => iv.first().is_some_and(|&(on, _)| on == Micros::ZERO),
        PuActivityModel::TwoStateMarkov { mean_on, mean_off } => {
            let p = mean_on.0 as f64 / (mean_on.0 + mean_off.0) as f64;
            rng.random_bool(p)
        }
    }
}

fn holding_time(mean: Micros, rng: &mut ChaCha8Rng) -> Micros {
    let exp = Exp::new(1.0 / mean.0 as f64).expect("positive mean");
    Micros((exp.sample(rng).round() as u64).max(1))
}

/// The next state change after `now`, given the state `busy` held since `now`.
pub fn step_pu(model: &PuActivityModel, now: Micros, busy: bool, rng: &mut ChaCha8Rng) -> Option<PuStateChange> {
    match model {
        PuActivityModel::AlwaysIdle => None,
        PuActivityModel::Scripted(iv) => {
            if busy {
                iv.iter()
                    .find(|&&(on, off)| on <= now && now < off)
                    .map(|&(_, off)| PuStateChange { time: off, busy: false })
            } else {
                iv.iter()
                    .find(|&&(on, _)| on > now)
                    .map(|&(on, _)| PuStateChange { time: on, busy: true })
            }
        }
        PuActivityModel::TwoStateMarkov { mean_on, mean_off } => {
            let hold = holding_time(if busy { *mean_on } else { *mean_off }, rng);
            Some(PuStateChange {
                time: now + hold,
                busy: !busy,
            })
        }
    }
}

/// A channel's PU process, generated lazily and remembered as busy intervals.
#[derive(Debug, Clone)]
pub struct PuProcess {
    model: PuActivityModel,
    rng: ChaCha8Rng,
    busy: bool,
    since: Micros,
    next: Option<PuStateChange>,
    intervals: Vec<(Micros, Micros)>,
}

impl PuProcess {
    pub fn new(model: &PuActivityModel, mut rng: ChaCha8Rng) -> Self {
        let model = model.merged();
        let busy = initial_pu_state(&model, &mut rng);
        let next = step_pu(&model, Micros::ZERO, busy, &mut rng);
        PuProcess {
            model,
            rng,
            busy,
            since: Micros::ZERO,
            next,
            intervals: Vec::new(),
        }
    }

    pub fn busy_at_start(&self) -> bool {
        self.intervals.first().map_or(self.busy, |&(on, _)| on == Micros::ZERO)
    }

    /// Applies every change up to and including `t` and returns them.
    pub fn generate_until(&mut self, t: Micros) -> Vec<PuStateChange> {
        let mut out = Vec::new();
        while let Some(change) = self.next.filter(|c| c.time <= t) {
            if self.busy {
                self.intervals.push((self.since, change.time));
            }
            self.busy = change.busy;
            self.since = change.time;
            self.next = step_pu(&self.model, change.time, change.busy, &mut self.rng);
            out.push(change);
        }
        out
    }

    /// Whether the PU is active at any instant of `[a, b)`; generates up to `b`.
    pub fn busy_during(&mut self, a: Micros, b: Micros) -> bool {
        self.generate_until(b);
        if self.busy && self.since < b {
            return true;
        }
        self.intervals.iter().rev().take_while(|&&(_, off)| off > a).any(|&(on, _)| on < b)
    }

    /// All busy intervals up to `end`, the open one closed at `end`.
    pub fn busy_intervals(&mut self, end: Micros) -> Vec<(Micros, Micros)> {
        self.generate_until(end);
        let mut v: Vec<_> = self
            .intervals
            .iter()
            .filter(|&&(on, _)| on < end)
            .map(|&(on, off)| (on, off.min(end)))
            .collect();
        if self.busy && self.since < end {
            v.push((self.since, end));
        }
        v
    }
}
