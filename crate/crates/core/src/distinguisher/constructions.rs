//! The constructions the harness can sample, plus a non-causal fixture.

use num_bigint::BigUint;

use super::{drive, Construction, LengthOutcome, Limit, Observation};
use crate::bogus::{bogus_prefix, bogus_wrap, BogusEncoding, PassThrough};
use crate::path_oram::{OramConfig, PathOram};
use crate::periodic::{run_periodic, PoissonArrivals, RunLength};
use crate::recursive::{RecursiveConfig, RecursiveOram};
use crate::rng;
use crate::trace::{AdversaryView, LogicalTrace, Op};

fn failed() -> Observation {
    Observation {
        accesses: Vec::new(),
        length: LengthOutcome::Failed,
    }
}

/// Plain Path ORAM; the sample seed replaces `config.seed`.
#[derive(Debug, Clone)]
pub struct PathOramConstruction {
    pub config: OramConfig,
}

impl Construction for PathOramConstruction {
    fn name(&self) -> String {
        "path_oram".into()
    }

    fn observe(&self, input: &LogicalTrace, seed: u64, limit: Limit) -> Observation {
        let config = OramConfig { seed, ..self.config.clone() };
        match PathOram::new(config) {
            Ok(mut o) => drive(&mut o, input, limit),
            Err(_) => failed(),
        }
    }
}

/// Recursive Path ORAM in any of its variants.
#[derive(Debug, Clone)]
pub struct RecursiveConstruction {
    pub config: RecursiveConfig,
}

impl Construction for RecursiveConstruction {
    fn name(&self) -> String {
        let r = &self.config.recursion;
        let mut name = format!("recursive_d{}", r.depth);
        if r.unified {
            name.push_str("_unified");
        }
        if r.plb_capacity > 0 {
            name.push_str("_plb");
        }
        if r.superblock_size > 1 {
            name.push_str(&format!("_sb{}", r.superblock_size));
        }
        name
    }

    fn observe(&self, input: &LogicalTrace, seed: u64, limit: Limit) -> Observation {
        let mut config = self.config.clone();
        config.base.seed = seed;
        match RecursiveOram::new(config) {
            Ok(mut o) => drive(&mut o, input, limit),
            Err(_) => failed(),
        }
    }
}

/// Inner ORAM of a shaped construction.
#[derive(Debug, Clone)]
pub enum InnerOram {
    Path(OramConfig),
    Recursive(RecursiveConfig),
}

/// Static periodic shaping over Poisson request arrivals. The arrival
/// process draws from a stream derived from the sample seed.
#[derive(Debug, Clone)]
pub struct PeriodicConstruction {
    pub inner: InnerOram,
    pub o_int: u64,
    /// Mean requests per tick.
    pub arrival_rate: f64,
}

impl PeriodicConstruction {
    fn shaped(&self, oram: &mut dyn crate::Oram, input: &LogicalTrace, seed: u64, limit: Limit) -> Observation {
        let finite = input.len().is_some();
        let length = match (limit.to_end, finite) {
            (true, true) => RunLength::Drain,
            _ => RunLength::AtMost(limit.keep as u64),
        };
        let arrivals = match PoissonArrivals::new(input.iter(), self.arrival_rate, rng::derive(seed, 1, 0)) {
            Ok(a) => a,
            Err(_) => return failed(),
        };
        match run_periodic(oram, arrivals, self.o_int, length) {
            Ok(run) => {
                let total = run.trace.len();
                let drained = match length {
                    RunLength::Drain => true,
                    // A finite input that ended before the slot budget.
                    _ => finite && (total as u64) < limit.keep as u64,
                };
                Observation {
                    accesses: run.trace.iter().take(limit.keep).map(|a| a.view()).collect(),
                    length: if drained {
                        LengthOutcome::Finite(BigUint::from(total))
                    } else {
                        LengthOutcome::Unknown
                    },
                }
            }
            Err(_) => failed(),
        }
    }
}

impl Construction for PeriodicConstruction {
    fn name(&self) -> String {
        let inner = match self.inner {
            InnerOram::Path(_) => "path_oram",
            InnerOram::Recursive(_) => "recursive",
        };
        format!("periodic_{inner}_o{}", self.o_int)
    }

    fn observe(&self, input: &LogicalTrace, seed: u64, limit: Limit) -> Observation {
        match &self.inner {
            InnerOram::Path(c) => match PathOram::new(OramConfig { seed, ..c.clone() }) {
                Ok(mut o) => self.shaped(&mut o, input, seed, limit),
                Err(_) => failed(),
            },
            InnerOram::Recursive(c) => {
                let mut c = c.clone();
                c.base.seed = seed;
                match RecursiveOram::new(c) {
                    Ok(mut o) => self.shaped(&mut o, input, seed, limit),
                    Err(_) => failed(),
                }
            }
        }
    }
}

/// Length-padding wrapper around a pass-through RAM. Deterministic, so the
/// seed is ignored.
#[derive(Debug, Clone, Default)]
pub struct BogusConstruction {
    pub encoding: BogusEncoding,
}

impl Construction for BogusConstruction {
    fn name(&self) -> String {
        "bogus".into()
    }

    fn observe(&self, input: &LogicalTrace, _seed: u64, limit: Limit) -> Observation {
        if input.len().is_none() {
            // Unbounded input: the padding never starts.
            let accesses = input
                .iter()
                .take(limit.keep)
                .enumerate()
                .map(|(i, a)| AdversaryView {
                    tick: i as u64,
                    tree: 0,
                    leaf: a.addr,
                })
                .collect();
            return Observation {
                accesses,
                length: LengthOutcome::Unknown,
            };
        }
        let trace = input.iter().collect::<Vec<_>>();
        match bogus_wrap(&PassThrough, &trace, &self.encoding) {
            Ok(plan) => {
                let accesses = bogus_prefix(&plan, limit.keep).iter().map(|a| a.view()).collect();
                let known = limit.to_end || plan.total_length <= BigUint::from(limit.keep);
                Observation {
                    accesses,
                    length: if known {
                        LengthOutcome::Finite(plan.total_length)
                    } else {
                        LengthOutcome::Unknown
                    },
                }
            }
            Err(_) => failed(),
        }
    }
}

/// Negative control: each emitted access names the address of the *next*
/// request, so output on a prefix depends on input beyond it.
#[derive(Debug, Clone, Copy, Default)]
pub struct FuturePeeking;

impl Construction for FuturePeeking {
    fn name(&self) -> String {
        "future_peeking".into()
    }

    fn observe(&self, input: &LogicalTrace, _seed: u64, limit: Limit) -> Observation {
        let reqs: Vec<_> = input
            .iter()
            .take_while(|a| a.op != Op::Halt)
            .take(limit.keep.saturating_add(1))
            .collect();
        let n = reqs.len().min(limit.keep);
        let accesses = (0..n)
            .map(|i| AdversaryView {
                tick: i as u64,
                tree: 0,
                leaf: reqs.get(i + 1).map_or(u64::MAX, |a| a.addr),
            })
            .collect();
        Observation {
            accesses,
            length: if reqs.len() <= limit.keep {
                LengthOutcome::Finite(BigUint::from(n))
            } else {
                LengthOutcome::Unknown
            },
        }
    }
}
