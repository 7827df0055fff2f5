use rand::Rng;
use rand_distr::{Distribution, Zipf};

use super::{LogicalAccess, LogicalTrace, Payload};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkloadKind {
    Sequential,
    UniformRandom,
    Strided(u64),
    /// Zipf-distributed ranks mapped to addresses `rank - 1`.
    Zipf(f64),
    /// With probability `locality_fraction` the next address follows the
    /// previous one; otherwise it jumps uniformly.
    Mixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceLength {
    Finite(usize),
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub length: TraceLength,
    /// Number of addressable blocks; a power of two, at least 2.
    pub addr_space: u64,
    pub seed: u64,
    /// Probability that an access is a write (drawn from a stream independent
    /// of the address stream).
    pub write_fraction: f64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, length: TraceLength, addr_space: u64, seed: u64) -> Self {
        WorkloadSpec {
            kind,
            length,
            addr_space,
            seed,
            write_fraction: 0.0,
        }
    }

    pub fn with_write_fraction(mut self, write_fraction: f64) -> Self {
        self.write_fraction = write_fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.addr_space < 2 || !self.addr_space.is_power_of_two() {
            return Err(Error::Config(format!(
                "address space must be a power of two >= 2, got {}",
                self.addr_space
            )));
        }
        if self.length == TraceLength::Finite(0) {
            return Err(Error::Config("trace length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return Err(Error::Config("write fraction must lie in [0, 1]".into()));
        }
        match self.kind {
            WorkloadKind::Strided(0) => Err(Error::Config("stride must be positive".into())),
            WorkloadKind::Zipf(s) if !(s.is_finite() && s >= 0.0) => {
                Err(Error::Config("zipf exponent must be finite and >= 0".into()))
            }
            WorkloadKind::Mixed(f) if !(0.0..=1.0).contains(&f) => {
                Err(Error::Config("locality fraction must lie in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }

    /// Deterministic access stream. Callers are expected to have validated the spec.
    pub fn iter(&self) -> WorkloadIter {
        let zipf = match self.kind {
            WorkloadKind::Zipf(s) => Zipf::new(self.addr_space as f64, s).ok(),
            _ => None,
        };
        WorkloadIter {
            spec: self.clone(),
            index: 0,
            current: self.addr_space - 1,
            addr_rng: rng::stream(rng::derive(self.seed, 0, 0)),
            op_rng: rng::stream(rng::derive(self.seed, 1, 0)),
            zipf,
        }
    }
}

/// Build the trace a spec describes. Finite specs are materialized;
/// unbounded ones stay generator-backed.
pub fn generate(spec: &WorkloadSpec) -> Result<LogicalTrace> {
    spec.validate()?;
    Ok(match spec.length {
        TraceLength::Finite(n) => LogicalTrace::Finite(spec.iter().take(n).collect()),
        TraceLength::Unbounded => LogicalTrace::Generated(spec.clone()),
    })
}

pub struct WorkloadIter {
    spec: WorkloadSpec,
    index: u64,
    current: u64,
    addr_rng: SimRng,
    op_rng: SimRng,
    zipf: Option<Zipf<f64>>,
}

impl WorkloadIter {
    fn next_addr(&mut self) -> u64 {
        let space = self.spec.addr_space;
        let i = self.index;
        match self.spec.kind {
            WorkloadKind::Sequential => i % space,
            WorkloadKind::UniformRandom => self.addr_rng.random_range(0..space),
            WorkloadKind::Strided(stride) => i.wrapping_mul(stride) % space,
            WorkloadKind::Zipf(_) => {
                let zipf = self.zipf.as_ref().expect("validated zipf spec");
                let rank = zipf.sample(&mut self.addr_rng) as u64;
                rank.clamp(1, space) - 1
            }
            WorkloadKind::Mixed(locality) => {
                self.current = if self.addr_rng.random_bool(locality) {
                    (self.current + 1) % space
                } else {
                    self.addr_rng.random_range(0..space)
                };
                self.current
            }
        }
    }
}

impl Iterator for WorkloadIter {
    type Item = LogicalAccess;

    fn next(&mut self) -> Option<LogicalAccess> {
        if let TraceLength::Finite(n) = self.spec.length {
            if self.index >= n as u64 {
                return None;
            }
        }
        let addr = self.next_addr();
        self.index += 1;
        let wf = self.spec.write_fraction;
        let access = if wf > 0.0 && self.op_rng.random_bool(wf) {
            LogicalAccess::write(addr, Payload::from_u64(self.op_rng.random()))
        } else {
            LogicalAccess::read(addr)
        };
        Some(access)
    }
}
