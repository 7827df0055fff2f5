use super::{LogicalAccess, Op};
use crate::error::{Error, Result};

/// Geometry of the optional last-level cache in front of the ORAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LlcConfig {
    pub capacity_blocks: usize,
    pub associativity: usize,
    pub enabled: bool,
}

impl LlcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity_blocks == 0 || self.associativity == 0 {
            return Err(Error::Config("LLC capacity and associativity must be positive".into()));
        }
        if !self.capacity_blocks.is_multiple_of(self.associativity) {
            return Err(Error::Config(format!(
                "LLC capacity {} not divisible by associativity {}",
                self.capacity_blocks, self.associativity
            )));
        }
        Ok(())
    }

    pub fn sets(&self) -> usize {
        self.capacity_blocks / self.associativity
    }
}

/// Set-associative LRU cache that only tracks presence. Writes allocate.
pub struct LlcFilter {
    sets: Vec<Vec<u64>>,
    ways: usize,
}

impl LlcFilter {
    pub fn new(cfg: &LlcConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LlcFilter {
            sets: vec![Vec::with_capacity(cfg.associativity); cfg.sets()],
            ways: cfg.associativity,
        })
    }

    /// Touch `addr`; returns true on a hit. Each set is kept MRU-last.
    pub fn touch(&mut self, addr: u64) -> bool {
        let n_sets = self.sets.len() as u64;
        let set = &mut self.sets[(addr % n_sets) as usize];
        if let Some(pos) = set.iter().position(|&a| a == addr) {
            let a = set.remove(pos);
            set.push(a);
            true
        } else {
            if set.len() == self.ways {
                set.remove(0);
            }
            set.push(addr);
            false
        }
    }
}

/// The miss stream of `trace` through an LLC of the given geometry.
///
/// A disabled cache passes the trace through unchanged. `Halt` is not a
/// memory access and is always forwarded.
pub fn llc_filter(trace: &[LogicalAccess], cfg: &LlcConfig) -> Result<Vec<LogicalAccess>> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(trace.to_vec());
    }
    let mut cache = LlcFilter::new(cfg)?;
    Ok(trace
        .iter()
        .filter(|a| a.op == Op::Halt || !cache.touch(a.addr))
        .copied()
        .collect())
}
