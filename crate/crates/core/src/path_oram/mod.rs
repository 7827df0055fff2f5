//! Non-recursive Path ORAM: bucket tree, stash and an on-chip position map.
//!
//! An access looks up the block's leaf `s`, reads every bucket on path `s`
//! into the stash, serves the block, remaps it to a fresh uniform leaf and
//! greedily writes stash blocks back to path `s` (see
//! [`PathTree::write_back`]). Every block whose position-map leaf is `s`
//! stays on path `s` or in the stash; [`PathOram::check_invariant`] verifies
//! this by full scan.
//!
//! Candidates for write-back are the whole stash, not only the blocks just
//! read.
//!
//! Blocks are created lazily: the first access to an address (read or
//! write) materializes a zero block, so a read of never-written memory
//! returns [`Payload::ZERO`].

mod tree;

pub use tree::{
    BlockContent, Counters, EvictionMode, Leaf, PathTree, StashEntry, StashView, StoredBlock,
    LIVELOCK_LIMIT,
};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::oram::Oram;
use crate::rng::{self, SimRng};
use crate::trace::{AccessKind, LogicalAccess, ObservedAccess, ObservedTrace, Op, Payload};

#[derive(Debug, Clone, PartialEq)]
pub struct OramConfig {
    /// Depth `L`: the root is level 0 and leaves are level `L`.
    pub levels: u32,
    /// Blocks per bucket, `Z`.
    pub bucket_size: usize,
    /// `None` means unbounded.
    pub stash_capacity: Option<usize>,
    pub eviction: EvictionMode,
    /// Number of addressable blocks.
    pub addr_space: u64,
    pub seed: u64,
}

impl OramConfig {
    /// Unbounded stash, no background eviction.
    pub fn new(levels: u32, bucket_size: usize, addr_space: u64, seed: u64) -> Self {
        OramConfig {
            levels,
            bucket_size,
            stash_capacity: None,
            eviction: EvictionMode::None,
            addr_space,
            seed,
        }
    }

    pub fn with_stash_capacity(mut self, capacity: usize) -> Self {
        self.stash_capacity = Some(capacity);
        self
    }

    /// Background eviction at the default threshold `capacity - Z(L+1)`,
    /// which leaves room for one full path of in-flight blocks.
    pub fn with_background_eviction(mut self) -> Result<Self> {
        let capacity = self.stash_capacity.ok_or_else(|| {
            Error::Config("default eviction threshold needs a finite stash capacity".into())
        })?;
        self.eviction = EvictionMode::Background {
            threshold: default_threshold(capacity, self.bucket_size, self.levels)?,
        };
        Ok(self)
    }

    pub fn with_eviction_threshold(mut self, threshold: usize) -> Self {
        self.eviction = EvictionMode::Background { threshold };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.addr_space == 0 {
            return Err(Error::Config("address space must be positive".into()));
        }
        PathTree::new(0, self.bucket_size, self.stash_capacity, self.eviction).map(|_| ())
    }
}

pub fn default_threshold(capacity: usize, bucket_size: usize, levels: u32) -> Result<usize> {
    let path = bucket_size * (levels as usize + 1);
    if capacity <= path {
        return Err(Error::Config(format!(
            "stash capacity {capacity} leaves no room above one path of {path} blocks"
        )));
    }
    Ok(capacity - path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialMapping {
    RandomLeaves,
}

#[derive(Debug, Clone)]
pub struct PathOram {
    config: OramConfig,
    tree: PathTree,
    posmap: Vec<Leaf>,
    touched: Vec<bool>,
    rng: SimRng,
    tick: u64,
}

impl PathOram {
    pub fn new(config: OramConfig) -> Result<Self> {
        Self::init(config, InitialMapping::RandomLeaves)
    }

    /// Empty tree and stash; the position map gets i.i.d. uniform leaves
    /// drawn first from the instance's seeded stream.
    pub fn init(config: OramConfig, _mapping: InitialMapping) -> Result<Self> {
        config.validate()?;
        let tree = PathTree::new(
            config.levels,
            config.bucket_size,
            config.stash_capacity,
            config.eviction,
        )?;
        let mut rng = rng::stream(config.seed);
        let posmap = (0..config.addr_space)
            .map(|_| tree.random_leaf(&mut rng))
            .collect();
        Ok(PathOram {
            touched: vec![false; config.addr_space as usize],
            config,
            tree,
            posmap,
            rng,
            tick: 0,
        })
    }

    pub fn config(&self) -> &OramConfig {
        &self.config
    }

    pub fn tree(&self) -> &PathTree {
        &self.tree
    }

    pub fn counters(&self) -> Counters {
        self.tree.counters()
    }

    pub fn position_map(&self) -> &[Leaf] {
        &self.posmap
    }

    pub fn stash_occupancy(&self) -> usize {
        self.tree.stash_occupancy()
    }

    fn emit(&mut self, out: &mut ObservedTrace, leaf: Leaf, kind: AccessKind) {
        out.push(ObservedAccess {
            tick: self.tick,
            tree: 0,
            leaf,
            hidden_kind: kind,
        });
        self.tick += 1;
    }

    /// One Path ORAM access. Emits exactly one observed access (the old
    /// leaf), also when the access ends in a stash overflow.
    pub fn access(
        &mut self,
        op: Op,
        addr: u64,
        data: Option<Payload>,
    ) -> Result<(Payload, ObservedTrace)> {
        let mut out = Vec::with_capacity(1);
        let payload = self.access_into(op, addr, data, &mut out)?;
        Ok((payload, out))
    }

    pub fn access_into(
        &mut self,
        op: Op,
        addr: u64,
        data: Option<Payload>,
        out: &mut ObservedTrace,
    ) -> Result<Payload> {
        if addr >= self.config.addr_space {
            return Err(Error::AddressOutOfRange {
                addr,
                space: self.config.addr_space,
            });
        }
        let leaf = self.posmap[addr as usize];
        let new_leaf = self.tree.random_leaf(&mut self.rng);
        self.posmap[addr as usize] = new_leaf;
        self.touched[addr as usize] = true;
        self.emit(out, leaf, AccessKind::Real);
        self.tree.access_group(
            leaf,
            &[addr],
            new_leaf,
            |_| BlockContent::Data(Payload::ZERO),
            |stash| {
                let BlockContent::Data(stored) = stash.content_mut(addr) else {
                    unreachable!("data tree holds only data blocks")
                };
                let old = *stored;
                if op == Op::Write {
                    *stored = data.unwrap_or(Payload::ZERO);
                }
                old
            },
        )
    }

    /// Dummy access to a uniformly random path; no block is remapped.
    pub fn background_evict(&mut self) -> ObservedTrace {
        let mut out = Vec::with_capacity(1);
        let leaf = self.tree.background_evict(&mut self.rng);
        self.emit(&mut out, leaf, AccessKind::Dummy);
        out
    }

    /// Background evictions while occupancy is at or above the threshold.
    pub fn maybe_evict(&mut self) -> Result<ObservedTrace> {
        let mut out = Vec::new();
        self.maybe_evict_into(&mut out)?;
        Ok(out)
    }

    fn maybe_evict_into(&mut self, out: &mut ObservedTrace) -> Result<()> {
        let mut leaves = Vec::new();
        let res = self.tree.maybe_evict(&mut self.rng, |leaf| leaves.push(leaf));
        for leaf in leaves {
            self.emit(out, leaf, AccessKind::Dummy);
        }
        res
    }

    /// Full scan: every touched block is on its mapped path or in the stash,
    /// exactly once, and no bucket holds more than Z blocks.
    pub fn check_invariant(&self) -> bool {
        if !self.tree.check_structure() {
            return false;
        }
        let mut seen = vec![false; self.config.addr_space as usize];
        let mut count = 0usize;
        for (_, block) in self.tree.resident_blocks() {
            let a = block.addr as usize;
            if a >= seen.len() || seen[a] || !self.touched[a] || self.posmap[a] != block.leaf {
                return false;
            }
            seen[a] = true;
            count += 1;
        }
        count == self.touched.iter().filter(|&&t| t).count()
    }

    /// Human-readable dump of the position map, stash and bucket occupancy.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let c = self.counters();
        let _ = writeln!(
            s,
            "# counters real={} dummy={} stash_peak={} overflow_events={}",
            c.real_accesses, c.dummy_accesses, c.stash_peak, c.overflow_events
        );
        let _ = writeln!(s, "# posmap addr leaf");
        for (addr, leaf) in self.posmap.iter().enumerate() {
            let _ = writeln!(s, "{addr} {leaf}");
        }
        let _ = writeln!(s, "# stash addr leaf inserted");
        for e in self.tree.stash() {
            let _ = writeln!(s, "{} {} {}", e.block.addr, e.block.leaf, e.inserted);
        }
        let _ = writeln!(s, "# buckets node level occupancy");
        for node in 0..self.tree.n_buckets() {
            let _ = writeln!(
                s,
                "{node} {} {}",
                PathTree::node_level(node),
                self.tree.bucket(node).len()
            );
        }
        s
    }

    #[cfg(test)]
    pub(crate) fn tree_mut(&mut self) -> &mut PathTree {
        &mut self.tree
    }
}

impl Oram for PathOram {
    fn serve(&mut self, req: &LogicalAccess, out: &mut ObservedTrace) -> Result<Payload> {
        if req.op == Op::Halt {
            return Ok(Payload::ZERO);
        }
        self.maybe_evict_into(out)?;
        self.access_into(req.op, req.addr, Some(req.data), out)
    }

    fn idle(&mut self, out: &mut ObservedTrace) -> Result<()> {
        let leaf = self.tree.background_evict(&mut self.rng);
        self.emit(out, leaf, AccessKind::Dummy);
        Ok(())
    }

    fn stash_occupancy(&self) -> usize {
        self.tree.stash_occupancy()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oram(levels: u32, z: usize, space: u64, seed: u64) -> PathOram {
        PathOram::new(OramConfig::new(levels, z, space, seed)).unwrap()
    }

    #[test]
    fn init_geometry_and_determinism() {
        let o = oram(0, 1, 4, 1);
        assert_eq!(o.tree().n_buckets(), 1);
        assert_eq!(o.tree().n_leaves(), 1);
        let o = oram(3, 4, 16, 1);
        assert_eq!(o.tree().n_buckets(), 15);
        assert_eq!(o.tree().n_leaves(), 8);
        assert_eq!(o.position_map(), oram(3, 4, 16, 1).position_map());
        assert_ne!(o.position_map(), oram(3, 4, 16, 2).position_map());
        assert_eq!(o.counters(), Counters::default());
        assert!(o.check_invariant());
    }

    #[test]
    fn access_touches_the_mapped_path() {
        let mut o = oram(3, 4, 16, 11);
        o.posmap[3] = 5;
        let (_, emitted) = o.access(Op::Read, 3, None).unwrap();
        assert_eq!(emitted.len(), 1);
        assert_eq!(emitted[0].leaf, 5);
        assert_eq!(emitted[0].hidden_kind, AccessKind::Real);
        // the block ended on its new path or in the stash
        assert!(o.check_invariant());
    }

    #[test]
    fn reads_return_last_write() {
        let mut o = oram(4, 4, 32, 3);
        let (p, _) = o.access(Op::Read, 7, None).unwrap();
        assert_eq!(p, Payload::ZERO);
        o.access(Op::Write, 7, Some(Payload::from_u64(99))).unwrap();
        for a in 0..32 {
            o.access(Op::Read, a, None).unwrap();
        }
        let (p, _) = o.access(Op::Read, 7, None).unwrap();
        assert_eq!(p, Payload::from_u64(99));
        // write returns the previous content
        let (p, _) = o.access(Op::Write, 7, Some(Payload::from_u64(5))).unwrap();
        assert_eq!(p, Payload::from_u64(99));
    }

    #[test]
    fn out_of_range_address() {
        let mut o = oram(2, 2, 4, 0);
        assert!(matches!(
            o.access(Op::Read, 4, None),
            Err(Error::AddressOutOfRange { addr: 4, space: 4 })
        ));
    }

    #[test]
    fn corrupted_state_fails_invariant() {
        let mut o = oram(3, 4, 16, 5);
        for a in 0..16 {
            o.access(Op::Write, a, Some(Payload::from_u64(a))).unwrap();
        }
        assert!(o.check_invariant());
        // move one tree block to a bucket off its path
        let (node, addr, leaf) = o
            .tree()
            .resident_blocks()
            .find_map(|(n, b)| n.map(|n| (n, b.addr, b.leaf)))
            .expect("some block in the tree");
        let leaf_node = o.tree().node(3, leaf ^ 0b100);
        let buckets = o.tree_mut().buckets_mut();
        let pos = buckets[node].iter().position(|b| b.addr == addr).unwrap();
        let blk = buckets[node].remove(pos);
        buckets[leaf_node].insert(0, blk);
        assert!(!o.check_invariant());
    }

    #[test]
    fn remap_mismatch_fails_invariant() {
        let mut o = oram(3, 4, 16, 5);
        o.access(Op::Write, 2, Some(Payload::from_u64(1))).unwrap();
        o.posmap[2] ^= 1;
        assert!(!o.check_invariant());
    }

    #[test]
    fn maybe_evict_is_noop_without_background_mode() {
        let mut o = oram(3, 1, 64, 2);
        for a in 0..64 {
            o.access(Op::Read, a, None).unwrap();
        }
        assert!(o.stash_occupancy() > 0);
        assert!(o.maybe_evict().unwrap().is_empty());
    }

    #[test]
    fn maybe_evict_below_threshold_emits_nothing() {
        let cfg = OramConfig::new(4, 4, 16, 2)
            .with_stash_capacity(40)
            .with_background_eviction()
            .unwrap();
        assert_eq!(cfg.eviction, EvictionMode::Background { threshold: 20 });
        let mut o = PathOram::new(cfg).unwrap();
        assert!(o.maybe_evict().unwrap().is_empty());
    }

    #[test]
    fn overflow_surfaces_as_error_after_emitting() {
        let cfg = OramConfig::new(0, 1, 8, 0).with_stash_capacity(2);
        let mut o = PathOram::new(cfg).unwrap();
        let mut out = Vec::new();
        let mut failed = false;
        for a in 0..8 {
            if o.serve(&LogicalAccess::read(a), &mut out).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed);
        assert_eq!(o.counters().overflow_events, 1);
        assert_eq!(out.len() as u64, o.counters().real_accesses);
        assert!(o.check_invariant());
    }

    #[test]
    fn snapshot_lists_sections() {
        let mut o = oram(2, 2, 4, 0);
        o.access(Op::Write, 1, Some(Payload::from_u64(1))).unwrap();
        let s = o.snapshot();
        for header in ["# counters", "# posmap", "# stash", "# buckets"] {
            assert!(s.contains(header));
        }
        assert_eq!(s.lines().filter(|l| !l.starts_with('#')).count(), 4 + o.stash_occupancy() + 7);
    }

    proptest::proptest! {
        #[test]
        fn reads_see_writes_and_invariant_holds(
            ops in proptest::collection::vec((proptest::prelude::any::<bool>(), 0u64..32, 1u64..1000), 1..150),
            seed in proptest::prelude::any::<u64>(),
            evict in proptest::prelude::any::<bool>(),
        ) {
            let mut cfg = OramConfig::new(4, 2, 32, seed).with_stash_capacity(40);
            if evict {
                cfg = cfg.with_background_eviction().unwrap();
            }
            let mut o = PathOram::new(cfg).unwrap();
            let mut shadow = [Payload::ZERO; 32];
            let mut out = Vec::new();
            for (write, addr, v) in ops {
                let req = if write {
                    LogicalAccess::write(addr, Payload::from_u64(v))
                } else {
                    LogicalAccess::read(addr)
                };
                let got = o.serve(&req, &mut out).unwrap();
                if write {
                    shadow[addr as usize] = req.data;
                } else {
                    proptest::prop_assert_eq!(got, shadow[addr as usize]);
                }
                proptest::prop_assert!(o.check_invariant());
                proptest::prop_assert!(out.iter().all(|a| a.leaf < 16));
            }
        }
    }
}
