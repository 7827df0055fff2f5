//! Bucket tree plus stash: the storage half of a Path ORAM, independent of
//! where the position map lives.


use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::trace::Payload;

pub type Leaf = u64;

/// Contents of a real block. Dummy blocks are never materialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockContent {
    Data(Payload),
    /// Leaf labels held by a position-map block.
    Labels(Box<[Leaf]>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredBlock {
    pub addr: u64,
    pub leaf: Leaf,
    pub content: BlockContent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StashEntry {
    pub block: StoredBlock,
    /// Sequence number of the path read (or insertion) that brought the block in.
    pub inserted: u64,
}

/// Mutable access to stash contents during a path access.
pub struct StashView<'a> {
    entries: &'a mut [StashEntry],
}

impl StashView<'_> {
    /// Content of a block known to be in the stash.
    pub fn content_mut(&mut self, addr: u64) -> &mut BlockContent {
        &mut self
            .entries
            .iter_mut()
            .find(|e| e.block.addr == addr)
            .expect("block present in stash")
            .block
            .content
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvictionMode {
    None,
    /// Issue background evictions while stash occupancy is at or above the threshold.
    Background { threshold: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub real_accesses: u64,
    pub dummy_accesses: u64,
    /// Largest stash occupancy observed after a write-back.
    pub stash_peak: usize,
    pub overflow_events: u64,
}

/// Consecutive evictions tolerated without dropping below the threshold.
pub const LIVELOCK_LIMIT: usize = 1000;

#[derive(Debug, Clone)]
pub struct PathTree {
    levels: u32,
    bucket_size: usize,
    stash_capacity: Option<usize>,
    eviction: EvictionMode,
    buckets: Vec<Vec<StoredBlock>>,
    stash: Vec<StashEntry>,
    seq: u64,
    pub(crate) counters: Counters,
}

impl PathTree {
    pub fn new(
        levels: u32,
        bucket_size: usize,
        stash_capacity: Option<usize>,
        eviction: EvictionMode,
    ) -> Result<Self> {
        if levels > 40 {
            return Err(Error::Config(format!("tree depth {levels} too large")));
        }
        if bucket_size == 0 {
            return Err(Error::Config("bucket size Z must be positive".into()));
        }
        if stash_capacity == Some(0) {
            return Err(Error::Config("stash capacity must be positive".into()));
        }
        if let EvictionMode::Background { threshold } = eviction {
            if threshold == 0 {
                return Err(Error::Config("eviction threshold must be positive".into()));
            }
            if let Some(cap) = stash_capacity {
                if threshold > cap {
                    return Err(Error::Config(format!(
                        "eviction threshold {threshold} exceeds stash capacity {cap}"
                    )));
                }
            }
        }
        let n_buckets = (1usize << (levels + 1)) - 1;
        Ok(PathTree {
            levels,
            bucket_size,
            stash_capacity,
            eviction,
            buckets: vec![Vec::new(); n_buckets],
            stash: Vec::new(),
            seq: 0,
            counters: Counters::default(),
        })
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn bucket_size(&self) -> usize {
        self.bucket_size
    }

    pub fn n_leaves(&self) -> u64 {
        1 << self.levels
    }

    pub fn n_buckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn eviction(&self) -> EvictionMode {
        self.eviction
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn stash_occupancy(&self) -> usize {
        self.stash.len()
    }

    pub fn stash(&self) -> &[StashEntry] {
        &self.stash
    }

    pub fn bucket(&self, node: usize) -> &[StoredBlock] {
        &self.buckets[node]
    }

    pub fn random_leaf(&self, rng: &mut SimRng) -> Leaf {
        rng.random_range(0..self.n_leaves())
    }

    /// Heap index of the bucket at `level` on path `leaf`.
    pub fn node(&self, level: u32, leaf: Leaf) -> usize {
        (1usize << level) - 1 + (leaf >> (self.levels - level)) as usize
    }

    /// Level of the node at heap index `node`.
    pub fn node_level(node: usize) -> u32 {
        (usize::BITS - 1) - (node + 1).leading_zeros()
    }

    /// Whether bucket `node` lies on path `leaf`.
    pub fn on_path(&self, node: usize, leaf: Leaf) -> bool {
        let level = Self::node_level(node);
        self.node(level, leaf) == node
    }

    /// Deepest level shared by paths `a` and `b`.
    fn common_depth(&self, a: Leaf, b: Leaf) -> u32 {
        let diff = a ^ b;
        if diff == 0 {
            self.levels
        } else {
            self.levels - (u64::BITS - diff.leading_zeros())
        }
    }

    /// Move every real block on path `leaf` into the stash, root first.
    pub fn read_path(&mut self, leaf: Leaf) {
        let seq = self.seq;
        self.seq += 1;
        for level in 0..=self.levels {
            let node = self.node(level, leaf);
            let blocks = std::mem::take(&mut self.buckets[node]);
            self.stash.extend(blocks.into_iter().map(|block| StashEntry {
                block,
                inserted: seq,
            }));
        }
    }

    /// Greedy write-back to path `leaf`: buckets from the leaf up to the
    /// root, each filled with the earliest-inserted stash blocks that may
    /// legally reside there, up to Z.
    pub fn write_back(&mut self, leaf: Leaf) {
        let levels = self.levels as usize;
        // Stash indices by deepest legal level; each list is in insertion
        // order, so the earliest eligible block is the smallest list head
        // among depths >= the bucket's level.
        let mut by_depth: Vec<Vec<usize>> = vec![Vec::new(); levels + 1];
        for (i, entry) in self.stash.iter().enumerate() {
            by_depth[self.common_depth(entry.block.leaf, leaf) as usize].push(i);
        }
        let mut heads = vec![0usize; levels + 1];
        let mut taken = vec![false; self.stash.len()];
        let mut any = false;
        for level in (0..=levels).rev() {
            let node = self.node(level as u32, leaf);
            while self.buckets[node].len() < self.bucket_size {
                let pick = (level..=levels)
                    .filter_map(|d| by_depth[d].get(heads[d]).map(|&i| (i, d)))
                    .min();
                let Some((i, d)) = pick else {
                    break;
                };
                heads[d] += 1;
                taken[i] = true;
                any = true;
                self.buckets[node].push(self.stash[i].block.clone());
            }
        }
        if any {
            let mut idx = 0;
            self.stash.retain(|_| {
                idx += 1;
                !taken[idx - 1]
            });
        }
    }

    fn stash_position(&self, addr: u64) -> Option<usize> {
        self.stash.iter().position(|e| e.block.addr == addr)
    }

    pub fn stash_get_mut(&mut self, addr: u64) -> Option<&mut StoredBlock> {
        self.stash
            .iter_mut()
            .find(|e| e.block.addr == addr)
            .map(|e| &mut e.block)
    }

    /// Remove `addr` from the stash, if present.
    pub fn stash_take(&mut self, addr: u64) -> Option<StoredBlock> {
        self.stash_position(addr).map(|i| self.stash.remove(i).block)
    }

    /// Append a block to the stash as the most recently inserted entry.
    pub fn stash_insert(&mut self, block: StoredBlock) {
        let inserted = self.seq;
        self.seq += 1;
        self.stash.push(StashEntry { block, inserted });
    }

    /// Record the quiescent occupancy and fail on overflow.
    pub fn settle(&mut self) -> Result<()> {
        let occupancy = self.stash.len();
        self.counters.stash_peak = self.counters.stash_peak.max(occupancy);
        match self.stash_capacity {
            Some(capacity) if occupancy > capacity => {
                self.counters.overflow_events += 1;
                Err(Error::StashOverflow {
                    occupancy,
                    capacity,
                })
            }
            _ => Ok(()),
        }
    }

    /// Path access for the blocks in `group`, all of which end up mapped to
    /// `new_leaf`. Blocks never seen before are created with `init(addr)`.
    /// `update` runs between the path read and the write-back and can reach
    /// every group member through the [`StashView`].
    pub fn access_group<R>(
        &mut self,
        leaf: Leaf,
        group: &[u64],
        new_leaf: Leaf,
        init: impl Fn(u64) -> BlockContent,
        update: impl FnOnce(&mut StashView<'_>) -> R,
    ) -> Result<R> {
        self.counters.real_accesses += 1;
        self.read_path(leaf);
        for &addr in group {
            match self.stash_get_mut(addr) {
                Some(block) => block.leaf = new_leaf,
                None => self.stash_insert(StoredBlock {
                    addr,
                    leaf: new_leaf,
                    content: init(addr),
                }),
            }
        }
        let out = update(&mut StashView {
            entries: &mut self.stash,
        });
        self.write_back(leaf);
        self.settle()?;
        Ok(out)
    }

    /// Path access that removes `addr` from the ORAM and hands its content
    /// out (used when a position-map block moves into the lookaside buffer).
    pub fn take_block(
        &mut self,
        leaf: Leaf,
        addr: u64,
        init: impl FnOnce(u64) -> BlockContent,
    ) -> Result<BlockContent> {
        self.counters.real_accesses += 1;
        self.read_path(leaf);
        let content = match self.stash_take(addr) {
            Some(block) => block.content,
            None => init(addr),
        };
        self.write_back(leaf);
        self.settle()?;
        Ok(content)
    }

    /// Read and write back a uniformly random path without remapping.
    pub fn background_evict(&mut self, rng: &mut SimRng) -> Leaf {
        let leaf = self.random_leaf(rng);
        self.counters.dummy_accesses += 1;
        self.read_path(leaf);
        self.write_back(leaf);
        // Occupancy cannot grow here, so this never reports an overflow
        // that was not already present.
        let _ = self.settle();
        leaf
    }

    /// Background evictions until occupancy drops below the threshold.
    /// Each evicted path is passed to `emit`.
    pub fn maybe_evict(&mut self, rng: &mut SimRng, mut emit: impl FnMut(Leaf)) -> Result<()> {
        let EvictionMode::Background { threshold } = self.eviction else {
            return Ok(());
        };
        let mut attempts = 0;
        while self.stash.len() >= threshold {
            if attempts == LIVELOCK_LIMIT {
                return Err(Error::EvictionLivelock {
                    occupancy: self.stash.len(),
                    threshold,
                    attempts,
                });
            }
            emit(self.background_evict(rng));
            attempts += 1;
        }
        Ok(())
    }

    /// Every resident block, with the bucket that holds it (`None` = stash).
    pub fn resident_blocks(&self) -> impl Iterator<Item = (Option<usize>, &StoredBlock)> {
        let in_tree = self
            .buckets
            .iter()
            .enumerate()
            .flat_map(|(node, b)| b.iter().map(move |blk| (Some(node), blk)));
        in_tree.chain(self.stash.iter().map(|e| (None, &e.block)))
    }

    /// Structural check: bucket capacities and every tree block on its own path.
    pub fn check_structure(&self) -> bool {
        self.buckets.iter().all(|b| b.len() <= self.bucket_size)
            && self
                .resident_blocks()
                .all(|(node, blk)| node.is_none_or(|n| self.on_path(n, blk.leaf)))
    }

    #[cfg(test)]
    pub(crate) fn buckets_mut(&mut self) -> &mut Vec<Vec<StoredBlock>> {
        &mut self.buckets
    }
}
