//! Recursive Path ORAM with optional unified tree, position-map lookaside
//! buffer (PLB) and static super blocks.
//!
//! Level 0 holds data blocks; a level-`j` position-map block (`j >= 1`)
//! holds the leaf labels of `k` consecutive level-`j-1` blocks. The labels
//! of the top level live on chip. An access walks from the top down: each
//! level's block is read with a path access, the child's label is replaced
//! with a fresh leaf, and the walk continues with the child's old label.
//!
//! With a PLB, position-map blocks loaded by a walk leave the ORAM and stay
//! in the buffer; the walk starts below the lowest level that hits. A block
//! evicted from the PLB goes back into its tree's stash under the label its
//! parent already holds. In unified mode every level shares the data tree
//! (disjoint address ranges), so a PLB hit or miss only changes how many
//! identical-looking paths are read.
//!
//! Super blocks are aligned groups of `superblock_size` data blocks mapped
//! to one leaf. Reading one fetches the whole group into a small LRU
//! prefetch buffer; later reads that hit the buffer cause no ORAM access.
//! Writes always go to the ORAM and refresh the buffered copy.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::oram::Oram;
use crate::path_oram::{
    default_threshold, BlockContent, EvictionMode, Leaf, OramConfig, PathTree, StoredBlock,
};
use crate::rng::{self, SimRng};
use crate::trace::{AccessKind, LogicalAccess, ObservedAccess, ObservedTrace, Op, Payload};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecursionConfig {
    /// Number of position-map ORAM levels (0 = non-recursive).
    pub depth: u32,
    /// Leaf labels per position-map block; a power of two.
    pub entries_per_block: u64,
    /// Position-map blocks cached on chip; 0 disables the PLB.
    pub plb_capacity: usize,
    /// Position-map blocks share the data tree.
    pub unified: bool,
    /// Data blocks per super block; 1 disables prefetching.
    pub superblock_size: u64,
    /// Depth of each position-map tree when not unified (`[L_1, .., L_depth]`).
    /// Defaults to `ceil(log2(blocks at that level))`.
    pub posmap_levels: Option<Vec<u32>>,
}

impl RecursionConfig {
    pub fn none() -> Self {
        RecursionConfig {
            depth: 0,
            entries_per_block: 2,
            plb_capacity: 0,
            unified: false,
            superblock_size: 1,
            posmap_levels: None,
        }
    }

    pub fn classic(depth: u32, entries_per_block: u64) -> Self {
        RecursionConfig {
            depth,
            entries_per_block,
            ..Self::none()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecursiveConfig {
    /// Geometry and policy of the data tree (and of the unified tree).
    /// Position-map trees share `Z`, stash capacity and eviction threshold.
    pub base: OramConfig,
    pub recursion: RecursionConfig,
}

/// One cached position-map block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlbEntry {
    pub level: u32,
    pub index: u64,
    pub labels: Box<[Leaf]>,
    /// Leaf the block will occupy when it returns to the ORAM.
    pub leaf: Leaf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlbLookup<'a> {
    Hit(&'a [Leaf]),
    Miss,
}

/// Fully associative LRU cache of position-map blocks.
#[derive(Debug, Clone, Default)]
pub struct Plb {
    capacity: usize,
    /// Most recently used last.
    entries: Vec<PlbEntry>,
}

impl Plb {
    pub fn new(capacity: usize) -> Self {
        Plb {
            capacity,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PlbEntry] {
        &self.entries
    }

    pub fn contains(&self, level: u32, index: u64) -> bool {
        self.entries
            .iter()
            .any(|e| e.level == level && e.index == index)
    }

    /// Look up and promote to most recently used.
    pub fn get_mut(&mut self, level: u32, index: u64) -> Option<&mut PlbEntry> {
        let pos = self
            .entries
            .iter()
            .position(|e| e.level == level && e.index == index)?;
        let entry = self.entries.remove(pos);
        self.entries.push(entry);
        self.entries.last_mut()
    }

    /// Insert as most recently used, returning the LRU victim if full.
    pub fn insert(&mut self, entry: PlbEntry) -> Option<PlbEntry> {
        if self.capacity == 0 {
            return Some(entry);
        }
        let victim = if self.entries.len() == self.capacity {
            Some(self.entries.remove(0))
        } else {
            None
        };
        self.entries.push(entry);
        victim
    }
}

/// LRU lookup: a hit promotes the entry.
pub fn plb_lookup(plb: &mut Plb, level: u32, index: u64) -> PlbLookup<'_> {
    match plb.get_mut(level, index) {
        Some(e) => PlbLookup::Hit(&e.labels),
        None => PlbLookup::Miss,
    }
}

/// Small LRU buffer of prefetched data blocks.
#[derive(Debug, Clone, Default)]
struct PrefetchBuffer {
    capacity: usize,
    entries: Vec<(u64, Payload)>,
}

impl PrefetchBuffer {
    fn get(&mut self, addr: u64) -> Option<Payload> {
        let pos = self.entries.iter().position(|(a, _)| *a == addr)?;
        let e = self.entries.remove(pos);
        self.entries.push(e);
        Some(e.1)
    }

    fn put(&mut self, addr: u64, payload: Payload) {
        if self.capacity == 0 {
            return;
        }
        if let Some(pos) = self.entries.iter().position(|(a, _)| *a == addr) {
            self.entries.remove(pos);
        } else if self.entries.len() == self.capacity {
            self.entries.remove(0);
        }
        self.entries.push((addr, payload));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecursiveCounters {
    /// Real path accesses per recursion level (index 0 = data).
    pub level_accesses: Vec<u64>,
    pub plb_lookups: u64,
    pub plb_hits: u64,
    /// Position-map path accesses avoided by PLB hits.
    pub posmap_accesses_saved: u64,
    pub prefetch_lookups: u64,
    pub prefetch_hits: u64,
}

#[derive(Debug, Clone)]
pub struct RecursiveOram {
    config: RecursiveConfig,
    /// Blocks per level, index 0 = data.
    level_blocks: Vec<u64>,
    trees: Vec<PathTree>,
    /// Unified-tree address offset of each level.
    offsets: Vec<u64>,
    /// `initial[j]`: labels of level-`j` blocks before their parent block is
    /// first written (the content of never-touched position-map blocks).
    initial: Vec<Vec<Leaf>>,
    onchip: Vec<Leaf>,
    plb: Plb,
    prefetch: PrefetchBuffer,
    rng: SimRng,
    tick: u64,
    counters: RecursiveCounters,
}

impl RecursiveOram {
    pub fn new(config: RecursiveConfig) -> Result<Self> {
        let base = &config.base;
        let rc = &config.recursion;
        base.validate()?;
        let k = rc.entries_per_block;
        let depth = rc.depth as usize;
        if depth >= 1 && (k < 2 || !k.is_power_of_two()) {
            return Err(Error::Config(format!(
                "entries per position-map block must be a power of two >= 2, got {k}"
            )));
        }
        let s = rc.superblock_size;
        if s == 0 || !s.is_power_of_two() || s > base.addr_space {
            return Err(Error::Config(format!("invalid super block size {s}")));
        }
        if depth >= 1 && s > k {
            return Err(Error::Config(format!(
                "super block size {s} exceeds position-map block fan-out {k}"
            )));
        }
        if rc.plb_capacity > 0 && depth == 0 {
            return Err(Error::Config("a PLB needs at least one recursion level".into()));
        }

        let mut level_blocks = vec![base.addr_space];
        for j in 1..=depth {
            level_blocks.push(level_blocks[j - 1].div_ceil(k));
        }
        let mut offsets = vec![0u64];
        for j in 1..=depth {
            offsets.push(offsets[j - 1] + level_blocks[j - 1]);
        }

        let tree_for = |levels: u32| PathTree::new(levels, base.bucket_size, base.stash_capacity, base.eviction);
        let trees = if rc.unified || depth == 0 {
            vec![tree_for(base.levels)?]
        } else {
            let posmap_levels: Vec<u32> = match &rc.posmap_levels {
                Some(v) if v.len() == depth => v.clone(),
                Some(v) => {
                    return Err(Error::Config(format!(
                        "expected {depth} position-map tree depths, got {}",
                        v.len()
                    )))
                }
                None => level_blocks[1..]
                    .iter()
                    .map(|&n| n.next_power_of_two().trailing_zeros())
                    .collect(),
            };
            let mut trees = vec![tree_for(base.levels)?];
            for &l in &posmap_levels {
                if let (EvictionMode::Background { threshold }, Some(cap)) =
                    (base.eviction, base.stash_capacity)
                {
                    // the shared threshold must leave one path of room in every tree
                    if threshold > default_threshold(cap, base.bucket_size, l)? {
                        return Err(Error::Config(format!(
                            "eviction threshold {threshold} leaves less than one path of room in a depth-{l} tree"
                        )));
                    }
                }
                trees.push(tree_for(l)?);
            }
            trees
        };

        let mut rng = rng::stream(base.seed);
        let mut initial = Vec::with_capacity(depth + 1);
        for j in 0..=depth {
            let tree = &trees[if rc.unified { 0 } else { j.min(trees.len() - 1) }];
            let n = level_blocks[j];
            let labels: Vec<Leaf> = if j == 0 && s > 1 {
                let groups: Vec<Leaf> = (0..n.div_ceil(s)).map(|_| tree.random_leaf(&mut rng)).collect();
                (0..n).map(|a| groups[(a / s) as usize]).collect()
            } else {
                (0..n).map(|_| tree.random_leaf(&mut rng)).collect()
            };
            initial.push(labels);
        }
        let onchip = initial.pop().expect("at least the data level");

        Ok(RecursiveOram {
            plb: Plb::new(rc.plb_capacity),
            prefetch: PrefetchBuffer {
                capacity: if s > 1 { 4 * s as usize } else { 0 },
                entries: Vec::new(),
            },
            counters: RecursiveCounters {
                level_accesses: vec![0; depth + 1],
                ..Default::default()
            },
            config,
            level_blocks,
            trees,
            offsets,
            initial,
            onchip,
            rng,
            tick: 0,
        })
    }

    pub fn config(&self) -> &RecursiveConfig {
        &self.config
    }

    pub fn counters(&self) -> &RecursiveCounters {
        &self.counters
    }

    pub fn trees(&self) -> &[PathTree] {
        &self.trees
    }

    pub fn plb(&self) -> &Plb {
        &self.plb
    }

    /// Total stash occupancy over all trees.
    pub fn stash_occupancy(&self) -> usize {
        self.trees.iter().map(PathTree::stash_occupancy).sum()
    }

    /// Dummy accesses issued so far, over all trees.
    pub fn dummy_accesses(&self) -> u64 {
        self.trees.iter().map(|t| t.counters().dummy_accesses).sum()
    }

    fn depth(&self) -> usize {
        self.config.recursion.depth as usize
    }

    fn tree_of(&self, level: usize) -> usize {
        if self.config.recursion.unified {
            0
        } else {
            level
        }
    }

    fn addr_of(&self, level: usize, index: u64) -> u64 {
        if self.config.recursion.unified {
            self.offsets[level] + index
        } else {
            index
        }
    }

    /// Inverse of `addr_of` for blocks stored in tree `tree`.
    fn level_of(&self, tree: usize, addr: u64) -> (usize, u64) {
        if !self.config.recursion.unified {
            return (tree, addr);
        }
        let level = self.offsets.iter().rposition(|&o| o <= addr).unwrap_or(0);
        (level, addr - self.offsets[level])
    }

    fn emit(&mut self, out: &mut ObservedTrace, tree: usize, leaf: Leaf, kind: AccessKind) {
        out.push(ObservedAccess {
            tick: self.tick,
            tree: tree as u16,
            leaf,
            hidden_kind: kind,
        });
        self.tick += 1;
    }

    fn evict_before(&mut self, tree: usize, out: &mut ObservedTrace) -> Result<()> {
        let mut leaves = Vec::new();
        let res = self.trees[tree].maybe_evict(&mut self.rng, |l| leaves.push(l));
        for l in leaves {
            self.emit(out, tree, l, AccessKind::Dummy);
        }
        res
    }

    /// Labels a level-`level` block holds before it is first written.
    fn initial_labels(initial: &[Vec<Leaf>], level: usize, index: u64, k: u64) -> BlockContent {
        let child = &initial[level - 1];
        let start = (index * k) as usize;
        let mut labels = vec![0; k as usize];
        for (i, slot) in labels.iter_mut().enumerate() {
            if let Some(&l) = child.get(start + i) {
                *slot = l;
            }
        }
        BlockContent::Labels(labels.into_boxed_slice())
    }

    /// Serve one logical access, emitting one observed access per path read.
    pub fn raccess(
        &mut self,
        op: Op,
        addr: u64,
        data: Option<Payload>,
        out: &mut ObservedTrace,
    ) -> Result<Payload> {
        let space = self.config.base.addr_space;
        if addr >= space {
            return Err(Error::AddressOutOfRange { addr, space });
        }
        let s = self.config.recursion.superblock_size;
        let k = self.config.recursion.entries_per_block;
        if s > 1 {
            self.counters.prefetch_lookups += 1;
            if op == Op::Read {
                if let Some(p) = self.prefetch.get(addr) {
                    self.counters.prefetch_hits += 1;
                    return Ok(p);
                }
            }
        }
        let depth = self.depth();
        let group_start = addr - addr % s;
        let group: Vec<u64> = (group_start..(group_start + s).min(space)).collect();
        let index: Vec<u64> = (0..=depth).map(|j| addr / k.pow(j as u32)).collect();

        // lowest level whose block is cached; depth + 1 means "on chip"
        let mut start = depth + 1;
        if self.plb.capacity() > 0 {
            self.counters.plb_lookups += 1;
            if let Some(j) = (1..=depth).find(|&j| self.plb.contains(j as u32, index[j])) {
                self.counters.plb_hits += 1;
                self.counters.posmap_accesses_saved += (depth + 1 - j) as u64;
                start = j;
            }
        }
        let top = start - 1;

        let mut new_leaves = vec![0; top + 1];
        for j in (0..=top).rev() {
            new_leaves[j] = self.trees[self.tree_of(j)].random_leaf(&mut self.rng);
        }

        // old label of the top block, replaced by its new one in the holder
        let child_slots = |j: usize| -> Vec<usize> {
            if j == 0 {
                group.iter().map(|&g| (g % k) as usize).collect()
            } else {
                vec![(index[j] % k) as usize]
            }
        };
        let mut leaf = if start == depth + 1 {
            let slots: Vec<usize> = if top == 0 {
                group.iter().map(|&g| g as usize).collect()
            } else {
                vec![index[top] as usize]
            };
            let old = self.onchip[slots[0]];
            for i in slots {
                self.onchip[i] = new_leaves[top];
            }
            old
        } else {
            let slots = child_slots(top);
            let entry = self
                .plb
                .get_mut(start as u32, index[start])
                .expect("PLB hit checked above");
            let old = entry.labels[slots[0]];
            for i in slots {
                entry.labels[i] = new_leaves[top];
            }
            old
        };

        let mut result = Payload::ZERO;
        for j in (0..=top).rev() {
            let tree = self.tree_of(j);
            self.evict_before(tree, out)?;
            self.emit(out, tree, leaf, AccessKind::Real);
            self.counters.level_accesses[j] += 1;
            let block_addr = self.addr_of(j, index[j]);
            let initial = &self.initial;
            if j == 0 {
                let group_addrs: Vec<u64> = group.iter().map(|&g| self.addr_of(0, g)).collect();
                let (old, fetched) = self.trees[tree].access_group(
                    leaf,
                    &group_addrs,
                    new_leaves[0],
                    |_| BlockContent::Data(Payload::ZERO),
                    |stash| {
                        let BlockContent::Data(stored) = stash.content_mut(block_addr) else {
                            unreachable!("data address holds a data block")
                        };
                        let old = *stored;
                        if op == Op::Write {
                            *stored = data.unwrap_or(Payload::ZERO);
                        }
                        let fetched: Vec<(u64, Payload)> = if s > 1 {
                            group
                                .iter()
                                .zip(&group_addrs)
                                .map(|(&g, &ga)| match stash.content_mut(ga) {
                                    BlockContent::Data(p) => (g, *p),
                                    BlockContent::Labels(_) => unreachable!(),
                                })
                                .collect()
                        } else {
                            Vec::new()
                        };
                        (old, fetched)
                    },
                )?;
                for (g, p) in fetched {
                    self.prefetch.put(g, p);
                }
                result = old;
            } else {
                let slots = child_slots(j - 1);
                let child_new = new_leaves[j - 1];
                if self.plb.capacity() > 0 {
                    let content = self.trees[tree].take_block(leaf, block_addr, |_| {
                        Self::initial_labels(initial, j, index[j], k)
                    })?;
                    let BlockContent::Labels(mut labels) = content else {
                        unreachable!("position-map address holds labels")
                    };
                    let next = labels[slots[0]];
                    for i in slots {
                        labels[i] = child_new;
                    }
                    let victim = self.plb.insert(PlbEntry {
                        level: j as u32,
                        index: index[j],
                        labels,
                        leaf: new_leaves[j],
                    });
                    if let Some(v) = victim {
                        let vt = self.tree_of(v.level as usize);
                        let vaddr = self.addr_of(v.level as usize, v.index);
                        self.trees[vt].stash_insert(StoredBlock {
                            addr: vaddr,
                            leaf: v.leaf,
                            content: BlockContent::Labels(v.labels),
                        });
                        self.trees[vt].settle()?;
                    }
                    leaf = next;
                } else {
                    leaf = self.trees[tree].access_group(
                        leaf,
                        &[block_addr],
                        new_leaves[j],
                        |_| Self::initial_labels(initial, j, index[j], k),
                        |stash| {
                            let BlockContent::Labels(labels) = stash.content_mut(block_addr) else {
                                unreachable!("position-map address holds labels")
                            };
                            let next = labels[slots[0]];
                            for i in slots {
                                labels[i] = child_new;
                            }
                            next
                        },
                    )?;
                }
            }
        }
        Ok(result)
    }

    /// Contents of every position-map block currently held outside its
    /// initial state, keyed by `(level, index)`.
    fn materialized_labels(&self) -> HashMap<(usize, u64), &[Leaf]> {
        let mut map = HashMap::new();
        for (t, tree) in self.trees.iter().enumerate() {
            for (_, blk) in tree.resident_blocks() {
                if let BlockContent::Labels(l) = &blk.content {
                    map.insert(self.level_of(t, blk.addr), &l[..]);
                }
            }
        }
        for e in self.plb.entries() {
            map.insert((e.level as usize, e.index), &e.labels[..]);
        }
        map
    }

    /// Current label of block `index` at `level`, following the composed
    /// map from the on-chip labels down.
    fn label_of(&self, labels: &HashMap<(usize, u64), &[Leaf]>, level: usize, index: u64) -> Leaf {
        if level == self.depth() {
            return self.onchip[index as usize];
        }
        let k = self.config.recursion.entries_per_block;
        match labels.get(&(level + 1, index / k)) {
            Some(l) => l[(index % k) as usize],
            None => self.initial[level][index as usize],
        }
    }

    /// Full-scan consistency: every resident block sits on the path its
    /// parent label names (or in a stash), appears once, and the members of
    /// each super block share one label.
    pub fn check_invariant(&self) -> bool {
        if !self.trees.iter().all(PathTree::check_structure) {
            return false;
        }
        let labels = self.materialized_labels();
        let mut seen = HashSet::new();
        for (t, tree) in self.trees.iter().enumerate() {
            for (_, blk) in tree.resident_blocks() {
                let (level, index) = self.level_of(t, blk.addr);
                if index >= self.level_blocks[level]
                    || !seen.insert((level, index))
                    || self.label_of(&labels, level, index) != blk.leaf
                {
                    return false;
                }
            }
        }
        for e in self.plb.entries() {
            let level = e.level as usize;
            if !seen.insert((level, e.index)) || self.label_of(&labels, level, e.index) != e.leaf {
                return false;
            }
        }
        let s = self.config.recursion.superblock_size;
        if s > 1 {
            let space = self.config.base.addr_space;
            for g in (0..space).step_by(s as usize) {
                let l = self.label_of(&labels, 0, g);
                if (g..(g + s).min(space)).any(|a| self.label_of(&labels, 0, a) != l) {
                    return false;
                }
            }
        }
        true
    }
}

impl Oram for RecursiveOram {
    fn serve(&mut self, req: &LogicalAccess, out: &mut ObservedTrace) -> Result<Payload> {
        if req.op == Op::Halt {
            return Ok(Payload::ZERO);
        }
        self.raccess(req.op, req.addr, Some(req.data), out)
    }

    fn idle(&mut self, out: &mut ObservedTrace) -> Result<()> {
        let tree = self.tree_of(0);
        let leaf = self.trees[tree].background_evict(&mut self.rng);
        self.emit(out, tree, leaf, AccessKind::Dummy);
        Ok(())
    }

    fn stash_occupancy(&self) -> usize {
        RecursiveOram::stash_occupancy(self)
    }
}
