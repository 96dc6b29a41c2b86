//! Two-pool device memory allocator with smallest-capable reuse.
//!
//! Freed segments are kept whole and reused for the smallest request
//! they can satisfy; anything else extends the arena.  One pool serves
//! user-visible data allocations, the other runtime-managed scratch.

use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("device memory capacity exceeded: need {needed} more bytes of {capacity}")]
    OutOfMemory { needed: u64, capacity: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoolKind {
    User,
    Runtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub offset: u64,
    pub size: u64,
}

#[derive(Debug, Default, Clone)]
struct FreeList {
    // ordered by (size, offset) so the first candidate is the
    // smallest capable segment, lowest offset on ties
    by_size: BTreeSet<(u64, u64)>,
}

impl FreeList {
    fn take_smallest_capable(&mut self, bytes: u64) -> Option<Segment> {
        let found = self
            .by_size
            .range((bytes, 0)..)
            .next()
            .copied();
        if let Some(key) = found {
            self.by_size.remove(&key);
            return Some(Segment {
                offset: key.1,
                size: key.0,
            });
        }
        None
    }

    fn insert(&mut self, seg: Segment) {
        self.by_size.insert((seg.size, seg.offset));
    }
}

#[derive(Debug, Clone)]
pub struct PoolAllocator {
    capacity: u64,
    arena_end: u64,
    pools: BTreeMap<PoolKind, FreeList>,
    live: BTreeMap<u64, (u64, PoolKind)>,
}

impl PoolAllocator {
    pub fn new(capacity: u64) -> PoolAllocator {
        let mut pools = BTreeMap::new();
        pools.insert(PoolKind::User, FreeList::default());
        pools.insert(PoolKind::Runtime, FreeList::default());
        PoolAllocator {
            capacity,
            arena_end: 0,
            pools,
            live: BTreeMap::new(),
        }
    }

    /// Returns the smallest free segment of the pool that fits, or
    /// extends the arena with a fresh segment of exactly `bytes`.
    pub fn alloc(&mut self, bytes: u64, pool: PoolKind) -> Result<Segment, PoolError> {
        assert!(bytes > 0, "zero-byte allocation");
        let free = self.pools.get_mut(&pool).expect("pool exists");
        let seg = match free.take_smallest_capable(bytes) {
            Some(seg) => seg,
            None => {
                if self.arena_end + bytes > self.capacity {
                    return Err(PoolError::OutOfMemory {
                        needed: self.arena_end + bytes - self.capacity,
                        capacity: self.capacity,
                    });
                }
                let seg = Segment {
                    offset: self.arena_end,
                    size: bytes,
                };
                self.arena_end += bytes;
                seg
            }
        };
        self.live.insert(seg.offset, (seg.size, pool));
        Ok(seg)
    }

    pub fn free(&mut self, seg: Segment) {
        let (size, pool) = self
            .live
            .remove(&seg.offset)
            .expect("freeing a segment that is not live");
        debug_assert_eq!(size, seg.size);
        self.pools.get_mut(&pool).expect("pool exists").insert(seg);
    }

    pub fn live_segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.live.iter().map(|(off, (size, _))| Segment {
            offset: *off,
            size: *size,
        })
    }

    pub fn live_bytes(&self) -> u64 {
        self.live.values().map(|(s, _)| s).sum()
    }

    pub fn free_segments(&self, pool: PoolKind) -> Vec<Segment> {
        self.pools[&pool]
            .by_size
            .iter()
            .map(|(size, offset)| Segment {
                offset: *offset,
                size: *size,
            })
            .collect()
    }
}
