//! Registered device-data ranges in an ordered search tree, so any
//! address inside a region resolves to it.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("region `{name}` [{base}, {end}) overlaps an existing registration")]
    Overlap { name: String, base: u64, end: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct DataRegion {
    pub id: RegionId,
    pub name: String,
    pub base: u64,
    pub bytes: u64,
    pub elem_bytes: u64,
    pub extents: Vec<usize>,
    pub refcount: u32,
}

impl DataRegion {
    pub fn end(&self) -> u64 {
        self.base + self.bytes
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.end()
    }
}

#[derive(Debug, Default, Clone)]
pub struct RegionTree {
    by_base: BTreeMap<u64, DataRegion>,
    next_id: u64,
}

impl RegionTree {
    pub fn register(
        &mut self,
        name: &str,
        base: u64,
        bytes: u64,
        elem_bytes: u64,
        extents: Vec<usize>,
    ) -> Result<RegionId, RegionError> {
        let end = base + bytes;
        if let Some((_, prev)) = self.by_base.range(..=base).next_back() {
            if prev.end() > base {
                return Err(RegionError::Overlap {
                    name: name.to_string(),
                    base,
                    end,
                });
            }
        }
        if let Some((_, next)) = self.by_base.range(base..).next() {
            if next.base < end {
                return Err(RegionError::Overlap {
                    name: name.to_string(),
                    base,
                    end,
                });
            }
        }
        let id = RegionId(self.next_id);
        self.next_id += 1;
        self.by_base.insert(
            base,
            DataRegion {
                id,
                name: name.to_string(),
                base,
                bytes,
                elem_bytes,
                extents,
                refcount: 1,
            },
        );
        Ok(id)
    }

    /// Region containing `addr`, if any.
    pub fn lookup(&self, addr: u64) -> Option<&DataRegion> {
        self.by_base
            .range(..=addr)
            .next_back()
            .map(|(_, r)| r)
            .filter(|r| r.contains(addr))
    }

    pub fn by_id(&self, id: RegionId) -> Option<&DataRegion> {
        self.by_base.values().find(|r| r.id == id)
    }

    pub fn by_id_mut(&mut self, id: RegionId) -> Option<&mut DataRegion> {
        self.by_base.values_mut().find(|r| r.id == id)
    }

    pub fn by_name(&self, name: &str) -> Option<&DataRegion> {
        self.by_base.values().find(|r| r.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut DataRegion> {
        self.by_base.values_mut().find(|r| r.name == name)
    }

    pub fn remove(&mut self, id: RegionId) -> Option<DataRegion> {
        let base = self.by_base.values().find(|r| r.id == id)?.base;
        self.by_base.remove(&base)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DataRegion> {
        self.by_base.values()
    }

    pub fn len(&self) -> usize {
        self.by_base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_base.is_empty()
    }
}
