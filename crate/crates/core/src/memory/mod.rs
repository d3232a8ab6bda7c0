//! Simulated device memory.
//!
//! Each of the three spaces owns a byte array and a shadow array holding one
//! byte of metadata per granule. Allocations are bump-allocated with a
//! redzone on both sides; freed allocations sit in a FIFO quarantine until
//! its byte capacity is exceeded, after which their slot becomes reusable.
//!
//! Device addresses are flat 64-bit values. Each space occupies its own
//! 4 GiB region, so the space of any address is recoverable from its upper
//! bits. SHARED and LOCAL windows beyond the first (host-visible) scope are
//! addressable but never backed.

mod snapshot;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::ir::MemSpace;

pub use snapshot::{Snapshot, SnapshotError};

pub const GLOBAL_BASE: u64 = 0x1_0000_0000;
pub const SHARED_BASE: u64 = 0x2_0000_0000;
pub const LOCAL_BASE: u64 = 0x3_0000_0000;
const REGION_MASK: u64 = 0xFFFF_FFFF;

const PAGE_SHIFT: u32 = 12;

/// Shadow byte encoding. Values `1..granule` mean "only the first k bytes of
/// this granule are addressable".
pub mod shadow {
    pub const ADDRESSABLE: u8 = 0x00;
    pub const REDZONE: u8 = 0xFA;
    pub const FREED: u8 = 0xFD;
    pub const UNALLOCATED: u8 = 0xFF;

    pub fn name(code: u8) -> &'static str {
        match code {
            ADDRESSABLE => "addressable",
            REDZONE => "redzone",
            FREED => "freed",
            UNALLOCATED => "unallocated",
            _ => "partial-granule",
        }
    }
}

pub fn space_base(space: MemSpace) -> u64 {
    match space {
        MemSpace::Global => GLOBAL_BASE,
        MemSpace::Shared => SHARED_BASE,
        MemSpace::Local => LOCAL_BASE,
    }
}

/// The space whose address region contains `addr`, regardless of backing.
pub fn region_of(addr: u64) -> Option<MemSpace> {
    match addr >> 32 {
        1 => Some(MemSpace::Global),
        2 => Some(MemSpace::Shared),
        3 => Some(MemSpace::Local),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AllocId(pub u64);

impl std::fmt::Display for AllocId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AllocState {
    Live,
    Freed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub id: AllocId,
    pub base: u64,
    pub size: u64,
    pub space: MemSpace,
    pub state: AllocState,
    pub redzone: u32,
    pub birth_iteration: Option<u64>,
    pub death_iteration: Option<u64>,
    /// Where the allocation came from (harness name or kernel argument).
    pub site: String,
    /// Payload size rounded up to the granule.
    pub padded: u64,
}

impl AllocationRecord {
    pub fn slot_start(&self) -> u64 {
        self.base - self.redzone as u64
    }

    pub fn slot_end(&self) -> u64 {
        self.base + self.padded + self.redzone as u64
    }

    pub fn payload_contains(&self, addr: u64, width: u64) -> bool {
        addr >= self.base
            && addr
                .checked_add(width)
                .is_some_and(|end| end <= self.base + self.size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryConfig {
    pub granule: u32,
    pub redzone: u32,
    pub global_size: u64,
    pub shared_size: u64,
    pub local_size: u64,
    /// Quarantine capacity in payload bytes, indexed by `MemSpace::index`.
    pub quarantine: [u64; 3],
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            granule: 4,
            redzone: 32,
            global_size: 16 << 20,
            shared_size: 48 << 10,
            local_size: 16 << 10,
            quarantine: [1 << 20, 0, 0],
        }
    }
}

impl MemoryConfig {
    pub fn size_of(&self, space: MemSpace) -> u64 {
        match space {
            MemSpace::Global => self.global_size,
            MemSpace::Shared => self.shared_size,
            MemSpace::Local => self.local_size,
        }
    }

    pub fn check(&self) -> Result<(), MemoryError> {
        let g = self.granule as u64;
        if !(1..=128).contains(&self.granule) || !self.granule.is_power_of_two() {
            return Err(MemoryError::BadConfig(format!(
                "granule {} must be a power of two in 1..=128",
                self.granule
            )));
        }
        if !(self.redzone as u64).is_multiple_of(g) {
            return Err(MemoryError::BadConfig(
                "redzone must be a multiple of the granule".into(),
            ));
        }
        for space in MemSpace::ALL {
            let size = self.size_of(space);
            if !size.is_multiple_of(g) || size > REGION_MASK {
                return Err(MemoryError::BadConfig(format!(
                    "{space} size {size} must be a granule multiple below 4 GiB"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemoryError {
    #[error("out of device memory in {0} space")]
    OutOfDeviceMemory(MemSpace),
    #[error("zero-sized allocation")]
    ZeroSize,
    #[error("invalid free of {addr:#x}")]
    InvalidFree { addr: u64 },
    #[error("bad memory configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SpaceMem {
    pub(crate) bytes: Vec<u8>,
    pub(crate) shadow: Vec<u8>,
    #[serde(skip)]
    dirty_bytes: Vec<u64>,
    #[serde(skip)]
    dirty_shadow: Vec<u64>,
    /// Next unused offset.
    pub(crate) bump: u64,
    /// Reusable `[start, end)` address ranges, sorted and coalesced.
    pub(crate) holes: Vec<(u64, u64)>,
    /// Slot start → allocation, for LIVE and quarantined records.
    pub(crate) resident: BTreeMap<u64, AllocId>,
    pub(crate) quarantine: VecDeque<AllocId>,
    pub(crate) quarantine_bytes: u64,
}

fn page_words(len: usize) -> usize {
    (len >> PAGE_SHIFT).div_ceil(64) + 1
}

fn mark(bits: &mut [u64], start: usize, len: usize) {
    if len == 0 {
        return;
    }
    let first = start >> PAGE_SHIFT;
    let last = (start + len - 1) >> PAGE_SHIFT;
    for page in first..=last {
        bits[page / 64] |= 1 << (page % 64);
    }
}

fn dirty_pages(bits: &[u64]) -> impl Iterator<Item = usize> + '_ {
    bits.iter().enumerate().flat_map(|(w, &word)| {
        (0..64)
            .filter(move |b| word & (1 << b) != 0)
            .map(move |b| w * 64 + b)
    })
}

impl SpaceMem {
    fn new(size: u64, granule: u32) -> Self {
        let shadow_len = (size / granule as u64) as usize;
        SpaceMem {
            bytes: vec![0; size as usize],
            shadow: vec![shadow::UNALLOCATED; shadow_len],
            dirty_bytes: vec![0; page_words(size as usize)],
            dirty_shadow: vec![0; page_words(shadow_len)],
            bump: 0,
            holes: Vec::new(),
            resident: BTreeMap::new(),
            quarantine: VecDeque::new(),
            quarantine_bytes: 0,
        }
    }

    /// Re-sizes the dirty bitmaps after deserialization.
    pub(crate) fn reset_dirty(&mut self) {
        self.dirty_bytes = vec![0; page_words(self.bytes.len())];
        self.dirty_shadow = vec![0; page_words(self.shadow.len())];
    }

    fn clear_dirty(&mut self) {
        self.dirty_bytes.fill(0);
        self.dirty_shadow.fill(0);
    }

    /// Copies back only the pages written since `src` was captured.
    pub(crate) fn restore_dirty_from(&mut self, src: &SpaceMem) {
        for page in dirty_pages(&self.dirty_bytes) {
            let lo = page << PAGE_SHIFT;
            let hi = (lo + (1 << PAGE_SHIFT)).min(self.bytes.len());
            self.bytes[lo..hi].copy_from_slice(&src.bytes[lo..hi]);
        }
        for page in dirty_pages(&self.dirty_shadow) {
            let lo = page << PAGE_SHIFT;
            let hi = (lo + (1 << PAGE_SHIFT)).min(self.shadow.len());
            self.shadow[lo..hi].copy_from_slice(&src.shadow[lo..hi]);
        }
        self.bump = src.bump;
        self.holes.clone_from(&src.holes);
        self.resident.clone_from(&src.resident);
        self.quarantine.clone_from(&src.quarantine);
        self.quarantine_bytes = src.quarantine_bytes;
        self.clear_dirty();
    }

    fn observable_eq(&self, other: &SpaceMem) -> bool {
        self.bytes == other.bytes
            && self.shadow == other.shadow
            && self.bump == other.bump
            && self.holes == other.holes
            && self.resident == other.resident
            && self.quarantine == other.quarantine
            && self.quarantine_bytes == other.quarantine_bytes
    }
}

/// Byte-addressable device memory across three spaces with shadow metadata.
#[derive(Debug, Clone)]
pub struct DeviceMemoryImage {
    pub(crate) config: MemoryConfig,
    pub(crate) spaces: [SpaceMem; 3],
    /// Indexed by `AllocId - 1`.
    pub(crate) registry: Vec<AllocationRecord>,
    pub(crate) iteration: Option<u64>,
    /// Id of the snapshot the dirty bits are relative to.
    pub(crate) baseline: Option<u64>,
}

impl PartialEq for DeviceMemoryImage {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.registry == other.registry
            && self.iteration == other.iteration
            && self
                .spaces
                .iter()
                .zip(other.spaces.iter())
                .all(|(a, b)| a.observable_eq(b))
    }
}

impl Default for DeviceMemoryImage {
    fn default() -> Self {
        Self::new(MemoryConfig::default()).expect("default config is valid")
    }
}

impl DeviceMemoryImage {
    pub fn new(config: MemoryConfig) -> Result<Self, MemoryError> {
        config.check()?;
        let spaces = MemSpace::ALL.map(|s| SpaceMem::new(config.size_of(s), config.granule));
        Ok(DeviceMemoryImage {
            config,
            spaces,
            registry: Vec::new(),
            iteration: None,
            baseline: None,
        })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn granule(&self) -> u32 {
        self.config.granule
    }

    /// Campaign iteration stamped onto allocation births and deaths.
    pub fn iteration(&self) -> Option<u64> {
        self.iteration
    }

    pub fn set_iteration(&mut self, iteration: Option<u64>) {
        self.iteration = iteration;
    }

    pub fn records(&self) -> &[AllocationRecord] {
        &self.registry
    }

    pub fn record(&self, id: AllocId) -> Option<&AllocationRecord> {
        id.0.checked_sub(1)
            .and_then(|i| self.registry.get(i as usize))
    }

    pub fn live_allocations(&self) -> impl Iterator<Item = &AllocationRecord> {
        self.registry.iter().filter(|r| r.state == AllocState::Live)
    }

    pub fn shadow(&self, space: MemSpace) -> &[u8] {
        &self.spaces[space.index()].shadow
    }

    /// Quarantined allocations of `space`, oldest first.
    pub fn quarantine(&self, space: MemSpace) -> impl Iterator<Item = AllocId> + '_ {
        self.spaces[space.index()].quarantine.iter().copied()
    }

    pub fn quarantine_bytes(&self, space: MemSpace) -> u64 {
        self.spaces[space.index()].quarantine_bytes
    }

    pub fn is_quarantined(&self, id: AllocId) -> bool {
        self.record(id).is_some_and(|r| {
            r.state == AllocState::Freed
                && self.spaces[r.space.index()].resident.get(&r.slot_start()) == Some(&id)
        })
    }

    /// Space and storage offset of a backed address.
    pub fn locate(&self, addr: u64) -> Option<(MemSpace, u64)> {
        let space = region_of(addr)?;
        let off = addr & REGION_MASK;
        (off < self.config.size_of(space)).then_some((space, off))
    }

    /// The LIVE or quarantined allocation whose slot (payload plus redzones)
    /// contains `addr`.
    pub fn resolve(&self, addr: u64) -> Option<&AllocationRecord> {
        let space = region_of(addr)?;
        let (_, id) = self.spaces[space.index()]
            .resident
            .range(..=addr)
            .next_back()?;
        let rec = self.record(*id)?;
        (addr < rec.slot_end()).then_some(rec)
    }

    /// First non-addressable shadow code over `[addr, addr + width)`, if any.
    pub fn shadow_violation(&self, addr: u64, width: u64) -> Option<u8> {
        let Some((space, off)) = self.locate(addr) else {
            return Some(shadow::UNALLOCATED);
        };
        let g = self.config.granule as u64;
        let sh = &self.spaces[space.index()].shadow;
        let end = off.checked_add(width)?;
        let mut cur = off;
        while cur < end {
            let gi = (cur / g) as usize;
            let Some(&code) = sh.get(gi) else {
                return Some(shadow::UNALLOCATED);
            };
            let granule_end = (gi as u64 + 1) * g;
            let hi = end.min(granule_end);
            match code {
                shadow::ADDRESSABLE => {}
                k if (k as u64) < g => {
                    if hi - gi as u64 * g > k as u64 {
                        return Some(k);
                    }
                }
                other => return Some(other),
            }
            cur = hi;
        }
        None
    }

    pub fn alloc(&mut self, space: MemSpace, size: u64) -> Result<(u64, AllocId), MemoryError> {
        self.alloc_labeled(space, size, "")
    }

    /// Allocates `size` bytes with redzones and records `site` as its origin.
    pub fn alloc_labeled(
        &mut self,
        space: MemSpace,
        size: u64,
        site: &str,
    ) -> Result<(u64, AllocId), MemoryError> {
        if size == 0 {
            return Err(MemoryError::ZeroSize);
        }
        let g = self.config.granule as u64;
        let rz = self.config.redzone as u64;
        let padded = size
            .checked_next_multiple_of(g)
            .ok_or(MemoryError::OutOfDeviceMemory(space))?;
        let need = padded
            .checked_add(2 * rz)
            .ok_or(MemoryError::OutOfDeviceMemory(space))?;
        let capacity = self.config.size_of(space);
        let region = space_base(space);
        let sp = &mut self.spaces[space.index()];

        let slot_start = match sp.holes.iter().position(|(s, e)| e - s >= need) {
            Some(i) => {
                let (s, e) = sp.holes[i];
                if e - s == need {
                    sp.holes.remove(i);
                } else {
                    sp.holes[i].0 = s + need;
                }
                s
            }
            None => {
                if sp.bump.checked_add(need).is_none_or(|end| end > capacity) {
                    return Err(MemoryError::OutOfDeviceMemory(space));
                }
                let s = region + sp.bump;
                sp.bump += need;
                s
            }
        };

        let id = AllocId(self.registry.len() as u64 + 1);
        let rec = AllocationRecord {
            id,
            base: slot_start + rz,
            size,
            space,
            state: AllocState::Live,
            redzone: rz as u32,
            birth_iteration: self.iteration,
            death_iteration: None,
            site: site.to_string(),
            padded,
        };
        sp.resident.insert(slot_start, id);
        let base = rec.base;
        self.paint_live(&rec);
        self.registry.push(rec);
        Ok((base, id))
    }

    /// Frees the LIVE allocation based at `addr`.
    pub fn free(&mut self, addr: u64) -> Result<AllocId, MemoryError> {
        let invalid = MemoryError::InvalidFree { addr };
        let rec = self.resolve(addr).ok_or(invalid.clone())?;
        if rec.base != addr || rec.state != AllocState::Live {
            return Err(invalid);
        }
        let id = rec.id;
        let space = rec.space;
        let iteration = self.iteration;
        let rec = &mut self.registry[id.0 as usize - 1];
        rec.state = AllocState::Freed;
        rec.death_iteration = iteration;
        let rec = rec.clone();
        self.paint(space, rec.base, rec.padded, shadow::FREED);

        let cap = self.config.quarantine[space.index()];
        let sp = &mut self.spaces[space.index()];
        sp.quarantine.push_back(id);
        sp.quarantine_bytes += rec.size;
        while self.spaces[space.index()].quarantine_bytes > cap {
            let Some(old) = self.spaces[space.index()].quarantine.pop_front() else {
                break;
            };
            let old = self.registry[old.0 as usize - 1].clone();
            self.evict(&old);
        }
        Ok(id)
    }

    fn evict(&mut self, rec: &AllocationRecord) {
        let sp = &mut self.spaces[rec.space.index()];
        sp.quarantine_bytes -= rec.size;
        sp.resident.remove(&rec.slot_start());
        let (s, e) = (rec.slot_start(), rec.slot_end());
        let at = sp.holes.partition_point(|h| h.0 < s);
        sp.holes.insert(at, (s, e));
        // coalesce with neighbours
        if at + 1 < sp.holes.len() && sp.holes[at].1 == sp.holes[at + 1].0 {
            sp.holes[at].1 = sp.holes[at + 1].1;
            sp.holes.remove(at + 1);
        }
        if at > 0 && sp.holes[at - 1].1 == sp.holes[at].0 {
            sp.holes[at - 1].1 = sp.holes[at].1;
            sp.holes.remove(at);
        }
        self.paint(rec.space, s, e - s, shadow::UNALLOCATED);
    }

    fn paint(&mut self, space: MemSpace, addr: u64, len: u64, code: u8) {
        let g = self.config.granule as u64;
        let off = addr - space_base(space);
        let sp = &mut self.spaces[space.index()];
        let lo = (off / g) as usize;
        let hi = ((off + len) / g) as usize;
        sp.shadow[lo..hi].fill(code);
        mark(&mut sp.dirty_shadow, lo, hi - lo);
    }

    fn paint_live(&mut self, rec: &AllocationRecord) {
        let rz = rec.redzone as u64;
        self.paint(rec.space, rec.slot_start(), rz, shadow::REDZONE);
        self.paint(rec.space, rec.base, rec.padded, shadow::ADDRESSABLE);
        let g = self.config.granule as u64;
        let tail = rec.size % g;
        if tail != 0 {
            let off = rec.base - space_base(rec.space) + rec.padded - g;
            let sp = &mut self.spaces[rec.space.index()];
            sp.shadow[(off / g) as usize] = tail as u8;
        }
        self.paint(rec.space, rec.base + rec.padded, rz, shadow::REDZONE);
    }

    /// Rebuilds every shadow array from the registry alone.
    pub fn recompute_shadow(&self) -> [Vec<u8>; 3] {
        let mut fresh = DeviceMemoryImage {
            config: self.config.clone(),
            spaces: MemSpace::ALL.map(|s| {
                let len = (self.config.size_of(s) / self.config.granule as u64) as usize;
                SpaceMem {
                    bytes: Vec::new(),
                    shadow: vec![shadow::UNALLOCATED; len],
                    dirty_bytes: Vec::new(),
                    dirty_shadow: vec![0; page_words(len)],
                    bump: 0,
                    holes: Vec::new(),
                    resident: BTreeMap::new(),
                    quarantine: VecDeque::new(),
                    quarantine_bytes: 0,
                }
            }),
            registry: Vec::new(),
            iteration: None,
            baseline: None,
        };
        for rec in &self.registry {
            let resident = self.spaces[rec.space.index()]
                .resident
                .get(&rec.slot_start())
                == Some(&rec.id);
            if !resident {
                continue;
            }
            fresh.paint_live(rec);
            if rec.state == AllocState::Freed {
                fresh.paint(rec.space, rec.base, rec.padded, shadow::FREED);
            }
        }
        fresh.spaces.map(|s| s.shadow)
    }

    /// Raw read without sanitization; `None` when the range is not backed.
    pub fn read(&self, addr: u64, len: usize) -> Option<&[u8]> {
        let (space, off) = self.locate(addr)?;
        let bytes = &self.spaces[space.index()].bytes;
        let off = off as usize;
        bytes.get(off..off.checked_add(len)?)
    }

    /// Raw write without sanitization; `false` when the range is not backed.
    pub fn write(&mut self, addr: u64, data: &[u8]) -> bool {
        let Some((space, off)) = self.locate(addr) else {
            return false;
        };
        let sp = &mut self.spaces[space.index()];
        let off = off as usize;
        let Some(dst) = off
            .checked_add(data.len())
            .and_then(|end| sp.bytes.get_mut(off..end))
        else {
            return false;
        };
        dst.copy_from_slice(data);
        mark(&mut sp.dirty_bytes, off, data.len());
        true
    }

    pub(crate) fn clear_dirty(&mut self) {
        for sp in &mut self.spaces {
            sp.clear_dirty();
        }
    }
}
