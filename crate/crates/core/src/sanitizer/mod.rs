//! Access checking against shadow metadata, pointer provenance and the
//! allocation registry, plus finding records and deduplication.
//!
//! Classification follows a fixed order so that an access matching several
//! classes always gets the same one:
//!
//! 1. the address resolves to an allocation in another space: `SPACE_MISMATCH`
//! 2. the resolved allocation is freed: `TEMPORAL_UAF`
//! 3. the resolved slot's shadow is not addressable over the access: `SPATIAL_OOB`
//! 4. a provenance tag is present and the access leaves the tagged payload:
//!    `PROVENANCE_ESCAPE` (or `TEMPORAL_UAF` if the tagged allocation is freed)
//! 5. the address does not resolve: `WILD_ACCESS`

mod findings;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ir::MemSpace;
use crate::memory::{shadow, AllocId, AllocState, AllocationRecord, DeviceMemoryImage};

pub use findings::{Finding, FindingsLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BugClass {
    SpatialOob,
    TemporalUaf,
    SpaceMismatch,
    ProvenanceEscape,
    WildAccess,
    InvalidFree,
}

impl BugClass {
    pub const ALL: [BugClass; 6] = [
        BugClass::SpatialOob,
        BugClass::TemporalUaf,
        BugClass::SpaceMismatch,
        BugClass::ProvenanceEscape,
        BugClass::WildAccess,
        BugClass::InvalidFree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BugClass::SpatialOob => "SPATIAL_OOB",
            BugClass::TemporalUaf => "TEMPORAL_UAF",
            BugClass::SpaceMismatch => "SPACE_MISMATCH",
            BugClass::ProvenanceEscape => "PROVENANCE_ESCAPE",
            BugClass::WildAccess => "WILD_ACCESS",
            BugClass::InvalidFree => "INVALID_FREE",
        }
    }

    pub fn from_name(s: &str) -> Option<BugClass> {
        BugClass::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for BugClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which piece of metadata caught the access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    SpaceCheck,
    Quarantine,
    Redzone,
    PartialGranule,
    Unallocated,
    Provenance,
    StaleTag,
    Registry,
    HostFree,
}

/// One instrumented access, as seen by the sanitizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    /// Instruction id, or `None` for host-side copies.
    pub iid: Option<u32>,
    pub space: MemSpace,
    pub addr: u64,
    pub width: u32,
    pub store: bool,
    pub tag: Option<AllocId>,
    pub ctaid: u32,
    pub tid: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocInfo {
    pub id: AllocId,
    #[serde(with = "hex_u64")]
    pub base: u64,
    pub size: u64,
    pub space: MemSpace,
    pub state: AllocState,
    pub site: String,
}

impl From<&AllocationRecord> for AllocInfo {
    fn from(r: &AllocationRecord) -> Self {
        AllocInfo {
            id: r.id,
            base: r.base,
            size: r.size,
            space: r.space,
            state: r.state,
            site: r.site.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub class: BugClass,
    pub mechanism: Mechanism,
    /// Kernel name, or `host:<op>` for host-side operations.
    pub kernel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iid: Option<u32>,
    pub ctaid: u32,
    pub tid: u32,
    #[serde(with = "hex_u64")]
    pub address: u64,
    pub width: u32,
    pub space: MemSpace,
    pub store: bool,
    /// Allocation whose slot contains the address.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved: Option<AllocInfo>,
    /// Allocation named by the pointer's provenance tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tagged: Option<AllocInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u64>,
    pub dedupe_key: String,
}

impl BugReport {
    /// The allocation the finding is attributed to: the tagged one when the
    /// pointer carried provenance, the resolved one otherwise.
    pub fn site(&self) -> &str {
        self.tagged
            .as_ref()
            .or(self.resolved.as_ref())
            .map(|a| a.site.as_str())
            .filter(|s| !s.is_empty())
            .unwrap_or("-")
    }

    pub fn compute_dedupe_key(&self) -> String {
        let iid = self.iid.map_or("-".to_string(), |i| i.to_string());
        let text = format!("{}|{}|{}|{}", self.class, self.kernel, iid, self.site());
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }
}

impl fmt::Display for BugReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in {}", self.class, self.kernel)?;
        if let Some(iid) = self.iid {
            write!(f, " at instruction {iid}")?;
        }
        write!(
            f,
            " (thread {}/{}): {} of {} bytes at {:#x} in {} space via {:?}",
            self.ctaid,
            self.tid,
            if self.store { "write" } else { "read" },
            self.width,
            self.address,
            self.space,
            self.mechanism
        )?;
        if let Some(a) = self.tagged.as_ref().or(self.resolved.as_ref()) {
            write!(
                f,
                "; allocation #{} `{}` [{:#x}, +{}) {} {:?}",
                a.id, a.site, a.base, a.size, a.space, a.state
            )?;
        }
        write!(f, " [key {}]", self.dedupe_key)
    }
}

fn mechanism_for(code: u8) -> Mechanism {
    match code {
        shadow::REDZONE => Mechanism::Redzone,
        shadow::FREED => Mechanism::Quarantine,
        shadow::UNALLOCATED => Mechanism::Unallocated,
        _ => Mechanism::PartialGranule,
    }
}

/// Shadow-only verdict: the first non-addressable shadow code over the access.
pub fn shadow_check(image: &DeviceMemoryImage, addr: u64, width: u32) -> Option<u8> {
    image.shadow_violation(addr, width as u64)
}

/// Provenance-only verdict: whether the access leaves the tagged allocation's
/// LIVE payload.
pub fn provenance_check(image: &DeviceMemoryImage, tag: AllocId, addr: u64, width: u32) -> bool {
    match image.record(tag) {
        Some(rec) => rec.state != AllocState::Live || !rec.payload_contains(addr, width as u64),
        None => true,
    }
}

fn classify(image: &DeviceMemoryImage, acc: &Access) -> Option<(BugClass, Mechanism)> {
    let resolved = image.resolve(acc.addr);
    if let Some(rec) = resolved {
        if rec.space != acc.space {
            return Some((BugClass::SpaceMismatch, Mechanism::SpaceCheck));
        }
        if rec.state == AllocState::Freed {
            return Some((BugClass::TemporalUaf, Mechanism::Quarantine));
        }
        if let Some(code) = shadow_check(image, acc.addr, acc.width) {
            return Some((BugClass::SpatialOob, mechanism_for(code)));
        }
    }
    if let Some(tag) = acc.tag {
        if provenance_check(image, tag, acc.addr, acc.width) {
            let stale = image
                .record(tag)
                .is_some_and(|r| r.state == AllocState::Freed);
            return Some(if stale {
                (BugClass::TemporalUaf, Mechanism::StaleTag)
            } else {
                (BugClass::ProvenanceEscape, Mechanism::Provenance)
            });
        }
    }
    if resolved.is_none() {
        return Some((BugClass::WildAccess, Mechanism::Registry));
    }
    None
}

/// Checks one access. `kernel` names the launching kernel (or host op) for
/// the report.
pub fn check_access(
    image: &DeviceMemoryImage,
    kernel: &str,
    acc: &Access,
) -> Result<(), Box<BugReport>> {
    match classify(image, acc) {
        None => Ok(()),
        Some((class, mechanism)) => {
            Err(Box::new(make_report(image, kernel, acc, class, mechanism)))
        }
    }
}

pub(crate) fn make_report(
    image: &DeviceMemoryImage,
    kernel: &str,
    acc: &Access,
    class: BugClass,
    mechanism: Mechanism,
) -> BugReport {
    let mut report = BugReport {
        class,
        mechanism,
        kernel: kernel.to_string(),
        iid: acc.iid,
        ctaid: acc.ctaid,
        tid: acc.tid,
        address: acc.addr,
        width: acc.width,
        space: acc.space,
        store: acc.store,
        resolved: image.resolve(acc.addr).map(AllocInfo::from),
        tagged: acc.tag.and_then(|t| image.record(t)).map(AllocInfo::from),
        iteration: image.iteration(),
        dedupe_key: String::new(),
    };
    report.dedupe_key = report.compute_dedupe_key();
    report
}

/// Report for a host `free` of an address that is not a LIVE base.
pub fn invalid_free(image: &DeviceMemoryImage, op: &str, space: MemSpace, addr: u64) -> BugReport {
    let acc = Access {
        iid: None,
        space,
        addr,
        width: 0,
        store: false,
        tag: None,
        ctaid: 0,
        tid: 0,
    };
    make_report(image, op, &acc, BugClass::InvalidFree, Mechanism::HostFree)
}

/// Checked host-to-device copy.
pub fn copy_in(
    image: &mut DeviceMemoryImage,
    op: &str,
    space: MemSpace,
    addr: u64,
    bytes: &[u8],
) -> Result<(), Box<BugReport>> {
    if !bytes.is_empty() {
        let acc = host_access(space, addr, bytes.len(), true);
        check_access(image, op, &acc)?;
        image.write(addr, bytes);
    }
    Ok(())
}

/// Checked device-to-host copy.
pub fn copy_out(
    image: &DeviceMemoryImage,
    op: &str,
    space: MemSpace,
    addr: u64,
    len: usize,
) -> Result<Vec<u8>, Box<BugReport>> {
    if len == 0 {
        return Ok(Vec::new());
    }
    let acc = host_access(space, addr, len, false);
    check_access(image, op, &acc)?;
    Ok(image
        .read(addr, len)
        .map(<[u8]>::to_vec)
        .unwrap_or_default())
}

fn host_access(space: MemSpace, addr: u64, len: usize, store: bool) -> Access {
    Access {
        iid: None,
        space,
        addr,
        width: len as u32,
        store,
        tag: None,
        ctaid: 0,
        tid: 0,
    }
}

pub(crate) mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:#x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        let digits = s.strip_prefix("0x").unwrap_or(&s);
        u64::from_str_radix(digits, 16).map_err(serde::de::Error::custom)
    }
}
