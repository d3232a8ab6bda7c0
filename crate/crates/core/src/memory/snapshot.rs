use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{AllocationRecord, DeviceMemoryImage, MemoryConfig, SpaceMem};
use crate::rng::{FuzzRng, RngPosition};

const MAGIC: &[u8; 8] = b"SIMTSNAP";
const VERSION: u32 = 1;

static NEXT_SNAPSHOT: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("not a snapshot file")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

/// A frozen copy of a device image plus, optionally, the generator position
/// at capture time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    id: u64,
    image: DeviceMemoryImage,
    rng: Option<RngPosition>,
}

impl PartialEq for Snapshot {
    fn eq(&self, other: &Self) -> bool {
        self.image == other.image && self.rng == other.rng
    }
}

#[derive(Serialize, Deserialize)]
struct Wire {
    config: MemoryConfig,
    spaces: Vec<SpaceMem>,
    registry: Vec<AllocationRecord>,
    iteration: Option<u64>,
    rng: Option<([u8; 32], u64, u128)>,
}

impl Snapshot {
    pub fn image(&self) -> &DeviceMemoryImage {
        &self.image
    }

    pub fn rng(&self) -> Option<RngPosition> {
        self.rng
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let wire = Wire {
            config: self.image.config.clone(),
            spaces: self.image.spaces.to_vec(),
            registry: self.image.registry.clone(),
            iteration: self.image.iteration,
            rng: self.rng.map(|p| (p.seed, p.stream, p.word_pos)),
        };
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        bincode::serialize_into(&mut out, &wire).expect("in-memory serialization");
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, SnapshotError> {
        if data.len() < 12 || &data[..8] != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = u32::from_le_bytes(data[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(SnapshotError::Version(version));
        }
        let wire: Wire =
            bincode::deserialize(&data[12..]).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
        wire.config
            .check()
            .map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
        let spaces: [SpaceMem; 3] = wire
            .spaces
            .try_into()
            .map_err(|_| SnapshotError::Corrupt("expected three spaces".into()))?;
        let mut image = DeviceMemoryImage {
            config: wire.config,
            spaces,
            registry: wire.registry,
            iteration: wire.iteration,
            baseline: None,
        };
        for (space, sp) in crate::ir::MemSpace::ALL.iter().zip(image.spaces.iter_mut()) {
            let size = image.config.size_of(*space) as usize;
            if sp.bytes.len() != size || sp.shadow.len() != size / image.config.granule as usize {
                return Err(SnapshotError::Corrupt(format!(
                    "{space} storage has the wrong size"
                )));
            }
            sp.reset_dirty();
        }
        Ok(Snapshot {
            id: NEXT_SNAPSHOT.fetch_add(1, Ordering::Relaxed),
            image,
            rng: wire.rng.map(|(seed, stream, word_pos)| RngPosition {
                seed,
                stream,
                word_pos,
            }),
        })
    }
}

impl DeviceMemoryImage {
    /// Captures the image (and the generator position, if given). Later
    /// writes are tracked page by page so that restoring this snapshot only
    /// copies what changed.
    pub fn snapshot(&mut self, rng: Option<&FuzzRng>) -> Snapshot {
        let id = NEXT_SNAPSHOT.fetch_add(1, Ordering::Relaxed);
        self.clear_dirty();
        self.baseline = Some(id);
        Snapshot {
            id,
            image: self.clone(),
            rng: rng.map(RngPosition::capture),
        }
    }

    /// Returns the image to the captured state and yields the captured
    /// generator, if one was recorded.
    pub fn restore(&mut self, snap: &Snapshot) -> Option<FuzzRng> {
        if self.baseline == Some(snap.id) {
            for (dst, src) in self.spaces.iter_mut().zip(snap.image.spaces.iter()) {
                dst.restore_dirty_from(src);
            }
            self.registry.clone_from(&snap.image.registry);
            self.iteration = snap.image.iteration;
        } else {
            self.clone_from(&snap.image);
            self.clear_dirty();
            self.baseline = Some(snap.id);
        }
        snap.rng.map(|p| p.to_rng())
    }
}
