//! Type-aware mutation of kernel argument vectors.
//!
//! Every [`MutationOp`] carries all of its parameters, so applying an op is a
//! pure function of the input value. Randomness is confined to choosing ops
//! (see [`mutate_testcase`]), which makes a recorded trace replayable.

mod choose;
mod testcase;

use serde::{Deserialize, Serialize};

use crate::ir::MemSpace;

pub use choose::{choose_op, mutate_testcase, MutationConfig};
pub use testcase::{argspec_digest, replay_trace, TestCase, TestCaseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    I32,
    F32,
}

impl ElemType {
    pub fn name(self) -> &'static str {
        match self {
            ElemType::I32 => "i32",
            ElemType::F32 => "f32",
        }
    }

    pub fn from_name(s: &str) -> Option<ElemType> {
        match s {
            "i32" => Some(ElemType::I32),
            "f32" => Some(ElemType::F32),
            _ => None,
        }
    }
}

/// Shape and valid domain of one fuzz-mutable argument.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ArgKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArgKind {
    I32 {
        range: Option<(i32, i32)>,
    },
    F32 {
        range: Option<(f32, f32)>,
    },
    Array {
        elem: ElemType,
        space: MemSpace,
        extents: Vec<u32>,
        range: Option<(f32, f32)>,
    },
}

impl ArgSpec {
    pub fn declared_count(&self) -> u64 {
        match &self.kind {
            ArgKind::Array { extents, .. } => extents.iter().map(|&e| e as u64).product(),
            _ => 1,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ArgKind::I32 { .. } => "i32",
            ArgKind::F32 { .. } => "f32",
            ArgKind::Array { .. } => "array",
        }
    }

    /// Whether `v` has this spec's type (and element type, for arrays).
    pub fn accepts(&self, v: &TypedValue) -> bool {
        match (&self.kind, v) {
            (ArgKind::I32 { .. }, TypedValue::I32(_)) => true,
            (ArgKind::F32 { .. }, TypedValue::F32(_)) => true,
            (ArgKind::Array { elem, .. }, TypedValue::Array(a)) => a.elem == *elem,
            _ => false,
        }
    }

    /// Whether `v` lies in the declared valid domain: in range, declared
    /// extents and space, unbiased pointer.
    pub fn in_domain(&self, v: &TypedValue) -> bool {
        let in_f32 = |bits: u32, range: Option<(f32, f32)>| {
            let x = f32::from_bits(bits);
            x.is_finite() && range.is_none_or(|(lo, hi)| (lo..=hi).contains(&x))
        };
        match (&self.kind, v) {
            (ArgKind::I32 { range }, TypedValue::I32(x)) => {
                range.is_none_or(|(lo, hi)| (lo..=hi).contains(x))
            }
            (ArgKind::F32 { range }, TypedValue::F32(b)) => in_f32(*b, *range),
            (
                ArgKind::Array {
                    elem,
                    space,
                    extents,
                    range,
                },
                TypedValue::Array(a),
            ) => {
                a.elem == *elem
                    && a.extents == *extents
                    && a.placement
                        == Placement {
                            space: *space,
                            size_override: None,
                            offset: 0,
                        }
                    && (0..a.len()).all(|i| match elem {
                        ElemType::F32 => in_f32(a.word(i), *range),
                        ElemType::I32 => range
                            .is_none_or(|(lo, hi)| (lo..=hi).contains(&(a.word(i) as i32 as f32))),
                    })
            }
            _ => false,
        }
    }

    /// Draws a uniformly random value from the valid domain. Unranged
    /// floats draw from [-1, 1]; unranged integers from the full `i32` range.
    pub fn random_valid(&self, rng: &mut impl rand::Rng) -> TypedValue {
        let f = |rng: &mut dyn rand::RngCore, range: Option<(f32, f32)>| {
            let (lo, hi) = range.unwrap_or((-1.0, 1.0));
            rand::Rng::random_range(rng, lo..=hi)
        };
        match &self.kind {
            ArgKind::I32 { range } => {
                let (lo, hi) = range.unwrap_or((i32::MIN, i32::MAX));
                TypedValue::I32(rng.random_range(lo..=hi))
            }
            ArgKind::F32 { range } => TypedValue::F32(f(rng, *range).to_bits()),
            ArgKind::Array {
                elem,
                space,
                extents,
                range,
            } => {
                let count = self.declared_count() as usize;
                let words: Vec<u32> = (0..count)
                    .map(|_| match elem {
                        ElemType::F32 => f(rng, *range).to_bits(),
                        ElemType::I32 => {
                            let (lo, hi) = range.unwrap_or((-1000.0, 1000.0));
                            rng.random_range(lo as i32..=hi as i32) as u32
                        }
                    })
                    .collect();
                let bytes = words.iter().flat_map(|w| w.to_le_bytes()).collect();
                TypedValue::Array(ArrayValue::new(*elem, bytes, extents.clone(), *space))
            }
        }
    }
}

/// Where a materialized array is allocated and how its pointer is biased.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub space: MemSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_override: Option<u64>,
    #[serde(default)]
    pub offset: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArrayValue {
    pub elem: ElemType,
    /// Little-endian element bytes.
    pub bytes: Vec<u8>,
    pub extents: Vec<u32>,
    pub placement: Placement,
}

impl ArrayValue {
    pub fn new(elem: ElemType, bytes: Vec<u8>, extents: Vec<u32>, space: MemSpace) -> Self {
        ArrayValue {
            elem,
            bytes,
            extents,
            placement: Placement {
                space,
                size_override: None,
                offset: 0,
            },
        }
    }

    pub fn from_f32(values: &[f32], space: MemSpace) -> Self {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        ArrayValue::new(ElemType::F32, bytes, vec![values.len() as u32], space)
    }

    pub fn from_i32(values: &[i32], space: MemSpace) -> Self {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        ArrayValue::new(ElemType::I32, bytes, vec![values.len() as u32], space)
    }

    pub fn len(&self) -> usize {
        self.bytes.len() / 4
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn word(&self, i: usize) -> u32 {
        u32::from_le_bytes(self.bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"))
    }

    pub fn set_word(&mut self, i: usize, w: u32) {
        self.bytes[4 * i..4 * i + 4].copy_from_slice(&w.to_le_bytes());
    }

    /// Bytes the materialized allocation should span.
    pub fn alloc_size(&self) -> u64 {
        self.placement
            .size_override
            .unwrap_or(self.bytes.len() as u64)
            .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypedValue {
    I32(i32),
    /// Raw binary32 bits, so NaN payloads survive.
    F32(u32),
    Array(ArrayValue),
}

impl TypedValue {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TypedValue::I32(_) => "i32",
            TypedValue::F32(_) => "f32",
            TypedValue::Array(_) => "array",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Zero,
    Max,
    Min,
}

impl Boundary {
    pub const ALL: [Boundary; 3] = [Boundary::Zero, Boundary::Max, Boundary::Min];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum MutationOp {
    IntBoundary {
        which: Boundary,
    },
    IntByteLevel {
        flips: Vec<u8>,
        arith: i32,
    },
    FloatSign,
    FloatMantissa {
        bits: Vec<u8>,
    },
    FloatExponent {
        bits: Vec<u8>,
    },
    FloatArith {
        delta: f32,
    },
    /// Generic bit flips anywhere in the 32-bit pattern.
    FloatByteLevel {
        flips: Vec<u8>,
    },
    ArrayValueExtreme {
        pattern: Boundary,
    },
    ArrayDimension {
        extents: Vec<u32>,
    },
    ArrayEmpty,
    /// A scalar op applied to one element (index taken modulo the length).
    ArrayElement {
        index: u32,
        inner: Box<MutationOp>,
    },
    PointerSpaceSwap {
        space: MemSpace,
    },
    PointerOffset {
        bytes: i64,
    },
}

impl MutationOp {
    /// Ops that exploit the argument's type rather than treating it as bytes.
    pub fn is_type_aware(&self) -> bool {
        match self {
            MutationOp::IntByteLevel { .. } | MutationOp::FloatByteLevel { .. } => false,
            MutationOp::ArrayElement { inner, .. } => inner.is_type_aware(),
            _ => true,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MutationOp::IntBoundary { .. } => "int-boundary",
            MutationOp::IntByteLevel { .. } => "int-byte-level",
            MutationOp::FloatSign => "float-sign",
            MutationOp::FloatMantissa { .. } => "float-mantissa",
            MutationOp::FloatExponent { .. } => "float-exponent",
            MutationOp::FloatArith { .. } => "float-arith",
            MutationOp::FloatByteLevel { .. } => "float-byte-level",
            MutationOp::ArrayValueExtreme { .. } => "array-value-extreme",
            MutationOp::ArrayDimension { .. } => "array-dimension",
            MutationOp::ArrayEmpty => "array-empty",
            MutationOp::ArrayElement { .. } => "array-element",
            MutationOp::PointerSpaceSwap { .. } => "pointer-space-swap",
            MutationOp::PointerOffset { .. } => "pointer-offset",
        }
    }

    fn is_int_op(&self) -> bool {
        matches!(
            self,
            MutationOp::IntBoundary { .. } | MutationOp::IntByteLevel { .. }
        )
    }

    fn is_float_op(&self) -> bool {
        matches!(
            self,
            MutationOp::FloatSign
                | MutationOp::FloatMantissa { .. }
                | MutationOp::FloatExponent { .. }
                | MutationOp::FloatArith { .. }
                | MutationOp::FloatByteLevel { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MutationError {
    #[error("{op} cannot apply to a {kind} argument")]
    WrongKind {
        op: &'static str,
        kind: &'static str,
    },
}

fn flip_mask(bits: &[u8], lo: u8, hi: u8) -> u32 {
    bits.iter()
        .filter(|&&b| (lo..=hi).contains(&b))
        .fold(0, |m, &b| m | (1 << b))
}

pub fn mutate_int(v: i32, op: &MutationOp) -> Result<i32, MutationError> {
    match op {
        MutationOp::IntBoundary { which } => Ok(match which {
            Boundary::Zero => 0,
            Boundary::Max => i32::MAX,
            Boundary::Min => i32::MIN,
        }),
        MutationOp::IntByteLevel { flips, arith } => {
            Ok((((v as u32) ^ flip_mask(flips, 0, 31)) as i32).wrapping_add(*arith))
        }
        _ => Err(MutationError::WrongKind {
            op: op.name(),
            kind: "i32",
        }),
    }
}

pub fn mutate_float(bits: u32, op: &MutationOp) -> Result<u32, MutationError> {
    match op {
        MutationOp::FloatSign => Ok(bits ^ 0x8000_0000),
        MutationOp::FloatMantissa { bits: b } => Ok(bits ^ flip_mask(b, 0, 22)),
        MutationOp::FloatExponent { bits: b } => Ok(bits ^ flip_mask(b, 23, 30)),
        MutationOp::FloatArith { delta } => Ok((f32::from_bits(bits) + delta).to_bits()),
        MutationOp::FloatByteLevel { flips } => Ok(bits ^ flip_mask(flips, 0, 31)),
        _ => Err(MutationError::WrongKind {
            op: op.name(),
            kind: "f32",
        }),
    }
}

fn extreme(elem: ElemType, pattern: Boundary) -> u32 {
    match (elem, pattern) {
        (_, Boundary::Zero) => 0,
        (ElemType::I32, Boundary::Max) => i32::MAX as u32,
        (ElemType::I32, Boundary::Min) => i32::MIN as u32,
        (ElemType::F32, Boundary::Max) => f32::MAX.to_bits(),
        (ElemType::F32, Boundary::Min) => f32::MIN.to_bits(),
    }
}

pub fn mutate_array(v: &ArrayValue, op: &MutationOp) -> Result<ArrayValue, MutationError> {
    let mut out = v.clone();
    match op {
        MutationOp::ArrayValueExtreme { pattern } => {
            let w = extreme(v.elem, *pattern);
            for i in 0..out.len() {
                out.set_word(i, w);
            }
        }
        MutationOp::ArrayDimension { extents } => {
            let count: u64 = extents.iter().map(|&e| e as u64).product();
            out.bytes.resize(count as usize * 4, 0);
            out.extents = extents.clone();
        }
        MutationOp::ArrayEmpty => {
            out.bytes.clear();
            out.extents = vec![0];
        }
        MutationOp::ArrayElement { index, inner } => {
            if !out.is_empty() {
                let i = *index as usize % out.len();
                let w = out.word(i);
                let nw = match v.elem {
                    ElemType::I32 if inner.is_int_op() => mutate_int(w as i32, inner)? as u32,
                    ElemType::F32 if inner.is_float_op() => mutate_float(w, inner)?,
                    _ => {
                        return Err(MutationError::WrongKind {
                            op: inner.name(),
                            kind: v.elem.name(),
                        })
                    }
                };
                out.set_word(i, nw);
            }
        }
        MutationOp::PointerSpaceSwap { space } => out.placement.space = *space,
        MutationOp::PointerOffset { bytes } => {
            let bound = 2 * out.alloc_size() as i64;
            out.placement.offset = (out.placement.offset + bytes).clamp(-bound, bound);
        }
        _ => {
            return Err(MutationError::WrongKind {
                op: op.name(),
                kind: "array",
            })
        }
    }
    Ok(out)
}

/// Applies `op` to a value of any kind.
pub fn apply_op(v: &TypedValue, op: &MutationOp) -> Result<TypedValue, MutationError> {
    Ok(match v {
        TypedValue::I32(x) => TypedValue::I32(mutate_int(*x, op)?),
        TypedValue::F32(b) => TypedValue::F32(mutate_float(*b, op)?),
        TypedValue::Array(a) => TypedValue::Array(mutate_array(a, op)?),
    })
}

#[cfg(test)]
mod tests;
