use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    apply_op, ArgKind, ArgSpec, ArrayValue, ElemType, MutationError, MutationOp, Placement,
    TypedValue,
};

const FORMAT_VERSION: u32 = 1;

/// A typed argument vector plus the lineage that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub args: Vec<TypedValue>,
    pub rng_seed: u64,
    /// Id of the parent test case; `None` for seeds.
    pub parent: Option<String>,
    /// Ops applied to the parent's args, as (argument index, op).
    pub trace: Vec<(usize, MutationOp)>,
}

#[derive(Debug, thiserror::Error)]
pub enum TestCaseError {
    #[error("malformed test case: {0}")]
    Format(String),
    #[error("unsupported test case version {0}")]
    Version(u32),
    #[error("argument {index}: expected {expected}, found {found}")]
    TypeMismatch {
        index: usize,
        expected: &'static str,
        found: &'static str,
    },
    #[error("expected {expected} arguments, found {found}")]
    Arity { expected: usize, found: usize },
    #[error(transparent)]
    Mutation(#[from] MutationError),
}

#[derive(Serialize, Deserialize)]
struct WireArg {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bits: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    elem: Option<ElemType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extents: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    placement: Option<Placement>,
}

#[derive(Serialize, Deserialize)]
struct WireStep {
    arg: usize,
    op: MutationOp,
}

#[derive(Serialize, Deserialize)]
struct WireTestCase {
    version: u32,
    argspec: String,
    rng_seed: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
    #[serde(default)]
    arg: Vec<WireArg>,
    #[serde(default)]
    trace: Vec<WireStep>,
}

fn to_wire(v: &TypedValue) -> WireArg {
    let mut w = WireArg {
        kind: v.kind_name().to_string(),
        value: None,
        bits: None,
        elem: None,
        extents: None,
        hex: None,
        placement: None,
    };
    match v {
        TypedValue::I32(x) => w.value = Some(*x),
        TypedValue::F32(b) => w.bits = Some(format!("{b:#010x}")),
        TypedValue::Array(a) => {
            w.elem = Some(a.elem);
            w.extents = Some(a.extents.clone());
            w.hex = Some(hex::encode(&a.bytes));
            w.placement = Some(a.placement.clone());
        }
    }
    w
}

fn from_wire(w: WireArg) -> Result<TypedValue, TestCaseError> {
    let missing = |f: &str| TestCaseError::Format(format!("{} argument lacks `{f}`", w.kind));
    Ok(match w.kind.as_str() {
        "i32" => TypedValue::I32(w.value.ok_or_else(|| missing("value"))?),
        "f32" => {
            let s = w.bits.as_deref().ok_or_else(|| missing("bits"))?;
            let digits = s.strip_prefix("0x").unwrap_or(s);
            TypedValue::F32(
                u32::from_str_radix(digits, 16)
                    .map_err(|e| TestCaseError::Format(format!("bad float bits `{s}`: {e}")))?,
            )
        }
        "array" => {
            let bytes = hex::decode(w.hex.as_deref().ok_or_else(|| missing("hex"))?)
                .map_err(|e| TestCaseError::Format(e.to_string()))?;
            if bytes.len() % 4 != 0 {
                return Err(TestCaseError::Format(
                    "array payload is not whole elements".into(),
                ));
            }
            TypedValue::Array(ArrayValue {
                elem: w.elem.ok_or_else(|| missing("elem"))?,
                bytes,
                extents: w.extents.ok_or_else(|| missing("extents"))?,
                placement: w.placement.ok_or_else(|| missing("placement"))?,
            })
        }
        other => {
            return Err(TestCaseError::Format(format!(
                "unknown argument kind `{other}`"
            )))
        }
    })
}

impl TestCase {
    pub fn seed(args: Vec<TypedValue>) -> Self {
        TestCase {
            args,
            rng_seed: 0,
            parent: None,
            trace: Vec::new(),
        }
    }

    pub(super) fn child(
        parent: &TestCase,
        args: Vec<TypedValue>,
        rng_seed: u64,
        trace: Vec<(usize, MutationOp)>,
    ) -> Self {
        TestCase {
            args,
            rng_seed,
            parent: Some(parent.id()),
            trace,
        }
    }

    /// Content hash over args and lineage.
    pub fn id(&self) -> String {
        let body = self.to_toml("");
        hex::encode(&Sha256::digest(body.as_bytes())[..8])
    }

    pub fn type_aware_ops(&self) -> impl Iterator<Item = &MutationOp> {
        self.trace
            .iter()
            .map(|(_, op)| op)
            .filter(|op| op.is_type_aware())
    }

    pub fn check_against(&self, specs: &[ArgSpec]) -> Result<(), TestCaseError> {
        if specs.len() != self.args.len() {
            return Err(TestCaseError::Arity {
                expected: specs.len(),
                found: self.args.len(),
            });
        }
        for (index, (s, v)) in specs.iter().zip(&self.args).enumerate() {
            if !s.accepts(v) {
                return Err(TestCaseError::TypeMismatch {
                    index,
                    expected: s.kind_name(),
                    found: v.kind_name(),
                });
            }
        }
        Ok(())
    }

    pub fn to_toml(&self, argspec_digest: &str) -> String {
        let wire = WireTestCase {
            version: FORMAT_VERSION,
            argspec: argspec_digest.to_string(),
            rng_seed: format!("{:#x}", self.rng_seed),
            parent: self.parent.clone(),
            arg: self.args.iter().map(to_wire).collect(),
            trace: self
                .trace
                .iter()
                .map(|(arg, op)| WireStep {
                    arg: *arg,
                    op: op.clone(),
                })
                .collect(),
        };
        toml::to_string(&wire).expect("test case serializes")
    }

    /// Parses a test case and returns it with its recorded argspec digest.
    pub fn from_toml(text: &str) -> Result<(TestCase, String), TestCaseError> {
        let wire: WireTestCase =
            toml::from_str(text).map_err(|e| TestCaseError::Format(e.to_string()))?;
        if wire.version != FORMAT_VERSION {
            return Err(TestCaseError::Version(wire.version));
        }
        let digits = wire.rng_seed.strip_prefix("0x").unwrap_or(&wire.rng_seed);
        let rng_seed = u64::from_str_radix(digits, 16)
            .map_err(|e| TestCaseError::Format(format!("bad rng_seed: {e}")))?;
        let tc = TestCase {
            args: wire
                .arg
                .into_iter()
                .map(from_wire)
                .collect::<Result<_, _>>()?,
            rng_seed,
            parent: wire.parent,
            trace: wire.trace.into_iter().map(|s| (s.arg, s.op)).collect(),
        };
        Ok((tc, wire.argspec))
    }
}

/// Re-applies a recorded trace to the parent's arguments.
pub fn replay_trace(
    parent: &[TypedValue],
    trace: &[(usize, MutationOp)],
) -> Result<Vec<TypedValue>, TestCaseError> {
    let mut args = parent.to_vec();
    for (i, op) in trace {
        let slot = args.get_mut(*i).ok_or(TestCaseError::Arity {
            expected: *i + 1,
            found: parent.len(),
        })?;
        *slot = apply_op(slot, op)?;
    }
    Ok(args)
}

/// Stable digest of an argument list's names, types and declared shapes.
pub fn argspec_digest(specs: &[ArgSpec]) -> String {
    let mut text = String::new();
    for s in specs {
        let shape = match &s.kind {
            ArgKind::I32 { .. } => "i32".to_string(),
            ArgKind::F32 { .. } => "f32".to_string(),
            ArgKind::Array {
                elem,
                space,
                extents,
                ..
            } => format!("array {} {} {:?}", elem.name(), space, extents),
        };
        text.push_str(&format!("{} {}\n", s.name, shape));
    }
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}
