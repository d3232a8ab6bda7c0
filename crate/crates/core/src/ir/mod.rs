//! Textual SIMT kernel IR: data model, parser, printer, CFG construction and
//! validation.
//!
//! A `.sir` file holds one or more kernels. Each kernel starts with a header
//!
//! ```text
//! kernel axpy(a:f32, x:ptr.global, y:ptr.global, n:i32) regs=16
//! ```
//!
//! followed by one instruction per line, optionally prefixed by `label:`.
//! Registers are `%r<k>` (i32), `%f<k>` (f32), `%p<k>` (predicate) and
//! `%a<k>` (64-bit device pointer). Kernel parameters are read with `$name`.
//! `#` starts a comment.

mod cfg;
mod parse;
mod print;
mod validate;

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use cfg::build_cfg;
pub use parse::{parse_program, parse_unchecked};
pub use validate::{validate, Diagnostic, DiagnosticKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarType {
    I32,
    F32,
    Ptr,
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalarType::I32 => "i32",
            ScalarType::F32 => "f32",
            ScalarType::Ptr => "ptr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemSpace {
    Global,
    Shared,
    Local,
}

impl MemSpace {
    pub const ALL: [MemSpace; 3] = [MemSpace::Global, MemSpace::Shared, MemSpace::Local];

    pub fn name(self) -> &'static str {
        match self {
            MemSpace::Global => "global",
            MemSpace::Shared => "shared",
            MemSpace::Local => "local",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_name(s: &str) -> Option<MemSpace> {
        match s {
            "global" => Some(MemSpace::Global),
            "shared" => Some(MemSpace::Shared),
            "local" => Some(MemSpace::Local),
            _ => None,
        }
    }
}

impl fmt::Display for MemSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: ScalarType,
    /// Declared space for pointer params; `None` is a validation error.
    pub space: Option<MemSpace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegClass {
    /// `%r`: 32-bit integer.
    Int,
    /// `%f`: binary32 float.
    Float,
    /// `%p`: predicate.
    Pred,
    /// `%a`: device address.
    Addr,
}

impl RegClass {
    pub fn prefix(self) -> char {
        match self {
            RegClass::Int => 'r',
            RegClass::Float => 'f',
            RegClass::Pred => 'p',
            RegClass::Addr => 'a',
        }
    }

    /// Scalar type carried by registers of this class (predicates have none).
    pub fn scalar(self) -> Option<ScalarType> {
        match self {
            RegClass::Int => Some(ScalarType::I32),
            RegClass::Float => Some(ScalarType::F32),
            RegClass::Addr => Some(ScalarType::Ptr),
            RegClass::Pred => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Reg {
    pub class: RegClass,
    pub index: u16,
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}{}", self.class.prefix(), self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Imm {
    Int(i64),
    /// Stored as raw bits so NaN payloads survive printing.
    Float(u32),
}

impl Eq for Imm {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Reg(Reg),
    Imm(Imm),
    /// Index into the kernel's parameter list.
    Param(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn name(self) -> &'static str {
        match self {
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
            CmpOp::Lt => "lt",
            CmpOp::Le => "le",
            CmpOp::Gt => "gt",
            CmpOp::Ge => "ge",
        }
    }

    pub fn from_name(s: &str) -> Option<CmpOp> {
        Some(match s {
            "eq" => CmpOp::Eq,
            "ne" => CmpOp::Ne,
            "lt" => CmpOp::Lt,
            "le" => CmpOp::Le,
            "gt" => CmpOp::Gt,
            "ge" => CmpOp::Ge,
            _ => return None,
        })
    }

    pub fn eval<T: PartialOrd>(self, a: T, b: T) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialReg {
    Tid,
    Ntid,
    Ctaid,
    Nctaid,
}

impl SpecialReg {
    pub fn name(self) -> &'static str {
        match self {
            SpecialReg::Tid => "tid",
            SpecialReg::Ntid => "ntid",
            SpecialReg::Ctaid => "ctaid",
            SpecialReg::Nctaid => "nctaid",
        }
    }

    pub fn from_name(s: &str) -> Option<SpecialReg> {
        Some(match s {
            "tid" => SpecialReg::Tid,
            "ntid" => SpecialReg::Ntid,
            "ctaid" => SpecialReg::Ctaid,
            "nctaid" => SpecialReg::Nctaid,
            _ => return None,
        })
    }
}

/// Element type of a load or store; fixes the access width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemType {
    U8,
    U16,
    I32,
    F32,
    B64,
}

impl MemType {
    pub fn width(self) -> u32 {
        match self {
            MemType::U8 => 1,
            MemType::U16 => 2,
            MemType::I32 | MemType::F32 => 4,
            MemType::B64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MemType::U8 => "u8",
            MemType::U16 => "u16",
            MemType::I32 => "i32",
            MemType::F32 => "f32",
            MemType::B64 => "b64",
        }
    }

    pub fn from_name(s: &str) -> Option<MemType> {
        Some(match s {
            "u8" => MemType::U8,
            "u16" => MemType::U16,
            "i32" | "s32" => MemType::I32,
            "f32" => MemType::F32,
            "b64" => MemType::B64,
            _ => return None,
        })
    }

    /// Register class a value of this type lives in.
    pub fn reg_class(self) -> RegClass {
        match self {
            MemType::U8 | MemType::U16 | MemType::I32 => RegClass::Int,
            MemType::F32 => RegClass::Float,
            MemType::B64 => RegClass::Addr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Address {
    pub base: Reg,
    pub offset: i32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchTarget {
    pub label: String,
    /// Instruction index the label resolves to.
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Mov {
        dst: Reg,
        src: Operand,
    },
    Add {
        dst: Reg,
        a: Operand,
        b: Operand,
    },
    Sub {
        dst: Reg,
        a: Operand,
        b: Operand,
    },
    Mul {
        dst: Reg,
        a: Operand,
        b: Operand,
    },
    FAdd {
        dst: Reg,
        a: Operand,
        b: Operand,
    },
    FSub {
        dst: Reg,
        a: Operand,
        b: Operand,
    },
    FMul {
        dst: Reg,
        a: Operand,
        b: Operand,
    },
    Setp {
        cmp: CmpOp,
        dst: Reg,
        a: Operand,
        b: Operand,
    },
    /// `pred` is `(register, negated)`.
    Bra {
        target: BranchTarget,
        pred: Option<(Reg, bool)>,
    },
    Ld {
        space: MemSpace,
        ty: MemType,
        dst: Reg,
        addr: Address,
    },
    St {
        space: MemSpace,
        ty: MemType,
        addr: Address,
        src: Operand,
    },
    Cvt {
        dst: Reg,
        src: Reg,
    },
    Sreg {
        dst: Reg,
        sreg: SpecialReg,
    },
    Exit,
}

impl Op {
    pub fn is_memory_access(&self) -> bool {
        matches!(self, Op::Ld { .. } | Op::St { .. })
    }

    pub fn is_control_flow(&self) -> bool {
        matches!(self, Op::Bra { .. } | Op::Exit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    /// Dense index in source order.
    pub id: u32,
    pub op: Op,
}

impl Instruction {
    /// Access width in bytes for loads and stores.
    pub fn width(&self) -> Option<u32> {
        match &self.op {
            Op::Ld { ty, .. } | Op::St { ty, .. } => Some(ty.width()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminator {
    Branch { conditional: bool },
    Exit,
    Fallthrough,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: u32,
    /// Half-open instruction range `[start, end)`.
    pub start: u32,
    pub end: u32,
    pub terminator: Terminator,
}

impl BasicBlock {
    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone)]
pub struct KernelDef {
    pub name: String,
    pub params: Vec<Param>,
    pub register_count: u16,
    pub instructions: Vec<Instruction>,
    /// Labels in source order, with the instruction each one names.
    pub labels: Vec<(String, u32)>,
    pub blocks: Vec<BasicBlock>,
    pub static_edges: Vec<(u32, u32)>,
    /// Block id of every instruction.
    pub block_of: Vec<u32>,
    /// 1-based source line of every instruction. Not part of equality.
    pub lines: Vec<u32>,
    /// 1-based source line of the header. Not part of equality.
    pub header_line: u32,
}

impl PartialEq for KernelDef {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.params == other.params
            && self.register_count == other.register_count
            && self.instructions == other.instructions
            && self.labels == other.labels
            && self.blocks == other.blocks
            && self.static_edges == other.static_edges
            && self.block_of == other.block_of
    }
}

impl KernelDef {
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn label(&self, name: &str) -> Option<u32> {
        self.labels.iter().find(|(l, _)| l == name).map(|(_, i)| *i)
    }

    /// True when `iid` is the last instruction of its block.
    pub fn ends_block(&self, iid: u32) -> bool {
        self.blocks[self.block_of[iid as usize] as usize].end == iid + 1
    }

    pub fn line_of(&self, iid: u32) -> u32 {
        self.lines
            .get(iid as usize)
            .copied()
            .unwrap_or(self.header_line)
    }
}

#[derive(Debug, Clone)]
pub struct Program {
    pub kernels: IndexMap<String, KernelDef>,
    /// Hex SHA-256 of the canonical printout.
    pub source_digest: String,
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.source_digest == other.source_digest
            && self.kernels.len() == other.kernels.len()
            && self
                .kernels
                .iter()
                .zip(other.kernels.iter())
                .all(|(a, b)| a == b)
    }
}

impl Program {
    pub fn kernel(&self, name: &str) -> Option<&KernelDef> {
        self.kernels.get(name)
    }

    pub fn kernel_index(&self, name: &str) -> Option<usize> {
        self.kernels.get_index_of(name)
    }

    /// Canonical text: comments and insignificant whitespace removed.
    pub fn canonical_text(&self) -> String {
        print::print_program(self)
    }

    pub fn instruction_count(&self) -> usize {
        self.kernels.values().map(|k| k.instructions.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: syntax error: {reason}")]
    Syntax { line: u32, reason: String },
    #[error("line {line}: duplicate kernel `{name}`")]
    DuplicateKernel { name: String, line: u32 },
    #[error("line {line}: unresolved label `{label}`")]
    UnresolvedLabel { label: String, line: u32 },
    #[error("line {line}: type mismatch: {reason}")]
    TypeMismatch { line: u32, reason: String },
    #[error("line {line}: {reason}")]
    Invalid { line: u32, reason: String },
}

impl ParseError {
    pub fn line(&self) -> u32 {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::DuplicateKernel { line, .. }
            | ParseError::UnresolvedLabel { line, .. }
            | ParseError::TypeMismatch { line, .. }
            | ParseError::Invalid { line, .. } => *line,
        }
    }
}
