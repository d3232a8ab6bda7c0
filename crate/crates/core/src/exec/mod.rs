//! Deterministic SIMT interpreter.
//!
//! Threads run one at a time, block-major then thread-major, each to
//! completion. Every load and store is reported to the hooks before it
//! touches memory, and every block-to-block transition is reported as a CFG
//! edge. The first hook that rejects an access stops the whole launch.

mod hooks;

use std::fmt;

use crate::ir::{
    Address, Imm, KernelDef, MemSpace, MemType, Op, Operand, Program, Reg, RegClass, ScalarType,
    SpecialReg,
};
use crate::memory::{AllocId, DeviceMemoryImage};
use crate::sanitizer::{self, Access, BugClass, BugReport, Mechanism};

pub use hooks::{CountingHooks, Hooks, SanitizerHook, TraceHook};

pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// A resolved kernel argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaunchArg {
    I32(i32),
    F32(u32),
    Ptr { addr: u64, tag: Option<AllocId> },
}

impl LaunchArg {
    pub fn ty(&self) -> ScalarType {
        match self {
            LaunchArg::I32(_) => ScalarType::I32,
            LaunchArg::F32(_) => ScalarType::F32,
            LaunchArg::Ptr { .. } => ScalarType::Ptr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchConfig {
    pub kernel: String,
    pub grid: u32,
    pub block: u32,
    pub args: Vec<LaunchArg>,
    /// Maximum instructions retired per thread.
    pub budget: u64,
}

impl LaunchConfig {
    pub fn new(kernel: &str, grid: u32, block: u32, args: Vec<LaunchArg>) -> Self {
        LaunchConfig {
            kernel: kernel.to_string(),
            grid,
            block,
            args,
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecStatus {
    Completed,
    SanitizerStop(Box<BugReport>),
    BudgetExhausted { ctaid: u32, tid: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    /// Instructions retired across all threads.
    pub retired: u64,
}

impl ExecOutcome {
    pub fn report(&self) -> Option<&BugReport> {
        match &self.status {
            ExecStatus::SanitizerStop(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LaunchError {
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("kernel `{kernel}` takes {expected} arguments, got {got}")]
    ArityMismatch {
        kernel: String,
        expected: usize,
        got: usize,
    },
    #[error("argument {index} of `{kernel}` must be {expected}, got {got}")]
    ArgTypeMismatch {
        kernel: String,
        index: usize,
        expected: ScalarType,
        got: ScalarType,
    },
    #[error("grid and block dimensions must be at least 1")]
    EmptyGeometry,
}

/// Per-thread state.
#[derive(Debug, Clone)]
pub struct ThreadCtx {
    pub ctaid: u32,
    pub tid: u32,
    pub ints: Vec<i32>,
    pub floats: Vec<u32>,
    pub preds: Vec<bool>,
    pub addrs: Vec<u64>,
    /// Provenance tag per pointer register.
    pub tags: Vec<Option<AllocId>>,
    pub pc: u32,
    pub retired: u64,
}

impl ThreadCtx {
    fn new(regs: usize) -> Self {
        ThreadCtx {
            ctaid: 0,
            tid: 0,
            ints: vec![0; regs],
            floats: vec![0; regs],
            preds: vec![false; regs],
            addrs: vec![0; regs],
            tags: vec![None; regs],
            pc: 0,
            retired: 0,
        }
    }

    fn reset(&mut self, ctaid: u32, tid: u32) {
        self.ctaid = ctaid;
        self.tid = tid;
        self.ints.fill(0);
        self.floats.fill(0);
        self.preds.fill(false);
        self.addrs.fill(0);
        self.tags.fill(None);
        self.pc = 0;
        self.retired = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepResult {
    Continue,
    Exited,
    Stopped,
}

impl fmt::Display for StepResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Value of a special register for the current thread.
pub fn read_special(ctx: &ThreadCtx, cfg: &LaunchConfig, sreg: SpecialReg) -> i32 {
    match sreg {
        SpecialReg::Tid => ctx.tid as i32,
        SpecialReg::Ntid => cfg.block as i32,
        SpecialReg::Ctaid => ctx.ctaid as i32,
        SpecialReg::Nctaid => cfg.grid as i32,
    }
}

fn check_args(kernel: &KernelDef, cfg: &LaunchConfig) -> Result<(), LaunchError> {
    if cfg.grid == 0 || cfg.block == 0 {
        return Err(LaunchError::EmptyGeometry);
    }
    if kernel.params.len() != cfg.args.len() {
        return Err(LaunchError::ArityMismatch {
            kernel: kernel.name.clone(),
            expected: kernel.params.len(),
            got: cfg.args.len(),
        });
    }
    for (index, (p, a)) in kernel.params.iter().zip(&cfg.args).enumerate() {
        if p.ty != a.ty() {
            return Err(LaunchError::ArgTypeMismatch {
                kernel: kernel.name.clone(),
                index,
                expected: p.ty,
                got: a.ty(),
            });
        }
    }
    Ok(())
}

/// Runs `cfg.kernel` over the whole grid against `image`.
pub fn launch(
    program: &Program,
    image: &mut DeviceMemoryImage,
    cfg: &LaunchConfig,
    hooks: &mut dyn Hooks,
) -> Result<ExecOutcome, LaunchError> {
    let kernel = program
        .kernel(&cfg.kernel)
        .ok_or_else(|| LaunchError::UnknownKernel(cfg.kernel.clone()))?;
    check_args(kernel, cfg)?;
    hooks.on_launch(kernel, cfg);

    let block_end: Vec<bool> = (0..kernel.instructions.len() as u32)
        .map(|i| kernel.ends_block(i))
        .collect();
    let mut machine = Machine {
        kernel,
        cfg,
        block_end,
        stop: None,
    };
    let mut ctx = ThreadCtx::new(kernel.register_count as usize);
    let mut retired = 0;
    for ctaid in 0..cfg.grid {
        for tid in 0..cfg.block {
            ctx.reset(ctaid, tid);
            let result = loop {
                if ctx.retired >= cfg.budget {
                    break None;
                }
                match machine.step(&mut ctx, image, hooks) {
                    StepResult::Continue => {}
                    StepResult::Exited => break Some(StepResult::Exited),
                    StepResult::Stopped => break Some(StepResult::Stopped),
                }
            };
            retired += ctx.retired;
            match result {
                Some(StepResult::Exited) => {}
                Some(_) => {
                    let report = machine.stop.take().expect("stop carries a report");
                    return Ok(ExecOutcome {
                        status: ExecStatus::SanitizerStop(report),
                        retired,
                    });
                }
                None => {
                    return Ok(ExecOutcome {
                        status: ExecStatus::BudgetExhausted { ctaid, tid },
                        retired,
                    })
                }
            }
        }
    }
    Ok(ExecOutcome {
        status: ExecStatus::Completed,
        retired,
    })
}

struct Machine<'a> {
    kernel: &'a KernelDef,
    cfg: &'a LaunchConfig,
    block_end: Vec<bool>,
    stop: Option<Box<BugReport>>,
}

impl Machine<'_> {
    fn int(&self, ctx: &ThreadCtx, op: &Operand) -> i32 {
        match *op {
            Operand::Reg(r) => ctx.ints[r.index as usize],
            Operand::Imm(Imm::Int(v)) => v as i32,
            Operand::Imm(Imm::Float(b)) => b as i32,
            Operand::Param(i) => match self.cfg.args[i as usize] {
                LaunchArg::I32(v) => v,
                LaunchArg::F32(b) => b as i32,
                LaunchArg::Ptr { addr, .. } => addr as i32,
            },
        }
    }

    fn float(&self, ctx: &ThreadCtx, op: &Operand) -> f32 {
        f32::from_bits(match *op {
            Operand::Reg(r) => ctx.floats[r.index as usize],
            Operand::Imm(Imm::Float(b)) => b,
            Operand::Imm(Imm::Int(v)) => (v as f32).to_bits(),
            Operand::Param(i) => match self.cfg.args[i as usize] {
                LaunchArg::F32(b) => b,
                LaunchArg::I32(v) => v as u32,
                LaunchArg::Ptr { addr, .. } => addr as u32,
            },
        })
    }

    fn ptr(&self, ctx: &ThreadCtx, op: &Operand) -> (u64, Option<AllocId>) {
        match *op {
            Operand::Reg(r) if r.class == RegClass::Addr => {
                (ctx.addrs[r.index as usize], ctx.tags[r.index as usize])
            }
            Operand::Param(i) => match self.cfg.args[i as usize] {
                LaunchArg::Ptr { addr, tag } => (addr, tag),
                LaunchArg::I32(v) => (v as i64 as u64, None),
                LaunchArg::F32(b) => (b as u64, None),
            },
            _ => (self.int(ctx, op) as i64 as u64, None),
        }
    }

    fn operand_is_float(&self, op: &Operand) -> bool {
        match *op {
            Operand::Reg(r) => r.class == RegClass::Float,
            Operand::Imm(Imm::Float(_)) => true,
            Operand::Imm(Imm::Int(_)) => false,
            Operand::Param(i) => self.kernel.params[i as usize].ty == ScalarType::F32,
        }
    }

    fn write_int(ctx: &mut ThreadCtx, dst: Reg, v: i32) {
        ctx.ints[dst.index as usize] = v;
    }

    fn write_float(ctx: &mut ThreadCtx, dst: Reg, v: f32) {
        ctx.floats[dst.index as usize] = v.to_bits();
    }

    fn write_ptr(ctx: &mut ThreadCtx, dst: Reg, addr: u64, tag: Option<AllocId>) {
        ctx.addrs[dst.index as usize] = addr;
        ctx.tags[dst.index as usize] = tag;
    }

    #[allow(clippy::too_many_arguments)]
    fn access(
        &mut self,
        ctx: &ThreadCtx,
        iid: u32,
        space: MemSpace,
        ty: MemType,
        addr: &Address,
        store: bool,
        image: &DeviceMemoryImage,
        hooks: &mut dyn Hooks,
    ) -> Option<u64> {
        let base = ctx.addrs[addr.base.index as usize];
        let ea = base.wrapping_add(addr.offset as i64 as u64);
        let acc = Access {
            iid: Some(iid),
            space,
            addr: ea,
            width: ty.width(),
            store,
            tag: ctx.tags[addr.base.index as usize],
            ctaid: ctx.ctaid,
            tid: ctx.tid,
        };
        if let Err(report) = hooks.on_mem_access(image, self.kernel, &acc) {
            self.stop = Some(report);
            return None;
        }
        // without a sanitizer, touching unbacked memory still faults
        if image.read(ea, ty.width() as usize).is_none() {
            let report = sanitizer::make_report(
                image,
                &self.kernel.name,
                &acc,
                BugClass::WildAccess,
                Mechanism::Registry,
            );
            self.stop = Some(Box::new(report));
            return None;
        }
        Some(ea)
    }

    /// Executes the instruction at `ctx.pc`.
    fn step(
        &mut self,
        ctx: &mut ThreadCtx,
        image: &mut DeviceMemoryImage,
        hooks: &mut dyn Hooks,
    ) -> StepResult {
        let pc = ctx.pc;
        let Some(ins) = self.kernel.instructions.get(pc as usize) else {
            return StepResult::Exited;
        };
        let mut next = pc + 1;
        match &ins.op {
            Op::Mov { dst, src } => match dst.class {
                RegClass::Int => Self::write_int(ctx, *dst, self.int(ctx, src)),
                RegClass::Float => Self::write_float(ctx, *dst, self.float(ctx, src)),
                RegClass::Addr => {
                    let (a, t) = self.ptr(ctx, src);
                    Self::write_ptr(ctx, *dst, a, t);
                }
                RegClass::Pred => {}
            },
            Op::Add { dst, a, b } | Op::Sub { dst, a, b } => {
                let sub = matches!(ins.op, Op::Sub { .. });
                if dst.class == RegClass::Addr {
                    let (base, tag) = self.ptr(ctx, a);
                    let off = self.int(ctx, b) as i64 as u64;
                    let v = if sub {
                        base.wrapping_sub(off)
                    } else {
                        base.wrapping_add(off)
                    };
                    Self::write_ptr(ctx, *dst, v, tag);
                } else {
                    let (x, y) = (self.int(ctx, a), self.int(ctx, b));
                    let v = if sub {
                        x.wrapping_sub(y)
                    } else {
                        x.wrapping_add(y)
                    };
                    Self::write_int(ctx, *dst, v);
                }
            }
            Op::Mul { dst, a, b } => {
                let v = self.int(ctx, a).wrapping_mul(self.int(ctx, b));
                Self::write_int(ctx, *dst, v);
            }
            Op::FAdd { dst, a, b } => {
                let v = self.float(ctx, a) + self.float(ctx, b);
                Self::write_float(ctx, *dst, v);
            }
            Op::FSub { dst, a, b } => {
                let v = self.float(ctx, a) - self.float(ctx, b);
                Self::write_float(ctx, *dst, v);
            }
            Op::FMul { dst, a, b } => {
                let v = self.float(ctx, a) * self.float(ctx, b);
                Self::write_float(ctx, *dst, v);
            }
            Op::Setp { cmp, dst, a, b } => {
                let v = if self.operand_is_float(a) || self.operand_is_float(b) {
                    cmp.eval(self.float(ctx, a), self.float(ctx, b))
                } else {
                    cmp.eval(self.int(ctx, a), self.int(ctx, b))
                };
                ctx.preds[dst.index as usize] = v;
            }
            Op::Bra { target, pred } => {
                let taken = match pred {
                    None => true,
                    Some((p, negated)) => ctx.preds[p.index as usize] != *negated,
                };
                if taken {
                    next = target.index;
                }
            }
            Op::Ld {
                space,
                ty,
                dst,
                addr,
            } => {
                let Some(ea) = self.access(ctx, pc, *space, *ty, addr, false, image, hooks) else {
                    return StepResult::Stopped;
                };
                let bytes = image.read(ea, ty.width() as usize).expect("checked above");
                match ty {
                    MemType::U8 => Self::write_int(ctx, *dst, bytes[0] as i32),
                    MemType::U16 => {
                        Self::write_int(ctx, *dst, u16::from_le_bytes([bytes[0], bytes[1]]) as i32)
                    }
                    MemType::I32 => Self::write_int(
                        ctx,
                        *dst,
                        i32::from_le_bytes(bytes.try_into().expect("4 bytes")),
                    ),
                    MemType::F32 => {
                        ctx.floats[dst.index as usize] =
                            u32::from_le_bytes(bytes.try_into().expect("4 bytes"))
                    }
                    MemType::B64 => Self::write_ptr(
                        ctx,
                        *dst,
                        u64::from_le_bytes(bytes.try_into().expect("8 bytes")),
                        None,
                    ),
                }
            }
            Op::St {
                space,
                ty,
                addr,
                src,
            } => {
                let Some(ea) = self.access(ctx, pc, *space, *ty, addr, true, image, hooks) else {
                    return StepResult::Stopped;
                };
                let word = match ty {
                    MemType::F32 => self.float(ctx, src).to_bits() as u64,
                    MemType::B64 => self.ptr(ctx, src).0,
                    _ => self.int(ctx, src) as u32 as u64,
                };
                image.write(ea, &word.to_le_bytes()[..ty.width() as usize]);
            }
            Op::Cvt { dst, src } => match (dst.class, src.class) {
                (RegClass::Float, RegClass::Int) => {
                    Self::write_float(ctx, *dst, ctx.ints[src.index as usize] as f32)
                }
                (RegClass::Int, RegClass::Float) => {
                    let f = f32::from_bits(ctx.floats[src.index as usize]);
                    Self::write_int(ctx, *dst, f as i32)
                }
                _ => {}
            },
            Op::Sreg { dst, sreg } => {
                let v = read_special(ctx, self.cfg, *sreg);
                Self::write_int(ctx, *dst, v);
            }
            Op::Exit => {
                ctx.retired += 1;
                return StepResult::Exited;
            }
        }
        ctx.retired += 1;
        if self.block_end[pc as usize] && (next as usize) < self.kernel.instructions.len() {
            let src = self.kernel.block_of[pc as usize];
            let dst = self.kernel.block_of[next as usize];
            hooks.on_cf(self.kernel, src, dst);
        }
        ctx.pc = next;
        StepResult::Continue
    }
}

#[cfg(test)]
mod tests;
