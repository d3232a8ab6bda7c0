//! Executes manifest phases against a device image.

use indexmap::IndexMap;

use super::manifest::{Binding, HostOp, Payload, Step};
use super::CampaignError;
use crate::exec::{self, ExecStatus, Hooks, LaunchArg, LaunchConfig, DEFAULT_BUDGET};
use crate::ir::{MemSpace, Program};
use crate::memory::{AllocId, DeviceMemoryImage, MemoryError};
use crate::mutation::TypedValue;
use crate::sanitizer::{self, BugReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NamedAlloc {
    pub addr: u64,
    pub id: AllocId,
    pub space: MemSpace,
    pub size: u64,
}

/// Host-side name table. Freed names keep their last address so later ops
/// can still (incorrectly) use it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HostState {
    pub names: IndexMap<String, NamedAlloc>,
}

#[derive(Debug, Default)]
pub struct PhaseOutcome {
    pub report: Option<Box<BugReport>>,
    /// `copy_out` results, when collected.
    pub outputs: Vec<(String, Vec<u8>)>,
    pub retired: u64,
    pub launches: u32,
    /// Budget exhaustion as (kernel, ctaid, tid).
    pub hang: Option<(String, u32, u32)>,
    /// Why the inputs could not be materialized, if they could not.
    pub rejected: Option<String>,
}

impl PhaseOutcome {
    pub fn stopped(&self) -> bool {
        self.report.is_some() || self.hang.is_some() || self.rejected.is_some()
    }
}

pub struct PhaseRun<'a> {
    pub program: &'a Program,
    pub args: &'a [TypedValue],
    pub default_budget: Option<u64>,
    pub collect_outputs: bool,
}

fn materialize(
    image: &mut DeviceMemoryImage,
    name: &str,
    v: &TypedValue,
) -> Result<LaunchArg, MemoryError> {
    Ok(match v {
        TypedValue::I32(x) => LaunchArg::I32(*x),
        TypedValue::F32(b) => LaunchArg::F32(*b),
        TypedValue::Array(a) => {
            let size = a.alloc_size();
            let (base, id) =
                image.alloc_labeled(a.placement.space, size, &format!("arg:{name}"))?;
            let n = a.bytes.len().min(size as usize);
            image.write(base, &a.bytes[..n]);
            LaunchArg::Ptr {
                addr: base.wrapping_add_signed(a.placement.offset),
                tag: Some(id),
            }
        }
    })
}

/// Runs one phase, stopping at the first finding, hang or rejected input.
///
/// `arg_names` labels materialized test-case arrays.
pub fn run_phase(
    run: &PhaseRun<'_>,
    arg_names: &[String],
    image: &mut DeviceMemoryImage,
    state: &mut HostState,
    steps: &[Step],
    hooks: &mut dyn Hooks,
) -> Result<PhaseOutcome, CampaignError> {
    let mut out = PhaseOutcome::default();
    for step in steps {
        let lookup = |state: &HostState, name: &str| {
            state.names.get(name).copied().ok_or_else(|| {
                CampaignError::Internal(format!("line {}: `{name}` has no allocation", step.line))
            })
        };
        match &step.op {
            HostOp::Alloc { name, space, size } => {
                let (addr, id) = image.alloc_labeled(*space, *size, name).map_err(|e| {
                    CampaignError::Memory {
                        line: step.line,
                        source: e,
                    }
                })?;
                state.names.insert(
                    name.clone(),
                    NamedAlloc {
                        addr,
                        id,
                        space: *space,
                        size: *size,
                    },
                );
            }
            HostOp::CopyIn { name, src } => {
                let a = lookup(state, name)?;
                let bytes = match src {
                    Payload::Zero => vec![0; a.size as usize],
                    Payload::Hex(b) => b.clone(),
                    Payload::Tc(k) => match &run.args[*k] {
                        TypedValue::Array(arr) => {
                            arr.bytes[..arr.bytes.len().min(a.size as usize)].to_vec()
                        }
                        _ => {
                            return Err(CampaignError::Internal(format!("tc:{k} is not an array")))
                        }
                    },
                };
                if let Err(r) = sanitizer::copy_in(image, "host:copy_in", a.space, a.addr, &bytes) {
                    out.report = Some(r);
                }
            }
            HostOp::CopyOut { name, len } => {
                if !run.collect_outputs {
                    continue;
                }
                let a = lookup(state, name)?;
                match sanitizer::copy_out(image, "host:copy_out", a.space, a.addr, *len as usize) {
                    Ok(bytes) => out.outputs.push((name.clone(), bytes)),
                    Err(r) => out.report = Some(r),
                }
            }
            HostOp::Free { name } => {
                let a = lookup(state, name)?;
                if image.free(a.addr).is_err() {
                    out.report = Some(Box::new(sanitizer::invalid_free(
                        image,
                        "host:free",
                        a.space,
                        a.addr,
                    )));
                }
            }
            HostOp::Sync => {}
            HostOp::Launch {
                kernel,
                grid,
                block,
                args,
                budget,
            } => {
                let mut launch_args = Vec::with_capacity(args.len());
                for b in args {
                    launch_args.push(match b {
                        Binding::I32(v) => LaunchArg::I32(*v),
                        Binding::F32(v) => LaunchArg::F32(*v),
                        Binding::Ptr(addr) => LaunchArg::Ptr {
                            addr: *addr,
                            tag: None,
                        },
                        Binding::Named(n) => {
                            let a = lookup(state, n)?;
                            LaunchArg::Ptr {
                                addr: a.addr,
                                tag: Some(a.id),
                            }
                        }
                        Binding::Tc(k) => match materialize(image, &arg_names[*k], &run.args[*k]) {
                            Ok(arg) => arg,
                            Err(e) => {
                                out.rejected = Some(format!("tc:{k}: {e}"));
                                return Ok(out);
                            }
                        },
                    });
                }
                let cfg = LaunchConfig {
                    kernel: kernel.clone(),
                    grid: *grid,
                    block: *block,
                    args: launch_args,
                    budget: budget.or(run.default_budget).unwrap_or(DEFAULT_BUDGET),
                };
                let res = exec::launch(run.program, image, &cfg, hooks)?;
                out.retired += res.retired;
                out.launches += 1;
                match res.status {
                    ExecStatus::Completed => {}
                    ExecStatus::SanitizerStop(r) => out.report = Some(r),
                    ExecStatus::BudgetExhausted { ctaid, tid } => {
                        out.hang = Some((kernel.clone(), ctaid, tid))
                    }
                }
            }
        }
        if out.stopped() {
            break;
        }
    }
    Ok(out)
}
