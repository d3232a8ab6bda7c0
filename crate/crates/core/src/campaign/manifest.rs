//! Harness manifests: the phase-split host script around a kernel program.
//!
//! ```text
//! # comments start with '#'
//! program kernel.sir
//! bench axpy
//! arg a f32 2.0 range=-4..4
//! arg x array f32 global 256 rand:1 range=-1..1
//! arg n i32 256 range=0..256
//!
//! INIT
//! alloc x global 1024
//! alloc ws global 4194304
//! copy_in ws zero
//! COMPUTE
//! copy_in x tc:1
//! launch axpy grid=2 block=32 args=tc:0,@x,@y,tc:2,256
//! copy_out y 1024
//! TERM
//! sync
//! free x
//! free ws
//! ```
//!
//! `arg` lines declare the fuzz-mutable arguments and their seed values.
//! Array extents are `N` or `AxB`; seeds are `seq`, `fill:<v>`,
//! `values:<a>,<b>,..` (repeated to length) or `rand:<seed>` (uniform over
//! the declared range). `copy_in` payloads are `zero`, `hex:<bytes>` or
//! `tc:<k>`. Launch bindings are `tc:<k>`, `@<name>` or a literal.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use rand::Rng;

use crate::ir::{KernelDef, MemSpace, Program, ScalarType};
use crate::mutation::{ArgKind, ArgSpec, ArrayValue, ElemType, TestCase, TypedValue};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("line {line}: {msg}")]
    ManifestSyntax { line: usize, msg: String },
    #[error("line {line}: unknown kernel `{kernel}`")]
    UnknownKernel { line: usize, kernel: String },
    #[error("line {line}: free of `{name}`, which is never allocated")]
    DanglingFree { line: usize, name: String },
    #[error("line {line}: `{name}` is never allocated")]
    UndefinedName { line: usize, name: String },
    #[error("line {line}: {msg}")]
    ArgArityMismatch { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    BindingTypeMismatch { line: usize, msg: String },
    #[error("allocations still live after TERM or created by COMPUTE: {0:?}")]
    LeakedAllocation(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Init,
    Compute,
    Term,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "INIT",
            Phase::Compute => "COMPUTE",
            Phase::Term => "TERM",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Zero,
    Hex(Vec<u8>),
    Tc(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    Tc(usize),
    Named(String),
    I32(i32),
    F32(u32),
    Ptr(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum HostOp {
    Alloc {
        name: String,
        space: MemSpace,
        size: u64,
    },
    CopyIn {
        name: String,
        src: Payload,
    },
    Launch {
        kernel: String,
        grid: u32,
        block: u32,
        args: Vec<Binding>,
        budget: Option<u64>,
    },
    CopyOut {
        name: String,
        len: u64,
    },
    Free {
        name: String,
    },
    Sync,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub line: usize,
    pub op: HostOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessManifest {
    pub program: String,
    pub bench: Option<String>,
    pub args: Vec<ArgSpec>,
    pub seed: TestCase,
    pub init: Vec<Step>,
    pub compute: Vec<Step>,
    pub term: Vec<Step>,
}

impl HarnessManifest {
    pub fn phase(&self, phase: Phase) -> &[Step] {
        match phase {
            Phase::Init => &self.init,
            Phase::Compute => &self.compute,
            Phase::Term => &self.term,
        }
    }

    pub fn launches(&self) -> impl Iterator<Item = &HostOp> {
        self.init
            .iter()
            .chain(&self.compute)
            .chain(&self.term)
            .map(|s| &s.op)
            .filter(|op| matches!(op, HostOp::Launch { .. }))
    }
}

fn syntax(line: usize, msg: impl Into<String>) -> ManifestError {
    ManifestError::ManifestSyntax {
        line,
        msg: msg.into(),
    }
}

fn parse_u64(s: &str) -> Option<u64> {
    match s.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_i32(s: &str) -> Option<i32> {
    let v: i64 = match s.strip_prefix("0x") {
        Some(h) => i64::from_str_radix(h, 16).ok()?,
        None => s.parse().ok()?,
    };
    (i32::MIN as i64..=u32::MAX as i64)
        .contains(&v)
        .then_some(v as i32)
}

fn parse_f32_bits(s: &str) -> Option<u32> {
    if let Some(h) = s.strip_prefix("0f") {
        return u32::from_str_radix(h, 16).ok();
    }
    s.parse::<f32>().ok().map(f32::to_bits)
}

fn parse_range<T: std::str::FromStr + PartialOrd>(s: &str) -> Option<(T, T)> {
    let (lo, hi) = s.split_once("..")?;
    let (lo, hi) = (lo.parse().ok()?, hi.parse().ok()?);
    (lo <= hi).then_some((lo, hi))
}

fn parse_extents(s: &str) -> Option<Vec<u32>> {
    s.split('x').map(|e| e.parse().ok()).collect()
}

fn key_value<'a>(tok: &'a str, key: &str) -> Option<&'a str> {
    tok.strip_prefix(key)?.strip_prefix('=')
}

fn array_seed(
    line: usize,
    elem: ElemType,
    count: usize,
    init: &str,
    range: Option<(f32, f32)>,
) -> Result<Vec<u8>, ManifestError> {
    let word = |v: &str| -> Result<u32, ManifestError> {
        match elem {
            ElemType::I32 => parse_i32(v).map(|x| x as u32),
            ElemType::F32 => parse_f32_bits(v),
        }
        .ok_or_else(|| syntax(line, format!("bad {} element `{v}`", elem.name())))
    };
    let words: Vec<u32> = if init == "seq" {
        (0..count)
            .map(|i| match elem {
                ElemType::I32 => i as u32,
                ElemType::F32 => (i as f32).to_bits(),
            })
            .collect()
    } else if let Some(v) = init.strip_prefix("fill:") {
        vec![word(v)?; count]
    } else if let Some(list) = init.strip_prefix("values:") {
        let vals = list.split(',').map(word).collect::<Result<Vec<_>, _>>()?;
        if vals.is_empty() {
            return Err(syntax(line, "empty value list"));
        }
        (0..count).map(|i| vals[i % vals.len()]).collect()
    } else if let Some(seed) = init.strip_prefix("rand:") {
        let seed = parse_u64(seed).ok_or_else(|| syntax(line, "bad rand seed"))?;
        let mut r = rng::from_seed(seed);
        let (lo, hi) = range.unwrap_or((-1.0, 1.0));
        (0..count)
            .map(|_| match elem {
                ElemType::I32 => r.random_range(lo as i32..=hi as i32) as u32,
                ElemType::F32 => r.random_range(lo..=hi).to_bits(),
            })
            .collect()
    } else {
        return Err(syntax(line, format!("unknown array seed `{init}`")));
    };
    Ok(words.iter().flat_map(|w| w.to_le_bytes()).collect())
}

fn parse_arg(line: usize, toks: &[&str]) -> Result<(ArgSpec, TypedValue), ManifestError> {
    let usage = || {
        syntax(line, "expected `arg <name> i32|f32 <seed>` or `arg <name> array <elem> <space> <extents> <init>`")
    };
    let name = toks.first().ok_or_else(usage)?.to_string();
    let ty = *toks.get(1).ok_or_else(usage)?;
    let (fixed, rest): (usize, &[&str]) = match ty {
        "i32" | "f32" => (3, toks.get(3..).unwrap_or(&[])),
        "array" => (6, toks.get(6..).unwrap_or(&[])),
        _ => return Err(syntax(line, format!("unknown argument type `{ty}`"))),
    };
    if toks.len() < fixed {
        return Err(usage());
    }
    let mut range = None;
    for t in rest {
        range =
            Some(key_value(t, "range").ok_or_else(|| syntax(line, format!("unexpected `{t}`")))?);
    }
    match ty {
        "i32" => {
            let v = parse_i32(toks[2]).ok_or_else(|| syntax(line, "bad i32 seed"))?;
            let range = range
                .map(|r| parse_range::<i32>(r).ok_or_else(|| syntax(line, "bad i32 range")))
                .transpose()?;
            Ok((
                ArgSpec {
                    name,
                    kind: ArgKind::I32 { range },
                },
                TypedValue::I32(v),
            ))
        }
        "f32" => {
            let v = parse_f32_bits(toks[2]).ok_or_else(|| syntax(line, "bad f32 seed"))?;
            let range = range
                .map(|r| parse_range::<f32>(r).ok_or_else(|| syntax(line, "bad f32 range")))
                .transpose()?;
            Ok((
                ArgSpec {
                    name,
                    kind: ArgKind::F32 { range },
                },
                TypedValue::F32(v),
            ))
        }
        _ => {
            let elem = ElemType::from_name(toks[2])
                .ok_or_else(|| syntax(line, format!("unknown element type `{}`", toks[2])))?;
            let space = MemSpace::from_name(toks[3])
                .ok_or_else(|| syntax(line, format!("unknown space `{}`", toks[3])))?;
            let extents = parse_extents(toks[4]).ok_or_else(|| syntax(line, "bad extents"))?;
            let range = range
                .map(|r| parse_range::<f32>(r).ok_or_else(|| syntax(line, "bad range")))
                .transpose()?;
            let count: u64 = extents.iter().map(|&e| e as u64).product();
            if count > 1 << 24 {
                return Err(syntax(line, "array too large"));
            }
            let bytes = array_seed(line, elem, count as usize, toks[5], range)?;
            let value = ArrayValue::new(elem, bytes, extents.clone(), space);
            let spec = ArgSpec {
                name,
                kind: ArgKind::Array {
                    elem,
                    space,
                    extents,
                    range,
                },
            };
            Ok((spec, TypedValue::Array(value)))
        }
    }
}

fn parse_binding(tok: &str) -> Binding {
    if let Some(k) = tok.strip_prefix("tc:").and_then(|k| k.parse().ok()) {
        return Binding::Tc(k);
    }
    if let Some(name) = tok.strip_prefix('@') {
        return Binding::Named(name.to_string());
    }
    // literals are typed against the parameter during validation
    Binding::Named(format!("={tok}"))
}

fn parse_op(line: usize, toks: &[&str]) -> Result<HostOp, ManifestError> {
    let need = |n: usize| {
        if toks.len() == n {
            Ok(())
        } else {
            Err(syntax(
                line,
                format!("`{}` takes {} operands", toks[0], n - 1),
            ))
        }
    };
    Ok(match toks[0] {
        "alloc" => {
            need(4)?;
            HostOp::Alloc {
                name: toks[1].to_string(),
                space: MemSpace::from_name(toks[2])
                    .ok_or_else(|| syntax(line, format!("unknown space `{}`", toks[2])))?,
                size: parse_u64(toks[3]).ok_or_else(|| syntax(line, "bad size"))?,
            }
        }
        "copy_in" => {
            need(3)?;
            let src = match toks[2] {
                "zero" => Payload::Zero,
                t => {
                    if let Some(h) = t.strip_prefix("hex:") {
                        Payload::Hex(hex::decode(h).map_err(|e| syntax(line, e.to_string()))?)
                    } else if let Some(k) = t.strip_prefix("tc:").and_then(|k| k.parse().ok()) {
                        Payload::Tc(k)
                    } else {
                        return Err(syntax(line, format!("bad payload `{t}`")));
                    }
                }
            };
            HostOp::CopyIn {
                name: toks[1].to_string(),
                src,
            }
        }
        "copy_out" => {
            need(3)?;
            HostOp::CopyOut {
                name: toks[1].to_string(),
                len: parse_u64(toks[2]).ok_or_else(|| syntax(line, "bad length"))?,
            }
        }
        "free" => {
            need(2)?;
            HostOp::Free {
                name: toks[1].to_string(),
            }
        }
        "sync" => {
            need(1)?;
            HostOp::Sync
        }
        "launch" => {
            let kernel = toks
                .get(1)
                .ok_or_else(|| syntax(line, "launch needs a kernel"))?;
            let (mut grid, mut block, mut args, mut budget) = (None, None, None, None);
            for t in &toks[2..] {
                if let Some(v) = key_value(t, "grid") {
                    grid = Some(v.parse().map_err(|_| syntax(line, "bad grid"))?);
                } else if let Some(v) = key_value(t, "block") {
                    block = Some(v.parse().map_err(|_| syntax(line, "bad block"))?);
                } else if let Some(v) = key_value(t, "budget") {
                    budget = Some(parse_u64(v).ok_or_else(|| syntax(line, "bad budget"))?);
                } else if let Some(v) = key_value(t, "args") {
                    args = Some(if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',').map(parse_binding).collect()
                    });
                } else {
                    return Err(syntax(line, format!("unexpected `{t}`")));
                }
            }
            let grid: u32 = grid.ok_or_else(|| syntax(line, "launch needs grid="))?;
            let block: u32 = block.ok_or_else(|| syntax(line, "launch needs block="))?;
            if grid == 0 || block == 0 {
                return Err(syntax(line, "grid and block must be positive"));
            }
            HostOp::Launch {
                kernel: kernel.to_string(),
                grid,
                block,
                args: args.unwrap_or_default(),
                budget,
            }
        }
        other => return Err(syntax(line, format!("unknown host op `{other}`"))),
    })
}

/// Parses manifest text without looking at the program.
pub fn parse_manifest(text: &str) -> Result<HarnessManifest, ManifestError> {
    let mut program = None;
    let mut bench = None;
    let mut args = Vec::new();
    let mut seeds = Vec::new();
    let mut phases: [Vec<Step>; 3] = Default::default();
    let mut current: Option<usize> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match toks[0] {
            "INIT" | "COMPUTE" | "TERM" if toks.len() == 1 => {
                let idx = ["INIT", "COMPUTE", "TERM"]
                    .iter()
                    .position(|s| *s == toks[0])
                    .expect("listed");
                if current.is_some_and(|c| c >= idx) {
                    return Err(syntax(
                        line,
                        "sections must appear once, in INIT, COMPUTE, TERM order",
                    ));
                }
                current = Some(idx);
            }
            "program" if current.is_none() => {
                if toks.len() != 2 {
                    return Err(syntax(line, "expected `program <path>`"));
                }
                program = Some(toks[1].to_string());
            }
            "bench" if current.is_none() => {
                if toks.len() != 2 {
                    return Err(syntax(line, "expected `bench <name>`"));
                }
                bench = Some(toks[1].to_string());
            }
            "arg" if current.is_none() => {
                let (spec, seed) = parse_arg(line, &toks[1..])?;
                if args.iter().any(|a: &ArgSpec| a.name == spec.name) {
                    return Err(syntax(line, format!("duplicate argument `{}`", spec.name)));
                }
                args.push(spec);
                seeds.push(seed);
            }
            _ => {
                let Some(c) = current else {
                    return Err(syntax(
                        line,
                        format!("`{}` outside a phase section", toks[0]),
                    ));
                };
                phases[c].push(Step {
                    line,
                    op: parse_op(line, &toks)?,
                });
            }
        }
    }
    let program = program.ok_or_else(|| syntax(0, "missing `program` line"))?;
    let [init, compute, term] = phases;
    let manifest = HarnessManifest {
        program,
        bench,
        args,
        seed: TestCase::seed(seeds),
        init,
        compute,
        term,
    };
    if !manifest
        .compute
        .iter()
        .any(|s| matches!(s.op, HostOp::Launch { .. }))
    {
        return Err(syntax(0, "COMPUTE needs at least one launch"));
    }
    Ok(manifest)
}

fn resolve_literal(
    line: usize,
    lit: &str,
    k: &KernelDef,
    idx: usize,
) -> Result<Binding, ManifestError> {
    let p = &k.params[idx];
    let bad = || ManifestError::BindingTypeMismatch {
        line,
        msg: format!(
            "literal `{lit}` does not fit parameter `{}` ({})",
            p.name, p.ty
        ),
    };
    Ok(match p.ty {
        ScalarType::I32 => Binding::I32(parse_i32(lit).ok_or_else(bad)?),
        ScalarType::F32 => Binding::F32(parse_f32_bits(lit).ok_or_else(bad)?),
        ScalarType::Ptr => Binding::Ptr(parse_u64(lit).ok_or_else(bad)?),
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum NameState {
    Live,
    Freed,
}

/// Checks a manifest against its program and resolves launch literals.
pub fn validate_manifest(m: &mut HarnessManifest, program: &Program) -> Result<(), ManifestError> {
    let mut used_tc = BTreeSet::new();
    let mut names: IndexMap<String, NameState> = IndexMap::new();
    let mut after_init = IndexMap::new();
    let nargs = m.args.len();
    let arg_kinds: Vec<ArgKind> = m.args.iter().map(|a| a.kind.clone()).collect();

    let check_tc = |line: usize, k: usize, used: &mut BTreeSet<usize>| {
        if k >= nargs {
            return Err(ManifestError::ArgArityMismatch {
                line,
                msg: format!("tc:{k} but only {nargs} arguments are declared"),
            });
        }
        used.insert(k);
        Ok(())
    };

    for (pi, phase) in [&mut m.init, &mut m.compute, &mut m.term]
        .into_iter()
        .enumerate()
    {
        if pi == 2 {
            // TERM runs against the post-INIT image
            names = after_init.clone();
        }
        for step in phase.iter_mut() {
            let line = step.line;
            let known = |names: &IndexMap<String, NameState>, n: &str| {
                if names.contains_key(n) {
                    Ok(())
                } else {
                    Err(ManifestError::UndefinedName {
                        line,
                        name: n.to_string(),
                    })
                }
            };
            match &mut step.op {
                HostOp::Alloc { name, size, .. } => {
                    if *size == 0 {
                        return Err(syntax(line, "zero-sized allocation"));
                    }
                    if names.get(name.as_str()) == Some(&NameState::Live) {
                        return Err(syntax(line, format!("`{name}` is already allocated")));
                    }
                    names.insert(name.clone(), NameState::Live);
                }
                HostOp::CopyIn { name, src } => {
                    known(&names, name)?;
                    if let Payload::Tc(k) = src {
                        check_tc(line, *k, &mut used_tc)?;
                        if !matches!(arg_kinds[*k], ArgKind::Array { .. }) {
                            return Err(ManifestError::BindingTypeMismatch {
                                line,
                                msg: format!("copy_in from tc:{k}, which is not an array"),
                            });
                        }
                    }
                }
                HostOp::CopyOut { name, .. } => known(&names, name)?,
                HostOp::Free { name } => {
                    if !names.contains_key(name.as_str()) {
                        return Err(ManifestError::DanglingFree {
                            line,
                            name: name.clone(),
                        });
                    }
                    names.insert(name.clone(), NameState::Freed);
                }
                HostOp::Sync => {}
                HostOp::Launch { kernel, args, .. } => {
                    let k = program
                        .kernel(kernel)
                        .ok_or_else(|| ManifestError::UnknownKernel {
                            line,
                            kernel: kernel.clone(),
                        })?;
                    if k.params.len() != args.len() {
                        return Err(ManifestError::ArgArityMismatch {
                            line,
                            msg: format!(
                                "`{}` takes {} arguments, launch binds {}",
                                k.name,
                                k.params.len(),
                                args.len()
                            ),
                        });
                    }
                    for (idx, b) in args.iter_mut().enumerate() {
                        let p = &k.params[idx];
                        let mismatch = |what: &str| ManifestError::BindingTypeMismatch {
                            line,
                            msg: format!(
                                "parameter `{}` is {} but is bound to {what}",
                                p.name, p.ty
                            ),
                        };
                        match b {
                            Binding::Named(n) if n.starts_with('=') => {
                                let lit = n[1..].to_string();
                                *b = resolve_literal(line, &lit, k, idx)?;
                            }
                            Binding::Named(n) => {
                                known(&names, n)?;
                                if p.ty != ScalarType::Ptr {
                                    return Err(mismatch("an allocation"));
                                }
                            }
                            Binding::Tc(t) => {
                                check_tc(line, *t, &mut used_tc)?;
                                let ok = matches!(
                                    (&arg_kinds[*t], p.ty),
                                    (ArgKind::I32 { .. }, ScalarType::I32)
                                        | (ArgKind::F32 { .. }, ScalarType::F32)
                                        | (ArgKind::Array { .. }, ScalarType::Ptr)
                                );
                                if !ok {
                                    return Err(mismatch(&format!("tc:{t}")));
                                }
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
        if pi == 0 {
            after_init = names.clone();
        }
        if pi == 1 {
            let leaked: Vec<String> = names
                .iter()
                .filter(|(n, s)| {
                    **s == NameState::Live && after_init.get(*n) != Some(&NameState::Live)
                })
                .map(|(n, _)| n.clone())
                .collect();
            if !leaked.is_empty() {
                return Err(ManifestError::LeakedAllocation(leaked));
            }
        }
    }
    let leaked: Vec<String> = names
        .iter()
        .filter(|(_, s)| **s == NameState::Live)
        .map(|(n, _)| n.clone())
        .collect();
    if !leaked.is_empty() {
        return Err(ManifestError::LeakedAllocation(leaked));
    }
    if let Some(missing) = (0..nargs).find(|k| !used_tc.contains(k)) {
        return Err(ManifestError::ArgArityMismatch {
            line: 0,
            msg: format!(
                "argument `{}` (tc:{missing}) is never used",
                m.args[missing].name
            ),
        });
    }
    Ok(())
}
