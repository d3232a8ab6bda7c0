use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::{
    build_cfg, validate, Address, BranchTarget, CmpOp, DiagnosticKind, Imm, Instruction, KernelDef,
    MemSpace, MemType, Op, Operand, Param, ParseError, Program, Reg, RegClass, ScalarType,
    SpecialReg,
};

/// Parses and validates a program. Any validation diagnostic becomes an error.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let program = parse_unchecked(text)?;
    if let Some(d) = validate(&program).into_iter().next() {
        return Err(match d.kind {
            DiagnosticKind::TypeMismatch => ParseError::TypeMismatch {
                line: d.line,
                reason: d.message,
            },
            _ => ParseError::Invalid {
                line: d.line,
                reason: d.message,
            },
        });
    }
    Ok(program)
}

/// Parses the grammar and resolves labels without type checking.
pub fn parse_unchecked(text: &str) -> Result<Program, ParseError> {
    let mut kernels: IndexMap<String, KernelDef> = IndexMap::new();
    let mut current: Option<KernelBuilder> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx as u32 + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if is_header(content) {
            if let Some(b) = current.take() {
                let k = b.finish()?;
                insert_kernel(&mut kernels, k)?;
            }
            current = Some(KernelBuilder::from_header(content, line)?);
            continue;
        }
        let Some(builder) = current.as_mut() else {
            return Err(syntax(line, "instruction outside of a kernel"));
        };
        builder.push_line(content, line)?;
    }
    if let Some(b) = current.take() {
        let k = b.finish()?;
        insert_kernel(&mut kernels, k)?;
    }

    let mut program = Program {
        kernels,
        source_digest: String::new(),
    };
    program.source_digest = hex::encode(Sha256::digest(program.canonical_text().as_bytes()));
    Ok(program)
}

fn insert_kernel(
    kernels: &mut IndexMap<String, KernelDef>,
    k: KernelDef,
) -> Result<(), ParseError> {
    if kernels.contains_key(&k.name) {
        return Err(ParseError::DuplicateKernel {
            name: k.name,
            line: k.header_line,
        });
    }
    kernels.insert(k.name.clone(), k);
    Ok(())
}

fn syntax(line: u32, reason: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        reason: reason.into(),
    }
}

fn strip_comment(s: &str) -> &str {
    match s.find('#') {
        Some(i) => &s[..i],
        None => s,
    }
}

fn is_header(s: &str) -> bool {
    s.strip_prefix("kernel")
        .is_some_and(|rest| rest.starts_with(char::is_whitespace))
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct KernelBuilder {
    name: String,
    params: Vec<Param>,
    regs: u16,
    header_line: u32,
    instructions: Vec<Instruction>,
    lines: Vec<u32>,
    labels: Vec<(String, u32)>,
    pending_labels: Vec<(String, u32)>,
    // (instruction index, label, line) awaiting resolution
    fixups: Vec<(usize, String, u32)>,
}

impl KernelBuilder {
    fn from_header(s: &str, line: u32) -> Result<Self, ParseError> {
        let rest = s["kernel".len()..].trim_start();
        let open = rest
            .find('(')
            .ok_or_else(|| syntax(line, "expected `(` after kernel name"))?;
        let name = rest[..open].trim();
        if !is_ident(name) {
            return Err(syntax(line, format!("invalid kernel name `{name}`")));
        }
        let close = rest
            .rfind(')')
            .ok_or_else(|| syntax(line, "expected `)` closing the parameter list"))?;
        if close < open {
            return Err(syntax(line, "malformed parameter list"));
        }
        let params_src = rest[open + 1..close].trim();
        let mut params = Vec::new();
        if !params_src.is_empty() {
            for p in params_src.split(',') {
                let param = parse_param(p.trim(), line)?;
                if params.iter().any(|q: &Param| q.name == param.name) {
                    return Err(syntax(
                        line,
                        format!("duplicate parameter `{}`", param.name),
                    ));
                }
                params.push(param);
            }
        }
        let tail = rest[close + 1..].trim();
        let regs_src = tail
            .strip_prefix("regs=")
            .ok_or_else(|| syntax(line, "expected `regs=<n>` after the parameter list"))?;
        let regs: u16 = regs_src
            .trim()
            .parse()
            .map_err(|_| syntax(line, format!("invalid register count `{regs_src}`")))?;
        if regs == 0 {
            return Err(syntax(line, "register count must be at least 1"));
        }
        Ok(KernelBuilder {
            name: name.to_string(),
            params,
            regs,
            header_line: line,
            instructions: Vec::new(),
            lines: Vec::new(),
            labels: Vec::new(),
            pending_labels: Vec::new(),
            fixups: Vec::new(),
        })
    }

    fn push_line(&mut self, mut s: &str, line: u32) -> Result<(), ParseError> {
        // Leading `label:` prefixes; the opcode never contains a colon.
        while let Some(colon) = s.find(':') {
            let candidate = s[..colon].trim();
            if !is_ident(candidate) {
                break;
            }
            if self
                .labels
                .iter()
                .chain(self.pending_labels.iter())
                .any(|(l, _)| l == candidate)
            {
                return Err(syntax(line, format!("duplicate label `{candidate}`")));
            }
            self.pending_labels.push((candidate.to_string(), line));
            s = s[colon + 1..].trim();
        }
        if s.is_empty() {
            return Ok(());
        }
        let id = self.instructions.len() as u32;
        for (label, _) in self.pending_labels.drain(..) {
            self.labels.push((label, id));
        }
        let op = self.parse_op(s, line)?;
        self.instructions.push(Instruction { id, op });
        self.lines.push(line);
        Ok(())
    }

    fn finish(mut self) -> Result<KernelDef, ParseError> {
        if let Some((label, line)) = self.pending_labels.first() {
            return Err(syntax(
                *line,
                format!("label `{label}` is not followed by an instruction"),
            ));
        }
        for (idx, label, line) in std::mem::take(&mut self.fixups) {
            let Some(&(_, target)) = self.labels.iter().find(|(l, _)| *l == label) else {
                return Err(ParseError::UnresolvedLabel { label, line });
            };
            if let Op::Bra { target: t, .. } = &mut self.instructions[idx].op {
                t.index = target;
            }
        }
        let (blocks, static_edges) = build_cfg(&self.instructions);
        let mut block_of = vec![0u32; self.instructions.len()];
        for b in &blocks {
            for i in b.start..b.end {
                block_of[i as usize] = b.id;
            }
        }
        Ok(KernelDef {
            name: self.name,
            params: self.params,
            register_count: self.regs,
            instructions: self.instructions,
            labels: self.labels,
            blocks,
            static_edges,
            block_of,
            lines: self.lines,
            header_line: self.header_line,
        })
    }

    fn parse_op(&mut self, s: &str, line: u32) -> Result<Op, ParseError> {
        let (mnemonic, rest) = match s.find(char::is_whitespace) {
            Some(i) => (&s[..i], s[i..].trim()),
            None => (s, ""),
        };
        let operands: Vec<&str> = if rest.is_empty() {
            Vec::new()
        } else {
            rest.split(',').map(str::trim).collect()
        };
        let mut parts = mnemonic.split('.');
        let base = parts.next().unwrap_or_default();
        let suffixes: Vec<&str> = parts.collect();

        let expect = |n: usize| -> Result<(), ParseError> {
            if operands.len() != n {
                Err(syntax(
                    line,
                    format!(
                        "`{mnemonic}` takes {n} operand(s), found {}",
                        operands.len()
                    ),
                ))
            } else {
                Ok(())
            }
        };
        let no_suffix = || -> Result<(), ParseError> {
            if suffixes.is_empty() {
                Ok(())
            } else {
                Err(syntax(line, format!("unexpected suffix on `{mnemonic}`")))
            }
        };

        let op = match base {
            "mov" => {
                no_suffix()?;
                expect(2)?;
                Op::Mov {
                    dst: self.dst(operands[0], line)?,
                    src: self.operand(operands[1], line)?,
                }
            }
            "add" | "sub" | "mul" | "fadd" | "fsub" | "fmul" => {
                no_suffix()?;
                expect(3)?;
                let dst = self.dst(operands[0], line)?;
                let a = self.operand(operands[1], line)?;
                let b = self.operand(operands[2], line)?;
                match base {
                    "add" => Op::Add { dst, a, b },
                    "sub" => Op::Sub { dst, a, b },
                    "mul" => Op::Mul { dst, a, b },
                    "fadd" => Op::FAdd { dst, a, b },
                    "fsub" => Op::FSub { dst, a, b },
                    _ => Op::FMul { dst, a, b },
                }
            }
            "setp" => {
                let [cmp] = suffixes[..] else {
                    return Err(syntax(line, "expected `setp.<cmp>`"));
                };
                let cmp = CmpOp::from_name(cmp)
                    .ok_or_else(|| syntax(line, format!("unknown comparison `{cmp}`")))?;
                expect(3)?;
                Op::Setp {
                    cmp,
                    dst: self.dst(operands[0], line)?,
                    a: self.operand(operands[1], line)?,
                    b: self.operand(operands[2], line)?,
                }
            }
            "bra" => {
                no_suffix()?;
                let (pred, label) = match operands.len() {
                    1 => (None, operands[0]),
                    2 => {
                        let (negated, reg_src) = match operands[0].strip_prefix('!') {
                            Some(r) => (true, r.trim()),
                            None => (false, operands[0]),
                        };
                        (Some((parse_reg(reg_src, line)?, negated)), operands[1])
                    }
                    _ => return Err(syntax(line, "`bra` takes `[pred,] label`")),
                };
                if !is_ident(label) {
                    return Err(syntax(line, format!("invalid label `{label}`")));
                }
                self.fixups
                    .push((self.instructions.len(), label.to_string(), line));
                Op::Bra {
                    target: BranchTarget {
                        label: label.to_string(),
                        index: u32::MAX,
                    },
                    pred,
                }
            }
            "ld" | "st" => {
                let [space, ty] = suffixes[..] else {
                    return Err(syntax(line, format!("expected `{base}.<space>.<type>`")));
                };
                let space = MemSpace::from_name(space)
                    .ok_or_else(|| syntax(line, format!("unknown memory space `{space}`")))?;
                let ty = MemType::from_name(ty)
                    .ok_or_else(|| syntax(line, format!("unknown access type `{ty}`")))?;
                expect(2)?;
                if base == "ld" {
                    Op::Ld {
                        space,
                        ty,
                        dst: self.dst(operands[0], line)?,
                        addr: parse_address(operands[1], line)?,
                    }
                } else {
                    Op::St {
                        space,
                        ty,
                        addr: parse_address(operands[0], line)?,
                        src: self.operand(operands[1], line)?,
                    }
                }
            }
            "cvt" => {
                no_suffix()?;
                expect(2)?;
                Op::Cvt {
                    dst: self.dst(operands[0], line)?,
                    src: parse_reg(operands[1], line)?,
                }
            }
            "sreg" => {
                no_suffix()?;
                expect(2)?;
                let sreg = SpecialReg::from_name(operands[1]).ok_or_else(|| {
                    syntax(line, format!("unknown special register `{}`", operands[1]))
                })?;
                Op::Sreg {
                    dst: self.dst(operands[0], line)?,
                    sreg,
                }
            }
            "exit" => {
                no_suffix()?;
                expect(0)?;
                Op::Exit
            }
            other => return Err(syntax(line, format!("unknown opcode `{other}`"))),
        };
        Ok(op)
    }

    fn dst(&self, s: &str, line: u32) -> Result<Reg, ParseError> {
        parse_reg(s, line)
    }

    fn operand(&self, s: &str, line: u32) -> Result<Operand, ParseError> {
        if s.starts_with('%') {
            return parse_reg(s, line).map(Operand::Reg);
        }
        if let Some(name) = s.strip_prefix('$') {
            let idx = self
                .params
                .iter()
                .position(|p| p.name == name)
                .ok_or_else(|| syntax(line, format!("unknown parameter `${name}`")))?;
            return Ok(Operand::Param(idx as u16));
        }
        parse_imm(s)
            .map(Operand::Imm)
            .ok_or_else(|| syntax(line, format!("invalid operand `{s}`")))
    }
}

fn parse_param(s: &str, line: u32) -> Result<Param, ParseError> {
    let (name, ty) = s
        .split_once(':')
        .ok_or_else(|| syntax(line, format!("parameter `{s}` lacks a type")))?;
    let name = name.trim();
    let ty = ty.trim();
    if !is_ident(name) {
        return Err(syntax(line, format!("invalid parameter name `{name}`")));
    }
    let (ty, space) = match ty {
        "i32" => (ScalarType::I32, None),
        "f32" => (ScalarType::F32, None),
        "ptr" => (ScalarType::Ptr, None),
        other => {
            let space = other
                .strip_prefix("ptr.")
                .and_then(MemSpace::from_name)
                .ok_or_else(|| syntax(line, format!("unknown parameter type `{other}`")))?;
            (ScalarType::Ptr, Some(space))
        }
    };
    Ok(Param {
        name: name.to_string(),
        ty,
        space,
    })
}

fn parse_reg(s: &str, line: u32) -> Result<Reg, ParseError> {
    let bad = || syntax(line, format!("invalid register `{s}`"));
    let body = s.strip_prefix('%').ok_or_else(bad)?;
    let mut chars = body.chars();
    let class = match chars.next() {
        Some('r') => RegClass::Int,
        Some('f') => RegClass::Float,
        Some('p') => RegClass::Pred,
        Some('a') => RegClass::Addr,
        _ => return Err(bad()),
    };
    let digits = chars.as_str();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let index: u16 = digits.parse().map_err(|_| bad())?;
    Ok(Reg { class, index })
}

fn parse_address(s: &str, line: u32) -> Result<Address, ParseError> {
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| syntax(line, format!("expected `[reg(+/-offset)]`, found `{s}`")))?
        .trim();
    let (reg_src, offset) = match inner.find(['+', '-']) {
        Some(i) => {
            let sign: i64 = if inner.as_bytes()[i] == b'-' { -1 } else { 1 };
            let off_src = inner[i + 1..].trim();
            let magnitude = match parse_imm(off_src) {
                Some(Imm::Int(v)) => v,
                _ => return Err(syntax(line, format!("invalid address offset `{off_src}`"))),
            };
            let off = i32::try_from(sign * magnitude)
                .map_err(|_| syntax(line, "address offset out of range"))?;
            (inner[..i].trim(), off)
        }
        None => (inner, 0),
    };
    Ok(Address {
        base: parse_reg(reg_src, line)?,
        offset,
    })
}

pub(super) fn parse_imm(s: &str) -> Option<Imm> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    if body.is_empty() {
        return None;
    }
    if let Some(hex) = body.strip_prefix("0f").or_else(|| body.strip_prefix("0F")) {
        if hex.len() == 8 {
            let bits = u32::from_str_radix(hex, 16).ok()?;
            return Some(Imm::Float(if neg { bits ^ 0x8000_0000 } else { bits }));
        }
        return None;
    }
    if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        let v = i64::from_str_radix(hex, 16).ok()?;
        return Some(Imm::Int(if neg { -v } else { v }));
    }
    if body.bytes().all(|b| b.is_ascii_digit()) {
        let v: i64 = body.parse().ok()?;
        return Some(Imm::Int(if neg { -v } else { v }));
    }
    let looks_float = body == "inf"
        || body == "nan"
        || (body
            .bytes()
            .next()
            .is_some_and(|b| b.is_ascii_digit() || b == b'.')
            && body
                .bytes()
                .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-')));
    if looks_float {
        let v: f32 = s.parse().ok()?;
        return Some(Imm::Float(v.to_bits()));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIVE: &str = "\
kernel five(x:ptr.global) regs=4
    sreg %r0, tid
    mul %r1, %r0, 4
    add %a0, $x, %r1
    st.global.i32 [%a0], %r0
    exit
";

    #[test]
    fn single_block_kernel() {
        let p = parse_program(FIVE).unwrap();
        assert_eq!(p.kernels.len(), 1);
        let k = p.kernel("five").unwrap();
        assert_eq!(k.instructions.len(), 5);
        assert_eq!(k.blocks.len(), 1);
        assert!(k.static_edges.is_empty());
        assert!(k
            .instructions
            .iter()
            .enumerate()
            .all(|(i, ins)| ins.id as usize == i));
    }

    #[test]
    fn unresolved_label() {
        let src = "kernel k() regs=2\n    setp.eq %p0, %r0, 0\n    bra %p0, L1\n    exit\n";
        assert_eq!(
            parse_program(src),
            Err(ParseError::UnresolvedLabel {
                label: "L1".into(),
                line: 3
            })
        );
    }

    #[test]
    fn duplicate_kernel() {
        let src = "kernel k() regs=1\n exit\nkernel k() regs=1\n exit\n";
        assert!(matches!(
            parse_program(src),
            Err(ParseError::DuplicateKernel { line: 3, .. })
        ));
    }

    #[test]
    fn type_mismatch_surfaces_from_strict_parse() {
        let src = "kernel k() regs=4\n    ld.global.f32 %f1, [%r2]\n    exit\n";
        assert!(matches!(
            parse_program(src),
            Err(ParseError::TypeMismatch { line: 2, .. })
        ));
        assert!(parse_unchecked(src).is_ok());
    }

    #[test]
    fn syntax_errors_carry_lines() {
        for (src, line) in [
            ("kernel k() regs=1\n    frob %r0\n", 2),
            ("    exit\n", 1),
            ("kernel k( regs=1\n", 1),
            ("kernel k() regs=1\n  mov %q1, 1\n  exit\n", 2),
            ("kernel k() regs=1\n  exit\ndangling:\n", 3),
        ] {
            let err = parse_program(src).unwrap_err();
            assert!(
                matches!(err, ParseError::Syntax { .. }),
                "{src:?} -> {err:?}"
            );
            assert_eq!(err.line(), line, "{src:?}");
        }
    }

    #[test]
    fn immediates() {
        assert_eq!(parse_imm("12"), Some(Imm::Int(12)));
        assert_eq!(parse_imm("-0x10"), Some(Imm::Int(-16)));
        assert_eq!(parse_imm("1.0"), Some(Imm::Float(0x3F80_0000)));
        assert_eq!(parse_imm("-2.5e1"), Some(Imm::Float((-25.0f32).to_bits())));
        assert_eq!(parse_imm("0f7F800000"), Some(Imm::Float(0x7F80_0000)));
        assert_eq!(
            parse_imm("-inf"),
            Some(Imm::Float(f32::NEG_INFINITY.to_bits()))
        );
        assert_eq!(parse_imm("x1"), None);
        assert_eq!(parse_imm("-"), None);
    }

    #[test]
    fn comments_and_labels_on_own_line() {
        let src = "\
# header comment
kernel k(n:i32) regs=2   # trailing
top:
    mov %r0, $n
again: mov %r1, %r0
    bra top
";
        let p = parse_program(src).unwrap();
        let k = p.kernel("k").unwrap();
        assert_eq!(k.label("top"), Some(0));
        assert_eq!(k.label("again"), Some(1));
        assert_eq!(k.lines, vec![4, 5, 6]);
    }
}
