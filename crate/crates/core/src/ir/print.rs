use std::fmt::Write;

use super::{Address, Imm, KernelDef, Op, Operand, Program, ScalarType};

pub(super) fn print_program(program: &Program) -> String {
    let mut out = String::new();
    for (i, k) in program.kernels.values().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_kernel(k, &mut out);
    }
    out
}

fn print_kernel(k: &KernelDef, out: &mut String) {
    let params: Vec<String> = k
        .params
        .iter()
        .map(|p| match (p.ty, p.space) {
            (ScalarType::Ptr, Some(space)) => format!("{}:ptr.{}", p.name, space),
            (ty, _) => format!("{}:{}", p.name, ty),
        })
        .collect();
    let _ = writeln!(
        out,
        "kernel {}({}) regs={}",
        k.name,
        params.join(", "),
        k.register_count
    );
    for ins in &k.instructions {
        for (label, _) in k.labels.iter().filter(|(_, at)| *at == ins.id) {
            let _ = writeln!(out, "{label}:");
        }
        let _ = writeln!(out, "    {}", render_op(k, &ins.op));
    }
}

fn render_operand(k: &KernelDef, op: &Operand) -> String {
    match op {
        Operand::Reg(r) => r.to_string(),
        Operand::Param(i) => format!("${}", k.params[*i as usize].name),
        Operand::Imm(Imm::Int(v)) => v.to_string(),
        Operand::Imm(Imm::Float(bits)) => render_float(*bits),
    }
}

/// Shortest round-tripping decimal for ordinary values, raw bits otherwise.
fn render_float(bits: u32) -> String {
    let v = f32::from_bits(bits);
    if v.is_finite() {
        let s = format!("{v:?}");
        if s.parse::<f32>().map(f32::to_bits) == Ok(bits) {
            return s;
        }
    }
    format!("0f{bits:08X}")
}

fn render_addr(a: &Address) -> String {
    match a.offset {
        0 => format!("[{}]", a.base),
        o if o > 0 => format!("[{}+{}]", a.base, o),
        o => format!("[{}-{}]", a.base, -(o as i64)),
    }
}

fn render_op(k: &KernelDef, op: &Op) -> String {
    let o = |x: &Operand| render_operand(k, x);
    match op {
        Op::Mov { dst, src } => format!("mov {dst}, {}", o(src)),
        Op::Add { dst, a, b } => format!("add {dst}, {}, {}", o(a), o(b)),
        Op::Sub { dst, a, b } => format!("sub {dst}, {}, {}", o(a), o(b)),
        Op::Mul { dst, a, b } => format!("mul {dst}, {}, {}", o(a), o(b)),
        Op::FAdd { dst, a, b } => format!("fadd {dst}, {}, {}", o(a), o(b)),
        Op::FSub { dst, a, b } => format!("fsub {dst}, {}, {}", o(a), o(b)),
        Op::FMul { dst, a, b } => format!("fmul {dst}, {}, {}", o(a), o(b)),
        Op::Setp { cmp, dst, a, b } => format!("setp.{} {dst}, {}, {}", cmp.name(), o(a), o(b)),
        Op::Bra { target, pred } => match pred {
            None => format!("bra {}", target.label),
            Some((p, false)) => format!("bra {p}, {}", target.label),
            Some((p, true)) => format!("bra !{p}, {}", target.label),
        },
        Op::Ld {
            space,
            ty,
            dst,
            addr,
        } => format!("ld.{space}.{} {dst}, {}", ty.name(), render_addr(addr)),
        Op::St {
            space,
            ty,
            addr,
            src,
        } => format!("st.{space}.{} {}, {}", ty.name(), render_addr(addr), o(src)),
        Op::Cvt { dst, src } => format!("cvt {dst}, {src}"),
        Op::Sreg { dst, sreg } => format!("sreg {dst}, {}", sreg.name()),
        Op::Exit => "exit".to_string(),
    }
}
