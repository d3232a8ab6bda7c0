use std::fmt;

use super::{
    Imm, Instruction, KernelDef, MemType, Op, Operand, Program, Reg, RegClass, ScalarType,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    TypeMismatch,
    MissingSpaceAnnotation,
    RegisterOutOfRange,
    FallsOffEnd,
    EmptyKernel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kernel: String,
    pub iid: Option<u32>,
    pub line: u32,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.kernel)?;
        if let Some(iid) = self.iid {
            write!(f, " #{iid}")?;
        }
        write!(f, ": {:?}: {}", self.kind, self.message)
    }
}

/// Type-checks every kernel. An empty result means the program may be
/// launched.
pub fn validate(program: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for k in program.kernels.values() {
        validate_kernel(k, &mut out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Scalar(ScalarType),
    Pred,
    IntLit,
    FloatLit,
}

impl Ty {
    fn fits(self, want: ScalarType) -> bool {
        match self {
            Ty::Scalar(t) => t == want,
            Ty::IntLit => true,
            Ty::FloatLit => want == ScalarType::F32,
            Ty::Pred => false,
        }
    }
}

struct Checker<'k> {
    k: &'k KernelDef,
    iid: u32,
    out: &'k mut Vec<Diagnostic>,
}

impl Checker<'_> {
    fn report(&mut self, kind: DiagnosticKind, message: String) {
        self.out.push(Diagnostic {
            kernel: self.k.name.clone(),
            iid: Some(self.iid),
            line: self.k.line_of(self.iid),
            kind,
            message,
        });
    }

    fn mismatch(&mut self, message: String) {
        self.report(DiagnosticKind::TypeMismatch, message);
    }

    fn ty(&self, op: &Operand) -> Ty {
        match op {
            Operand::Reg(r) => match r.class.scalar() {
                Some(s) => Ty::Scalar(s),
                None => Ty::Pred,
            },
            Operand::Param(i) => Ty::Scalar(self.k.params[*i as usize].ty),
            Operand::Imm(Imm::Int(_)) => Ty::IntLit,
            Operand::Imm(Imm::Float(_)) => Ty::FloatLit,
        }
    }

    fn expect(&mut self, op: &Operand, want: ScalarType, what: &str) {
        if !self.ty(op).fits(want) {
            self.mismatch(format!(
                "{what} must be {want}, found {}",
                self.describe(op)
            ));
            return;
        }
        if let (Operand::Imm(Imm::Int(v)), ScalarType::I32) = (op, want) {
            if *v < i32::MIN as i64 || *v > u32::MAX as i64 {
                self.mismatch(format!("integer literal {v} does not fit in 32 bits"));
            }
        }
    }

    fn expect_dst(&mut self, dst: Reg, want: RegClass, what: &str) {
        if dst.class != want {
            self.mismatch(format!(
                "{what} destination must be %{}, found {dst}",
                want.prefix()
            ));
        }
    }

    fn describe(&self, op: &Operand) -> String {
        match op {
            Operand::Reg(r) => format!("{r}"),
            Operand::Param(i) => {
                let p = &self.k.params[*i as usize];
                format!("${} ({})", p.name, p.ty)
            }
            Operand::Imm(Imm::Int(v)) => format!("integer literal {v}"),
            Operand::Imm(Imm::Float(b)) => format!("float literal {}", f32::from_bits(*b)),
        }
    }

    fn regs_in_range(&mut self, ins: &Instruction) {
        let limit = self.k.register_count;
        let mut bad = Vec::new();
        for_each_reg(&ins.op, |r| {
            if r.index >= limit {
                bad.push(r);
            }
        });
        for r in bad {
            self.report(
                DiagnosticKind::RegisterOutOfRange,
                format!("{r} exceeds regs={limit}"),
            );
        }
    }

    fn check(&mut self, ins: &Instruction) {
        self.regs_in_range(ins);
        match &ins.op {
            Op::Mov { dst, src } => match dst.class.scalar() {
                Some(want) => self.expect(src, want, "mov source"),
                None => self.mismatch("mov cannot write a predicate register".into()),
            },
            Op::Add { dst, a, b } | Op::Sub { dst, a, b } => match dst.class {
                RegClass::Int => {
                    self.expect(a, ScalarType::I32, "operand");
                    self.expect(b, ScalarType::I32, "operand");
                }
                RegClass::Addr => {
                    if !matches!(self.ty(a), Ty::Scalar(ScalarType::Ptr)) {
                        self.mismatch(format!(
                            "pointer arithmetic base must be a pointer, found {}",
                            self.describe(a)
                        ));
                    }
                    self.expect(b, ScalarType::I32, "pointer offset");
                }
                _ => self.mismatch(format!("integer add/sub cannot write {dst}")),
            },
            Op::Mul { dst, a, b } => {
                self.expect_dst(*dst, RegClass::Int, "mul");
                self.expect(a, ScalarType::I32, "operand");
                self.expect(b, ScalarType::I32, "operand");
            }
            Op::FAdd { dst, a, b } | Op::FSub { dst, a, b } | Op::FMul { dst, a, b } => {
                self.expect_dst(*dst, RegClass::Float, "float arithmetic");
                self.expect(a, ScalarType::F32, "operand");
                self.expect(b, ScalarType::F32, "operand");
            }
            Op::Setp { dst, a, b, .. } => {
                self.expect_dst(*dst, RegClass::Pred, "setp");
                let inferred = [self.ty(a), self.ty(b)].into_iter().find_map(|t| match t {
                    Ty::Scalar(s) => Some(s),
                    _ => None,
                });
                match inferred {
                    Some(ScalarType::Ptr) => self.mismatch("setp does not compare pointers".into()),
                    Some(s) => {
                        self.expect(a, s, "comparison operand");
                        self.expect(b, s, "comparison operand");
                    }
                    None => self.mismatch("setp needs at least one typed operand".into()),
                }
            }
            Op::Bra { pred, .. } => {
                if let Some((p, _)) = pred {
                    if p.class != RegClass::Pred {
                        self.mismatch(format!("branch predicate must be %p, found {p}"));
                    }
                }
            }
            Op::Ld { ty, dst, addr, .. } => {
                if addr.base.class != RegClass::Addr {
                    self.mismatch(format!(
                        "load address {} is not a pointer register",
                        addr.base
                    ));
                }
                self.expect_dst(*dst, ty.reg_class(), &format!("ld .{}", ty.name()));
            }
            Op::St { ty, addr, src, .. } => {
                if addr.base.class != RegClass::Addr {
                    self.mismatch(format!(
                        "store address {} is not a pointer register",
                        addr.base
                    ));
                }
                let want = match ty {
                    MemType::F32 => ScalarType::F32,
                    MemType::B64 => ScalarType::Ptr,
                    _ => ScalarType::I32,
                };
                self.expect(src, want, &format!("st .{} source", ty.name()));
            }
            Op::Cvt { dst, src } => match (dst.class, src.class) {
                (RegClass::Float, RegClass::Int) | (RegClass::Int, RegClass::Float) => {}
                _ => self.mismatch(format!(
                    "cvt converts between %r and %f, found {dst} <- {src}"
                )),
            },
            Op::Sreg { dst, .. } => self.expect_dst(*dst, RegClass::Int, "sreg"),
            Op::Exit => {}
        }
    }
}

fn for_each_reg(op: &Op, mut f: impl FnMut(Reg)) {
    fn operand(o: &Operand, f: &mut dyn FnMut(Reg)) {
        if let Operand::Reg(r) = o {
            f(*r)
        }
    }
    match op {
        Op::Mov { dst, src } => {
            f(*dst);
            operand(src, &mut f);
        }
        Op::Add { dst, a, b }
        | Op::Sub { dst, a, b }
        | Op::Mul { dst, a, b }
        | Op::FAdd { dst, a, b }
        | Op::FSub { dst, a, b }
        | Op::FMul { dst, a, b }
        | Op::Setp { dst, a, b, .. } => {
            f(*dst);
            operand(a, &mut f);
            operand(b, &mut f);
        }
        Op::Bra { pred, .. } => {
            if let Some((p, _)) = pred {
                f(*p);
            }
        }
        Op::Ld { dst, addr, .. } => {
            f(*dst);
            f(addr.base);
        }
        Op::St { addr, src, .. } => {
            f(addr.base);
            operand(src, &mut f);
        }
        Op::Cvt { dst, src } => {
            f(*dst);
            f(*src);
        }
        Op::Sreg { dst, .. } => f(*dst),
        Op::Exit => {}
    }
}

fn validate_kernel(k: &KernelDef, out: &mut Vec<Diagnostic>) {
    for p in &k.params {
        if p.ty == ScalarType::Ptr && p.space.is_none() {
            out.push(Diagnostic {
                kernel: k.name.clone(),
                iid: None,
                line: k.header_line,
                kind: DiagnosticKind::MissingSpaceAnnotation,
                message: format!("pointer parameter `{}` has no memory space", p.name),
            });
        }
    }
    let Some(last) = k.instructions.last() else {
        out.push(Diagnostic {
            kernel: k.name.clone(),
            iid: None,
            line: k.header_line,
            kind: DiagnosticKind::EmptyKernel,
            message: "kernel has no instructions".into(),
        });
        return;
    };
    let mut checker = Checker { k, iid: 0, out };
    for ins in &k.instructions {
        checker.iid = ins.id;
        checker.check(ins);
    }
    if !matches!(last.op, Op::Exit | Op::Bra { pred: None, .. }) {
        checker.iid = last.id;
        checker.report(
            DiagnosticKind::FallsOffEnd,
            "last instruction must be `exit` or an unconditional `bra`".into(),
        );
    }
}
