use proptest::prelude::*;

use super::*;
use crate::ir::parse_program;
use crate::memory::{MemoryConfig, GLOBAL_BASE};

const AXPY: &str = "\
kernel axpy(a:f32, x:ptr.global, y:ptr.global, n:i32) regs=8
    sreg %r0, ctaid
    sreg %r1, ntid
    mul %r0, %r0, %r1
    sreg %r1, tid
    add %r0, %r0, %r1
    setp.ge %p0, %r0, $n
    bra %p0, done
    mul %r1, %r0, 4
    add %a0, $x, %r1
    add %a1, $y, %r1
    ld.global.f32 %f0, [%a0]
    ld.global.f32 %f1, [%a1]
    fmul %f0, %f0, $a
    fadd %f1, %f1, %f0
    st.global.f32 [%a1], %f1
done:
    exit
";

fn image() -> DeviceMemoryImage {
    DeviceMemoryImage::new(MemoryConfig {
        global_size: 1 << 20,
        ..MemoryConfig::default()
    })
    .unwrap()
}

fn f32s(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn put(m: &mut DeviceMemoryImage, data: &[f32]) -> LaunchArg {
    let (addr, id) = m.alloc(MemSpace::Global, data.len() as u64 * 4).unwrap();
    m.write(addr, &f32s(data));
    LaunchArg::Ptr {
        addr,
        tag: Some(id),
    }
}

fn read_f32s(m: &DeviceMemoryImage, arg: LaunchArg, n: usize) -> Vec<f32> {
    let LaunchArg::Ptr { addr, .. } = arg else {
        panic!()
    };
    m.read(addr, n * 4)
        .unwrap()
        .chunks(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn one_kernel(body: &str) -> Program {
    parse_program(&format!("kernel k(x:ptr.global, n:i32) regs=8\n{body}")).unwrap()
}

#[test]
fn axpy_matches_scalar_loop() {
    let p = parse_program(AXPY).unwrap();
    let mut m = image();
    let (a, x, y) = (2.0f32, [1.0f32, 2.0, 3.0, 4.0], [10.0f32, 20.0, 30.0, 40.0]);
    let xa = put(&mut m, &x);
    let ya = put(&mut m, &y);
    let cfg = LaunchConfig::new(
        "axpy",
        1,
        4,
        vec![LaunchArg::F32(a.to_bits()), xa, ya, LaunchArg::I32(4)],
    );
    let out = launch(&p, &mut m, &cfg, &mut SanitizerHook).unwrap();
    assert_eq!(out.status, ExecStatus::Completed);
    let mut expect = y;
    for i in 0..4 {
        expect[i] += a * x[i];
    }
    assert_eq!(read_f32s(&m, ya, 4), expect);
    assert_eq!(expect, [12.0, 24.0, 36.0, 48.0]);
}

#[test]
fn exit_only_retires_one_per_thread() {
    let p = parse_program("kernel e() regs=1\n    exit\n").unwrap();
    let mut m = image();
    let out = launch(&p, &mut m, &LaunchConfig::new("e", 3, 5, vec![]), &mut ()).unwrap();
    assert_eq!(out.status, ExecStatus::Completed);
    assert_eq!(out.retired, 15);
}

#[test]
fn infinite_loop_exhausts_budget() {
    let p = parse_program("kernel spin() regs=1\nL:\n    bra L\n").unwrap();
    let mut m = image();
    let mut cfg = LaunchConfig::new("spin", 2, 2, vec![]);
    cfg.budget = 10_000;
    let out = launch(&p, &mut m, &cfg, &mut ()).unwrap();
    assert_eq!(out.status, ExecStatus::BudgetExhausted { ctaid: 0, tid: 0 });
    assert_eq!(out.retired, 10_000);
}

#[test]
fn integer_add_wraps() {
    let p = one_kernel(
        "    mov %r2, 2147483647\n    mov %r3, 1\n    add %r1, %r2, %r3\n    mov %a0, $x\n    st.global.i32 [%a0], %r1\n    exit\n",
    );
    let mut m = image();
    let (x, id) = m.alloc(MemSpace::Global, 4).unwrap();
    let args = vec![
        LaunchArg::Ptr {
            addr: x,
            tag: Some(id),
        },
        LaunchArg::I32(0),
    ];
    launch(
        &p,
        &mut m,
        &LaunchConfig::new("k", 1, 1, args),
        &mut SanitizerHook,
    )
    .unwrap();
    assert_eq!(
        i32::from_le_bytes(m.read(x, 4).unwrap().try_into().unwrap()),
        i32::MIN
    );
}

#[test]
fn fadd_rounds_like_binary32() {
    let p = one_kernel(
        "    mov %f0, 0.1\n    mov %f1, 0.2\n    fadd %f2, %f0, %f1\n    mov %a0, $x\n    st.global.f32 [%a0], %f2\n    exit\n",
    );
    let mut m = image();
    let (x, id) = m.alloc(MemSpace::Global, 4).unwrap();
    let args = vec![
        LaunchArg::Ptr {
            addr: x,
            tag: Some(id),
        },
        LaunchArg::I32(0),
    ];
    launch(
        &p,
        &mut m,
        &LaunchConfig::new("k", 1, 1, args),
        &mut SanitizerHook,
    )
    .unwrap();
    let got = u32::from_le_bytes(m.read(x, 4).unwrap().try_into().unwrap());
    // the f64 sum of two binary32 values is exact; rounding it once is the
    // correctly rounded binary32 sum
    let exact = 0.1f32 as f64 + 0.2f32 as f64;
    assert_eq!(got, (exact as f32).to_bits());
    assert_eq!(got, 0x3E99_999A);
}

#[test]
fn store_into_redzone_stops() {
    let p = one_kernel("    mov %a0, $x\n    st.global.i32 [%a0+16], 1\n    exit\n");
    let mut m = image();
    let (x, id) = m.alloc(MemSpace::Global, 16).unwrap();
    let args = vec![
        LaunchArg::Ptr {
            addr: x,
            tag: Some(id),
        },
        LaunchArg::I32(0),
    ];
    let out = launch(
        &p,
        &mut m,
        &LaunchConfig::new("k", 2, 2, args),
        &mut SanitizerHook,
    )
    .unwrap();
    let r = out.report().unwrap();
    assert_eq!(r.class, BugClass::SpatialOob);
    assert_eq!((r.iid, r.ctaid, r.tid), (Some(1), 0, 0));
    // the first thread retired one instruction before stopping
    assert_eq!(out.retired, 1);
}

#[test]
fn unsanitized_unbacked_access_faults() {
    let p = parse_program(
        "kernel w() regs=2\n    mov %a0, 64\n    ld.global.i32 %r0, [%a0]\n    exit\n",
    )
    .unwrap();
    let mut m = image();
    let out = launch(&p, &mut m, &LaunchConfig::new("w", 1, 1, vec![]), &mut ()).unwrap();
    assert_eq!(out.report().unwrap().class, BugClass::WildAccess);
}

#[test]
fn special_registers() {
    let cfg = LaunchConfig::new("k", 2, 4, vec![]);
    let mut ctx = ThreadCtx::new(1);
    ctx.reset(1, 3);
    assert_eq!(read_special(&ctx, &cfg, SpecialReg::Tid), 3);
    assert_eq!(read_special(&ctx, &cfg, SpecialReg::Ntid), 4);
    assert_eq!(read_special(&ctx, &cfg, SpecialReg::Nctaid), 2);
    let global = read_special(&ctx, &cfg, SpecialReg::Ctaid)
        * read_special(&ctx, &cfg, SpecialReg::Ntid)
        + read_special(&ctx, &cfg, SpecialReg::Tid);
    assert_eq!(global, 7);
}

#[test]
fn launch_errors() {
    let p = parse_program(AXPY).unwrap();
    let mut m = image();
    let err = launch(
        &p,
        &mut m,
        &LaunchConfig::new("nope", 1, 1, vec![]),
        &mut (),
    )
    .unwrap_err();
    assert_eq!(err, LaunchError::UnknownKernel("nope".into()));
    let err = launch(
        &p,
        &mut m,
        &LaunchConfig::new("axpy", 1, 1, vec![]),
        &mut (),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        LaunchError::ArityMismatch {
            expected: 4,
            got: 0,
            ..
        }
    ));
    let bad = vec![
        LaunchArg::I32(0),
        LaunchArg::I32(0),
        LaunchArg::I32(0),
        LaunchArg::I32(0),
    ];
    let err = launch(&p, &mut m, &LaunchConfig::new("axpy", 1, 1, bad), &mut ()).unwrap_err();
    assert!(matches!(err, LaunchError::ArgTypeMismatch { index: 0, .. }));
}

#[test]
fn trace_lines() {
    let p = parse_program(AXPY).unwrap();
    let mut m = image();
    let xa = put(&mut m, &[1.0]);
    let ya = put(&mut m, &[2.0]);
    let args = vec![LaunchArg::F32(1f32.to_bits()), xa, ya, LaunchArg::I32(1)];
    let mut trace = TraceHook::new(Vec::new());
    launch(
        &p,
        &mut m,
        &LaunchConfig::new("axpy", 1, 2, args),
        &mut trace,
    )
    .unwrap();
    let text = String::from_utf8(trace.into_inner()).unwrap();
    let xaddr = GLOBAL_BASE + 32;
    let expected = format!(
        "EV cf axpy 0,1\n\
         EV mem axpy 10 ld global {xaddr:#x} 4 0/0 tag=1\n\
         EV mem axpy 11 ld global {:#x} 4 0/0 tag=2\n\
         EV mem axpy 14 st global {:#x} 4 0/0 tag=2\n\
         EV cf axpy 1,2\n\
         EV cf axpy 0,2\n",
        xaddr + 4 + 64,
        xaddr + 4 + 64
    );
    assert_eq!(text, expected);
}

#[test]
fn hook_completeness_on_axpy() {
    let p = parse_program(AXPY).unwrap();
    for n in [0, 1, 5, 8] {
        let mut m = image();
        let xa = put(&mut m, &[1.0; 8]);
        let ya = put(&mut m, &[1.0; 8]);
        let args = vec![LaunchArg::F32(0), xa, ya, LaunchArg::I32(n)];
        let mut counts = CountingHooks::default();
        launch(
            &p,
            &mut m,
            &LaunchConfig::new("axpy", 2, 4, args),
            &mut counts,
        )
        .unwrap();
        let active = n as u64;
        // active threads: 2 loads + 1 store, transitions 0->1, 1->2;
        // idle threads: one 0->2 transition
        assert_eq!(counts.mem_events, 3 * active);
        assert_eq!(counts.cf_events, 2 * active + (8 - active));
        assert_eq!(counts.launches, 1);
    }
}

/// Records every provenance tag seen on an access.
#[derive(Default)]
struct TagLog(Vec<(u64, Option<AllocId>)>);

impl Hooks for TagLog {
    fn on_mem_access(
        &mut self,
        _image: &DeviceMemoryImage,
        _kernel: &KernelDef,
        acc: &Access,
    ) -> Result<(), Box<BugReport>> {
        self.0.push((acc.addr, acc.tag));
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Derive {
    Mov,
    Add(i16),
    Sub(i16),
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn provenance_follows_pointer_arithmetic(chain in prop::collection::vec(
        prop_oneof![
            Just(Derive::Mov),
            any::<i16>().prop_map(Derive::Add),
            any::<i16>().prop_map(Derive::Sub),
        ],
        0..12,
    )) {
        let mut body = String::from("    mov %a0, $x\n");
        let mut offset: i64 = 0;
        for (i, d) in chain.iter().enumerate() {
            let (src, dst) = (i % 4, (i + 1) % 4);
            match d {
                Derive::Mov => body += &format!("    mov %a{dst}, %a{src}\n"),
                Derive::Add(k) => {
                    offset += *k as i64;
                    body += &format!("    add %a{dst}, %a{src}, {k}\n");
                }
                Derive::Sub(k) => {
                    offset -= *k as i64;
                    body += &format!("    mov %r1, {k}\n    sub %a{dst}, %a{src}, %r1\n");
                }
            }
        }
        let last = chain.len() % 4;
        body += &format!("    ld.global.u8 %r0, [%a{last}]\n    exit\n");
        let p = one_kernel(&body);
        let mut m = image();
        let (x, id) = m.alloc(MemSpace::Global, 64).unwrap();
        let args = vec![LaunchArg::Ptr { addr: x, tag: Some(id) }, LaunchArg::I32(0)];
        let mut log = TagLog::default();
        launch(&p, &mut m, &LaunchConfig::new("k", 1, 1, args), &mut log).unwrap();
        prop_assert_eq!(log.0.len(), 1);
        prop_assert_eq!(log.0[0], (x.wrapping_add(offset as u64), Some(id)));
    }

    #[test]
    fn raising_the_budget_keeps_completed_outcomes(n in 0i32..12, budget in 1u64..40, extra in 1u64..1000) {
        let p = parse_program(AXPY).unwrap();
        let run = |budget: u64| {
            let mut m = image();
            let xa = put(&mut m, &[1.5; 8]);
            let ya = put(&mut m, &[0.5; 8]);
            let mut cfg = LaunchConfig::new("axpy", 2, 4, vec![LaunchArg::F32(3f32.to_bits()), xa, ya, LaunchArg::I32(n)]);
            cfg.budget = budget;
            let out = launch(&p, &mut m, &cfg, &mut SanitizerHook).unwrap();
            (out, m)
        };
        let (a, ma) = run(budget);
        if a.status == ExecStatus::Completed {
            let (b, mb) = run(budget + extra);
            prop_assert_eq!(a, b);
            prop_assert_eq!(ma, mb);
        }
    }
}
