use std::collections::HashSet;

use proptest::prelude::*;

use super::*;
use crate::rng;

fn int_spec(name: &str) -> ArgSpec {
    ArgSpec {
        name: name.into(),
        kind: ArgKind::I32 { range: None },
    }
}

fn f32_spec(name: &str) -> ArgSpec {
    ArgSpec {
        name: name.into(),
        kind: ArgKind::F32 { range: None },
    }
}

fn arr_spec(name: &str, elem: ElemType, n: u32) -> ArgSpec {
    ArgSpec {
        name: name.into(),
        kind: ArgKind::Array {
            elem,
            space: MemSpace::Global,
            extents: vec![n],
            range: None,
        },
    }
}

fn mixed() -> (Vec<ArgSpec>, TestCase) {
    let specs = vec![
        f32_spec("a"),
        arr_spec("x", ElemType::F32, 8),
        arr_spec("idx", ElemType::I32, 4),
        int_spec("n"),
    ];
    let tc = TestCase::seed(vec![
        TypedValue::F32(2f32.to_bits()),
        TypedValue::Array(ArrayValue::from_f32(&[1.0; 8], MemSpace::Global)),
        TypedValue::Array(ArrayValue::from_i32(&[1, 2, 3, 4], MemSpace::Global)),
        TypedValue::I32(8),
    ]);
    (specs, tc)
}

#[test]
fn integer_ops() {
    let max = MutationOp::IntBoundary {
        which: Boundary::Max,
    };
    assert_eq!(mutate_int(-5, &max).unwrap(), 2147483647);
    assert_eq!(
        mutate_int(
            9,
            &MutationOp::IntBoundary {
                which: Boundary::Zero
            }
        )
        .unwrap(),
        0
    );
    assert_eq!(
        mutate_int(
            9,
            &MutationOp::IntBoundary {
                which: Boundary::Min
            }
        )
        .unwrap(),
        i32::MIN
    );
    let inc = MutationOp::IntByteLevel {
        flips: vec![],
        arith: 1,
    };
    assert_eq!(mutate_int(i32::MAX, &inc).unwrap(), i32::MIN);
    let flip = MutationOp::IntByteLevel {
        flips: vec![0, 31],
        arith: 0,
    };
    assert_eq!(mutate_int(0, &flip).unwrap(), i32::MIN + 1);
    assert!(mutate_int(0, &MutationOp::FloatSign).is_err());
}

#[test]
fn float_ops() {
    let one = 1f32.to_bits();
    assert_eq!(one, 0x3F80_0000);
    assert_eq!(
        mutate_float(one, &MutationOp::FloatSign).unwrap(),
        0xBF80_0000
    );
    let inf = mutate_float(one, &MutationOp::FloatExponent { bits: vec![30] }).unwrap();
    // reference: xor the bit, then decode the fields by hand
    assert_eq!(inf, one ^ 0x4000_0000);
    let (exp, man) = ((inf >> 23) & 0xFF, inf & 0x7F_FFFF);
    assert_eq!((exp, man, inf >> 31), (0xFF, 0, 0));
    assert_eq!(f32::from_bits(inf), f32::INFINITY);
    assert_eq!(
        mutate_float(one, &MutationOp::FloatMantissa { bits: vec![0] }).unwrap(),
        0x3F80_0001
    );
    assert_eq!(
        mutate_float(one, &MutationOp::FloatArith { delta: -0.5 }).unwrap(),
        0.5f32.to_bits()
    );
    // out-of-range bit indices are ignored rather than leaking into other fields
    assert_eq!(
        mutate_float(one, &MutationOp::FloatMantissa { bits: vec![23, 31] }).unwrap(),
        one
    );
}

#[test]
fn array_ops() {
    let a = ArrayValue::from_f32(&[1.0; 8], MemSpace::Global);
    let r = mutate_array(
        &a,
        &MutationOp::ArrayDimension {
            extents: vec![2, 4],
        },
    )
    .unwrap();
    assert_eq!((r.bytes.len(), r.extents.clone()), (32, vec![2, 4]));
    assert_eq!(r.bytes, a.bytes);
    let grown = mutate_array(&a, &MutationOp::ArrayDimension { extents: vec![10] }).unwrap();
    assert_eq!(grown.len(), 10);
    let s = mutate_array(
        &a,
        &MutationOp::PointerSpaceSwap {
            space: MemSpace::Shared,
        },
    )
    .unwrap();
    assert_eq!(s.placement.space, MemSpace::Shared);
    let big = ArrayValue::from_f32(&[0.0; 100], MemSpace::Global);
    let e = mutate_array(&big, &MutationOp::ArrayEmpty).unwrap();
    assert_eq!((e.extents.clone(), e.bytes.len()), (vec![0], 0));
    assert_eq!(e.alloc_size(), 1);
    let x = mutate_array(
        &a,
        &MutationOp::ArrayValueExtreme {
            pattern: Boundary::Min,
        },
    )
    .unwrap();
    assert!((0..8).all(|i| f32::from_bits(x.word(i)) == f32::MIN));
    let o = mutate_array(&a, &MutationOp::PointerOffset { bytes: 1000 }).unwrap();
    assert_eq!(o.placement.offset, 64);
    let el = MutationOp::ArrayElement {
        index: 9,
        inner: Box::new(MutationOp::FloatSign),
    };
    assert_eq!(f32::from_bits(mutate_array(&a, &el).unwrap().word(1)), -1.0);
    let wrong = MutationOp::ArrayElement {
        index: 0,
        inner: Box::new(MutationOp::IntBoundary {
            which: Boundary::Max,
        }),
    };
    assert!(mutate_array(&a, &wrong).is_err());
}

#[test]
fn type_awareness_classification() {
    assert!(MutationOp::IntBoundary {
        which: Boundary::Max
    }
    .is_type_aware());
    assert!(MutationOp::PointerSpaceSwap {
        space: MemSpace::Local
    }
    .is_type_aware());
    assert!(!MutationOp::IntByteLevel {
        flips: vec![],
        arith: 1
    }
    .is_type_aware());
    let generic_el = MutationOp::ArrayElement {
        index: 0,
        inner: Box::new(MutationOp::FloatByteLevel { flips: vec![3] }),
    };
    assert!(!generic_el.is_type_aware());
}

#[test]
fn deterministic_given_seed() {
    let (specs, tc) = mixed();
    let cfg = MutationConfig::default();
    let a = mutate_testcase(&tc, &specs, 5, &cfg, &mut rng::from_seed(9));
    let b = mutate_testcase(&tc, &specs, 5, &cfg, &mut rng::from_seed(9));
    assert_eq!(a, b);
    assert_eq!(a.parent, Some(tc.id()));
}

#[test]
fn int_only_cases_get_int_ops() {
    let specs = vec![int_spec("a"), int_spec("b")];
    let tc = TestCase::seed(vec![TypedValue::I32(1), TypedValue::I32(2)]);
    let mut r = rng::from_seed(1);
    for it in 0..200 {
        let child = mutate_testcase(&tc, &specs, it, &MutationConfig::default(), &mut r);
        assert!(!child.trace.is_empty() && child.trace.len() <= 2);
        for (_, op) in &child.trace {
            assert!(matches!(
                op,
                MutationOp::IntBoundary { .. } | MutationOp::IntByteLevel { .. }
            ));
        }
    }
}

#[test]
fn boundary_sweep_reaches_all_values() {
    let (specs, tc) = mixed();
    let mut r = rng::from_seed(77);
    let mut seen = HashSet::new();
    for it in 0..1000 {
        let child = mutate_testcase(&tc, &specs, it, &MutationConfig::default(), &mut r);
        if let TypedValue::I32(v) = child.args[3] {
            seen.insert(v);
        }
    }
    assert!(seen.contains(&0) && seen.contains(&i32::MAX) && seen.contains(&i32::MIN));
}

#[test]
fn type_aware_share_is_near_forty_percent() {
    let (specs, tc) = mixed();
    let cfg = MutationConfig {
        boundary_period: 0,
        ..MutationConfig::default()
    };
    let mut r = rng::from_seed(3);
    let (mut aware, mut total) = (0, 0);
    for it in 0..4000 {
        for (_, op) in mutate_testcase(&tc, &specs, it, &cfg, &mut r).trace {
            total += 1;
            aware += op.is_type_aware() as usize;
        }
    }
    let share = aware as f64 / total as f64;
    assert!((0.36..0.44).contains(&share), "share {share}");
}

#[test]
fn testcase_file_round_trip() {
    let (specs, tc) = mixed();
    let mut r = rng::from_seed(11);
    let mut cur = tc;
    for it in 0..50 {
        cur = mutate_testcase(&cur, &specs, it, &MutationConfig::default(), &mut r);
        let digest = argspec_digest(&specs);
        let text = cur.to_toml(&digest);
        let (back, d) = TestCase::from_toml(&text).unwrap();
        assert_eq!(back, cur);
        assert_eq!(d, digest);
        assert_eq!(back.id(), cur.id());
    }
    assert!(TestCase::from_toml("version = 2\nargspec=\"\"\nrng_seed=\"0x0\"").is_err());
}

proptest! {
    #[test]
    fn float_ops_stay_in_their_bit_range(bits in any::<u32>(), picks in prop::collection::vec(0u8..32, 1..4)) {
        let sign = mutate_float(bits, &MutationOp::FloatSign).unwrap();
        prop_assert_eq!(sign ^ bits, 0x8000_0000);
        let man = mutate_float(bits, &MutationOp::FloatMantissa { bits: picks.clone() }).unwrap();
        prop_assert_eq!((man ^ bits) & !0x007F_FFFF, 0);
        let exp = mutate_float(bits, &MutationOp::FloatExponent { bits: picks.clone() }).unwrap();
        prop_assert_eq!((exp ^ bits) & !0x7F80_0000, 0);
    }

    #[test]
    fn chosen_float_ops_respect_ranges(seed in any::<u64>(), bits in any::<u32>()) {
        let mut r = rng::from_seed(seed);
        let op = choose_op(&f32_spec("f"), &TypedValue::F32(bits), true, &mut r);
        let out = mutate_float(bits, &op).unwrap();
        let mask = match op {
            MutationOp::FloatSign => 0x8000_0000,
            MutationOp::FloatMantissa { .. } => 0x007F_FFFF,
            MutationOp::FloatExponent { .. } => 0x7F80_0000,
            _ => u32::MAX,
        };
        prop_assert_eq!((out ^ bits) & !mask, 0);
    }

    #[test]
    fn mutation_preserves_types_and_replays(seed in any::<u64>(), steps in 1usize..20) {
        let (specs, seed_tc) = mixed();
        let mut r = rng::from_seed(seed);
        let mut chain = vec![seed_tc.clone()];
        for it in 0..steps as u64 {
            let child = mutate_testcase(chain.last().unwrap(), &specs, it, &MutationConfig::default(), &mut r);
            prop_assert!(child.check_against(&specs).is_ok());
            chain.push(child);
        }
        // replay the whole lineage from the seed
        let mut args = seed_tc.args.clone();
        for tc in &chain[1..] {
            args = replay_trace(&args, &tc.trace).unwrap();
            prop_assert_eq!(&args, &tc.args);
        }
        for tc in &chain {
            for v in &tc.args {
                if let TypedValue::Array(a) = v {
                    let count: u64 = a.extents.iter().map(|&e| e as u64).product();
                    prop_assert_eq!(count as usize * 4, a.bytes.len());
                    prop_assert!(count <= 4 * 8);
                }
            }
        }
    }
}
