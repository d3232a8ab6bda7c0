use rand::seq::index::sample;
use rand::Rng;

use super::{
    apply_op, ArgKind, ArgSpec, ArrayValue, Boundary, ElemType, MutationOp, TestCase, TypedValue,
};
use crate::ir::MemSpace;
use crate::rng::{self, FuzzRng};

#[derive(Debug, Clone, PartialEq)]
pub struct MutationConfig {
    /// Upper bound on arguments mutated per child.
    pub max_args: usize,
    /// Probability of picking a type-aware op over a generic one.
    pub type_aware_weight: f64,
    /// Every this many iterations one integer argument is forced onto the
    /// next boundary value in a fixed sweep; 0 disables the sweep.
    pub boundary_period: u64,
}

impl Default for MutationConfig {
    fn default() -> Self {
        MutationConfig {
            max_args: 3,
            type_aware_weight: 0.4,
            boundary_period: 16,
        }
    }
}

fn distinct_bits(rng: &mut FuzzRng, lo: u8, hi: u8, count: usize) -> Vec<u8> {
    let span = (hi - lo + 1) as usize;
    let mut bits: Vec<u8> = sample(rng, span, count.min(span))
        .into_iter()
        .map(|i| lo + i as u8)
        .collect();
    bits.sort_unstable();
    bits
}

fn int_op(rng: &mut FuzzRng, type_aware: bool) -> MutationOp {
    if type_aware {
        MutationOp::IntBoundary {
            which: Boundary::ALL[rng.random_range(0..3)],
        }
    } else {
        let n = rng.random_range(0..=2);
        let flips = distinct_bits(rng, 0, 31, n);
        let mut arith = rng.random_range(-35..=35);
        if flips.is_empty() && arith == 0 {
            arith = 1;
        }
        MutationOp::IntByteLevel { flips, arith }
    }
}

fn float_op(rng: &mut FuzzRng, type_aware: bool) -> MutationOp {
    if !type_aware {
        let n = rng.random_range(1..=3);
        return MutationOp::FloatByteLevel {
            flips: distinct_bits(rng, 0, 31, n),
        };
    }
    match rng.random_range(0..4) {
        0 => MutationOp::FloatSign,
        1 => {
            let n = rng.random_range(1..=3);
            MutationOp::FloatMantissa {
                bits: distinct_bits(rng, 0, 22, n),
            }
        }
        2 => {
            let n = rng.random_range(1..=2);
            MutationOp::FloatExponent {
                bits: distinct_bits(rng, 23, 30, n),
            }
        }
        _ => {
            let magnitude = 2f32.powi(rng.random_range(-3..=10));
            let delta = if rng.random_bool(0.5) {
                magnitude
            } else {
                -magnitude
            };
            MutationOp::FloatArith { delta }
        }
    }
}

fn scalar_op(elem: ElemType, rng: &mut FuzzRng, type_aware: bool) -> MutationOp {
    match elem {
        ElemType::I32 => int_op(rng, type_aware),
        ElemType::F32 => float_op(rng, type_aware),
    }
}

fn new_extents(a: &ArrayValue, declared: u64, rng: &mut FuzzRng) -> Vec<u32> {
    let count = a.len() as u64;
    let cap = 4 * declared.max(1);
    let divisors: Vec<u64> = (2..count).filter(|d| count.is_multiple_of(*d)).collect();
    match rng.random_range(0..3) {
        0 if !divisors.is_empty() => {
            let d = divisors[rng.random_range(0..divisors.len())];
            vec![d as u32, (count / d) as u32]
        }
        _ if count >= cap => vec![rng.random_range(1..=cap) as u32],
        1 if count > 1 => vec![rng.random_range(1..count) as u32],
        _ => vec![rng.random_range(count + 1..=cap) as u32],
    }
}

fn array_op(spec: &ArgSpec, a: &ArrayValue, rng: &mut FuzzRng, type_aware: bool) -> MutationOp {
    let index = rng.random_range(0..a.len().max(1)) as u32;
    if !type_aware {
        return MutationOp::ArrayElement {
            index,
            inner: Box::new(scalar_op(a.elem, rng, false)),
        };
    }
    match rng.random_range(0..6) {
        0 => MutationOp::ArrayValueExtreme {
            pattern: Boundary::ALL[rng.random_range(0..3)],
        },
        1 => MutationOp::ArrayDimension {
            extents: new_extents(a, spec.declared_count(), rng),
        },
        2 => MutationOp::ArrayEmpty,
        3 => MutationOp::ArrayElement {
            index,
            inner: Box::new(scalar_op(a.elem, rng, true)),
        },
        4 => {
            let others: Vec<MemSpace> = MemSpace::ALL
                .into_iter()
                .filter(|s| *s != a.placement.space)
                .collect();
            MutationOp::PointerSpaceSwap {
                space: others[rng.random_range(0..others.len())],
            }
        }
        _ => {
            let bound = 2 * a.alloc_size() as i64;
            MutationOp::PointerOffset {
                bytes: rng.random_range(-bound..=bound),
            }
        }
    }
}

/// Picks a type-appropriate op for one argument.
pub fn choose_op(
    spec: &ArgSpec,
    value: &TypedValue,
    type_aware: bool,
    rng: &mut FuzzRng,
) -> MutationOp {
    match (value, &spec.kind) {
        (TypedValue::I32(_), _) => int_op(rng, type_aware),
        (TypedValue::F32(_), _) => float_op(rng, type_aware),
        (TypedValue::Array(a), ArgKind::Array { .. }) => array_op(spec, a, rng, type_aware),
        (TypedValue::Array(a), _) => array_op(
            &ArgSpec {
                name: spec.name.clone(),
                kind: ArgKind::Array {
                    elem: a.elem,
                    space: a.placement.space,
                    extents: a.extents.clone(),
                    range: None,
                },
            },
            a,
            rng,
            type_aware,
        ),
    }
}

/// Derives a child from `parent`.
///
/// A fresh child seed is drawn from `rng`; every further choice comes from
/// that seed, so the child is a function of (parent, seed, iteration). Between
/// one and `max_args` distinct arguments are mutated, the count following a
/// geometric distribution with p = 1/2.
pub fn mutate_testcase(
    parent: &TestCase,
    specs: &[ArgSpec],
    iteration: u64,
    cfg: &MutationConfig,
    rng: &mut FuzzRng,
) -> TestCase {
    let seed: u64 = rng.random();
    let mut r = rng::from_seed(seed);
    let n = parent.args.len();
    let mut trace = Vec::new();
    let mut args = parent.args.clone();
    if n == 0 {
        return TestCase::child(parent, args, seed, trace);
    }

    let limit = cfg.max_args.clamp(1, n);
    let mut count = 1;
    while count < limit && r.random_bool(0.5) {
        count += 1;
    }
    let mut chosen: Vec<usize> = sample(&mut r, n, count).into_vec();

    let ints: Vec<usize> = (0..n)
        .filter(|&i| matches!(args[i], TypedValue::I32(_)))
        .collect();
    let mut forced = None;
    if cfg.boundary_period > 0 && iteration.is_multiple_of(cfg.boundary_period) && !ints.is_empty()
    {
        let slot = (iteration / cfg.boundary_period) as usize % (3 * ints.len());
        let arg = ints[slot / 3];
        forced = Some((arg, Boundary::ALL[slot % 3]));
        if !chosen.contains(&arg) {
            chosen[0] = arg;
        }
    }
    chosen.sort_unstable();

    for i in chosen {
        let op = match forced {
            Some((arg, which)) if arg == i => MutationOp::IntBoundary { which },
            _ => {
                let type_aware = r.random_bool(cfg.type_aware_weight);
                choose_op(&specs[i], &args[i], type_aware, &mut r)
            }
        };
        args[i] = apply_op(&args[i], &op).expect("op chosen for this argument kind");
        trace.push((i, op));
    }
    TestCase::child(parent, args, seed, trace)
}
