//! Scalar reference results for the clean benchmarks.
//!
//! Each routine replays the kernel's work thread by thread: thread `t` of
//! [`THREADS`] visits `i = t, t + THREADS, ...` below `min(n, CAP)` and, for
//! reductions, accumulates in that order into its own partial. The f32
//! operations are the kernel's, in the kernel's order, so results agree bit
//! for bit.

use super::BenchError;
use crate::mutation::TypedValue;

/// Threads per launch in the bundled harnesses (grid 2, block 32).
pub const THREADS: usize = 64;
/// Element capacity the harnesses pass as `cap`.
pub const CAP: i32 = 256;

struct Inputs<'a> {
    name: &'a str,
    args: &'a [TypedValue],
}

impl Inputs<'_> {
    fn bad(&self, msg: String) -> BenchError {
        BenchError::BadInputs {
            name: self.name.to_string(),
            msg,
        }
    }

    fn expect_len(&self, n: usize) -> Result<(), BenchError> {
        if self.args.len() == n {
            Ok(())
        } else {
            Err(self.bad(format!("expected {n} arguments, got {}", self.args.len())))
        }
    }

    fn f32(&self, i: usize) -> Result<f32, BenchError> {
        match self.args.get(i) {
            Some(TypedValue::F32(b)) => Ok(f32::from_bits(*b)),
            _ => Err(self.bad(format!("argument {i} must be f32"))),
        }
    }

    fn i32(&self, i: usize) -> Result<i32, BenchError> {
        match self.args.get(i) {
            Some(TypedValue::I32(v)) => Ok(*v),
            _ => Err(self.bad(format!("argument {i} must be i32"))),
        }
    }

    fn vec(&self, i: usize, len: usize) -> Result<Vec<f32>, BenchError> {
        match self.args.get(i) {
            Some(TypedValue::Array(a)) if a.len() == len => {
                Ok((0..len).map(|k| f32::from_bits(a.word(k))).collect())
            }
            _ => Err(self.bad(format!("argument {i} must be an array of {len} elements"))),
        }
    }
}

fn limit(n: i32) -> usize {
    if n <= CAP {
        n.max(0) as usize
    } else {
        CAP as usize
    }
}

/// Indices visited by thread `t`.
fn visits(t: usize, lim: usize) -> impl Iterator<Item = usize> {
    (t..lim).step_by(THREADS)
}

fn abs(v: f32) -> f32 {
    if v < 0.0 {
        0.0 - v
    } else {
        v
    }
}

fn bytes_f32(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn partials_f32(lim: usize, mut step: impl FnMut(f32, usize) -> f32) -> Vec<u8> {
    let out: Vec<f32> = (0..THREADS)
        .map(|t| visits(t, lim).fold(0.0, &mut step))
        .collect();
    bytes_f32(&out)
}

fn partial_index(x: &[f32], lim: usize, init: f32, better: fn(f32, f32) -> bool) -> Vec<u8> {
    (0..THREADS)
        .flat_map(|t| {
            let (mut best, mut idx) = (init, 0i32);
            for i in visits(t, lim) {
                let v = abs(x[i]);
                if better(v, best) {
                    best = v;
                    idx = i as i32 + 1;
                }
            }
            idx.to_le_bytes()
        })
        .collect()
}

/// Bytes the clean harness's COMPUTE phase copies out, in `copy_out` order,
/// for the given test-case arguments (in the harness's argument order).
pub fn reference_result(name: &str, args: &[TypedValue]) -> Result<Vec<u8>, BenchError> {
    let inp = Inputs { name, args };
    let len = CAP as usize;
    Ok(match name {
        "amax" | "amin" | "asum" | "nrm2" => {
            inp.expect_len(2)?;
            let (x, lim) = (inp.vec(0, len)?, limit(inp.i32(1)?));
            match name {
                "amax" => partial_index(&x, lim, -1.0, |v, b| v > b),
                "amin" => partial_index(&x, lim, f32::INFINITY, |v, b| v < b),
                "asum" => partials_f32(lim, |acc, i| acc + abs(x[i])),
                _ => partials_f32(lim, |acc, i| acc + x[i] * x[i]),
            }
        }
        "dot" => {
            inp.expect_len(3)?;
            let (x, y, lim) = (inp.vec(0, len)?, inp.vec(1, len)?, limit(inp.i32(2)?));
            partials_f32(lim, |acc, i| acc + x[i] * y[i])
        }
        "axpy" => {
            inp.expect_len(4)?;
            let (a, x, mut y) = (inp.f32(0)?, inp.vec(1, len)?, inp.vec(2, len)?);
            for i in 0..limit(inp.i32(3)?) {
                y[i] += x[i] * a;
            }
            bytes_f32(&y)
        }
        "copy" => {
            inp.expect_len(3)?;
            let (x, mut y) = (inp.vec(0, len)?, inp.vec(1, len)?);
            let lim = limit(inp.i32(2)?);
            y[..lim].copy_from_slice(&x[..lim]);
            bytes_f32(&y)
        }
        "scal" => {
            inp.expect_len(3)?;
            let (a, mut x) = (inp.f32(0)?, inp.vec(1, len)?);
            for v in x.iter_mut().take(limit(inp.i32(2)?)) {
                *v *= a;
            }
            bytes_f32(&x)
        }
        "swap" => {
            inp.expect_len(3)?;
            let (mut x, mut y) = (inp.vec(0, len)?, inp.vec(1, len)?);
            let lim = limit(inp.i32(2)?);
            x[..lim].swap_with_slice(&mut y[..lim]);
            let mut out = bytes_f32(&x);
            out.extend(bytes_f32(&y));
            out
        }
        "rot" => {
            inp.expect_len(5)?;
            let (mut x, mut y) = (inp.vec(0, len)?, inp.vec(1, len)?);
            let (c, s, lim) = (inp.f32(2)?, inp.f32(3)?, limit(inp.i32(4)?));
            for i in 0..lim {
                let (xi, yi) = (x[i], y[i]);
                x[i] = xi * c + yi * s;
                y[i] = yi * c - xi * s;
            }
            let mut out = bytes_f32(&x);
            out.extend(bytes_f32(&y));
            out
        }
        "rotm" => {
            inp.expect_len(4)?;
            let (mut x, mut y, p) = (inp.vec(0, len)?, inp.vec(1, len)?, inp.vec(2, 5)?);
            let (flag, h11, h21, h12, h22) = (p[0], p[1], p[2], p[3], p[4]);
            let lim = if flag < -1.5 { 0 } else { limit(inp.i32(3)?) };
            for i in 0..lim {
                let (xi, yi) = (x[i], y[i]);
                (x[i], y[i]) = if flag < -0.5 {
                    (h11 * xi + h12 * yi, h21 * xi + h22 * yi)
                } else if flag < 0.5 {
                    (xi + h12 * yi, h21 * xi + yi)
                } else {
                    (h11 * xi + yi, h22 * yi - xi)
                };
            }
            let mut out = bytes_f32(&x);
            out.extend(bytes_f32(&y));
            out
        }
        _ => return Err(BenchError::UnknownBenchmark(name.to_string())),
    })
}
