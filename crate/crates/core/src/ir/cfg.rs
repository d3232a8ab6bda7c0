use std::collections::BTreeSet;

use super::{BasicBlock, Instruction, Op, Terminator};

/// Splits an instruction list into basic blocks and enumerates the static
/// edges between them.
///
/// Leaders are instruction 0, every branch target and every instruction that
/// follows a branch or an `exit`. Conditional branches contribute a taken and
/// a fallthrough edge, unconditional branches a taken edge, `exit` none.
/// Edges are returned sorted and deduplicated.
pub fn build_cfg(instructions: &[Instruction]) -> (Vec<BasicBlock>, Vec<(u32, u32)>) {
    let n = instructions.len();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut leader = vec![false; n];
    leader[0] = true;
    for (i, ins) in instructions.iter().enumerate() {
        match &ins.op {
            Op::Bra { target, .. } => {
                if (target.index as usize) < n {
                    leader[target.index as usize] = true;
                }
                if i + 1 < n {
                    leader[i + 1] = true;
                }
            }
            Op::Exit if i + 1 < n => leader[i + 1] = true,
            _ => {}
        }
    }

    let starts: Vec<usize> = (0..n).filter(|&i| leader[i]).collect();
    let mut block_of = vec![0u32; n];
    let mut blocks = Vec::with_capacity(starts.len());
    for (b, &start) in starts.iter().enumerate() {
        let end = starts.get(b + 1).copied().unwrap_or(n);
        for slot in &mut block_of[start..end] {
            *slot = b as u32;
        }
        let terminator = match &instructions[end - 1].op {
            Op::Bra { pred, .. } => Terminator::Branch {
                conditional: pred.is_some(),
            },
            Op::Exit => Terminator::Exit,
            _ => Terminator::Fallthrough,
        };
        blocks.push(BasicBlock {
            id: b as u32,
            start: start as u32,
            end: end as u32,
            terminator,
        });
    }

    let mut edges = BTreeSet::new();
    for block in &blocks {
        let last = &instructions[block.end as usize - 1];
        let next = (block.id as usize + 1 < blocks.len()).then_some(block.id + 1);
        match (&last.op, block.terminator) {
            (Op::Bra { target, pred }, _) => {
                if (target.index as usize) < n {
                    edges.insert((block.id, block_of[target.index as usize]));
                }
                if pred.is_some() {
                    if let Some(next) = next {
                        edges.insert((block.id, next));
                    }
                }
            }
            (_, Terminator::Fallthrough) => {
                if let Some(next) = next {
                    edges.insert((block.id, next));
                }
            }
            _ => {}
        }
    }
    (blocks, edges.into_iter().collect())
}
