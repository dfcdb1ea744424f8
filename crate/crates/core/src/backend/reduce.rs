//! Floating-point summation under a profile's reduction order and
//! accumulator width.

use rand::seq::SliceRandom;

use super::profile::ReductionOrder;
use crate::graph::DType;
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Per-node reduction state. The permutation source is created once per node
/// so every lane of a multi-lane reduction draws a fresh order.
pub struct Reducer {
    order: ReductionOrder,
    acc: DType,
    rng: Option<Rng>,
}

impl Reducer {
    /// `salt` distinguishes nodes under a seeded permutation order.
    pub fn new(order: ReductionOrder, acc: DType, salt: u64) -> Self {
        let rng = match order {
            ReductionOrder::SeededPermutation { seed } => {
                Some(rng_from_seed(derive_seed(seed, salt)))
            }
            _ => None,
        };
        Reducer { order, acc, rng }
    }

    pub fn sum(&mut self, values: &[f64]) -> f64 {
        match self.order {
            ReductionOrder::Sequential => sequential(values, self.acc),
            ReductionOrder::FixedTreeChunked { chunk } => {
                chunked_tree(values, chunk.max(1), self.acc)
            }
            ReductionOrder::SeededPermutation { .. } => {
                let mut shuffled = values.to_vec();
                shuffled.shuffle(self.rng.as_mut().expect("permutation rng"));
                sequential(&shuffled, self.acc)
            }
        }
    }

    /// Order in which `n` scattered writes land. Sequential and chunked
    /// orders write in index order.
    pub fn write_order(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        if let Some(rng) = self.rng.as_mut() {
            idx.shuffle(rng);
        }
        idx
    }
}

fn add(a: f64, b: f64, acc: DType) -> f64 {
    match acc {
        DType::F32 => (a as f32 + b as f32) as f64,
        _ => a + b,
    }
}

/// Left-to-right sum. With an F32 accumulator each operand and partial sum
/// is rounded to single precision.
pub fn sequential(values: &[f64], acc: DType) -> f64 {
    let init = match acc {
        DType::F32 => 0.0f32 as f64,
        _ => 0.0,
    };
    values.iter().fold(init, |s, &v| add(s, v, acc))
}

/// Sequential partial sums over fixed-size chunks, combined by adjacent
/// pairs until one value remains.
pub fn chunked_tree(values: &[f64], chunk: usize, acc: DType) -> f64 {
    if values.len() <= chunk {
        return sequential(values, acc);
    }
    let mut level: Vec<f64> = values.chunks(chunk).map(|c| sequential(c, acc)).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|p| {
                if p.len() == 2 {
                    add(p[0], p[1], acc)
                } else {
                    p[0]
                }
            })
            .collect();
    }
    level[0]
}
