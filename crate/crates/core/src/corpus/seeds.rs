//! Built-in seed graphs, so the harness runs without an external model zoo.

use rand::Rng as _;

use super::{Corpus, CorpusEntry};
use crate::graph::{BagMode, DType, Graph, GraphBuilder, Op, PortRef, Tensor, TensorSpec};
use crate::rng::Rng;

/// Seed graph families. Each one carries at least one operator that some
/// backend profile treats differently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    Mlp,
    Attention,
    EmbeddingReduce,
    PoolingChain,
    NormalizationChain,
    IntRatio,
    SelectChain,
}

impl Template {
    pub const ALL: [Template; 7] = [
        Template::Mlp,
        Template::Attention,
        Template::EmbeddingReduce,
        Template::PoolingChain,
        Template::NormalizationChain,
        Template::IntRatio,
        Template::SelectChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Mlp => "mlp",
            Template::Attention => "attention",
            Template::EmbeddingReduce => "embedding-reduce",
            Template::PoolingChain => "pooling-chain",
            Template::NormalizationChain => "normalization-chain",
            Template::IntRatio => "int-ratio",
            Template::SelectChain => "select-chain",
        }
    }

    /// Builds one random instance. Structure and extents are drawn from
    /// `rng`; the result always validates.
    pub fn build(self, rng: &mut Rng) -> Graph {
        let mut t = Tpl {
            b: GraphBuilder::new(),
            rng,
        };
        match self {
            Template::Mlp => t.mlp(),
            Template::Attention => t.attention(),
            Template::EmbeddingReduce => t.embedding_reduce(),
            Template::PoolingChain => t.pooling_chain(),
            Template::NormalizationChain => t.normalization_chain(),
            Template::IntRatio => t.int_ratio(),
            Template::SelectChain => t.select_chain(),
        }
        t.b.finish().expect("templates build valid graphs")
    }
}

/// `n` architecture-distinct graphs, cycling through the templates.
/// Deterministic in the state of `rng`.
pub fn generate_seed_corpus(rng: &mut Rng, n: usize) -> Corpus {
    let mut corpus = Corpus::new();
    let mut attempt = 0;
    while corpus.len() < n && attempt < n.saturating_mul(200).max(200) {
        let template = Template::ALL[attempt % Template::ALL.len()];
        attempt += 1;
        let graph = template.build(rng);
        let origin = format!("template:{}#{}", template.name(), corpus.len());
        corpus.insert(CorpusEntry::new(graph, origin));
    }
    corpus
}

struct Tpl<'a> {
    b: GraphBuilder,
    rng: &'a mut Rng,
}

impl Tpl<'_> {
    fn op(&mut self, op: Op, inputs: &[PortRef]) -> PortRef {
        self.b
            .op(op, inputs)
            .expect("template operators are well-typed")
    }

    fn input(&mut self, shape: &[usize], dtype: DType) -> PortRef {
        self.b.input(TensorSpec::new(shape.to_vec(), dtype))
    }

    fn coin(&mut self) -> bool {
        self.rng.gen_bool(0.5)
    }

    fn float_dtype(&mut self) -> DType {
        if self.coin() {
            DType::F32
        } else {
            DType::F64
        }
    }

    fn int_dtype(&mut self) -> DType {
        if self.coin() {
            DType::I64
        } else {
            DType::I32
        }
    }

    fn constant(&mut self, shape: &[usize], dtype: DType) -> PortRef {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-1.0..1.0)).collect();
        let t = match dtype {
            DType::F32 => {
                Tensor::from_f32(shape.to_vec(), values.iter().map(|&v| v as f32).collect())
            }
            _ => Tensor::from_f64(shape.to_vec(), values),
        }
        .expect("constant shape matches its data");
        self.b.constant(t)
    }

    fn activation(&mut self, x: PortRef) -> PortRef {
        let op = match self.rng.gen_range(0..3) {
            0 => Op::Relu,
            1 => Op::Sigmoid,
            _ => Op::HardTanh { min: 0.0, max: 6.0 },
        };
        self.op(op, &[x])
    }

    fn reduce(&mut self, x: PortRef, axis: usize) -> PortRef {
        let op = match self.rng.gen_range(0..4) {
            0 => Op::Sum { axis: Some(axis) },
            1 => Op::Mean { axis: Some(axis) },
            2 => Op::Max { axis: Some(axis) },
            _ => Op::Sum { axis: None },
        };
        self.op(op, &[x])
    }

    fn mlp(&mut self) {
        let dt = self.float_dtype();
        let batch = self.rng.gen_range(2..=4);
        let mut width = self.rng.gen_range(2..=8);
        let x = self.input(&[batch, width], dt);
        let mut h = x;
        for _ in 0..self.rng.gen_range(1..=3) {
            let next = self.rng.gen_range(2..=8);
            let w = self.input(&[width, next], dt);
            let bias = if self.coin() {
                self.constant(&[next], dt)
            } else {
                self.input(&[next], dt)
            };
            let lin = self.op(
                Op::AddMM {
                    beta: 1.0,
                    alpha: 1.0,
                },
                &[bias, h, w],
            );
            let mut y = self.activation(lin);
            if next == width && self.coin() {
                y = self.op(Op::Add, &[y, h]);
            }
            h = y;
            width = next;
        }
        if self.coin() {
            h = self.reduce(h, 1);
        }
        self.b.output(h);
    }

    fn attention(&mut self) {
        let dt = self.float_dtype();
        let s = self.rng.gen_range(2..=6);
        let d = self.rng.gen_range(2..=8);
        let q = self.input(&[s, d], dt);
        let k = self.input(&[s, d], dt);
        let v = self.input(&[s, d], dt);
        let mut kt = self.op(Op::Transpose { dim0: 0, dim1: 1 }, &[k]);
        if self.coin() {
            kt = self.op(Op::Contiguous, &[kt]);
        }
        let mut scores = self.op(Op::MatMul, &[q, kt]);
        let scale = self.b.constant(Tensor::full(
            &TensorSpec::new([s, s], dt),
            1.0 / (d as f64).sqrt(),
        ));
        scores = self.op(Op::Mul, &[scores, scale]);
        let probs = if self.coin() {
            self.op(Op::Sigmoid, &[scores])
        } else {
            self.op(Op::Relu, &[scores])
        };
        let mut out = self.op(Op::MatMul, &[probs, v]);
        if self.coin() {
            out = self.op(Op::Add, &[out, q]);
        }
        self.b.output(out);
        if self.coin() {
            let best = self.op(Op::ArgMax { axis: Some(1) }, &[scores]);
            self.b.output(best);
        }
    }

    fn embedding_reduce(&mut self) {
        let dt = self.float_dtype();
        let it = self.int_dtype();
        // Extents below five can be indexed out of bounds by generated
        // indices.
        let dim = self.rng.gen_range(3..=8);
        let rows = self.rng.gen_range(4..=8);
        let looked_up = match self.rng.gen_range(0..3) {
            0 => {
                let len = self.rng.gen_range(2..=8);
                let bags = self.rng.gen_range(1..=len.min(3));
                let weight = self.input(&[rows, dim], dt);
                let indices = self.input(&[len], it);
                let offsets = self.input(&[bags], it);
                let mode = [BagMode::Sum, BagMode::Mean, BagMode::Max][self.rng.gen_range(0..3)];
                self.op(Op::EmbeddingBag { mode }, &[weight, indices, offsets])
            }
            1 => {
                let len = self.rng.gen_range(1..=6);
                let table = self.input(&[rows, dim], dt);
                let idx = self.input(&[len], it);
                self.op(Op::IndexSelect { axis: 0 }, &[table, idx])
            }
            _ => {
                let k = self.rng.gen_range(1..=dim);
                let data = self.input(&[rows, dim], dt);
                let idx = self.input(&[rows, k], it);
                self.op(Op::Gather { axis: 1 }, &[data, idx])
            }
        };
        let mut h = looked_up;
        if self.coin() {
            h = self.activation(h);
        }
        let out = if self.coin() {
            self.reduce(h, 1)
        } else {
            self.op(Op::ArgMax { axis: Some(1) }, &[h])
        };
        self.b.output(out);
    }

    fn pooling_chain(&mut self) {
        let dt = self.float_dtype();
        if self.coin() {
            let n = self.rng.gen_range(1..=2);
            let c = self.rng.gen_range(1..=3);
            let l = self.rng.gen_range(6..=12);
            let x = self.input(&[n, c, l], dt);
            let mut y = if self.coin() {
                self.op(Op::Relu, &[x])
            } else {
                x
            };
            if self.coin() {
                y = self.op(Op::Transpose { dim0: 0, dim1: 1 }, &[y]);
            }
            let kernel = self.rng.gen_range(2..=3);
            let stride = self.rng.gen_range(1..=2);
            y = self.op(Op::MaxPool1d { kernel, stride }, &[y]);
            if self.coin() {
                y = self.op(
                    Op::MaxPool1d {
                        kernel: 2,
                        stride: 1,
                    },
                    &[y],
                );
            }
            let out = if self.coin() {
                self.op(Op::Max { axis: Some(2) }, &[y])
            } else {
                self.op(Op::Flatten, &[y])
            };
            self.b.output(out);
        } else {
            let c = self.rng.gen_range(1..=3);
            let h = self.rng.gen_range(2..=3);
            let w = self.rng.gen_range(2..=3);
            let x = self.input(&[1, c, h, w], dt);
            let idx = self.input(&[1, c, h, w], DType::I64);
            let up = self.op(
                Op::MaxUnpool2d {
                    output_size: [2 * h, 2 * w],
                },
                &[x, idx],
            );
            let out = match self.rng.gen_range(0..3) {
                0 => self.op(Op::Relu, &[up]),
                1 => self.op(
                    Op::MaxPool1d {
                        kernel: 2,
                        stride: 2,
                    },
                    &[up],
                ),
                _ => self.op(Op::Sum { axis: None }, &[up]),
            };
            self.b.output(out);
        }
    }

    fn normalization_chain(&mut self) {
        let dt = self.float_dtype();
        let n = self.rng.gen_range(1..=3);
        let c = self.rng.gen_range(2..=4);
        let l = self.rng.gen_range(2..=6);
        let mut x = self.input(&[n, c, l], dt);
        if self.coin() {
            let x2 = self.input(&[n, c, l], dt);
            x = self.op(Op::Sub, &[x, x2]);
        }
        let mut params = Vec::with_capacity(4);
        for _ in 0..4 {
            let p = if self.coin() {
                self.input(&[c], dt)
            } else {
                self.constant(&[c], dt)
            };
            params.push(p);
        }
        // Variance must stay non-negative; a constant one is drawn from [-1, 1).
        if !self.b.graph().inputs().contains(&params[1].node) {
            params[1] = self
                .b
                .constant(Tensor::full(&TensorSpec::new([c], dt), 1.0));
        }
        let y = self.op(
            Op::BatchNorm { eps: 1e-5 },
            &[x, params[0], params[1], params[2], params[3]],
        );
        let mut h = self.activation(y);
        if self.coin() {
            h = self.reduce(h, 2);
        }
        self.b.output(h);
    }

    /// Integer division and remainder by generated zeros, float remainder
    /// by zero (NaN) seen through a reshape, and infinities cast to int.
    fn int_ratio(&mut self) {
        let it = self.int_dtype();
        let dt = self.float_dtype();
        let n = 2 * self.rng.gen_range(2..=4);
        let a = self.input(&[n], it);
        let b = self.input(&[n], it);
        let int_branch = self.rng.gen_bool(0.7);
        if int_branch {
            let op = if self.coin() { Op::Div } else { Op::Remainder };
            let q = self.op(op, &[a, b]);
            let f = self.op(Op::Cast { to: dt }, &[q]);
            let out = if self.coin() {
                self.op(Op::Sigmoid, &[f])
            } else {
                f
            };
            self.b.output(out);
        } else {
            // `a` must still reach an output.
            let s = self.op(Op::Add, &[a, b]);
            self.b.output(s);
        }
        let x = self.input(&[n], dt);
        let k = self.op(Op::Cast { to: dt }, &[b]);
        let op = if self.coin() { Op::Remainder } else { Op::Div };
        let r = self.op(op, &[x, k]);
        let grid = self.op(
            Op::Reshape {
                shape: vec![2, n / 2],
            },
            &[r],
        );
        let red = self.reduce(grid, 1);
        self.b.output(red);
        if self.coin() {
            let ratio = self.op(Op::Div, &[x, k]);
            let back = self.op(Op::Cast { to: it }, &[ratio]);
            self.b.output(back);
        }
    }

    fn select_chain(&mut self) {
        let dt = self.float_dtype();
        let n = self.rng.gen_range(4..=10);
        let x = self.input(&[n], dt);
        let c = self.input(&[n], DType::Bool);
        if self.coin() {
            let y = self.input(&[n], dt);
            let ax = self.activation(x);
            let ay = if self.coin() {
                self.op(Op::Relu, &[y])
            } else {
                y
            };
            let w = self.op(Op::Where, &[c, ax, ay]);
            let out = if self.coin() {
                self.op(Op::Sum { axis: None }, &[w])
            } else {
                w
            };
            self.b.output(out);
        } else {
            let picked = self.op(Op::NonZeroSelect, &[x, c]);
            // A fixed-shape consumer of the selection fails whenever the
            // runtime count differs from the traced one.
            let out = if self.rng.gen_bool(0.7) {
                self.op(Op::Sum { axis: None }, &[picked])
            } else {
                self.op(Op::Relu, &[picked])
            };
            self.b.output(out);
        }
    }
}
