//! Small hand-built graphs shared by tests, examples and documentation.

use super::{DType, Graph, GraphBuilder, Op, Tensor, TensorSpec};

/// `relu(addmm(bias, x1 + x2, weight))`, a traced linear layer. Node ids in
/// topological order are
/// `x1, x2, weight, bias, add, addmm, relu, out` = `0..=7`.
pub fn linear_layer() -> Graph {
    let mut b = GraphBuilder::new();
    let x1 = b.input(TensorSpec::new([2, 4], DType::F64));
    let x2 = b.input(TensorSpec::new([2, 4], DType::F64));
    let weight = b.input(TensorSpec::new([4, 4], DType::F64));
    let bias = b.input(TensorSpec::new([4], DType::F64));
    let add = b.op(Op::Add, &[x1, x2]).unwrap();
    let mm = b
        .op(
            Op::AddMM {
                beta: 1.0,
                alpha: 1.0,
            },
            &[bias, add, weight],
        )
        .unwrap();
    let relu = b.op(Op::Relu, &[mm]).unwrap();
    b.output(relu);
    b.finish().unwrap()
}

/// Inputs for [`linear_layer`]: both activations 0.5, identity weight, zero bias.
pub fn linear_layer_inputs() -> Vec<Tensor> {
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 4 + i] = 1.0;
    }
    vec![
        Tensor::from_f64([2, 4], vec![0.5; 8]).unwrap(),
        Tensor::from_f64([2, 4], vec![0.5; 8]).unwrap(),
        Tensor::from_f64([4, 4], eye).unwrap(),
        Tensor::from_f64([4], vec![0.0; 4]).unwrap(),
    ]
}

/// `MaxUnpool2d` whose index tensor sends all four inputs to output cell 0,
/// so the result depends on the order in which writes land.
pub fn unpool_duplicate_indices() -> (Graph, Vec<Tensor>) {
    let mut b = GraphBuilder::new();
    let x = b.input(TensorSpec::new([1, 1, 2, 2], DType::F32));
    let idx = b.constant(Tensor::from_i64([1, 1, 2, 2], vec![0, 0, 0, 0]).unwrap());
    let up = b
        .op(
            Op::MaxUnpool2d {
                output_size: [4, 4],
            },
            &[x, idx],
        )
        .unwrap();
    b.output(up);
    let g = b.finish().unwrap();
    let inputs = vec![Tensor::from_f32([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()];
    (g, inputs)
}

/// `Where(c, relu(a), relu(b))`: the shape that hoisting and sinking
/// predicate rewrites keep flipping between.
pub fn select_of_relus() -> Graph {
    let mut b = GraphBuilder::new();
    let c = b.input(TensorSpec::new([8], DType::Bool));
    let x = b.input(TensorSpec::new([8], DType::F32));
    let y = b.input(TensorSpec::new([8], DType::F32));
    let rx = b.op(Op::Relu, &[x]).unwrap();
    let ry = b.op(Op::Relu, &[y]).unwrap();
    let w = b.op(Op::Where, &[c, rx, ry]).unwrap();
    b.output(w);
    b.finish().unwrap()
}
