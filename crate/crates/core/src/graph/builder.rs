use super::{infer_op, Graph, GraphError, NodeId, NodeKind, Op, PortRef, Tensor, TensorSpec};

/// Incremental graph construction with output specs inferred per operator.
///
/// ```
/// use graphdiff::graph::{DType, GraphBuilder, Op, TensorSpec};
///
/// let mut b = GraphBuilder::new();
/// let x = b.input(TensorSpec::new([2, 3], DType::F32));
/// let y = b.op(Op::Relu, &[x]).unwrap();
/// b.output(y);
/// let g = b.finish().unwrap();
/// assert_eq!(g.op_count(), 1);
/// ```
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: Graph,
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder::default()
    }

    pub fn input(&mut self, spec: TensorSpec) -> PortRef {
        self.graph
            .add_node(NodeKind::Input, vec![], vec![spec])
            .into()
    }

    pub fn constant(&mut self, value: Tensor) -> PortRef {
        let spec = value.spec().clone();
        self.graph
            .add_node(NodeKind::Constant(value), vec![], vec![spec])
            .into()
    }

    pub fn op(&mut self, op: Op, inputs: &[PortRef]) -> Result<PortRef, GraphError> {
        self.op_declared(op, inputs, None)
    }

    /// Like [`GraphBuilder::op`], recording `declared` as the traced output
    /// spec of a data-dependent operator.
    pub fn op_declared(
        &mut self,
        op: Op,
        inputs: &[PortRef],
        declared: Option<TensorSpec>,
    ) -> Result<PortRef, GraphError> {
        let next = self.graph.next_id();
        let specs = inputs
            .iter()
            .map(|p| {
                self.graph
                    .port_spec(*p)
                    .ok_or_else(|| GraphError::DanglingEdge {
                        node: next,
                        detail: format!("producer {} has no slot {}", p.node, p.slot),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let inferred = infer_op(&op, &specs, declared.as_ref()).map_err(|e| {
            GraphError::SignatureMismatch {
                node: next,
                detail: e.to_string(),
            }
        })?;
        Ok(self
            .graph
            .add_node(NodeKind::Op(op), inputs.to_vec(), vec![inferred.spec])
            .into())
    }

    pub fn output(&mut self, port: PortRef) -> NodeId {
        let spec = self
            .graph
            .port_spec(port)
            .cloned()
            .expect("output of an existing port");
        self.graph
            .add_node(NodeKind::Output, vec![port], vec![spec])
    }

    pub fn spec(&self, port: PortRef) -> &TensorSpec {
        self.graph.port_spec(port).expect("existing port")
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Validates and returns the graph.
    pub fn finish(self) -> Result<Graph, GraphError> {
        self.graph.validate()?;
        Ok(self.graph)
    }
}
