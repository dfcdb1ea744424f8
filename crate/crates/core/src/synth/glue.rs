use crate::graph::{infer_op, Graph, NodeKind, Op, PortRef, TensorSpec};

use super::SynthError;

/// Operators that turn a `producer` tensor into one matching `consumer`:
/// an optional `Contiguous` and `Cast`, then either a flatten/slice/reshape
/// or flatten/pad/reshape chain, a lone reshape, or nothing at all.
/// Truncation keeps the leading elements; padding appends zeros.
pub fn insert_glue(
    producer: &TensorSpec,
    consumer: &TensorSpec,
    element_cap: usize,
) -> Result<Vec<Op>, SynthError> {
    let (pc, cc) = (producer.element_count(), consumer.element_count());
    let largest = pc.max(cc);
    if largest > element_cap {
        return Err(SynthError::ElementCapExceeded {
            count: largest,
            cap: element_cap,
        });
    }
    let mut chain = Vec::new();
    if !producer.contiguous {
        chain.push(Op::Contiguous);
    }
    if producer.dtype != consumer.dtype {
        chain.push(Op::Cast { to: consumer.dtype });
    }
    let reshape = Op::Reshape {
        shape: consumer.shape.clone(),
    };
    if pc > cc {
        chain.push(Op::Flatten);
        chain.push(Op::Slice {
            axis: 0,
            start: 0,
            end: cc,
        });
        chain.push(reshape);
    } else if pc < cc {
        chain.push(Op::Flatten);
        chain.push(Op::Pad {
            before: 0,
            after: cc - pc,
            value: 0.0,
        });
        chain.push(reshape);
    } else if producer.shape != consumer.shape {
        chain.push(reshape);
    }
    Ok(chain)
}

/// Appends `chain` to `graph` starting from `from`; returns the port of the
/// last operator, or `from` for an empty chain.
pub fn append_chain(graph: &mut Graph, from: PortRef, chain: &[Op]) -> PortRef {
    let mut port = from;
    for op in chain {
        let spec = graph.port_spec(port).expect("glue source exists").clone();
        let out = infer_op(op, &[&spec], None).expect("glue operators match their input");
        port = graph
            .add_node(NodeKind::Op(op.clone()), vec![port], vec![out.spec])
            .into();
    }
    port
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DType, OpKind, DEFAULT_ELEMENT_CAP};

    fn kinds(chain: &[Op]) -> Vec<OpKind> {
        chain.iter().map(Op::kind).collect()
    }

    fn spec(shape: &[usize]) -> TensorSpec {
        TensorSpec::new(shape.to_vec(), DType::F32)
    }

    #[test]
    fn slice_path() {
        let chain = insert_glue(&spec(&[2, 3]), &spec(&[2, 2]), DEFAULT_ELEMENT_CAP).unwrap();
        assert_eq!(
            kinds(&chain),
            [OpKind::Flatten, OpKind::Slice, OpKind::Reshape]
        );
        assert_eq!(
            chain[1],
            Op::Slice {
                axis: 0,
                start: 0,
                end: 4
            }
        );
    }

    #[test]
    fn pad_path() {
        let chain = insert_glue(&spec(&[2, 2]), &spec(&[2, 3]), DEFAULT_ELEMENT_CAP).unwrap();
        assert_eq!(
            kinds(&chain),
            [OpKind::Flatten, OpKind::Pad, OpKind::Reshape]
        );
        assert_eq!(
            chain[1],
            Op::Pad {
                before: 0,
                after: 2,
                value: 0.0
            }
        );
    }

    #[test]
    fn identical_specs_need_nothing() {
        assert!(insert_glue(&spec(&[4]), &spec(&[4]), DEFAULT_ELEMENT_CAP)
            .unwrap()
            .is_empty());
        let chain = insert_glue(&spec(&[4]), &spec(&[2, 2]), DEFAULT_ELEMENT_CAP).unwrap();
        assert_eq!(kinds(&chain), [OpKind::Reshape]);
    }

    #[test]
    fn layout_and_dtype_come_first() {
        let p = TensorSpec::new([3, 2], DType::F64).with_contiguous(false);
        let chain = insert_glue(&p, &spec(&[3, 2]), DEFAULT_ELEMENT_CAP).unwrap();
        assert_eq!(kinds(&chain), [OpKind::Contiguous, OpKind::Cast]);
    }

    #[test]
    fn cap_is_enforced() {
        let err = insert_glue(&spec(&[10]), &spec(&[100]), 50).unwrap_err();
        assert!(matches!(
            err,
            SynthError::ElementCapExceeded {
                count: 100,
                cap: 50
            }
        ));
    }
}
