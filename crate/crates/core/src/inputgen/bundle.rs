//! Input bundle files: an 8-byte little-endian header length, a JSON
//! header, then each tensor's little-endian payload in order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InputGenError, InputPolicy};
use crate::graph::{Buffer, Tensor, TensorSpec};

const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    seed: u64,
    policy: InputPolicy,
    specs: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputBundle {
    pub policy: InputPolicy,
    pub tensors: Vec<Tensor>,
}

pub fn write_bundle(
    path: &Path,
    policy: &InputPolicy,
    tensors: &[Tensor],
) -> Result<(), InputGenError> {
    let header = Header {
        version: BUNDLE_VERSION,
        seed: policy.seed,
        policy: policy.clone(),
        specs: tensors.iter().map(|t| t.spec().clone()).collect(),
    };
    let json = serde_json::to_vec(&header).expect("headers serialize");
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&(json.len() as u64).to_le_bytes())?;
    file.write_all(&json)?;
    for t in tensors {
        file.write_all(&t.to_contiguous().data().to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_bundle(path: &Path) -> Result<InputBundle, InputGenError> {
    let bytes = std::fs::read(path)?;
    let bad = |msg: String| InputGenError::Bundle(format!("{}: {msg}", path.display()));
    if bytes.len() < 8 {
        return Err(bad("truncated header length".into()));
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < len {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..len]).map_err(|e| bad(e.to_string()))?;
    if header.version != BUNDLE_VERSION {
        return Err(bad(format!(
            "unsupported bundle version {}",
            header.version
        )));
    }
    let mut rest = &body[len..];
    let mut tensors = Vec::with_capacity(header.specs.len());
    for spec in header.specs {
        let n = spec.element_count() * spec.dtype.size_bytes();
        if rest.len() < n {
            return Err(bad("truncated payload".into()));
        }
        let data = Buffer::from_le_bytes(spec.dtype, &rest[..n]).map_err(bad)?;
        rest = &rest[n..];
        tensors.push(Tensor::new(spec, data).map_err(|e| bad(e.to_string()))?);
    }
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(InputBundle {
        policy: header.policy,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures;
    use crate::inputgen::generate_inputs;

    #[test]
    fn bundles_round_trip() {
        let g = fixtures::linear_layer();
        let policy = InputPolicy::with_seed(17);
        let tensors = generate_inputs(&g, &policy).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inputs.bin");
        write_bundle(&path, &policy, &tensors).unwrap();
        let back = read_bundle(&path).unwrap();
        assert_eq!(back.policy, policy);
        assert_eq!(back.tensors.len(), tensors.len());
        for (a, b) in back.tensors.iter().zip(&tensors) {
            assert!(a.bitwise_eq(b));
        }
    }

    #[test]
    fn truncated_bundles_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inputs.bin");
        let tensors = vec![Tensor::from_f64([2], vec![1.0, 2.0]).unwrap()];
        write_bundle(&path, &InputPolicy::default(), &tensors).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_bundle(&path), Err(InputGenError::Bundle(_))));
    }
}
