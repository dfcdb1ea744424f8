//! Seed graphs deduplicated by architecture, and random subgraph sampling.
//!
//! Two graphs share an architecture hash when they differ only in constant
//! payloads, tensor extents and node numbering.

mod sample;
mod seeds;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::graph::{Graph, GraphFileError};

pub use sample::{sample_subgraph, Subgraph, DEFAULT_MAX_NODES};
pub use seeds::{generate_seed_corpus, Template};

pub const MANIFEST_FILE: &str = "corpus.manifest.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("{path}: unsupported graph schema version {version}")]
    SchemaVersionUnsupported { path: PathBuf, version: u32 },
    #[error("{path}: graph does not validate: {detail}")]
    Invalid { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub graph: Graph,
    /// Free-text provenance, e.g. a file path or template name.
    pub origin: String,
    pub arch_hash: String,
}

impl CorpusEntry {
    pub fn new(graph: Graph, origin: impl Into<String>) -> Self {
        let arch_hash = arch_hash(&graph);
        CorpusEntry {
            graph,
            origin: origin.into(),
            arch_hash,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportStats {
    pub read: usize,
    pub kept: usize,
    pub dropped: usize,
}

/// Attributes holding tensor extents rather than structure.
const EXTENT_ATTRS: &[&str] = &[
    "start",
    "end",
    "before",
    "after",
    "output_size",
    "kernel",
    "stride",
];

/// Digest of the renumbered canonical form with constant payloads removed,
/// shapes reduced to their rank and extent attributes blanked.
pub fn arch_hash(graph: &Graph) -> String {
    let mut rec = graph.renumbered().to_record();
    for node in &mut rec.nodes {
        for spec in &mut node.outputs {
            spec.shape = vec![0; spec.shape.len()];
        }
        for (key, value) in node.attrs.iter_mut() {
            if node.kind == "Constant" || EXTENT_ATTRS.contains(&key.as_str()) {
                *value = Value::Null;
            } else if node.kind == "Reshape" && key == "shape" {
                let rank = value.as_array().map_or(0, Vec::len);
                *value = Value::from(rank);
            }
        }
    }
    sha256_hex(&serde_json::to_vec(&rec).expect("graph records serialize"))
}

/// Graphs keyed by architecture hash. Immutable once built; sampling takes
/// the random source explicitly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    entries: BTreeMap<String, CorpusEntry>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    /// Adds `entry` unless its architecture is already present.
    pub fn insert(&mut self, entry: CorpusEntry) -> bool {
        if self.entries.contains_key(&entry.arch_hash) {
            return false;
        }
        self.entries.insert(entry.arch_hash.clone(), entry);
        true
    }

    /// Adds every entry of `other`, skipping known architectures.
    pub fn merge(&mut self, other: &Corpus) -> ImportStats {
        let mut stats = ImportStats::default();
        for e in other.entries() {
            stats.read += 1;
            if self.insert(e.clone()) {
                stats.kept += 1;
            } else {
                stats.dropped += 1;
            }
        }
        stats
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, arch_hash: &str) -> Option<&CorpusEntry> {
        self.entries.get(arch_hash)
    }

    /// Entries in ascending hash order.
    pub fn entries(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.values()
    }

    /// Writes one graph file per entry plus the manifest. Returns the
    /// written graph paths.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut files = Vec::new();
        let mut manifest = Manifest::default();
        for e in self.entries() {
            let name = format!("{}.json", &e.arch_hash[..16]);
            let path = dir.join(&name);
            fs::write(&path, e.graph.to_canonical_json()).map_err(io_err(&path))?;
            manifest.entries.push(ManifestEntry {
                file: name,
                arch_hash: e.arch_hash.clone(),
                origin: e.origin.clone(),
                op_count: e.graph.op_count(),
            });
            files.push(path);
        }
        manifest.stats = ImportStats {
            read: self.len(),
            kept: self.len(),
            dropped: 0,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifests serialize");
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        Ok(files)
    }

    /// Loads every graph file in `dir`. Origins come from the manifest when
    /// one is present.
    pub fn load_dir(dir: &Path) -> Result<(Corpus, ImportStats), CorpusError> {
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let path = entry.map_err(io_err(dir))?.path();
            let is_graph = path.extension().is_some_and(|e| e == "json")
                && path.file_name().is_some_and(|n| n != MANIFEST_FILE);
            if is_graph {
                paths.push(path);
            }
        }
        paths.sort();
        let (mut corpus, stats) = import_graphs(&paths)?;

        let manifest_path = dir.join(MANIFEST_FILE);
        if let Ok(text) = fs::read_to_string(&manifest_path) {
            let manifest: Manifest =
                serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
                    path: manifest_path.clone(),
                    detail: e.to_string(),
                })?;
            for m in manifest.entries {
                if let Some(e) = corpus.entries.get_mut(&m.arch_hash) {
                    e.origin = m.origin;
                }
            }
        }
        Ok((corpus, stats))
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
    stats: ImportStats,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    arch_hash: String,
    origin: String,
    op_count: usize,
}

/// Reads, validates and deduplicates graph files. The first file of each
/// architecture wins.
pub fn import_graphs<P: AsRef<Path>>(paths: &[P]) -> Result<(Corpus, ImportStats), CorpusError> {
    let mut corpus = Corpus::new();
    let mut stats = ImportStats::default();
    for path in paths {
        let path = path.as_ref();
        let graph = Graph::load(path).map_err(|e| match e {
            GraphFileError::SchemaVersionUnsupported(version) => {
                CorpusError::SchemaVersionUnsupported {
                    path: path.to_path_buf(),
                    version,
                }
            }
            GraphFileError::Io(source) => CorpusError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => CorpusError::Parse {
                path: path.to_path_buf(),
                detail: other.to_string(),
            },
        })?;
        graph.validate().map_err(|e| CorpusError::Invalid {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        stats.read += 1;
        if corpus.insert(CorpusEntry::new(graph, path.display().to_string())) {
            stats.kept += 1;
        } else {
            stats.dropped += 1;
        }
    }
    Ok((corpus, stats))
}
