//! Binary container for [`TrainedPipeline`]s.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "LGLFORM\n"
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (metadata, class labels,
//!              blob table)
//! n_blobs      u32
//! blobs        n_blobs x (u64 byte length, bytes)
//! checksum     32 bytes  SHA-256 of everything above
//! ```
//!
//! Blob contents by kind:
//!
//! * all: `vocabulary` (UTF-8 words joined by `\n`)
//! * `cnb`: `log_theta` (f64, classes x features), `norms` (f64, per class,
//!   only when normalized)
//! * `dt`, `rf`: `tree_sizes` (u32 node count per tree), `nodes` (u32
//!   stream; split = `0 feature present absent`, leaf = `1 n (class
//!   weight) x n`)
//! * `linear-svm`: `weights` (f64, classes x features), `bias` (f64)
//!
//! Saving a loaded file reproduces it byte for byte.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::tree::Node;
use crate::classifiers::{ClassifierKind, CnbModel, FittedClassifier, Forest, Hyperparams, Model, SvmModel, Tree};
use crate::elf::{ElfCode, JurisdictionCode};
use crate::features::Vocabulary;
use crate::pipeline::{TrainedPipeline, FORMAT_VERSION};
use crate::preprocess::PreprocessMode;

pub const MAGIC: &[u8; 8] = b"LGLFORM\n";
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum ModelStoreError {
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model file format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn corrupt(msg: impl Into<String>) -> ModelStoreError {
    ModelStoreError::CorruptModel(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: ClassifierKind,
    jurisdiction: JurisdictionCode,
    preprocess_mode: PreprocessMode,
    training_snapshot_id: String,
    n_training_samples: usize,
    seed: u64,
    created_at: String,
    hyperparams: Hyperparams,
    class_labels: Vec<ElfCode>,
    n_features: usize,
    params: KindParams,
    blobs: Vec<BlobInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum KindParams {
    Cnb { alpha: f64, normalized: bool },
    Tree,
    Forest { n_trees: usize, max_features: usize },
    LinearSvm { lambda: f64, epochs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobInfo {
    name: String,
    dtype: String,
    len: usize,
}

enum Blob {
    Utf8(String),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl Blob {
    fn dtype(&self) -> &'static str {
        match self {
            Blob::Utf8(_) => "utf8",
            Blob::F64(_) => "f64le",
            Blob::U32(_) => "u32le",
        }
    }

    fn len(&self) -> usize {
        match self {
            Blob::Utf8(s) => s.len(),
            Blob::F64(v) => v.len(),
            Blob::U32(v) => v.len(),
        }
    }

    fn bytes(&self) -> Vec<u8> {
        match self {
            Blob::Utf8(s) => s.as_bytes().to_vec(),
            Blob::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Blob::U32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

fn encode_trees(trees: &[Tree]) -> (Vec<u32>, Vec<u32>) {
    let mut sizes = Vec::with_capacity(trees.len());
    let mut stream = Vec::new();
    for t in trees {
        sizes.push(t.nodes().len() as u32);
        for n in t.nodes() {
            match n {
                Node::Split { feature, present, absent } => stream.extend([0, *feature, *present, *absent]),
                Node::Leaf { dist } => {
                    stream.extend([1, dist.len() as u32]);
                    for &(c, w) in dist {
                        stream.extend([c, w]);
                    }
                }
            }
        }
    }
    (sizes, stream)
}

fn decode_trees(sizes: &[u32], stream: &[u32], n_classes: usize, n_features: usize) -> Result<Vec<Tree>, ModelStoreError> {
    let mut pos = 0usize;
    let mut next = || -> Result<u32, ModelStoreError> {
        let v = *stream.get(pos).ok_or_else(|| corrupt("tree stream truncated"))?;
        pos += 1;
        Ok(v)
    };
    let mut trees = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let size = size as usize;
        if size == 0 {
            return Err(corrupt("empty tree"));
        }
        let mut nodes = Vec::with_capacity(size);
        for _ in 0..size {
            match next()? {
                0 => {
                    let (feature, present, absent) = (next()?, next()?, next()?);
                    if feature as usize >= n_features || present as usize >= size || absent as usize >= size {
                        return Err(corrupt("tree split out of range"));
                    }
                    nodes.push(Node::Split { feature, present, absent });
                }
                1 => {
                    let n = next()? as usize;
                    let mut dist = Vec::with_capacity(n.min(n_classes));
                    for _ in 0..n {
                        let (c, w) = (next()?, next()?);
                        if c as usize >= n_classes {
                            return Err(corrupt("leaf class out of range"));
                        }
                        dist.push((c, w));
                    }
                    if dist.iter().all(|&(_, w)| w == 0) {
                        return Err(corrupt("empty leaf"));
                    }
                    nodes.push(Node::Leaf { dist });
                }
                tag => return Err(corrupt(format!("unknown node tag {tag}"))),
            }
        }
        trees.push(Tree { n_classes, nodes });
    }
    if pos != stream.len() {
        return Err(corrupt("trailing tree data"));
    }
    Ok(trees)
}

/// Serializes a pipeline into the container format.
pub fn to_bytes(p: &TrainedPipeline) -> Vec<u8> {
    let labels = p.class_labels().to_vec();
    let mut blobs: Vec<(&str, Blob)> = vec![("vocabulary", Blob::Utf8(p.vocabulary.words().join("\n")))];
    let params = match p.classifier.model() {
        Model::Cnb(m) => {
            blobs.push(("log_theta", Blob::F64(m.log_theta.clone())));
            if let Some(n) = &m.norms {
                blobs.push(("norms", Blob::F64(n.clone())));
            }
            KindParams::Cnb { alpha: m.alpha, normalized: m.norms.is_some() }
        }
        Model::DecisionTree(t) => {
            let (sizes, stream) = encode_trees(std::slice::from_ref(t));
            blobs.push(("tree_sizes", Blob::U32(sizes)));
            blobs.push(("nodes", Blob::U32(stream)));
            KindParams::Tree
        }
        Model::RandomForest(f) => {
            let (sizes, stream) = encode_trees(f.trees());
            blobs.push(("tree_sizes", Blob::U32(sizes)));
            blobs.push(("nodes", Blob::U32(stream)));
            KindParams::Forest { n_trees: f.trees().len(), max_features: f.max_features() }
        }
        Model::LinearSvm(m) => {
            blobs.push(("weights", Blob::F64(m.weights.clone())));
            blobs.push(("bias", Blob::F64(m.bias.clone())));
            KindParams::LinearSvm { lambda: m.lambda, epochs: m.epochs }
        }
    };
    let header = Header {
        kind: p.kind(),
        jurisdiction: p.jurisdiction.clone(),
        preprocess_mode: p.preprocess_mode,
        training_snapshot_id: p.training_snapshot_id.clone(),
        n_training_samples: p.n_training_samples,
        seed: p.seed,
        created_at: p.created_at.clone(),
        hyperparams: p.hyperparams.clone(),
        class_labels: labels,
        n_features: p.vocabulary.len(),
        params,
        blobs: blobs
            .iter()
            .map(|(name, b)| BlobInfo { name: (*name).to_owned(), dtype: b.dtype().to_owned(), len: b.len() })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&p.format_version.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for (_, b) in &blobs {
        let bytes = b.bytes();
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelStoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("file truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelStoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelStoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn as_usize(v: u64) -> Result<usize, ModelStoreError> {
    usize::try_from(v).map_err(|_| corrupt("length overflow"))
}

/// Parses and validates a container.
pub fn from_bytes(bytes: &[u8]) -> Result<TrainedPipeline, ModelStoreError> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a model file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ModelStoreError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < 12 + CHECKSUM_LEN {
        return Err(corrupt("file truncated"));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(corrupt("checksum mismatch"));
    }

    let mut cur = Cursor { buf: body, pos: 12 };
    let header_len = as_usize(cur.u64()?)?;
    let header: Header =
        serde_json::from_slice(cur.take(header_len)?).map_err(|e| corrupt(format!("header: {e}")))?;
    let n_blobs = cur.u32()? as usize;
    if n_blobs != header.blobs.len() {
        return Err(corrupt("blob count disagrees with header"));
    }
    let mut raw: Vec<(&BlobInfo, &[u8])> = Vec::with_capacity(n_blobs);
    for info in &header.blobs {
        let len = as_usize(cur.u64()?)?;
        raw.push((info, cur.take(len)?));
    }
    if cur.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }

    let blob = |name: &str| raw.iter().find(|(i, _)| i.name == name).copied();
    let utf8 = |name: &str| -> Result<String, ModelStoreError> {
        let (_, b) = blob(name).ok_or_else(|| corrupt(format!("missing blob {name}")))?;
        String::from_utf8(b.to_vec()).map_err(|_| corrupt(format!("blob {name} is not UTF-8")))
    };
    let f64s = |name: &str, expect: usize| -> Result<Vec<f64>, ModelStoreError> {
        let (info, b) = blob(name).ok_or_else(|| corrupt(format!("missing blob {name}")))?;
        if info.dtype != "f64le" || b.len() != expect * 8 || info.len != expect {
            return Err(corrupt(format!("blob {name} has the wrong shape")));
        }
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let u32s = |name: &str| -> Result<Vec<u32>, ModelStoreError> {
        let (info, b) = blob(name).ok_or_else(|| corrupt(format!("missing blob {name}")))?;
        if info.dtype != "u32le" || b.len() % 4 != 0 || info.len != b.len() / 4 {
            return Err(corrupt(format!("blob {name} has the wrong shape")));
        }
        Ok(b.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    };

    let words_text = utf8("vocabulary")?;
    let words: Vec<String> =
        if words_text.is_empty() { Vec::new() } else { words_text.split('\n').map(str::to_owned).collect() };
    let d = header.n_features;
    if words.len() != d {
        return Err(corrupt("vocabulary size disagrees with header"));
    }
    let vocabulary = Vocabulary::from_words(words).map_err(corrupt)?;

    let k = header.class_labels.len();
    if k == 0 || header.class_labels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(corrupt("class labels must be non-empty, sorted and unique"));
    }
    let model = match (&header.kind, &header.params) {
        (ClassifierKind::Cnb, KindParams::Cnb { alpha, normalized }) => Model::Cnb(CnbModel {
            n_classes: k,
            n_features: d,
            alpha: *alpha,
            log_theta: f64s("log_theta", k * d)?,
            norms: if *normalized { Some(f64s("norms", k)?) } else { None },
        }),
        (ClassifierKind::DecisionTree, KindParams::Tree) => {
            let mut trees = decode_trees(&u32s("tree_sizes")?, &u32s("nodes")?, k, d)?;
            if trees.len() != 1 {
                return Err(corrupt("decision tree file must hold one tree"));
            }
            Model::DecisionTree(trees.pop().unwrap())
        }
        (ClassifierKind::RandomForest, KindParams::Forest { n_trees, max_features }) => {
            let trees = decode_trees(&u32s("tree_sizes")?, &u32s("nodes")?, k, d)?;
            if trees.len() != *n_trees || trees.is_empty() {
                return Err(corrupt("tree count disagrees with header"));
            }
            Model::RandomForest(Forest { n_classes: k, max_features: *max_features, trees })
        }
        (ClassifierKind::LinearSvm, KindParams::LinearSvm { lambda, epochs }) => Model::LinearSvm(SvmModel {
            n_features: d,
            weights: f64s("weights", k * d)?,
            bias: f64s("bias", k)?,
            lambda: *lambda,
            epochs: *epochs,
        }),
        _ => return Err(corrupt("classifier kind disagrees with its parameters")),
    };

    Ok(TrainedPipeline {
        format_version: version,
        jurisdiction: header.jurisdiction,
        preprocess_mode: header.preprocess_mode,
        vocabulary,
        classifier: FittedClassifier { class_labels: header.class_labels, model },
        hyperparams: header.hyperparams,
        training_snapshot_id: header.training_snapshot_id,
        n_training_samples: header.n_training_samples,
        seed: header.seed,
        created_at: header.created_at,
    })
}

pub fn save(pipeline: &TrainedPipeline, path: &Path) -> Result<(), ModelStoreError> {
    let io = |source| ModelStoreError::Io { path: path.display().to_string(), source };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&to_bytes(pipeline)).map_err(io)?;
    f.sync_all().map_err(io)
}

pub fn load(path: &Path) -> Result<TrainedPipeline, ModelStoreError> {
    let bytes = std::fs::read(path).map_err(|source| ModelStoreError::Io { path: path.display().to_string(), source })?;
    from_bytes(&bytes)
}
