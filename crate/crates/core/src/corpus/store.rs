//! Binary stores for ranker checkpoints and centroid sets, plus the data
//! directory layout and its manifest.
//!
//! Both formats are `magic | u32 version | u32 header_len | JSON header |
//! little-endian f64 payload`. The header records every tensor shape, so a
//! truncated or padded payload is detected by a length check.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::coordination::{Params, RankerConfig, RankerModel};
use crate::dialogue::{AspectId, Task};
use crate::error::{Error, Result};
use crate::progression::CentroidSet;

pub const FORMAT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"DCRANKER";
const CENTROID_MAGIC: &[u8; 8] = b"DCCENTRD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_p3: Option<f64>,
    /// Hex SHA-256 of the training corpus.
    pub corpus_hash: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    config: RankerConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidHeader {
    pub task: Task,
    pub aspect_id: AspectId,
    pub k: usize,
    pub n_d: usize,
    pub silhouette: f64,
    pub seed: u64,
    pub corpus_hash: Option<String>,
}

fn write_container(
    path: &Path,
    magic: &[u8; 8],
    header: &impl Serialize,
    payload: &[f64],
) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(16 + header.len() + payload.len() * 8);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    // Write-then-rename so readers never observe a partial file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, buf)?;
    fs::rename(tmp, path)?;
    Ok(())
}

fn read_container<H: DeserializeOwned>(
    path: &Path,
    magic: &[u8; 8],
) -> Result<(H, Vec<f64>, usize)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 {
        return Err(Error::Corrupt(format!(
            "{}: shorter than the header",
            path.display()
        )));
    }
    if &bytes[..8] != magic {
        return Err(Error::Corrupt(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "{}: format version {version}, expected {FORMAT_VERSION}",
            path.display()
        )));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let Some(header) = bytes.get(16..16 + hlen) else {
        return Err(Error::Corrupt(format!(
            "{}: truncated header",
            path.display()
        )));
    };
    let header: H = serde_json::from_slice(header)
        .map_err(|e| Error::Corrupt(format!("{}: header: {e}", path.display())))?;
    let body = &bytes[16 + hlen..];
    if body.len() % 8 != 0 {
        return Err(Error::Corrupt(format!(
            "{}: payload is not whole f64s",
            path.display()
        )));
    }
    let payload = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect::<Vec<_>>();
    let n = payload.len();
    Ok((header, payload, n))
}

pub fn hash_hex(hash: &[u8; 32]) -> String {
    hex::encode(hash)
}

fn check_hash(stored: &Option<String>, expected: Option<&str>) -> Result<()> {
    match (stored, expected) {
        (Some(s), Some(e)) if s != e => Err(Error::HashMismatch {
            stored: s.clone(),
            expected: e.to_string(),
        }),
        (None, Some(e)) => Err(Error::HashMismatch {
            stored: "none".into(),
            expected: e.to_string(),
        }),
        _ => Ok(()),
    }
}

pub fn save_checkpoint(path: &Path, model: &RankerModel, meta: &CheckpointMeta) -> Result<()> {
    model.validate()?;
    let named = model.params.named();
    let header = CheckpointHeader {
        config: model.config,
        meta: meta.clone(),
        tensors: named
            .iter()
            .map(|(name, shape, _)| TensorHeader {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let payload: Vec<f64> = named
        .iter()
        .flat_map(|(_, _, d)| d.iter().copied())
        .collect();
    write_container(path, CHECKPOINT_MAGIC, &header, &payload)
}

/// Loads a checkpoint. `expected` guards against a config whose
/// dimensions disagree with the stored tensors (`version_mismatch`);
/// `corpus_hash` is compared with the stored hash when both are present.
pub fn load_checkpoint(
    path: &Path,
    expected: Option<&RankerConfig>,
    corpus_hash: Option<&str>,
) -> Result<(RankerModel, CheckpointMeta)> {
    let (header, payload, n): (CheckpointHeader, _, _) = read_container(path, CHECKPOINT_MAGIC)?;
    if let Some(want) = expected {
        let got = &header.config;
        if (got.n_t, got.n_d, got.d_b, got.d_h) != (want.n_t, want.n_d, want.d_b, want.d_h) {
            return Err(Error::VersionMismatch(format!(
                "checkpoint has n_t={} n_d={} d_b={} d_h={}, configuration expects n_t={} n_d={} d_b={} d_h={}",
                got.n_t, got.n_d, got.d_b, got.d_h, want.n_t, want.n_d, want.d_b, want.d_h
            )));
        }
    }
    check_hash(&header.meta.corpus_hash, corpus_hash)?;
    let mut params = Params::zeros(&header.config);
    let layout = params.layout();
    let stored: Vec<(String, Vec<usize>)> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone()))
        .collect();
    if layout != stored {
        return Err(Error::VersionMismatch(
            "tensor layout differs from this build".into(),
        ));
    }
    let total: usize = layout
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    if n != total {
        return Err(Error::Corrupt(format!(
            "{}: payload has {n} values, header describes {total}",
            path.display()
        )));
    }
    let mut offset = 0;
    for slot in params.slices_mut() {
        let len = slot.len();
        slot.copy_from_slice(&payload[offset..offset + len]);
        offset += len;
    }
    let model = RankerModel {
        config: header.config,
        params,
    };
    model.validate()?;
    Ok((model, header.meta))
}

pub fn save_centroids(
    path: &Path,
    task: Task,
    set: &CentroidSet,
    corpus_hash: Option<&str>,
) -> Result<()> {
    let header = CentroidHeader {
        task,
        aspect_id: set.aspect_id,
        k: set.k,
        n_d: set.n_d(),
        silhouette: set.silhouette,
        seed: set.seed,
        corpus_hash: corpus_hash.map(str::to_owned),
    };
    let payload: Vec<f64> = set.centroids.iter().copied().collect();
    write_container(path, CENTROID_MAGIC, &header, &payload)?;
    fs::write(
        path.with_extension("json"),
        serde_json::to_vec_pretty(&header)?,
    )?;
    Ok(())
}

pub fn load_centroids(
    path: &Path,
    expected_n_d: Option<usize>,
    corpus_hash: Option<&str>,
) -> Result<(CentroidSet, CentroidHeader)> {
    let (header, payload, n): (CentroidHeader, _, _) = read_container(path, CENTROID_MAGIC)?;
    if let Some(d) = expected_n_d {
        if d != header.n_d {
            return Err(Error::VersionMismatch(format!(
                "centroids have n_d={}, configuration expects {d}",
                header.n_d
            )));
        }
    }
    check_hash(&header.corpus_hash, corpus_hash)?;
    if n != header.k * header.n_d {
        return Err(Error::Corrupt(format!(
            "{}: payload has {n} values, header describes {}x{}",
            path.display(),
            header.k,
            header.n_d
        )));
    }
    let centroids = Array2::from_shape_vec((header.k, header.n_d), payload)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    if centroids.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corrupt(format!(
            "{}: non-finite centroid",
            path.display()
        )));
    }
    let set = CentroidSet {
        aspect_id: header.aspect_id,
        k: header.k,
        centroids,
        silhouette: header.silhouette,
        seed: header.seed,
    };
    Ok((set, header))
}

/// Layout of a data directory:
/// `annotations/{split}.ndjson`, `centroids/aspect-{i}.bin` (+ `.json`),
/// `model/ranker.ckpt`, `checkpoints/`, and `manifest.json`.
#[derive(Debug, Clone)]
pub struct DataDir {
    pub root: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: Option<Task>,
    pub corpus_hash: Option<String>,
    #[serde(default)]
    pub annotations: Vec<String>,
    #[serde(default)]
    pub centroids: Vec<String>,
    pub model: Option<String>,
    pub n_d: Option<usize>,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn annotations(&self, split: &str) -> PathBuf {
        self.root
            .join("annotations")
            .join(format!("{split}.ndjson"))
    }

    pub fn centroids(&self, aspect_id: AspectId) -> PathBuf {
        self.root
            .join("centroids")
            .join(format!("aspect-{aspect_id}.bin"))
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model").join("ranker.ckpt")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn read_manifest(&self) -> Result<Manifest> {
        let p = self.manifest_path();
        if !p.exists() {
            return Ok(Manifest::default());
        }
        Ok(serde_json::from_slice(&fs::read(p)?)?)
    }

    pub fn update_manifest(&self, f: impl FnOnce(&mut Manifest)) -> Result<Manifest> {
        let mut m = self.read_manifest()?;
        f(&mut m);
        fs::create_dir_all(&self.root)?;
        fs::write(self.manifest_path(), serde_json::to_vec_pretty(&m)?)?;
        Ok(m)
    }

    /// Loads one centroid set per aspect, ordered by aspect id.
    pub fn load_all_centroids(
        &self,
        n_aspects: usize,
        n_d: Option<usize>,
    ) -> Result<Vec<CentroidSet>> {
        let hash = self.read_manifest()?.corpus_hash;
        (1..=n_aspects)
            .map(|a| load_centroids(&self.centroids(a), n_d, hash.as_deref()).map(|(s, _)| s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> CentroidSet {
        CentroidSet {
            aspect_id: 2,
            k: 3,
            centroids: Array2::from_shape_fn((3, 4), |(i, j)| i as f64 * 0.5 - j as f64 / 3.0),
            silhouette: 0.42,
            seed: 7,
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = RankerModel::new(RankerConfig::new(3, 8).with_widths(5, 6).with_seed(3));
        let meta = CheckpointMeta {
            epoch: 2,
            val_p3: Some(0.5),
            corpus_hash: Some("ab".into()),
        };
        save_checkpoint(&p, &m, &meta).unwrap();
        let (back, meta2) = load_checkpoint(&p, Some(&m.config), Some("ab")).unwrap();
        assert_eq!(meta2, meta);
        for ((_, _, a), (_, _, b)) in m.params.named().iter().zip(back.params.named().iter()) {
            assert!(a
                .iter()
                .zip(b.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back, m);
    }

    #[test]
    fn checkpoint_guards() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = RankerModel::new(RankerConfig::new(3, 8).with_widths(5, 6));
        let meta = CheckpointMeta {
            epoch: 1,
            val_p3: None,
            corpus_hash: Some("ab".into()),
        };
        save_checkpoint(&p, &m, &meta).unwrap();
        let wrong = RankerConfig::new(3, 16).with_widths(5, 6);
        assert_eq!(
            load_checkpoint(&p, Some(&wrong), None).unwrap_err().code(),
            "version_mismatch"
        );
        assert_eq!(
            load_checkpoint(&p, None, Some("cd")).unwrap_err().code(),
            "hash_mismatch"
        );
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert_eq!(
            load_checkpoint(&p, None, None).unwrap_err().code(),
            "corrupt"
        );
        let mut bumped = bytes.clone();
        bumped[8] = 9;
        fs::write(&p, bumped).unwrap();
        assert_eq!(
            load_checkpoint(&p, None, None).unwrap_err().code(),
            "version_mismatch"
        );
    }

    #[test]
    fn centroid_round_trip_and_guards() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let s = set();
        save_centroids(&p, Task::Esc, &s, Some("ff")).unwrap();
        assert!(p.with_extension("json").exists());
        let (back, header) = load_centroids(&p, Some(4), Some("ff")).unwrap();
        assert_eq!(back, s);
        assert_eq!(header.task, Task::Esc);
        assert_eq!(
            load_centroids(&p, Some(5), None).unwrap_err().code(),
            "version_mismatch"
        );
        assert_eq!(
            load_centroids(&p, None, Some("00")).unwrap_err().code(),
            "hash_mismatch"
        );
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert_eq!(
            load_centroids(&p, None, None).unwrap_err().code(),
            "corrupt"
        );
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert_eq!(
            load_centroids(&p, None, None).unwrap_err().code(),
            "corrupt"
        );
    }

    #[test]
    fn data_dir_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let d = DataDir::new(dir.path());
        assert_eq!(d.read_manifest().unwrap(), Manifest::default());
        d.update_manifest(|m| m.n_d = Some(4)).unwrap();
        assert_eq!(d.read_manifest().unwrap().n_d, Some(4));
        save_centroids(
            &d.centroids(1),
            Task::Esc,
            &CentroidSet {
                aspect_id: 1,
                ..set()
            },
            None,
        )
        .unwrap();
        save_centroids(&d.centroids(2), Task::Esc, &set(), None).unwrap();
        let all = d.load_all_centroids(2, Some(4)).unwrap();
        assert_eq!(all.len(), 2);
    }
}
