//! Model checkpoints.
//!
//! A checkpoint is one line of JSON followed by a binary blob. The header
//! carries the architecture, parameter layout, training options, the fitted
//! scaler and the feature options; the blob holds every parameter tensor and
//! then every running mean / variance pair, as little-endian `f64`. The
//! header also records the blob length and its SHA-256, so a truncated or
//! corrupted file is rejected before any model is built.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::store::{StoreMeta, FEATURE_SCHEMA_VERSION};
use crate::features::FeatureConfig;
use crate::nn::{Architecture, EasiDeepModel, NnError, ParamSpec, RunningStats};
use crate::spatial::ScalerStats;
use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "semgcs-checkpoint";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: checkpoint version {found} is not supported (this build reads version {supported})")]
    Version { path: PathBuf, found: u64, supported: u32 },
    #[error("{path}: checksum mismatch: {detail}")]
    Checksum { path: PathBuf, detail: String },
    #[error("checkpoint was trained on features {checkpoint} (schema v{checkpoint_schema}) but the store holds {store} (schema v{store_schema})")]
    FeatureMismatch { checkpoint: String, checkpoint_schema: u32, store: String, store_schema: u32 },
    #[error(transparent)]
    Model(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    architecture: Architecture,
    params: Vec<ParamSpec>,
    /// Channel count of each batch-norm layer.
    running: Vec<usize>,
    train: TrainConfig,
    scaler: ScalerStats,
    features: FeatureConfig,
    feature_fingerprint: String,
    feature_schema_version: u32,
    blob_len: u64,
    sha256: String,
}

/// Everything needed to score new feature samples.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: EasiDeepModel,
    pub scaler: ScalerStats,
    pub features: FeatureConfig,
    pub train: TrainConfig,
}

impl Checkpoint {
    /// Refuse a feature store extracted with different options or schema.
    pub fn check_store(&self, meta: &StoreMeta) -> Result<(), CheckpointError> {
        let ours = self.features.fingerprint();
        if ours != meta.fingerprint || meta.schema_version != FEATURE_SCHEMA_VERSION {
            return Err(CheckpointError::FeatureMismatch {
                checkpoint: ours,
                checkpoint_schema: FEATURE_SCHEMA_VERSION,
                store: meta.fingerprint.clone(),
                store_schema: meta.schema_version,
            });
        }
        Ok(())
    }

    fn blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |vals: &[f64]| out.extend(vals.iter().flat_map(|v| v.to_le_bytes()));
        for p in self.model.params() {
            put(p.data());
        }
        for r in self.model.running_stats() {
            put(&r.mean);
            put(&r.var);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let blob = self.blob();
        let header = Header {
            format: FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            architecture: self.model.architecture().clone(),
            params: self.model.specs().to_vec(),
            running: self.model.running_stats().iter().map(|r| r.mean.len()).collect(),
            train: self.train.clone(),
            scaler: self.scaler.clone(),
            features: self.features.clone(),
            feature_fingerprint: self.features.fingerprint(),
            feature_schema_version: FEATURE_SCHEMA_VERSION,
            blob_len: blob.len() as u64,
            sha256: hex::encode(Sha256::digest(&blob)),
        };
        let mut out = serde_json::to_vec(&header).expect("checkpoint header serializes");
        out.push(b'\n');
        out.extend(blob);
        out
    }

    /// Parse a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let format = |message: String| CheckpointError::Format { path: path.to_path_buf(), message };
        let checksum = |detail: String| CheckpointError::Checksum { path: path.to_path_buf(), detail };
        let Some(split) = bytes.iter().position(|&b| b == b'\n') else {
            return Err(checksum("header line is incomplete".into()));
        };
        let raw: serde_json::Value =
            serde_json::from_slice(&bytes[..split]).map_err(|e| format(format!("header is not JSON: {e}")))?;
        if raw.get("format").and_then(|v| v.as_str()) != Some(FORMAT) {
            return Err(format("missing format tag".into()));
        }
        let version = raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| format("missing version".into()))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(CheckpointError::Version { path: path.to_path_buf(), found: version, supported: CHECKPOINT_VERSION });
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| format(format!("bad header: {e}")))?;

        let blob = &bytes[split + 1..];
        if blob.len() as u64 != header.blob_len {
            return Err(checksum(format!("expected {} blob bytes, found {}", header.blob_len, blob.len())));
        }
        let digest = hex::encode(Sha256::digest(blob));
        if digest != header.sha256 {
            return Err(checksum(format!("expected sha256 {}, computed {digest}", header.sha256)));
        }
        if header.feature_fingerprint != header.features.fingerprint()
            || header.feature_schema_version != FEATURE_SCHEMA_VERSION
        {
            return Err(CheckpointError::FeatureMismatch {
                checkpoint: header.feature_fingerprint,
                checkpoint_schema: header.feature_schema_version,
                store: header.features.fingerprint(),
                store_schema: FEATURE_SCHEMA_VERSION,
            });
        }

        let sizes = header.params.iter().map(|s| s.shape.iter().product::<usize>());
        let floats = sizes.clone().sum::<usize>() + 2 * header.running.iter().sum::<usize>();
        if blob.len() != floats * 8 {
            return Err(format(format!("blob holds {} bytes but the layout needs {}", blob.len(), floats * 8)));
        }
        let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
        let params: Vec<Vec<f64>> = sizes.map(&mut take).collect();
        let running: Vec<RunningStats> =
            header.running.iter().map(|&w| RunningStats { mean: take(w), var: take(w) }).collect();
        let model = EasiDeepModel::from_parts(header.architecture, params, running)?;
        if model.specs() != header.params.as_slice() {
            return Err(format("parameter layout does not match the architecture".into()));
        }
        Ok(Checkpoint { model, scaler: header.scaler, features: header.features, train: header.train })
    }
}

/// Write `checkpoint` to `path` through a temporary file, so readers never
/// see a partial checkpoint.
pub fn save_model(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, checkpoint.to_bytes()).map_err(|source| CheckpointError::Io { path: tmp.clone(), source })?;
    fs::rename(&tmp, path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{CELL_DEPTH, FAMILIES, FAMILY_DEPTHS, SAMPLE_VALUES};
    use crate::nn::Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CELLS: usize = 42;

    fn checkpoint() -> Checkpoint {
        let arch = Architecture::shrunken();
        let base = EasiDeepModel::new(arch.clone(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let running = base
            .running_stats()
            .iter()
            .map(|r| RunningStats {
                mean: r.mean.iter().map(|_| rng.random_range(-1.0..1.0)).collect(),
                var: r.var.iter().map(|_| rng.random_range(0.5..2.0)).collect(),
            })
            .collect();
        let params = base.params().iter().map(|p| p.data().to_vec()).collect();
        let model = EasiDeepModel::from_parts(arch, params, running).unwrap();
        let scaler = ScalerStats {
            mean: (0..SAMPLE_VALUES).map(|i| (i as f64).sqrt() / 7.0).collect(),
            std: (0..SAMPLE_VALUES).map(|i| 1.0 + 1.0 / (i as f64 + 3.0)).collect(),
            zero_std: vec![false; SAMPLE_VALUES],
            all_missing: vec![false; SAMPLE_VALUES],
        };
        Checkpoint { model, scaler, features: FeatureConfig::default(), train: TrainConfig::default() }
    }

    fn outputs(model: &EasiDeepModel, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = 5;
        let inputs: Vec<Vec<f64>> =
            (0..FAMILIES).map(|f| (0..batch * CELLS * FAMILY_DEPTHS[f]).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let refs: [&[f64]; FAMILIES] = std::array::from_fn(|f| inputs[f].as_slice());
        model.forward(refs, batch, Mode::Infer).unwrap().0
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = checkpoint();
        save_model(&ck, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.scaler, ck.scaler);
        assert_eq!(back.features, ck.features);
        assert_eq!(back.train, ck.train);
        assert_eq!(back.model.running_stats(), ck.model.running_stats());
        for seed in 0..10 {
            let (a, b) = (outputs(&ck.model, seed), outputs(&back.model, seed));
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x[0].to_bits(), y[0].to_bits());
                assert_eq!(x[1].to_bits(), y[1].to_bits());
            }
        }
        assert_eq!(fs::read(&path).unwrap(), back.to_bytes());
        assert!(!path.with_extension("tmp").exists());
        assert_eq!(CELL_DEPTH, FAMILY_DEPTHS.iter().sum::<usize>());
    }

    #[test]
    fn truncation_and_corruption_fail_the_checksum() {
        let bytes = checkpoint().to_bytes();
        let p = Path::new("x.ckpt");
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            let err = Checkpoint::from_bytes(&bytes[..cut], p).unwrap_err();
            assert!(matches!(err, CheckpointError::Checksum { .. }), "{err}");
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&flipped, p), Err(CheckpointError::Checksum { .. })));
    }

    #[test]
    fn newer_version_is_refused() {
        let bytes = checkpoint().to_bytes();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let bumped = text.replacen("\"version\":1,", "\"version\":2,", 1);
        assert_ne!(bumped, text);
        let err = Checkpoint::from_bytes(bumped.as_bytes(), Path::new("x")).unwrap_err();
        match err {
            CheckpointError::Version { found, supported, .. } => assert_eq!((found, supported), (2, 1)),
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(Checkpoint::from_bytes(b"{}\n", Path::new("x")), Err(CheckpointError::Format { .. })));
    }

    #[test]
    fn store_mismatch_is_refused() {
        let ck = checkpoint();
        let mut meta = StoreMeta {
            schema_version: FEATURE_SCHEMA_VERSION,
            fingerprint: ck.features.fingerprint(),
            config: ck.features.clone(),
            rows: vec![],
        };
        assert!(ck.check_store(&meta).is_ok());
        let other = FeatureConfig { rms_sqrt: true, ..FeatureConfig::default() };
        meta.fingerprint = other.fingerprint();
        let msg = ck.check_store(&meta).unwrap_err().to_string();
        assert!(msg.contains("rms_sqrt=false") && msg.contains("rms_sqrt=true"), "{msg}");
    }
}
