//! On-disk formats.
//!
//! Dataset files are self-describing: a magic/version prefix, a length-tagged
//! JSON header (config echo, seed, counts, task value), then flat
//! little-endian f64 records of `[features, target, task_value, block_index]`
//! for the train split followed by the test split. A pretty-printed JSON
//! twin can be emitted next to the binary for debugging.
//!
//! Parameter checkpoints follow the same shape: magic, version, canonical
//! layer-order version, JSON dims header, flat little-endian f64 payload.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{Dataset, DatasetSample, SystemConfig};
use crate::nn::{GradVector, Mlp};
use crate::{Error, Result};

const DATASET_MAGIC: &[u8; 4] = b"CEDS";
const DATASET_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"CEWT";
const CHECKPOINT_VERSION: u32 = 1;
/// Flat parameter order: layer 0 weights row-major, layer 0 biases, layer 1
/// weights, ... Bump if that ever changes.
pub const CANONICAL_ORDER_VERSION: u32 = 1;

/// Header stored inside every dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub system: SystemConfig,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub feature_dim: usize,
    pub task_value: f64,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);

    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    // Unique temp name so concurrent writers of the same target never clash.
    let tag = COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp.{}.{tag}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn encode_samples(out: &mut Vec<u8>, samples: &[DatasetSample]) {
    for s in samples {
        for v in &s.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &s.target {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&s.task_value.to_le_bytes());
        out.extend_from_slice(&(s.block_index as f64).to_le_bytes());
    }
}

/// Serialize a dataset to its canonical byte layout.
pub fn dataset_to_bytes(header: &DatasetHeader, ds: &Dataset) -> Result<Vec<u8>> {
    let header_json = serde_json::to_vec(header)?;
    let dim = header.feature_dim;
    let mut out = Vec::with_capacity(
        16 + header_json.len() + (ds.train.len() + ds.test.len()) * (2 * dim + 2) * 8,
    );
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    encode_samples(&mut out, &ds.train);
    encode_samples(&mut out, &ds.test);
    Ok(out)
}

/// Write a dataset file; skips the write when an identical file already
/// exists (byte comparison) so regeneration is idempotent. Returns true when
/// bytes were written.
pub fn write_dataset(path: &Path, header: &DatasetHeader, ds: &Dataset) -> Result<bool> {
    let bytes = dataset_to_bytes(header, ds)?;
    if let Ok(existing) = fs::read(path) {
        if existing == bytes {
            return Ok(false);
        }
    }
    write_atomic(path, &bytes)?;
    Ok(true)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if *at + n > bytes.len() {
        return Err(Error::Dataset(format!(
            "truncated file while reading {what}"
        )));
    }
    let s = &bytes[*at..*at + n];
    *at += n;
    Ok(s)
}

fn read_f64(bytes: &[u8], at: &mut usize, what: &str) -> Result<f64> {
    let s = take(bytes, at, 8, what)?;
    Ok(f64::from_le_bytes(s.try_into().unwrap()))
}

fn decode_samples(
    bytes: &[u8],
    at: &mut usize,
    count: usize,
    dim: usize,
) -> Result<Vec<DatasetSample>> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut features = Vec::with_capacity(dim);
        for _ in 0..dim {
            features.push(read_f64(bytes, at, "features")?);
        }
        let mut target = Vec::with_capacity(dim);
        for _ in 0..dim {
            target.push(read_f64(bytes, at, "target")?);
        }
        let task_value = read_f64(bytes, at, "task_value")?;
        let block_index = read_f64(bytes, at, "block_index")? as u64;
        out.push(DatasetSample {
            features,
            target,
            task_value,
            block_index,
        });
    }
    Ok(out)
}

/// Read a dataset file written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Dataset)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    if take(&bytes, &mut at, 4, "magic")? != DATASET_MAGIC {
        return Err(Error::Dataset(format!(
            "{} is not a dataset file (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut at, 4, "version")?.try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported dataset version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(
        take(&bytes, &mut at, 8, "header length")?
            .try_into()
            .unwrap(),
    ) as usize;
    let header: DatasetHeader =
        serde_json::from_slice(take(&bytes, &mut at, header_len, "header")?)?;
    let train = decode_samples(&bytes, &mut at, header.n_train, header.feature_dim)?;
    let test = decode_samples(&bytes, &mut at, header.n_test, header.feature_dim)?;
    if at != bytes.len() {
        return Err(Error::Dataset(format!(
            "{} has {} trailing bytes",
            path.display(),
            bytes.len() - at
        )));
    }
    Ok((
        header.clone(),
        Dataset {
            train,
            test,
            seed: header.seed,
        },
    ))
}

/// Pretty JSON twin of the binary format, for eyeballing.
pub fn write_dataset_json(path: &Path, header: &DatasetHeader, ds: &Dataset) -> Result<()> {
    #[derive(Serialize)]
    struct JsonDataset<'a> {
        header: &'a DatasetHeader,
        train: &'a [DatasetSample],
        test: &'a [DatasetSample],
    }
    let body = serde_json::to_vec_pretty(&JsonDataset {
        header,
        train: &ds.train,
        test: &ds.test,
    })?;
    write_atomic(path, &body)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    dims: Vec<usize>,
    canonical_order_version: u32,
}

/// Save network parameters: dims header plus the flat canonical payload.
pub fn write_checkpoint(path: &Path, params: &Mlp) -> Result<()> {
    let header_json = serde_json::to_vec(&CheckpointHeader {
        dims: params.dims().to_vec(),
        canonical_order_version: CANONICAL_ORDER_VERSION,
    })?;
    let flat = params.flatten();
    let mut out = Vec::with_capacity(16 + header_json.len() + flat.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for v in &flat.0 {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &out)
}

/// Load network parameters written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<Mlp> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    if take(&bytes, &mut at, 4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Dataset(format!(
            "{} is not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut at, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(
        take(&bytes, &mut at, 8, "header length")?
            .try_into()
            .unwrap(),
    ) as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(take(&bytes, &mut at, header_len, "header")?)?;
    if header.canonical_order_version != CANONICAL_ORDER_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported canonical order version {}",
            header.canonical_order_version
        )));
    }
    let remaining = bytes.len() - at;
    if !remaining.is_multiple_of(8) {
        return Err(Error::Dataset(
            "checkpoint payload is not f64-aligned".into(),
        ));
    }
    let mut flat = GradVector::zeros(remaining / 8);
    for v in flat.0.iter_mut() {
        *v = read_f64(&bytes, &mut at, "payload")?;
    }
    Mlp::unflatten(&header.dims, &flat)
}

/// Conventional dataset file path for one task of a protocol run.
pub fn dataset_path(root: &Path, kind_key: &str, seed: u64, task_id: usize) -> PathBuf {
    root.join("datasets")
        .join(kind_key)
        .join(format!("seed{seed}"))
        .join(format!("task{task_id:02}.bin"))
}

/// Histogram CSV: one `bin_left, bin_right, density` row per bin.
pub fn write_histogram_csv(path: &Path, hist: &crate::channel::Histogram) -> Result<()> {
    let mut body = String::from("bin_left,bin_right,density\n");
    for (i, d) in hist.densities.iter().enumerate() {
        body.push_str(&format!("{},{},{}\n", hist.edges[i], hist.edges[i + 1], d));
    }
    write_atomic(path, body.as_bytes())
}
