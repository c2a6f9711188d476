//! File persistence.
//!
//! Every sampled matrix (EEG or speech representation) is stored as raw
//! little-endian 32-bit floats in sample-major order next to a JSON sidecar
//! describing rate and layout. A stem path `foo` maps to `foo.bin` + `foo.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Scheme};
use crate::signal::TimeSeries;
use ndarray::Array2;

/// JSON sidecar for a binary matrix file. `dim_names`/`scheme` are present for
/// speech representations only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub fs: f64,
    pub n_channels: usize,
    pub channel_names: Vec<String>,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
}

pub fn bin_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

pub fn write_f32_bin(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f32_bin(path: &Path) -> Result<Vec<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(format!(
            "{} has {} bytes, not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Persist a time series as `<stem>.bin` + `<stem>.json`.
pub fn write_timeseries(stem: &Path, ts: &TimeSeries) -> Result<()> {
    write_f32_bin(&bin_path(stem), ts.data().iter().map(|v| *v as f32))?;
    let sidecar = Sidecar {
        fs: ts.fs(),
        n_channels: ts.n_channels(),
        channel_names: ts.channel_names().to_vec(),
        n_samples: ts.n_samples(),
        dim_names: None,
        scheme: None,
    };
    write_json(&sidecar_path(stem), &sidecar)
}

pub fn read_timeseries(stem: &Path) -> Result<TimeSeries> {
    let sidecar: Sidecar = read_json(&sidecar_path(stem))?;
    let raw = read_f32_bin(&bin_path(stem))?;
    if raw.len() != sidecar.n_samples * sidecar.n_channels {
        return Err(Error::format(format!(
            "{}: {} values, sidecar says {}x{}",
            bin_path(stem).display(),
            raw.len(),
            sidecar.n_samples,
            sidecar.n_channels
        )));
    }
    let data = Array2::from_shape_vec(
        (sidecar.n_samples, sidecar.n_channels),
        raw.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| Error::format(format!("bad matrix shape: {e}")))?;
    TimeSeries::new(data, sidecar.fs, sidecar.channel_names)
}

/// Persist a speech representation; the sidecar carries `dim_names` + `scheme`.
pub fn write_features(stem: &Path, f: &FeatureMatrix) -> Result<()> {
    write_f32_bin(&bin_path(stem), f.data().iter().map(|v| *v as f32))?;
    let sidecar = Sidecar {
        fs: f.fs(),
        n_channels: f.n_dims(),
        channel_names: f.dim_names().to_vec(),
        n_samples: f.n_samples(),
        dim_names: Some(f.dim_names().to_vec()),
        scheme: Some(f.scheme()),
    };
    write_json(&sidecar_path(stem), &sidecar)
}

pub fn read_features(stem: &Path) -> Result<FeatureMatrix> {
    let sidecar: Sidecar = read_json(&sidecar_path(stem))?;
    let scheme = sidecar
        .scheme
        .ok_or_else(|| Error::format("sidecar lacks a feature scheme"))?;
    let dim_names = sidecar.dim_names.unwrap_or(sidecar.channel_names);
    let raw = read_f32_bin(&bin_path(stem))?;
    if raw.len() != sidecar.n_samples * dim_names.len() {
        return Err(Error::format("feature binary does not match its sidecar"));
    }
    let data = Array2::from_shape_vec(
        (sidecar.n_samples, dim_names.len()),
        raw.into_iter().map(f64::from).collect(),
    )
    .map_err(|e| Error::format(format!("bad matrix shape: {e}")))?;
    FeatureMatrix::new(data, sidecar.fs, dim_names, scheme)
}

/// SHA-256 of a file, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut r = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// One checksummed file in a manifest, path relative to the manifest root.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    pub fn for_file(root: &Path, rel: &str) -> Result<FileEntry> {
        let full = root.join(rel);
        let meta = std::fs::metadata(&full)?;
        Ok(FileEntry { path: rel.to_string(), sha256: sha256_file(&full)?, bytes: meta.len() })
    }

    pub fn verify(&self, root: &Path) -> Result<()> {
        let actual = sha256_file(&root.join(&self.path))?;
        if actual != self.sha256 {
            return Err(Error::format(format!(
                "checksum mismatch for {}: manifest {} vs actual {}",
                self.path, self.sha256, actual
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::generic_channel_names;
    use ndarray::array;

    #[test]
    fn timeseries_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("eeg");
        let ts = TimeSeries::new(
            array![[1.0, -2.5], [0.25, 4.0], [3.5, 0.0]],
            64.0,
            generic_channel_names(2),
        )
        .unwrap();
        write_timeseries(&stem, &ts).unwrap();
        let back = read_timeseries(&stem).unwrap();
        assert_eq!(back.fs(), 64.0);
        assert_eq!(back.channel_names(), ts.channel_names());
        // exact because the values are f32-representable
        assert_eq!(back.data(), ts.data());
        // raw layout is sample-major little-endian f32
        let raw = std::fs::read(bin_path(&stem)).unwrap();
        assert_eq!(raw.len(), 6 * 4);
        assert_eq!(f32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]), 1.0);
        assert_eq!(f32::from_le_bytes([raw[4], raw[5], raw[6], raw[7]]), -2.5);
    }

    #[test]
    fn sidecar_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("eeg");
        let ts =
            TimeSeries::new(array![[1.0], [2.0]], 64.0, generic_channel_names(1)).unwrap();
        write_timeseries(&stem, &ts).unwrap();
        std::fs::write(bin_path(&stem), [0u8; 4]).unwrap();
        assert!(read_timeseries(&stem).is_err());
    }

    #[test]
    fn checksums_stable() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"hello").unwrap();
        let entry = FileEntry::for_file(dir.path(), "a.txt").unwrap();
        assert_eq!(
            entry.sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        entry.verify(dir.path()).unwrap();
        std::fs::write(dir.path().join("a.txt"), b"tampered").unwrap();
        assert!(entry.verify(dir.path()).is_err());
    }
}
