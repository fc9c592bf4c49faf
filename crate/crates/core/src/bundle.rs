//! Conditioning bundles: a scene plan, one noise tensor per frame and a
//! manifest with SHA-256 checksums.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/dss.json
//! <dir>/noise/frame_000.fzt ...
//! ```
//!
//! Tensor files (`.fzt`) are little-endian throughout:
//!
//! | bytes        | content                                  |
//! |--------------|------------------------------------------|
//! | 4            | magic `FZT1`                             |
//! | 1            | dtype code: 1 = f32, 2 = f64             |
//! | 1            | ndim                                     |
//! | 8 * ndim     | dims as u64                              |
//! | rest         | row-major values                         |
//!
//! Noise tensors are written with `ndim = 3` and dims `[H, W, C]`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dss::{parse_dss, serialize_dss, DssError, DynamicSceneSyntax};
use crate::mns::{plan_sequence, FrameNoiseInfo, NoiseParams, NoiseTensor, PhaseSchedule};

pub const MAGIC: &[u8; 4] = b"FZT1";
pub const BUNDLE_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DSS_FILE: &str = "dss.json";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("checksum mismatch for {path}: manifest has {expected}, file hashes to {actual}")]
    Integrity {
        path: String,
        expected: String,
        actual: String,
    },
    #[error("scene plan has {frames} frames but {noises} noise tensors were given")]
    Arity { frames: usize, noises: usize },
    #[error("scene plan in bundle: {0}")]
    Dss(#[from] DssError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> BundleError {
    BundleError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn code(&self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }
}

pub fn encode_tensor(tensor: &NoiseTensor, dtype: Dtype) -> Vec<u8> {
    let dims = tensor.shape();
    let mut out = Vec::with_capacity(6 + 8 * dims.len() + tensor.data().len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F32 => tensor
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        Dtype::F64 => tensor
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

/// Decode a tensor file image. `path` only labels errors.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(NoiseTensor, Dtype), BundleError> {
    if bytes.len() < 6 {
        return Err(format_err(
            path,
            format!("file is {} bytes, too short for a header", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(
            path,
            format!("bad magic {:?}, expected \"FZT1\"", &bytes[..4]),
        ));
    }
    let dtype = Dtype::from_code(bytes[4])
        .ok_or_else(|| format_err(path, format!("unknown dtype code {}", bytes[4])))?;
    let ndim = bytes[5] as usize;
    let header = 6 + 8 * ndim;
    if bytes.len() < header {
        return Err(format_err(
            path,
            format!("header needs {header} bytes, file has {}", bytes.len()),
        ));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let (h, w, c) = match dims[..] {
        [h, w, c] => (h, w, c),
        [h, w] => (h, w, 1),
        _ => {
            return Err(format_err(
                path,
                format!("expected 2 or 3 dims, got {dims:?}"),
            ))
        }
    };
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(path, "dims overflow"))?;
    let expected = count
        .checked_mul(dtype.size())
        .ok_or_else(|| format_err(path, "payload size overflows"))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(format_err(
            path,
            format!(
                "payload is {} bytes, expected {expected} for dims {dims:?}",
                payload.len()
            ),
        ));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    let tensor = NoiseTensor::new(h, w, c, data).map_err(|e| format_err(path, e.to_string()))?;
    Ok((tensor, dtype))
}

/// Write via a temporary file in the same directory and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BundleError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

pub fn write_tensor(path: &Path, tensor: &NoiseTensor, dtype: Dtype) -> Result<(), BundleError> {
    write_atomic(path, &encode_tensor(tensor, dtype))
}

pub fn read_tensor(path: &Path) -> Result<NoiseTensor, BundleError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(decode_tensor(&bytes, path)?.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: String,
    pub dss_path: String,
    pub noise_paths: Vec<String>,
    /// `[H, W, C]` of every noise tensor.
    pub latent_shape: [usize; 3],
    pub dtype: Dtype,
    pub pixel_scale: f64,
    pub sigma_phi: f64,
    pub rng_seed: u64,
    pub phase_schedule: PhaseSchedule,
    pub frames: Vec<FrameNoiseInfo>,
    /// Relative path to lowercase SHA-256 hex.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BundleParams {
    pub noise: NoiseParams,
    pub dtype: Dtype,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub dss: DynamicSceneSyntax,
    pub noises: Vec<NoiseTensor>,
    pub manifest: BundleManifest,
}

pub fn noise_file_name(frame: usize) -> String {
    format!("noise/frame_{frame:03}.fzt")
}

pub fn emit_bundle(
    dss: &DynamicSceneSyntax,
    noises: &[NoiseTensor],
    out_dir: &Path,
    params: &BundleParams,
) -> Result<BundleManifest, BundleError> {
    if noises.len() != dss.num_frames() {
        return Err(BundleError::Arity {
            frames: dss.num_frames(),
            noises: noises.len(),
        });
    }
    let shape = noises[0].shape();
    if let Some((i, t)) = noises.iter().enumerate().find(|(_, t)| t.shape() != shape) {
        return Err(format_err(
            out_dir,
            format!("frame {i} has shape {:?}, frame 0 has {shape:?}", t.shape()),
        ));
    }
    let noise_dir = out_dir.join("noise");
    fs::create_dir_all(&noise_dir).map_err(io_err(&noise_dir))?;

    let mut checksums = BTreeMap::new();
    let dss_bytes = serialize_dss(dss).into_bytes();
    write_atomic(&out_dir.join(DSS_FILE), &dss_bytes)?;
    checksums.insert(DSS_FILE.to_string(), sha256_hex(&dss_bytes));

    let mut noise_paths = Vec::with_capacity(noises.len());
    for (i, t) in noises.iter().enumerate() {
        let rel = noise_file_name(i);
        let bytes = encode_tensor(t, params.dtype);
        write_atomic(&out_dir.join(&rel), &bytes)?;
        checksums.insert(rel.clone(), sha256_hex(&bytes));
        noise_paths.push(rel);
    }

    let manifest = BundleManifest {
        version: BUNDLE_VERSION.into(),
        dss_path: DSS_FILE.into(),
        noise_paths,
        latent_shape: shape,
        dtype: params.dtype,
        pixel_scale: params.noise.pixel_scale,
        sigma_phi: params.noise.sigma_phi,
        rng_seed: params.noise.rng_seed,
        phase_schedule: params.noise.schedule,
        frames: plan_sequence(&dss.motions(), &params.noise),
        checksums,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out_dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

fn read_checked(dir: &Path, rel: &str, manifest: &BundleManifest) -> Result<Vec<u8>, BundleError> {
    let path: PathBuf = dir.join(rel);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let expected = manifest
        .checksums
        .get(rel)
        .ok_or_else(|| format_err(&path, "no checksum recorded in manifest"))?;
    let actual = sha256_hex(&bytes);
    if !expected.eq_ignore_ascii_case(&actual) {
        return Err(BundleError::Integrity {
            path: rel.to_string(),
            expected: expected.clone(),
            actual,
        });
    }
    Ok(bytes)
}

pub fn load_bundle(dir: &Path) -> Result<Bundle, BundleError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|e| format_err(&manifest_path, e.to_string()))?;

    let dss_bytes = read_checked(dir, &manifest.dss_path, &manifest)?;
    let dss_text = String::from_utf8(dss_bytes)
        .map_err(|e| format_err(&dir.join(&manifest.dss_path), e.to_string()))?;
    let dss = parse_dss(&dss_text)?;
    if manifest.noise_paths.len() != dss.num_frames() {
        return Err(BundleError::Arity {
            frames: dss.num_frames(),
            noises: manifest.noise_paths.len(),
        });
    }

    let mut noises = Vec::with_capacity(manifest.noise_paths.len());
    for rel in &manifest.noise_paths {
        let bytes = read_checked(dir, rel, &manifest)?;
        let path = dir.join(rel);
        let (tensor, dtype) = decode_tensor(&bytes, &path)?;
        if tensor.shape() != manifest.latent_shape || dtype != manifest.dtype {
            return Err(format_err(
                &path,
                format!(
                    "tensor is {:?} {dtype:?}, manifest says {:?} {:?}",
                    tensor.shape(),
                    manifest.latent_shape,
                    manifest.dtype
                ),
            ));
        }
        noises.push(tensor);
    }
    Ok(Bundle {
        dss,
        noises,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_tensor_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fzt");
        let t = NoiseTensor::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        for dtype in [Dtype::F32, Dtype::F64] {
            write_tensor(&path, &t, dtype).unwrap();
            let back = read_tensor(&path).unwrap();
            assert_eq!(back.shape(), [2, 2, 1]);
            assert_eq!(
                back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..6], b"FZT1\x02\x03");
        assert_eq!(bytes.len(), 6 + 24 + 4 * 8);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_tensor(
            &NoiseTensor::new(2, 2, 1, vec![0.0; 4]).unwrap(),
            Dtype::F64,
        );
        bytes[..4].copy_from_slice(b"XXXX");
        let err = decode_tensor(&bytes, Path::new("x.fzt")).unwrap_err();
        assert!(matches!(err, BundleError::Format { .. }));
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_payload_reports_sizes() {
        let mut bytes = encode_tensor(
            &NoiseTensor::new(2, 2, 1, vec![0.0; 4]).unwrap(),
            Dtype::F64,
        );
        bytes.truncate(bytes.len() - 8);
        let err = decode_tensor(&bytes, Path::new("x.fzt")).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("24 bytes") && msg.contains("expected 32"),
            "{msg}"
        );
    }

    #[test]
    fn two_dim_files_read_as_one_channel() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FZT1\x01\x02");
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        for v in 0..6 {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let (t, dtype) = decode_tensor(&bytes, Path::new("x")).unwrap();
        assert_eq!(dtype, Dtype::F32);
        assert_eq!(t.shape(), [2, 3, 1]);
        assert_eq!(t.get(1, 2, 0), 5.0);
    }

    #[test]
    fn atomic_write_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = NoiseTensor::new(2, 2, 1, vec![0.0; 4]).unwrap();
        write_tensor(&dir.path().join("a.fzt"), &t, Dtype::F64).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("a.fzt")]);
    }
}
