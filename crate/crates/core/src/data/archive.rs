//! Directory container: `manifest.json` plus one little-endian blob,
//! `payload.bin`, in row-major order.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::data::dataset::NormStats;
use crate::data::synthetic::{Provenance, SyntheticSet};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "payload.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Float64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticManifest {
    pub schema_version: u32,
    pub kind: String,
    pub c: usize,
    pub ipc: usize,
    pub rows: usize,
    pub channels: usize,
    pub image_side: usize,
    pub formation_factor: usize,
    pub norm_stats: NormStats,
    pub provenance: Provenance,
    pub byte_order: String,
    pub dtype: Dtype,
}

impl SyntheticManifest {
    pub fn expected_payload_len(&self) -> usize {
        self.rows * self.channels * self.image_side * self.image_side * self.dtype.width()
    }
}

#[derive(Deserialize)]
struct Header {
    schema_version: u32,
    kind: String,
}

pub fn encode_f32(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

pub fn encode_f64(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::Float32 => bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        Dtype::Float64 => bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect(),
    }
}

/// Writes a manifest and payload into `dir`, creating it if needed.
pub fn write_container<M: Serialize>(dir: &Path, manifest: &M, payload: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(manifest)?;
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    let ppath = dir.join(PAYLOAD_FILE);
    fs::write(&ppath, payload).map_err(|e| Error::io(&ppath, e))
}

/// Reads a container, checking schema version and kind before decoding the
/// manifest as `M`.
pub fn read_container<M: DeserializeOwned>(dir: &Path, kind: &str) -> Result<(M, Vec<u8>)> {
    let mpath = dir.join(MANIFEST_FILE);
    let raw = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let header: Header = serde_json::from_slice(&raw)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Version {
            found: header.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    if header.kind != kind {
        return Err(Error::Corruption(format!(
            "expected a {kind} container, found {}",
            header.kind
        )));
    }
    let manifest = serde_json::from_slice(&raw)?;
    let ppath = dir.join(PAYLOAD_FILE);
    let payload = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    Ok((manifest, payload))
}

pub fn synthetic_manifest(s: &SyntheticSet) -> SyntheticManifest {
    SyntheticManifest {
        schema_version: SCHEMA_VERSION,
        kind: "synthetic".into(),
        c: s.num_classes,
        ipc: s.ipc,
        rows: s.len(),
        channels: s.channels(),
        image_side: s.image_side,
        formation_factor: s.formation_factor,
        norm_stats: s.norm_stats.clone(),
        provenance: s.provenance.clone(),
        byte_order: "little".into(),
        dtype: Dtype::Float32,
    }
}

pub fn save_synthetic(s: &SyntheticSet, dir: &Path) -> Result<SyntheticManifest> {
    let manifest = synthetic_manifest(s);
    let payload = encode_f32(s.pixels.iter().copied());
    write_container(dir, &manifest, &payload)?;
    Ok(manifest)
}

pub fn load_synthetic(dir: &Path) -> Result<SyntheticSet> {
    let (m, payload): (SyntheticManifest, _) = read_container(dir, "synthetic")?;
    if m.byte_order != "little" {
        return Err(Error::Corruption(format!("unsupported byte order {}", m.byte_order)));
    }
    if m.rows != m.c * m.ipc {
        return Err(Error::Corruption(format!(
            "manifest rows {} != c*ipc {}",
            m.rows,
            m.c * m.ipc
        )));
    }
    let expected = m.expected_payload_len();
    if payload.len() != expected {
        return Err(Error::Corruption(format!(
            "payload is {} bytes, manifest implies {expected}",
            payload.len()
        )));
    }
    let values = decode(&payload, m.dtype);
    let pixels = ndarray::Array4::from_shape_vec(
        (m.rows, m.channels, m.image_side, m.image_side),
        values,
    )
    .map_err(|e| Error::Corruption(e.to_string()))?;
    SyntheticSet::new(pixels, m.c, m.ipc, m.formation_factor, m.norm_stats, m.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use proptest::prelude::*;

    fn provenance(rows: usize) -> Provenance {
        Provenance::new("iem", 3, "abc".into(), rows, rows * 50)
    }

    fn set(c: usize, ipc: usize, side: usize, f: usize, values: Vec<f32>) -> SyntheticSet {
        let pixels = Array4::from_shape_vec(
            (c * ipc, 3, side, side),
            values.into_iter().map(f64::from).collect(),
        )
        .unwrap();
        SyntheticSet::new(pixels, c, ipc, f, NormStats::identity(3), provenance(c * ipc)).unwrap()
    }

    #[test]
    fn random_set_round_trips_bit_exactly() {
        let n = 10 * 3 * 32 * 32;
        let values: Vec<f32> = (0..n).map(|i| ((i * 7919) % 1000) as f32 / 333.0 - 1.5).collect();
        let s = set(10, 1, 32, 1, values);
        let dir = tempfile::tempdir().unwrap();
        save_synthetic(&s, dir.path()).unwrap();
        let back = load_synthetic(dir.path()).unwrap();
        assert_eq!(back, s);
        assert!(back
            .pixels
            .iter()
            .zip(s.pixels.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let s = set(2, 1, 4, 1, vec![0.5; 2 * 3 * 16]);
        let dir = tempfile::tempdir().unwrap();
        save_synthetic(&s, dir.path()).unwrap();
        let p = dir.path().join(PAYLOAD_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_synthetic(dir.path()), Err(Error::Corruption(_))));
    }

    #[test]
    fn unknown_schema_version_rejected() {
        let s = set(2, 1, 4, 1, vec![0.5; 2 * 3 * 16]);
        let dir = tempfile::tempdir().unwrap();
        save_synthetic(&s, dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let mut m: serde_json::Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
        m["schema_version"] = 9.into();
        fs::write(&p, serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(
            load_synthetic(dir.path()),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn manifest_records_formation_and_rows() {
        let s = set(10, 10, 8, 2, vec![0.0; 100 * 3 * 64]);
        let dir = tempfile::tempdir().unwrap();
        let m = save_synthetic(&s, dir.path()).unwrap();
        assert_eq!(m.formation_factor, 2);
        assert_eq!(m.rows, 100);
        let on_disk: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(on_disk["formation_factor"], 2);
        assert_eq!(on_disk["dtype"], "float32");
        assert_eq!(on_disk["byte_order"], "little");
        assert_eq!(
            fs::metadata(dir.path().join(PAYLOAD_FILE)).unwrap().len() as usize,
            100 * 3 * 8 * 8 * 4
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn any_valid_set_round_trips(
            c in 1usize..4,
            ipc in 1usize..3,
            f in 1usize..3,
            seed in any::<u64>(),
        ) {
            let side = 4 * f;
            let n = c * ipc * 3 * side * side;
            let mut x = seed;
            let values: Vec<f32> = (0..n)
                .map(|_| {
                    x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                    f32::from_bits((x as u32 & 0x807f_ffff) | 0x3f00_0000)
                })
                .collect();
            let s = set(c, ipc, side, f, values);
            let dir = tempfile::tempdir().unwrap();
            save_synthetic(&s, dir.path()).unwrap();
            let back = load_synthetic(dir.path()).unwrap();
            prop_assert!(back.pixels.iter().zip(s.pixels.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.provenance, s.provenance);
        }
    }
}
