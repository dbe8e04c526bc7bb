use std::path::Path;

use ndarray::{Array1, Array2, Array4, ArrayD, ArrayViewD, ArrayViewMutD, IxDyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::archive::{self, Dtype, SCHEMA_VERSION};
use crate::error::{ensure, Error, Result};
use crate::model::arch::ArchSpec;
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub conv_weight: Array4<f64>,
    pub conv_bias: Array1<f64>,
    pub norm_gamma: Array1<f64>,
    pub norm_beta: Array1<f64>,
}

/// Feature-extractor blocks plus the linear hash head
/// (`feature_dim x code_bits` weight and a bias).
#[derive(Debug, Clone, PartialEq)]
pub struct HashNetParams {
    pub arch: ArchSpec,
    pub code_bits: usize,
    pub blocks: Vec<BlockParams>,
    pub hash_weight: Array2<f64>,
    pub hash_bias: Array1<f64>,
}

/// Which half of the parameter set a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Feature,
    Hash,
}

fn uniform<D: ndarray::Dimension>(shape: D, bound: f64, rng: &mut seed::Rng) -> ndarray::Array<f64, D> {
    ndarray::Array::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

impl HashNetParams {
    /// Fan-in scaled uniform initialization: conv and linear weights and
    /// biases are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; norm
    /// scales start at 1 and shifts at 0.
    pub fn init(arch: &ArchSpec, code_bits: usize, seed: u64) -> Result<Self> {
        ensure!(code_bits >= 1, Config, "code_bits must be positive");
        let mut rng = seed::rng(seed, &[stream::INIT_NET]);
        let blocks = (0..arch.depth)
            .map(|b| {
                let cin = arch.block_in_channels(b);
                let bound = 1.0 / ((cin * 9) as f64).sqrt();
                BlockParams {
                    conv_weight: uniform(ndarray::Dim([arch.width, cin, 3, 3]), bound, &mut rng),
                    conv_bias: uniform(ndarray::Dim([arch.width]), bound, &mut rng),
                    norm_gamma: Array1::ones(arch.width),
                    norm_beta: Array1::zeros(arch.width),
                }
            })
            .collect();
        let fd = arch.feature_dim();
        let bound = 1.0 / (fd as f64).sqrt();
        let hash_weight = uniform(ndarray::Dim([fd, code_bits]), bound, &mut rng);
        let hash_bias = uniform(ndarray::Dim([code_bits]), bound, &mut rng);
        Ok(HashNetParams {
            arch: arch.clone(),
            code_bits,
            blocks,
            hash_weight,
            hash_bias,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim()
    }

    /// All tensors in a fixed order with their names and groups.
    pub fn named_tensors(&self) -> Vec<(String, ParamGroup, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.conv.weight"), ParamGroup::Feature, b.conv_weight.view().into_dyn()));
            out.push((format!("block{i}.conv.bias"), ParamGroup::Feature, b.conv_bias.view().into_dyn()));
            out.push((format!("block{i}.norm.gamma"), ParamGroup::Feature, b.norm_gamma.view().into_dyn()));
            out.push((format!("block{i}.norm.beta"), ParamGroup::Feature, b.norm_beta.view().into_dyn()));
        }
        out.push(("hash.weight".into(), ParamGroup::Hash, self.hash_weight.view().into_dyn()));
        out.push(("hash.bias".into(), ParamGroup::Hash, self.hash_bias.view().into_dyn()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(b.conv_weight.view_mut().into_dyn());
            out.push(b.conv_bias.view_mut().into_dyn());
            out.push(b.norm_gamma.view_mut().into_dyn());
            out.push(b.norm_beta.view_mut().into_dyn());
        }
        out.push(self.hash_weight.view_mut().into_dyn());
        out.push(self.hash_bias.view_mut().into_dyn());
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for mut t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn axpy(&mut self, scale: f64, other: &HashNetParams) {
        let others = other.named_tensors();
        for (mut t, (_, _, o)) in self.tensors_mut().into_iter().zip(others) {
            t.zip_mut_with(&o, |a, &b| *a += scale * b);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.named_tensors()
            .iter()
            .map(|(_, _, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsManifest {
    pub schema_version: u32,
    pub kind: String,
    pub arch: ArchSpec,
    pub code_bits: usize,
    pub tensors: Vec<TensorEntry>,
    pub byte_order: String,
    pub dtype: Dtype,
}

/// Writes parameters into the manifest+blob container with a `params` tag.
pub fn save_params(p: &HashNetParams, dir: &Path) -> Result<()> {
    let tensors = p.named_tensors();
    let manifest = ParamsManifest {
        schema_version: SCHEMA_VERSION,
        kind: "params".into(),
        arch: p.arch.clone(),
        code_bits: p.code_bits,
        tensors: tensors
            .iter()
            .map(|(name, group, t)| TensorEntry {
                name: name.clone(),
                group: *group,
                shape: t.shape().to_vec(),
            })
            .collect(),
        byte_order: "little".into(),
        dtype: Dtype::Float64,
    };
    let payload = archive::encode_f64(tensors.iter().flat_map(|(_, _, t)| t.iter().copied()));
    archive::write_container(dir, &manifest, &payload)
}

pub fn load_params(dir: &Path) -> Result<HashNetParams> {
    let (m, payload): (ParamsManifest, _) = archive::read_container(dir, "params")?;
    let mut p = HashNetParams::init(&m.arch, m.code_bits, 0)?;
    let expected: Vec<Vec<usize>> = p.named_tensors().iter().map(|(_, _, t)| t.shape().to_vec()).collect();
    let found: Vec<Vec<usize>> = m.tensors.iter().map(|t| t.shape.clone()).collect();
    if expected != found {
        return Err(Error::Corruption("tensor shapes disagree with architecture".into()));
    }
    let total: usize = expected.iter().map(|s| s.iter().product::<usize>()).sum();
    if payload.len() != total * m.dtype.width() {
        return Err(Error::Corruption(format!(
            "payload is {} bytes, manifest implies {}",
            payload.len(),
            total * m.dtype.width()
        )));
    }
    let values = archive::decode(&payload, m.dtype);
    let mut offset = 0;
    for (mut t, shape) in p.tensors_mut().into_iter().zip(expected) {
        let n: usize = shape.iter().product();
        let src = ArrayD::from_shape_vec(IxDyn(&shape), values[offset..offset + n].to_vec())
            .map_err(|e| Error::Corruption(e.to_string()))?;
        t.assign(&src);
        offset += n;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_per_seed() {
        let arch = ArchSpec::resolve("convnet-3", 3, 32).unwrap();
        let a = HashNetParams::init(&arch, 32, 0).unwrap();
        let b = HashNetParams::init(&arch, 32, 0).unwrap();
        assert_eq!(a, b);
        let c = HashNetParams::init(&arch, 32, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn hash_head_shape_follows_code_bits() {
        let arch = ArchSpec::resolve("convnet-3", 3, 32).unwrap();
        let p = HashNetParams::init(&arch, 64, 0).unwrap();
        assert_eq!(p.hash_weight.dim(), (2048, 64));
        assert_eq!(p.hash_bias.len(), 64);
    }

    #[test]
    fn groups_partition_parameters() {
        let arch = ArchSpec::resolve("tiny-conv", 3, 16).unwrap();
        let p = HashNetParams::init(&arch, 16, 0).unwrap();
        let t = p.named_tensors();
        let feature: usize = t.iter().filter(|x| x.1 == ParamGroup::Feature).map(|x| x.2.len()).sum();
        let hash: usize = t.iter().filter(|x| x.1 == ParamGroup::Hash).map(|x| x.2.len()).sum();
        assert_eq!(hash, 512 * 16 + 16);
        assert_eq!(feature + hash, p.num_params());
        let mut names: Vec<&String> = t.iter().map(|x| &x.0).collect();
        names.dedup();
        assert_eq!(names.len(), t.len());
    }

    #[test]
    fn params_checkpoint_round_trip() {
        let arch = ArchSpec::resolve("conv-w4-d1", 3, 8).unwrap();
        let p = HashNetParams::init(&arch, 8, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_params(&p, dir.path()).unwrap();
        assert_eq!(load_params(dir.path()).unwrap(), p);
        assert!(matches!(
            crate::data::load_synthetic(dir.path()),
            Err(Error::Corruption(_))
        ));
    }
}
