//! Feature extractor `h`, hash head `g`, initialization and weight
//! perturbation.

pub mod arch;
pub mod layers;
pub mod net;
pub mod params;
pub mod perturb;

pub use arch::{ArchSpec, NormKind};
pub use net::FeatureTrace;
pub use params::{load_params, save_params, HashNetParams, ParamGroup};
pub use perturb::{perturb, PerturbationConfig};

use crate::error::Result;

/// `init_network(arch_id, code_bits, seed)` for a given input geometry.
pub fn init_network(
    arch_id: &str,
    in_channels: usize,
    input_side: usize,
    code_bits: usize,
    seed: u64,
) -> Result<HashNetParams> {
    HashNetParams::init(&ArchSpec::resolve(arch_id, in_channels, input_side)?, code_bits, seed)
}
