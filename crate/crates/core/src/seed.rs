//! Seed derivation. Every random decision in the pipeline flows from the
//! master seed as `master ^ stage_tag ^ item_index`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PipelineRng = ChaCha8Rng;

/// Stage tags. Distinct high bits keep item indices from colliding across
/// stages.
pub mod stage {
    pub const MIX: u64 = 0x4d49_5800_0000_0000;
    pub const PERTURB: u64 = 0x5045_5254_0000_0000;
    pub const PSEUDO: u64 = 0x5053_4555_0000_0000;
    pub const ASSEMBLE: u64 = 0x4153_4d42_0000_0000;
    pub const AUGMENT: u64 = 0x4155_474d_0000_0000;
}

pub fn derive(master: u64, stage_tag: u64, index: u64) -> u64 {
    master ^ stage_tag ^ index
}

pub fn rng_for(seed: u64) -> PipelineRng {
    ChaCha8Rng::seed_from_u64(seed)
}
