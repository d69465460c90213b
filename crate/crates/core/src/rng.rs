//! Seed fan-out: every randomized stage draws from a generator derived from
//! the root seed and a stage label, so stages reproduce independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

/// Deterministic sub-seed for `label` under `root`.
pub fn sub_seed(root: u64, label: &str) -> u64 {
    // FNV-1a over the label, folded into the root with a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stage_rng(root: u64, label: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(sub_seed(root, label))
}
