//! Simulator of concurrent bilateral negotiations in an open e-market, with
//! a buyer whose policy network is cloned from a teacher and then refined by
//! an actor-critic learner.

pub mod experiment;
pub mod features;
pub mod market;
pub mod metrics;
pub mod neural;
pub mod protocol;
pub mod rl;
pub mod strategies;

/// Generator used for every random stream of the simulator.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Mixes `parts` into `base` to derive an independent stream seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15)), |acc, &p| {
        mix(acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xd6e8_feb8_6659_fd93))
    })
}
