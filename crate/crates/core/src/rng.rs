//! Named random streams derived from one root seed.
//!
//! Each component draws from its own ChaCha stream keyed by name, so adding a
//! component never shifts the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT_STREAM: &str = "init";
pub const SAMPLER_STREAM: &str = "sampler";

pub fn env_stream_name(index: usize) -> String {
    format!("env-{index}")
}

// FNV-1a, stable across platforms and releases.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn stream(root_seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(stream_id(name));
    rng
}
