use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator for a stream identified by `parts`, e.g.
/// `(global_seed, epoch, sample_index)`. Streams are independent of the
/// order in which workers request them.
pub fn stream_rng(parts: &[u64]) -> ChaCha8Rng {
    let mut h = 0x5EED_F00D_u64;
    for &p in parts {
        h = splitmix(h ^ splitmix(p));
    }
    ChaCha8Rng::seed_from_u64(h)
}
