use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `k` of the master seed.
pub fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}
