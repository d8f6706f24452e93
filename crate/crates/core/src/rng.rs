use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A reproducible generator for one named stream derived from a run seed.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
