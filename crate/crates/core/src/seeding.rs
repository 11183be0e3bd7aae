//! Deterministic seed derivation.
//!
//! Every Monte Carlo replicate draws its own RNG from a seed derived as
//! `mix64(master, index)`, so parallel and serial runs agree bit for bit and
//! any single replicate can be reproduced in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent stream seed from a master seed. This is the
/// splitmix64 finalizer applied to `master XOR (stream + 1) * phi64`; the
/// function is frozen (see the snapshot test) because recorded seeds in
/// output artifacts must stay reproducible.
pub fn mix64(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The RNG used everywhere in the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix64_is_frozen() {
        // Snapshot of the published mixing function; changing these values
        // breaks reproducibility of every recorded seed.
        assert_eq!(mix64(0, 0), 16294208416658607535);
        assert_eq!(mix64(0, 1), 7960286522194355700);
        assert_eq!(mix64(42, 0), 13679457532755275413);
        assert_eq!(mix64(42, 7), 12985122760672971203);
    }

    #[test]
    fn streams_differ() {
        let a = mix64(9, 0);
        let b = mix64(9, 1);
        assert_ne!(a, b);
    }
}
