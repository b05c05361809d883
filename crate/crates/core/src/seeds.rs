//! Expansion of one master seed into every seed a run needs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ensemble::base_seed_valid;

/// What a derived seed is used for; each purpose draws from its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Base seed of the learner PRBS seeds.
    Ensemble = 1,
    /// Synthetic manifest generation.
    Synth = 2,
}

fn stream(master: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((purpose as u64) << 48) | index);
    rng
}

/// A 64-bit seed for `purpose`, replica `index`.
pub fn derive(master: u64, purpose: Purpose, index: u64) -> u64 {
    stream(master, purpose, index).random()
}

/// A base seed giving nonzero PRBS seeds to all `members` learners.
/// Candidates that would zero a learner are skipped.
pub fn ensemble_base_seed(master: u64, replica: u64, members: usize) -> u16 {
    let mut rng = stream(master, Purpose::Ensemble, replica);
    loop {
        let s: u16 = rng.random();
        if s != 0 && base_seed_valid(s, members) {
            return s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_separated() {
        assert_eq!(derive(7, Purpose::Synth, 0), derive(7, Purpose::Synth, 0));
        assert_ne!(derive(7, Purpose::Synth, 0), derive(7, Purpose::Synth, 1));
        assert_ne!(derive(7, Purpose::Synth, 0), derive(7, Purpose::Ensemble, 0));
        assert_ne!(derive(7, Purpose::Synth, 0), derive(8, Purpose::Synth, 0));
    }

    #[test]
    fn base_seeds_are_usable() {
        for r in 0..200 {
            let s = ensemble_base_seed(42, r, 9);
            assert!(base_seed_valid(s, 9));
        }
    }
}
