use rand::RngCore;

use crate::routing::{assign, combine_randomness, Capacity, Rand};

/// What a grinding routing entity sees when it is the last to open.
#[derive(Clone, Debug)]
pub struct GrindSession<'a> {
    /// Openings of every honest routing entity.
    pub honest: &'a [Rand],
    /// Size of the batch being routed.
    pub items: usize,
    /// 1-based position of the ciphertext the adversary wants.
    pub target: usize,
    pub capacities: &'a [Capacity],
    pub adversary_mix: u32,
}

/// Try `attempts` candidate strings, each drawn before any honest opening
/// was seen, and report whether one of them steers `target` to the
/// adversary's mix. With `attempts == 1` this is an honest toss.
pub fn adversary_grind<R: RngCore + ?Sized>(session: &GrindSession<'_>, attempts: u64, rng: &mut R) -> bool {
    let honest = combine_randomness(session.honest);
    let mut hit = false;
    for _ in 0..attempts {
        let mut candidate: Rand = [0; 32];
        rng.fill_bytes(&mut candidate);
        let rand = combine_randomness(&[honest, candidate]);
        let owner = match assign(&rand, session.items, session.capacities) {
            Ok(a) => a.owners()[session.target - 1],
            Err(_) => return false,
        };
        hit |= owner == session.adversary_mix;
    }
    hit
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn caps(bs: &[u64]) -> Vec<Capacity> {
        bs.iter()
            .enumerate()
            .map(|(i, &b)| Capacity {
                mix: i as u32 + 1,
                throughput: b,
            })
            .collect()
    }

    #[test]
    fn zero_attempts_never_succeed() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let caps = caps(&[1, 1]);
        let s = GrindSession {
            honest: &[[7; 32]],
            items: 1,
            target: 1,
            capacities: &caps,
            adversary_mix: 1,
        };
        assert!((0..100).all(|_| !adversary_grind(&s, 0, &mut rng)));
    }

    #[test]
    fn single_attempt_on_two_equal_mixes_is_a_coin() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let caps = caps(&[1, 1]);
        let trials = 4000;
        let mut wins = 0;
        for t in 0..trials {
            let honest = [[t as u8; 32], [(t >> 8) as u8; 32]];
            let s = GrindSession {
                honest: &honest,
                items: 2,
                target: 1,
                capacities: &caps,
                adversary_mix: 1,
            };
            wins += adversary_grind(&s, 1, &mut rng) as u32;
        }
        let rate = wins as f64 / trials as f64;
        // 4 sigma at p = 0.5
        assert!((rate - 0.5).abs() < 4.0 * (0.25f64 / trials as f64).sqrt(), "{rate}");
    }

    #[test]
    fn more_attempts_help() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let caps = caps(&[1, 3]);
        let trials = 2000;
        let rate = |n: u64, rng: &mut ChaCha20Rng| {
            (0..trials)
                .filter(|t| {
                    let honest = [[(*t % 251) as u8; 32]];
                    let s = GrindSession {
                        honest: &honest,
                        items: 4,
                        target: 2,
                        capacities: &caps,
                        adversary_mix: 1,
                    };
                    adversary_grind(&s, n, rng)
                })
                .count() as f64
                / trials as f64
        };
        let one = rate(1, &mut rng);
        let four = rate(4, &mut rng);
        // 1 - 0.75^4 ≈ 0.684
        assert!(four > one + 0.3, "{one} {four}");
    }
}
