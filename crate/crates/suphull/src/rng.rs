//! Counter-based random streams.
//!
//! Every Monte-Carlo loop draws from a stream keyed by (global seed, operation
//! tag, chunk index). Chunks are fixed-size, so a result never depends on how
//! work is split across workers, and any chunk can be regenerated in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Default number of samples per chunk.
pub const CHUNK: usize = 4096;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// ChaCha12 stream for one (seed, tag, chunk) triple.
///
/// The key absorbs each input through a splitmix round so nearby seeds or
/// chunk indices cannot yield related streams.
pub fn stream(seed: u64, tag: &str, chunk: u64) -> ChaCha12Rng {
    let mut state = seed;
    let a = splitmix64(&mut state);
    state ^= fnv1a(tag.as_bytes());
    let b = splitmix64(&mut state);
    state ^= chunk;
    let c = splitmix64(&mut state);
    let d = splitmix64(&mut state);
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..32].copy_from_slice(&d.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// Stable sub-seed for nested constructions (per-block nets, per-trial
/// rotations, and the like).
///
/// Each stage feeds the mixed output, not the raw counter, into the next, so
/// (seed, index) pairs cannot cancel through the xor.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut state = seed;
    let a = splitmix64(&mut state);
    state = a ^ fnv1a(label.as_bytes());
    let b = splitmix64(&mut state);
    state = b ^ index;
    splitmix64(&mut state)
}

/// Runs `f(chunk_index, rng, len)` once per chunk of `total` draws.
///
/// Chunk boundaries depend only on `total` and `chunk_size`, so the sequence
/// of streams is identical no matter how the loop is scheduled.
pub fn for_each_chunk<F>(seed: u64, tag: &str, total: usize, chunk_size: usize, mut f: F)
where
    F: FnMut(u64, &mut ChaCha12Rng, usize),
{
    assert!(chunk_size > 0, "chunk size must be positive");
    let mut done = 0usize;
    let mut idx = 0u64;
    while done < total {
        let len = chunk_size.min(total - done);
        let mut rng = stream(seed, tag, idx);
        f(idx, &mut rng, len);
        done += len;
        idx += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible() {
        let mut a = stream(7, "op", 3);
        let mut b = stream(7, "op", 3);
        for _ in 0..64 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ_across_keys() {
        let base: Vec<u64> = (0..8).map(|_| 0).collect();
        let draw = |seed, tag: &str, chunk| {
            let mut r = stream(seed, tag, chunk);
            (0..8).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        let reference = draw(1, "op", 0);
        assert_ne!(reference, base);
        assert_ne!(draw(2, "op", 0), reference);
        assert_ne!(draw(1, "other", 0), reference);
        assert_ne!(draw(1, "op", 1), reference);
    }

    #[test]
    fn chunks_can_be_regenerated_in_isolation() {
        let mut all = Vec::new();
        for_each_chunk(11, "walk", 10_000, 4096, |_, rng, len| {
            for _ in 0..len {
                all.push(rng.next_u64());
            }
        });
        assert_eq!(all.len(), 10_000);
        // Third chunk alone must reproduce the tail of the full pass.
        let mut tail = Vec::new();
        let mut rng = stream(11, "walk", 2);
        for _ in 0..(10_000 - 2 * 4096) {
            tail.push(rng.next_u64());
        }
        assert_eq!(&all[2 * 4096..], &tail[..]);
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(5, "block", 2), derive_seed(5, "block", 2));
        assert_ne!(derive_seed(5, "block", 2), derive_seed(5, "block", 3));
        assert_ne!(derive_seed(5, "block", 2), derive_seed(6, "block", 2));
        assert_ne!(derive_seed(5, "block", 2), derive_seed(5, "trial", 2));
    }

    // regression: low bits of nearby seeds once survived into the index xor,
    // so (seed, index) and (seed', index') pairs could share a derived seed
    #[test]
    fn derived_seeds_do_not_collide_across_seed_index_pairs() {
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..64u64 {
            for index in 0..64u64 {
                assert!(
                    seen.insert(derive_seed(seed, "grid", index)),
                    "collision at seed {seed} index {index}"
                );
            }
        }
    }
}
