//! Replays the checked-in fuzz corpus through the fuzz target bodies on
//! stable, so every seed stays panic-free and round-trips.

#[path = "../fuzz/src/lib.rs"]
mod targets;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(name: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(name);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.display().to_string(), fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn every_target_has_seeds_and_they_pass() {
    for (name, run) in targets::TARGETS {
        let seeds = corpus(name);
        assert!(!seeds.is_empty(), "no seeds for {name}");
        for (path, bytes) in seeds {
            let outcome = std::panic::catch_unwind(|| run(&bytes));
            assert!(outcome.is_ok(), "{name} panicked on {path}");
        }
    }
}

#[test]
fn reference_embedding_seed_parses() {
    let seeds = corpus("embedding_checkpoint");
    let (_, reference) = seeds.iter().find(|(p, _)| p.ends_with("reference")).unwrap();
    let g = targets::reference_graph();
    assert!(kerm::embed::KgEmbeddings::from_checkpoint(std::str::from_utf8(reference).unwrap(), &g).is_ok());
}

#[test]
fn model_seed_parses() {
    let seeds = corpus("model_checkpoint");
    let (_, model) = seeds.iter().find(|(p, _)| p.ends_with("tiny_model")).unwrap();
    assert!(kerm::model::ModelCheckpoint::from_text(std::str::from_utf8(model).unwrap()).is_ok());
}

/// Byte flips, truncations, duplications and insertions of structural
/// characters; a cheap stand-in for coverage-guided fuzzing on stable.
fn mutate(rng: &mut ChaCha8Rng, seed: &[u8]) -> Vec<u8> {
    const INTERESTING: &[u8] = b"\t\n \"{}[],:.-0123456789eE";
    let mut v = seed.to_vec();
    for _ in 0..rng.random_range(1..=4) {
        if v.is_empty() {
            v.push(INTERESTING[rng.random_range(0..INTERESTING.len())]);
            continue;
        }
        let at = rng.random_range(0..v.len());
        match rng.random_range(0..5) {
            0 => v[at] ^= 1 << rng.random_range(0..8),
            1 => v[at] = INTERESTING[rng.random_range(0..INTERESTING.len())],
            2 => v.truncate(at),
            3 => {
                let end = rng.random_range(at..v.len()).min(at + 64);
                let chunk = v[at..=end.min(v.len() - 1)].to_vec();
                let to = rng.random_range(0..=v.len());
                v.splice(to..to, chunk);
            }
            _ => {
                v.remove(at);
            }
        }
    }
    v
}

#[test]
fn mutated_seeds_do_not_panic() {
    // KERM_FUZZ_ITERS raises the per-seed count for a longer local campaign
    let iters: usize = std::env::var("KERM_FUZZ_ITERS").ok().and_then(|v| v.parse().ok()).unwrap_or(150);
    let seed: u64 = std::env::var("KERM_FUZZ_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(0xF022);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, run) in targets::TARGETS {
        for (path, bytes) in corpus(name) {
            for i in 0..iters {
                let input = mutate(&mut rng, &bytes);
                let outcome = std::panic::catch_unwind(|| run(&input));
                assert!(
                    outcome.is_ok(),
                    "{name} panicked on mutation {i} of {path}: {:?}",
                    String::from_utf8_lossy(&input)
                );
            }
        }
    }
}
