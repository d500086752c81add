use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 8] = ["buf", "dst", "name", "line", "path", "msg", "tmp", "out"];
const SOURCES: [&str; 6] = ["input", "argv[1]", "src", "user", "data", "req"];

/// Small labeled C snippets for smoke runs: label 1 copies into a fixed
/// buffer without a bound, label 0 uses the bounded counterpart. Half of
/// each, interleaved, deterministic in `seed`.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<(String, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let b = NAMES.choose(&mut rng).expect("names");
            let s = SOURCES.choose(&mut rng).expect("sources");
            let size = [8, 16, 32, 64, 128][rng.random_range(0..5)];
            let text = match (label, rng.random_range(0..3)) {
                (1, 0) => format!("void f(char *{s}) {{ char {b}[{size}]; strcpy({b}, {s}); }}"),
                (1, 1) => format!("void f(char *{s}) {{ char {b}[{size}]; sprintf({b}, \"%s\", {s}); }}"),
                (1, _) => format!("void f() {{ char {b}[{size}]; gets({b}); }}"),
                (_, 0) => format!("void f(char *{s}) {{ char {b}[{size}]; strncpy({b}, {s}, sizeof({b}) - 1); }}"),
                (_, 1) => format!("void f(char *{s}) {{ char {b}[{size}]; snprintf({b}, sizeof({b}), \"%s\", {s}); }}"),
                (_, _) => format!("void f() {{ char {b}[{size}]; fgets({b}, sizeof({b}), stdin); }}"),
            };
            (text, label)
        })
        .collect()
}
