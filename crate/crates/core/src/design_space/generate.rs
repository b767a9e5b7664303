//! Seeded random kernels for building synthetic training corpora.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{ArrayInfo, KernelDescriptor, LoopInfo};
use crate::rng::{derive_seed, rng_from};

const ARRAY_NAMES: [&str; 10] = ["a", "b", "c", "w", "x", "y", "src", "dst", "coef", "buf"];
const WORDS: [u64; 5] = [8, 16, 32, 64, 128];
const BITS: [u32; 3] = [8, 16, 32];
const TRIPS: [u64; 5] = [4, 8, 16, 32, 64];

/// Hazard fraction given to every generated kernel.
pub const GENERATED_HAZARD: f64 = 0.1;

/// A random one- or two-level loop nest named `g<index>` touching one to three
/// arrays. Same `(index, seed)` gives the same kernel.
pub fn generate_kernel(index: usize, seed: u64) -> KernelDescriptor {
    let mut rng = rng_from(derive_seed(seed, &[index as u64]));
    let n_arrays = rng.random_range(1..=3usize);
    let mut arrays: Vec<ArrayInfo> = Vec::new();
    for k in 0..n_arrays {
        let name = ARRAY_NAMES[(index + k * 3) % ARRAY_NAMES.len()];
        if arrays.iter().any(|a| a.name == name) {
            continue;
        }
        arrays.push(ArrayInfo {
            name: name.to_string(),
            num_words: *WORDS.choose(&mut rng).expect("non-empty"),
            word_bits: *BITS.choose(&mut rng).expect("non-empty"),
        });
    }
    let mut touched: Vec<String> = arrays.iter().map(|a| a.name.clone()).collect();
    touched.sort();

    let loops = if rng.random_bool(0.5) {
        vec![LoopInfo {
            id: "i".into(),
            trip_count: *TRIPS.choose(&mut rng).expect("non-empty"),
            parent: None,
            ops_add: rng.random_range(0..3),
            ops_mul: rng.random_range(0..3),
            arrays: touched,
        }]
    } else {
        vec![
            LoopInfo {
                id: "r".into(),
                trip_count: TRIPS[rng.random_range(0..3)],
                parent: None,
                ops_add: 0,
                ops_mul: 0,
                arrays: Vec::new(),
            },
            LoopInfo {
                id: "c".into(),
                trip_count: TRIPS[rng.random_range(0..4)],
                parent: Some("r".into()),
                ops_add: rng.random_range(1..3),
                ops_mul: rng.random_range(0..3),
                arrays: touched,
            },
        ]
    };
    KernelDescriptor {
        name: format!("g{index}"),
        loops,
        arrays,
        hazard_fraction: GENERATED_HAZARD,
    }
}
