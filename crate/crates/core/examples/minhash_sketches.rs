//! MinHash sketches: Mash distance and the Jaccard estimate.
//!
//! Run with `cargo run --example minhash_sketches`.

use std::error::Error;

use afkit::engine::{run_pipeline, PipelineConfig, StatisticSpec};
use afkit::seqio::Dataset;
use afkit::stats::extract_minhash;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<u8> = (0..20_000).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect();
    // Second half replaced: about a third of the k-mers are shared.
    let mut b = a.clone();
    for base in b.iter_mut().skip(10_000) {
        *base = b"ACGT"[rng.gen_range(0..4)];
    }
    let dataset = Dataset::from_named(vec![("a", vec![a]), ("b", vec![b])]);

    let sketch = extract_minhash(&dataset.samples[0], 21, 1000, 42);
    println!(
        "sketch of a: {} hashes, smallest {:#018x}",
        sketch.hashes.len(),
        sketch.hashes[0]
    );

    let spec = StatisticSpec::MinHash {
        k: 21,
        s: 1000,
        seed: 42,
    };
    let out = run_pipeline(
        &dataset,
        &PipelineConfig::new(spec, &["mash_jaccard", "mash"]),
    )?;
    let (j, d) = (out.matrices[0].get(0, 1), out.matrices[1].get(0, 1));
    println!("estimated Jaccard {j:.4}, Mash distance {d:.4}");
    assert!((j - 1.0 / 3.0).abs() < 0.06);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
