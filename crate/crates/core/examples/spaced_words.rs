//! Filtered spaced-word matches with a binary pattern.
//!
//! Run with `cargo run --example spaced_words`.

use std::error::Error;

use afkit::affuncs::jukes_cantor;
use afkit::engine::{run_pipeline, PipelineConfig, StatisticSpec};
use afkit::seqio::Dataset;
use afkit::stats::SpacedPattern;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<u8> = (0..5000).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect();
    let b: Vec<u8> = a
        .iter()
        .map(|&x| {
            if rng.gen_bool(0.05) {
                // Substitute with a different base.
                let alt = b"ACGT"
                    .iter()
                    .copied()
                    .filter(|&y| y != x)
                    .collect::<Vec<_>>();
                alt[rng.gen_range(0..3)]
            } else {
                x
            }
        })
        .collect();
    let dataset = Dataset::from_named(vec![("a", vec![a]), ("b", vec![b])]);

    let pattern = SpacedPattern::parse("100101000100011001")?;
    println!(
        "pattern {pattern}: weight {}, {} don't-care positions",
        pattern.weight(),
        pattern.dontcare_count()
    );
    let spec = StatisticSpec::SpacedWord { pattern };
    let out = run_pipeline(&dataset, &PipelineConfig::new(spec, &["fswm"]))?;
    let d = out.matrices[0].get(0, 1);
    println!(
        "FSWM distance {d:.4} (5% substitutions, Jukes-Cantor {:.4})",
        jukes_cantor(0.05)
    );
    assert!((d - jukes_cantor(0.05)).abs() < 0.03);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
