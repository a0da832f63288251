//! Monte Carlo significance of AF values against q-mer shuffled datasets,
//! with a resumable checkpoint directory.
//!
//! Run with `cargo run --example significance_test`.

use std::error::Error;

use afkit::engine::PipelineConfig;
use afkit::seqio::Dataset;
use afkit::sigtest::{mecca, summarize, summary_tsv, Checkpoint, MeccaOptions, NullModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<u8> = (0..800).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect();
    let mut b = a.clone();
    b[100] = b'A';
    let c: Vec<u8> = (0..800).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect();
    let dataset = Dataset::from_named(vec![("a", vec![a]), ("b", vec![b]), ("c", vec![c])]);

    let dir = std::env::temp_dir().join(format!("afkit-sigtest-example-{}", std::process::id()));
    let checkpoint = Checkpoint::new(&dir);
    let pipeline = PipelineConfig::kmer(4, &["d2"]);
    let null = NullModelConfig {
        runs: 40,
        ..NullModelConfig::default()
    };

    // Stop after 15 runs, then resume: the second call only computes the rest.
    let partial = MeccaOptions {
        run_limit: Some(15),
        ..MeccaOptions::default()
    };
    let first = mecca(
        &dataset,
        "d2",
        &null,
        &pipeline,
        Some(&checkpoint),
        &partial,
    )?;
    let resumed = mecca(
        &dataset,
        "d2",
        &null,
        &pipeline,
        Some(&checkpoint),
        &MeccaOptions::default(),
    )?;
    println!(
        "first pass {} runs; resumed {} runs, {} from disk",
        first.runs_completed, resumed.runs_completed, resumed.runs_loaded
    );
    print!("{}", resumed.to_csv());
    print!("{}", summary_tsv(&summarize(&[(1, &resumed)])));
    assert!(resumed.pass[0][1]);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
