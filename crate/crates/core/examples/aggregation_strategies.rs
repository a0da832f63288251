//! The three aggregation strategies give the same matrix; the counters show
//! how records moved through the stages.
//!
//! Run with `cargo run --example aggregation_strategies`.

use std::error::Error;

use afkit::engine::{max_abs_diff, run_pipeline, PipelineConfig, Strategy};
use afkit::seqio::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples = (0..4)
        .map(|i| {
            let seq: Vec<u8> = (0..3000).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect();
            (format!("s{i}"), vec![seq])
        })
        .collect();
    let dataset = Dataset::from_named(samples);

    let mut reference = None;
    for strategy in [Strategy::TOTAL, Strategy::NONE, Strategy::partial(Some(8))] {
        let config = PipelineConfig::kmer(6, &["d2s"])
            .with_strategy(strategy)
            .with_workers(2);
        let out = run_pipeline(&dataset, &config)?;
        println!("{}", out.counters);
        let m = out.matrices.into_iter().next().expect("one evaluator");
        if let Some(r) = &reference {
            assert!(max_abs_diff(r, &m) <= 1e-9);
        } else {
            reference = Some(m);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
