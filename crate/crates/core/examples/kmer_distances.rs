//! k-mer histogram evaluators over an in-memory dataset.
//!
//! Run with `cargo run --example kmer_distances`.

use std::error::Error;

use afkit::cli::matrix::format_tsv;
use afkit::engine::{run_pipeline, PipelineConfig};
use afkit::seqio::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mutate(seq: &[u8], rate: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    seq.iter()
        .map(|&b| {
            if rng.gen_bool(rate) {
                b"ACGT"[rng.gen_range(0..4)]
            } else {
                b
            }
        })
        .collect()
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let root: Vec<u8> = (0..2000).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect();
    let dataset = Dataset::from_named(vec![
        ("root", vec![root.clone()]),
        ("close", vec![mutate(&root, 0.02, &mut rng)]),
        ("far", vec![mutate(&root, 0.30, &mut rng)]),
    ]);
    let config = PipelineConfig::kmer(5, &["euclidean", "d2star", "jsd", "jaccard"]);
    let out = run_pipeline(&dataset, &config)?;
    for m in &out.matrices {
        println!("{} ({:?})\n{}", m.function_id, m.orientation, format_tsv(m));
    }
    let euclid = &out.matrices[0];
    assert!(euclid.get(0, 1) < euclid.get(0, 2));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
