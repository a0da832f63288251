//! Every runnable example also runs as a test.

#[path = "../examples/aggregation_strategies.rs"]
mod aggregation_strategies;
#[path = "../examples/config_file.rs"]
mod config_file;
#[path = "../examples/kmer_distances.rs"]
mod kmer_distances;
#[path = "../examples/minhash_sketches.rs"]
mod minhash_sketches;
#[path = "../examples/noise_robustness.rs"]
mod noise_robustness;
#[path = "../examples/sequence_input.rs"]
mod sequence_input;
#[path = "../examples/significance_test.rs"]
mod significance_test;
#[path = "../examples/spaced_words.rs"]
mod spaced_words;
#[path = "../examples/tree_building.rs"]
mod tree_building;

#[test]
fn aggregation_strategies_runs() {
    aggregation_strategies::run_example().unwrap();
}

#[test]
fn config_file_runs() {
    config_file::run_example().unwrap();
}

#[test]
fn kmer_distances_runs() {
    kmer_distances::run_example().unwrap();
}

#[test]
fn minhash_sketches_runs() {
    minhash_sketches::run_example().unwrap();
}

#[test]
fn noise_robustness_runs() {
    noise_robustness::run_example().unwrap();
}

#[test]
fn sequence_input_runs() {
    sequence_input::run_example().unwrap();
}

#[test]
fn significance_test_runs() {
    significance_test::run_example().unwrap();
}

#[test]
fn spaced_words_runs() {
    spaced_words::run_example().unwrap();
}

#[test]
fn tree_building_runs() {
    tree_building::run_example().unwrap();
}
