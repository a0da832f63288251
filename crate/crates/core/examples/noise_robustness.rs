//! Tree distance to a gold standard as matrix entries are replaced by noise.
//!
//! Run with `cargo run --example noise_robustness`.

use std::error::Error;

use afkit::affuncs::Orientation;
use afkit::engine::AfMatrix;
use afkit::phylo::{parse_newick, robustness_sweep, sweep_tsv, NoiseSource, SweepConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let gold = parse_newick("(((A:1,B:1):1,(C:1,D:1):1):1,((E:1,F:1):1,(G:1,H:1):1):1);")?;
    let labels = gold.leaf_labels();
    let values = gold.distance_matrix(&labels);
    let m = AfMatrix::new(labels, values, Orientation::Distance, "clock");

    let cfg = SweepConfig {
        percents: vec![0.0, 0.1, 0.3, 0.5],
        repeats: 20,
        source: NoiseSource::AdditiveUniform { max_delta: None },
        ..SweepConfig::default()
    };
    let rows = robustness_sweep(&m, &gold, &cfg, &[])?;
    print!("{}", sweep_tsv(&rows));
    assert!(rows
        .iter()
        .filter(|r| r.percent == 0.0)
        .all(|r| r.mean == 0.0));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
