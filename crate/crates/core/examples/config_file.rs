//! Run a bundled key=value configuration on the bundled toy dataset.
//!
//! Run with `cargo run --example config_file`.

use std::error::Error;
use std::path::Path;

use afkit::cli::config::parse_config;
use afkit::cli::matrix::read_matrix;
use afkit::cli::task::{run_task, TaskOptions};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let toy = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy");
    let conf = toy.join("kmer_euclidean.conf");
    let mut cfg = parse_config(&std::fs::read_to_string(&conf)?)?.at(&conf);
    for w in &cfg.warnings {
        println!("warning: {w}");
    }
    // Keep the bundled directory clean.
    let out = std::env::temp_dir().join(format!("afkit-config-example-{}", std::process::id()));
    cfg.set("output", out.to_str().expect("utf-8 temp path"))?;
    let report = run_task(
        &cfg,
        &TaskOptions {
            stats: true,
            ..TaskOptions::default()
        },
    )?;
    for block in &report.stats {
        println!("{block}");
    }
    let m = read_matrix(&report.artifacts[0], afkit::affuncs::Orientation::Distance)?;
    println!("{} samples, symmetric: {}", m.len(), m.is_symmetric());
    std::fs::remove_dir_all(&out)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
