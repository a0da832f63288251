//! UPGMA and neighbor joining, Newick text, and RF / Matching Cluster
//! distances between trees.
//!
//! Run with `cargo run --example tree_building`.

use std::error::Error;

use afkit::affuncs::Orientation;
use afkit::engine::AfMatrix;
use afkit::phylo::{
    mcm_distance, midpoint_root, nj, parse_newick, rf_distance, upgma, write_newick,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let labels: Vec<String> = ["A", "B", "C", "D", "E"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    // Path lengths of ((A:1,B:2):1,C:3,(D:1,E:1):2).
    let values = vec![
        vec![0.0, 3.0, 5.0, 5.0, 5.0],
        vec![3.0, 0.0, 6.0, 6.0, 6.0],
        vec![5.0, 6.0, 0.0, 6.0, 6.0],
        vec![5.0, 6.0, 6.0, 0.0, 2.0],
        vec![5.0, 6.0, 6.0, 2.0, 0.0],
    ];
    let m = AfMatrix::new(labels, values, Orientation::Distance, "example");
    let gold = parse_newick("((A:1,B:2):1,C:3,(D:1,E:1):2);")?;

    let t_nj = nj(&m)?;
    let t_upgma = upgma(&m)?;
    println!("nj     {}", write_newick(&t_nj));
    println!("upgma  {}", write_newick(&t_upgma));
    println!("rooted {}", write_newick(&midpoint_root(&t_nj)));
    println!("RF(nj, gold) = {}", rf_distance(&t_nj, &gold)?);
    println!("RF(upgma, gold) = {}", rf_distance(&t_upgma, &gold)?);
    println!(
        "MCM(upgma, rooted nj) = {}",
        mcm_distance(&t_upgma, &midpoint_root(&t_nj))?
    );
    assert_eq!(rf_distance(&t_nj, &gold)?, 0);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
