//! FASTA/FASTQ parsing and the overlap-aware chunking used by extraction.
//!
//! Run with `cargo run --example sequence_input`.

use std::error::Error;

use afkit::seqio::{chunk_sample, parse_fasta, parse_fastq, Sample};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let fasta = parse_fasta(b">chr1 first\nACGTAC\nGTNNAC\n>chr2\nttgca\n")?;
    for r in &fasta {
        println!("{} {}", r.header, String::from_utf8_lossy(&r.residues));
    }
    let fastq = parse_fastq(b"@read1\nACGTT\n+\nIIIII\n")?;
    println!("{} read(s), first {}", fastq.len(), fastq[0].header);

    let sample = Sample::new(0, "chr", fasta.into_iter().map(|r| r.residues).collect());
    let k = 4;
    for c in chunk_sample(&sample, 3, k - 1) {
        let starts = c.window_starts(k);
        println!(
            "fragment {} core at {:>2}: {:<6} window starts {:?} (body-relative)",
            c.fragment_id,
            c.offset + c.left_overlap,
            String::from_utf8_lossy(c.core()),
            starts
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
