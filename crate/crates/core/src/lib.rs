//! Alignment-free sequence comparison: statistic extraction, a staged
//! parallel pipeline, pairwise evaluators, significance testing and
//! phylogeny reconstruction.

pub mod affuncs;
pub mod cli;
pub mod engine;
pub mod phylo;
pub mod seqio;
pub mod sigtest;
pub mod stats;
