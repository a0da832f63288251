//! Pipeline output against brute-force dense evaluation.

mod common;

use std::collections::BTreeMap;

use afkit::affuncs::{
    fswm_key, jukes_cantor, mash_jaccard, SubstitutionMatrix, HISTOGRAM_EVALUATORS,
};
use afkit::engine::{run_pipeline, PipelineConfig, StatisticSpec, Strategy};
use afkit::seqio::{chunk_sample, Dataset, Sample};
use afkit::stats::{extract_minhash, extract_spaced_words, Occurrences, SpacedPattern};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn histogram_functions_match_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..8 {
        let n = rng.gen_range(2..=5);
        let ds = random_dataset(&mut rng, n, 300);
        let k = rng.gen_range(1..=4);
        let pc = PipelineConfig::kmer(k, &HISTOGRAM_EVALUATORS).with_slices(5);
        let out = run_pipeline(&ds, &pc).unwrap();
        for m in &out.matrices {
            let want = oracle_matrix(&m.function_id, &ds, k);
            let diff = max_rel_diff(&m.values, &want);
            assert!(
                matches!(diff, Some(d) if d <= 1e-9),
                "{} k={k}: {:?}\n{:?}\n{:?}",
                m.function_id,
                diff,
                m.values,
                want
            );
        }
    }
}

#[test]
fn strategies_agree_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ds = random_dataset(&mut rng, 4, 400);
    for strategy in [Strategy::TOTAL, Strategy::NONE, Strategy::partial(Some(3))] {
        for workers in [1, 3] {
            let pc = PipelineConfig::kmer(3, &["d2star", "jsd", "chebyshev"])
                .with_strategy(strategy)
                .with_workers(workers);
            for m in run_pipeline(&ds, &pc).unwrap().matrices {
                let want = oracle_matrix(&m.function_id, &ds, 3);
                assert!(
                    max_rel_diff(&m.values, &want).unwrap() <= 1e-9,
                    "{}",
                    m.function_id
                );
            }
        }
    }
}

#[test]
fn empty_support_pairs() {
    // One sample has no valid 3-mer; distances stay defined, Jaccard of two
    // empty supports is 1 and Kulczynski2 is undefined.
    let ds = Dataset::from_named(vec![
        ("a", vec![b"ACGTTGCA".to_vec()]),
        ("b", vec![b"NNNNAC".to_vec()]),
        ("c", vec![b"AC".to_vec()]),
    ]);
    let pc = PipelineConfig::kmer(3, &["euclidean", "jaccard", "kulczynski2"]);
    for m in run_pipeline(&ds, &pc).unwrap().matrices {
        let want = oracle_matrix(&m.function_id, &ds, 3);
        assert!(
            max_rel_diff(&m.values, &want).is_some(),
            "{}: {:?}",
            m.function_id,
            m.values
        );
    }
}

fn spaced_occurrences(seq: &[u8], pattern: &SpacedPattern) -> BTreeMap<u64, Occurrences> {
    let sample = Sample::new(0, "x", vec![seq.to_vec()]);
    let mut map: BTreeMap<u64, Occurrences> = BTreeMap::new();
    for chunk in chunk_sample(&sample, 3, pattern.len() - 1) {
        for r in extract_spaced_words(&chunk, pattern) {
            map.entry(r.key)
                .or_insert_with(|| Occurrences::new(pattern.dontcare_count()))
                .push(&r.dontcare);
        }
    }
    map
}

#[test]
fn fswm_counts_match_all_pairs_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let matrix = SubstitutionMatrix::default();
    for pattern in ["101", "1001", "11011"] {
        let p = SpacedPattern::parse(pattern).unwrap();
        for _ in 0..20 {
            let (ls, lt) = (rng.gen_range(1..=30), rng.gen_range(1..=30));
            let mut s = random_seq(&mut rng, ls);
            let t = random_seq(&mut rng, lt);
            if rng.gen_bool(0.3) && !s.is_empty() {
                let i = rng.gen_range(0..s.len());
                s[i] = b'N';
            }
            let (os, ot) = (spaced_occurrences(&s, &p), spaced_occurrences(&t, &p));
            let (mut mm, mut delta) = (0, 0);
            for (key, a) in &os {
                if let Some(b) = ot.get(key) {
                    let c = fswm_key(a, b, &matrix, 0, usize::MAX, 0);
                    mm += c.mismatches;
                    delta += c.positions;
                }
            }
            assert_eq!(
                (mm, delta),
                fswm_brute_force(&s, &t, pattern, 0),
                "{pattern}"
            );
        }
    }
}

#[test]
fn fswm_pipeline_value_is_jukes_cantor_of_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_seq(&mut rng, 30);
    let t = mutate(&s, 0.2, &mut rng);
    let ds = Dataset::from_named(vec![("s", vec![s.clone()]), ("t", vec![t.clone()])]);
    let pattern = SpacedPattern::parse("101").unwrap();
    let pc = PipelineConfig::new(StatisticSpec::SpacedWord { pattern }, &["fswm"]).with_slices(4);
    let m = &run_pipeline(&ds, &pc).unwrap().matrices[0];
    let (mm, delta) = fswm_brute_force(&s, &t, "101", 0);
    assert!(close(m.get(0, 1), jc(mm as f64 / delta as f64), 1e-12));
    assert!(close(jukes_cantor(0.1), jc(0.1), 1e-15));
}

#[test]
fn minhash_exact_when_sketch_covers_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_seq(&mut rng, 200);
    let b = mutate(&a, 0.05, &mut rng);
    let k = 9;
    let sa = extract_minhash(&Sample::new(0, "a", vec![a.clone()]), k, 10_000, 42);
    let sb = extract_minhash(&Sample::new(1, "b", vec![b.clone()]), k, 10_000, 42);
    let canon = |seq: &[u8]| -> std::collections::BTreeSet<Vec<u8>> {
        seq.windows(k)
            .map(|w| {
                let rc: Vec<u8> = w
                    .iter()
                    .rev()
                    .map(|&c| match c {
                        b'A' => b'T',
                        b'C' => b'G',
                        b'G' => b'C',
                        _ => b'A',
                    })
                    .collect();
                w.to_vec().min(rc)
            })
            .collect()
    };
    let (ca, cb) = (canon(&a), canon(&b));
    let exact = ca.intersection(&cb).count() as f64 / ca.union(&cb).count() as f64;
    assert_eq!(mash_jaccard(&sa.hashes, &sb.hashes, 10_000), exact);
}
