mod common;

use std::sync::Arc;

use mbrkit::corpus::CandidateSet;
use mbrkit::mbr::{mbr_decode_corpus, mbr_select, DecodeOptions, Utility};
use mbrkit::metrics::{bleu_sentence, BleuParams};
use mbrkit::scorer::{StubMode, StubScorer};

use common::{brute_force_mbr, naive_chrf, naive_levenshtein, random_sets};

fn assert_same(fast: &mbrkit::mbr::MbrResult, oracle: &(usize, Vec<f64>), set: &[String]) {
    assert_eq!(fast.selected_index, oracle.0, "{set:?}");
    assert_eq!(fast.expected_utilities.len(), oracle.1.len());
    for (a, b) in fast.expected_utilities.iter().zip(&oracle.1) {
        assert!((a - b).abs() < 1e-9, "{set:?}: {a} vs {b}");
    }
}

#[test]
fn chrf_matches_brute_force_both_self_modes() {
    for set in random_sets(300, 8, 21) {
        for include_self in [true, false] {
            let fast = mbr_select(&set, None, &Utility::chrf(), include_self).unwrap();
            assert_same(&fast, &brute_force_mbr(&set, include_self, naive_chrf), &set);
        }
    }
}

#[test]
fn edit_distance_matches_brute_force() {
    for set in random_sets(300, 8, 22) {
        let fast = mbr_select(&set, None, &Utility::NegEditDistance, true).unwrap();
        let oracle = brute_force_mbr(&set, true, |a, b| -(naive_levenshtein(a, b) as f64));
        assert_same(&fast, &oracle, &set);
    }
}

#[test]
fn bleu_utility_uses_sentence_bleu_per_pair() {
    let p = BleuParams::sentence();
    for set in random_sets(100, 6, 23) {
        let fast = mbr_select(&set, None, &Utility::bleu(), true).unwrap();
        let oracle = brute_force_mbr(&set, true, |h, r| bleu_sentence(h, r, &p).unwrap());
        assert_same(&fast, &oracle, &set);
    }
}

#[test]
fn external_length_penalty_matches_brute_force() {
    let scorer = Arc::new(StubScorer::new(StubMode::LengthPenalty).with_max_batch(5));
    let u = Utility::external(scorer);
    let lp = |h: &str, r: &str| {
        let (h, r) = (h.chars().count() as f64, r.chars().count() as f64);
        if r == 0.0 {
            0.0
        } else {
            (-(h - r).abs() / r).exp()
        }
    };
    for set in random_sets(100, 8, 24) {
        let fast = mbr_select(&set, None, &u, true).unwrap();
        assert_same(&fast, &brute_force_mbr(&set, true, lp), &set);
    }
}

#[test]
fn decoding_is_thread_count_invariant() {
    let sets: Vec<CandidateSet> = random_sets(200, 8, 25)
        .into_iter()
        .enumerate()
        .map(|(i, c)| CandidateSet::new(i, c, None).unwrap())
        .collect();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mbr_decode_corpus(&sets, None, &Utility::chrf(), DecodeOptions::default()).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(7));
    assert!(one.iter().enumerate().all(|(i, r)| r.segment_id == i));
}

#[test]
fn top_k_uses_rank_prefix() {
    let sets: Vec<CandidateSet> = random_sets(50, 8, 26)
        .into_iter()
        .enumerate()
        .map(|(i, c)| CandidateSet::new(i, c, None).unwrap())
        .collect();
    let options = DecodeOptions {
        include_self: true,
        top_k: Some(3),
    };
    let results = mbr_decode_corpus(&sets, None, &Utility::chrf(), options).unwrap();
    for (set, r) in sets.iter().zip(&results) {
        let prefix = &set.candidates()[..set.len().min(3)];
        assert_same(r, &brute_force_mbr(prefix, true, naive_chrf), prefix);
    }
}
