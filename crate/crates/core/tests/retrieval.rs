mod common;

use common::{cosine, record, uniform_vectors, Mixture};
use eaef_core::vecstore::{VecStoreError, VectorIndex};
use proptest::prelude::*;

fn build(vectors: &[Vec<f64>]) -> VectorIndex {
    let mut index = VectorIndex::new(vectors[0].len());
    for (i, v) in vectors.iter().enumerate() {
        index.add(v, record(i)).unwrap();
    }
    index
}

/// Brute force over the stored rows, ties broken by position.
fn oracle_top(index: &VectorIndex, query: &[f64], k: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = (0..index.len())
        .map(|p| {
            let row: Vec<f64> = index.vector(p).iter().map(|x| f64::from(*x)).collect();
            (p, cosine(&row, query))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(p, _)| p).collect()
}

#[test]
fn flat_search_matches_brute_force() {
    let data = uniform_vectors(1000, 384, 11);
    let queries = uniform_vectors(100, 384, 12);
    let index = build(&data);
    let mut mismatches = 0;
    for q in &queries {
        let got: Vec<usize> = index.search(q, 10, -1.0).unwrap().iter().map(|h| h.position).collect();
        if got != oracle_top(&index, q, 10) {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn clustered_full_probe_is_flat_search() {
    let data = uniform_vectors(1000, 384, 21);
    let mut index = build(&data);
    index.build_clusters(32).unwrap();
    for q in uniform_vectors(50, 384, 22) {
        let flat = index.search(&q, 10, -1.0).unwrap();
        let ivf = index.search_clustered(&q, 10, -1.0, 32).unwrap();
        assert_eq!(flat, ivf);
        for (a, b) in flat.iter().zip(&ivf) {
            assert_eq!(a.similarity.to_bits(), b.similarity.to_bits());
        }
    }
}

#[test]
fn clustered_recall_on_structured_data() {
    let mut mix = Mixture::new(40, 384, 0.03, 31);
    let data: Vec<Vec<f64>> = (0..1000).map(|_| mix.sample()).collect();
    let mut index = build(&data);
    index.build_clusters(32).unwrap();
    let mut found = 0;
    let mut total = 0;
    for _ in 0..100 {
        let q = mix.sample();
        let truth: Vec<usize> = oracle_top(&index, &q, 10);
        let approx: Vec<usize> = index
            .search_clustered(&q, 10, -1.0, 8)
            .unwrap()
            .iter()
            .map(|h| h.position)
            .collect();
        found += truth.iter().filter(|p| approx.contains(p)).count();
        total += truth.len();
    }
    let recall = found as f64 / total as f64;
    assert!(recall >= 0.9, "recall@10 = {recall}");
}

#[test]
fn search_argument_errors() {
    let index = build(&uniform_vectors(20, 8, 1));
    let q = vec![1.0; 8];
    assert!(matches!(index.search(&q, 0, 0.0), Err(VecStoreError::InvalidK)));
    assert!(matches!(
        index.search(&[1.0; 3], 5, 0.0),
        Err(VecStoreError::DimensionMismatch { .. })
    ));
    assert!(index.search(&q, 5, 1.1).unwrap().is_empty());
    assert!(matches!(
        index.search_clustered(&q, 5, 0.0, 1),
        Err(VecStoreError::NotClustered)
    ));
}

#[test]
fn persistence_roundtrip_10k() {
    let data = uniform_vectors(10_000, 64, 41);
    let index = build(&data);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.idx");
    index.save(&path).unwrap();
    let loaded = VectorIndex::load(&path).unwrap();
    assert_eq!(loaded.len(), index.len());
    assert_eq!(loaded.dimension(), index.dimension());
    let bits = |ix: &VectorIndex| ix.vector_block().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&loaded), bits(&index));
    assert_eq!(loaded.records(), index.records());
    assert_eq!(loaded.fingerprint(), index.fingerprint());
    let q = &data[17];
    assert_eq!(loaded.search(q, 5, 0.0).unwrap(), index.search(q, 5, 0.0).unwrap());
}

#[test]
fn load_rejects_corruption() {
    let index = build(&uniform_vectors(5, 4, 2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.idx");
    index.save(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(VectorIndex::load(&path), Err(VecStoreError::BadMagic { .. })));
    bytes[0] = b'E';
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    let err = VectorIndex::load(&path).unwrap_err();
    assert!(matches!(err, VecStoreError::Truncated { .. }), "{err:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn results_are_scale_invariant(seed in 0u64..10_000, scale in 0.01f64..100.0) {
        let data = uniform_vectors(60, 16, seed);
        let index = build(&data);
        let q = &data[0];
        let scaled: Vec<f64> = q.iter().map(|x| x * scale).collect();
        let a: Vec<usize> = index.search(q, 5, -1.0).unwrap().iter().map(|h| h.position).collect();
        let b: Vec<usize> = index.search(&scaled, 5, -1.0).unwrap().iter().map(|h| h.position).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn hits_sorted_and_above_tau(seed in 0u64..10_000, k in 1usize..20, tau in -1.0f64..1.0) {
        let data = uniform_vectors(40, 8, seed);
        let index = build(&data);
        let hits = index.search(&data[1], k, tau).unwrap();
        prop_assert!(hits.len() <= k);
        for w in hits.windows(2) {
            prop_assert!(w[0].similarity >= w[1].similarity);
        }
        for h in &hits {
            prop_assert!(h.similarity >= tau && h.similarity <= 1.0);
        }
    }
}
