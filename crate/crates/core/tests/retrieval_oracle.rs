mod common;

use common::oracle;
use ila_core::par::ExecMode;
use ila_core::retrieval::{
    sem_search, Embedder, EmbeddingVector, HashingEmbedder, IndexEntry, VectorIndex, HASH_EMBED_DIM,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hash_embedder_matches_reference_hashing() {
    let fx = common::Fixture::load();
    let e = HashingEmbedder::default();
    assert_eq!(e.tag(), "feature-hash-256");
    for chunk in fx.store.chunks() {
        let want = oracle::hash_embed(&chunk.text, HASH_EMBED_DIM);
        let got = e.embed_one(&chunk.text);
        for (a, b) in want.iter().zip(&got.values) {
            assert!((a - b).abs() < 1e-12, "{}", chunk.chunk_id);
        }
    }
}

#[test]
fn fixture_queries_match_brute_force_in_both_modes() {
    let fx = common::Fixture::load();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vocab: Vec<String> = ila_core::retrieval::word_tokens(
        &fx.store.chunks().iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" "),
    )
    .collect();
    for _ in 0..40 {
        let n = rng.random_range(1..=3);
        let queries: Vec<String> = (0..n)
            .map(|_| {
                (0..rng.random_range(1..=5))
                    .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let k = rng.random_range(1..=8);
        let par = sem_search(&fx.index, &fx.embedder, &queries, k, ExecMode::Parallel).unwrap().unwrap();
        let seq = sem_search(&fx.index, &fx.embedder, &queries, k, ExecMode::Sequential).unwrap().unwrap();
        assert_eq!(par, seq);
        for qh in &par.per_query {
            let want = oracle::brute_force_rank(&fx.index, &oracle::hash_embed(&qh.query, HASH_EMBED_DIM), k);
            let got: Vec<&str> = qh.hits.iter().map(|h| h.chunk_id.as_str()).collect();
            let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
            assert_eq!(got, want_ids, "query {:?}", qh.query);
        }
    }
}

#[test]
fn query_count_limits() {
    let fx = common::Fixture::load();
    let four: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    assert!(sem_search(&fx.index, &fx.embedder, &four, 5, ExecMode::Sequential).unwrap().is_err());
    assert!(sem_search(&fx.index, &fx.embedder, &[], 5, ExecMode::Sequential).unwrap().is_err());
}

fn small_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-2i32..=2).prop_map(f64::from), 4)
}

proptest! {
    #[test]
    fn ties_break_by_chunk_id(
        vectors in prop::collection::vec(small_vec(), 1..30),
        query in small_vec(),
        k in 1usize..12,
    ) {
        let entries = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| IndexEntry { chunk_id: format!("c{:05}", (i * 7919) % 10007), vector: EmbeddingVector::new(v.clone()) })
            .collect();
        let index = VectorIndex { provider_tag: "test".into(), dim: 4, entries };
        let want: Vec<String> = oracle::brute_force_rank(&index, &query, k).into_iter().map(|(id, _)| id).collect();
        for mode in [ExecMode::Sequential, ExecMode::Parallel] {
            let got: Vec<String> = index.search(&EmbeddingVector::new(query.clone()), k, mode).into_iter().map(|h| h.chunk_id).collect();
            prop_assert_eq!(&got, &want);
        }
    }
}
