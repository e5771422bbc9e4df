//! Invariants checked over generated inputs.

use std::collections::BTreeMap;
use std::sync::Arc;

use dialcoord::dialogue::{DialogueHistory, Speaker, Task, TopicCandidate};
use dialcoord::gateway::{similarity, EmbeddingVector, Gateway};
use dialcoord::generation::prioritized_aspect;
use dialcoord::pipeline::mock_pipeline;
use dialcoord::progression::{estimate_target, AttentionParams};
use dialcoord::service::SessionManager;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn vec_of(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim)
}

fn emb(v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::new(v.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn similarity_is_symmetric_and_bilinear(
        (a, b, c) in (1usize..12).prop_flat_map(|d| (vec_of(d), vec_of(d), vec_of(d))),
        x in -3.0f64..3.0,
    ) {
        let ab = similarity(&emb(&a), &emb(&b)).unwrap();
        prop_assert_eq!(ab, similarity(&emb(&b), &emb(&a)).unwrap());
        let mixed: Vec<f64> = a.iter().zip(&c).map(|(p, q)| x * p + q).collect();
        let lhs = similarity(&emb(&mixed), &emb(&b)).unwrap();
        let rhs = x * ab + similarity(&emb(&c), &emb(&b)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs() + rhs.abs()));
    }

    #[test]
    fn target_estimate_ignores_centroid_order(
        (s, rows, w, perm_seed) in (1usize..6, 1usize..6).prop_flat_map(|(d, k)| (
            vec_of(d),
            prop::collection::vec(vec_of(d), k),
            prop::collection::vec(-1.0f64..1.0, d * d),
            any::<u64>(),
        )),
    ) {
        let d = s.len();
        let k = rows.len();
        let params = AttentionParams { w: Array2::from_shape_vec((d, d), w).unwrap() };
        let s = Array1::from(s);
        let c = Array2::from_shape_fn((k, d), |(i, j)| rows[i][j] * 0.3);
        let mut order: Vec<usize> = (0..k).collect();
        order.rotate_left((perm_seed % k as u64) as usize);
        if perm_seed % 2 == 0 {
            order.reverse();
        }
        let shuffled = Array2::from_shape_fn((k, d), |(i, j)| c[[order[i], j]]);
        let v1 = estimate_target(s.view(), c.view(), &params).unwrap().v;
        let v2 = estimate_target(s.view(), shuffled.view(), &params).unwrap().v;
        for (x, y) in v1.iter().zip(v2.iter()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            prop_assert!(*x >= 0.0);
        }
    }

    #[test]
    fn prioritized_aspect_follows_rank_one(
        aspects in prop::collection::vec(1usize..4, 1..10),
        winner in any::<prop::sample::Index>(),
    ) {
        let w = winner.index(aspects.len());
        let mut cands: Vec<TopicCandidate> = aspects
            .iter()
            .enumerate()
            .map(|(i, &a)| TopicCandidate::new(a, i + 1, "topic"))
            .collect();
        let mut next = 2;
        for (i, c) in cands.iter_mut().enumerate() {
            c.rank = Some(if i == w { 1 } else { next += 1; next - 1 });
        }
        let expected = aspects[w];
        prop_assert_eq!(prioritized_aspect(&cands), Some(expected));
        // Dropping or re-aspecting lower-ranked candidates changes nothing.
        let mut altered: Vec<TopicCandidate> = cands.iter().filter(|c| c.rank == Some(1)).cloned().collect();
        altered.extend(cands.iter().filter(|c| c.rank != Some(1)).cloned().map(|mut c| { c.aspect_id = 3 - (c.aspect_id % 3); c }));
        prop_assert_eq!(prioritized_aspect(&altered), Some(expected));
    }

    #[test]
    fn mock_embeddings_are_deterministic(text in "[a-zA-Z][a-zA-Z ,.']{0,59}", dim in 1usize..64) {
        let a = Gateway::mock(dim).embed_text(&text).unwrap();
        let b = Gateway::mock(dim).embed_text(&text).unwrap();
        prop_assert_eq!(a.dim(), dim);
        prop_assert_eq!(a, b);
        prop_assert!(Gateway::mock(dim).embed_text(&" ".repeat(dim)).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mock_turn_traces_are_well_formed(
        texts in prop::collection::vec("[a-z]{2,8}( [a-z]{2,8}){0,8}", 1..3),
        esc in any::<bool>(),
    ) {
        let task = if esc { Task::Esc } else { Task::Persuasion };
        let pipeline = mock_pipeline(task, 8).unwrap();
        let mut history = DialogueHistory::new(task);
        for text in &texts {
            history.push(Speaker::User, text).unwrap();
            let trace = pipeline.run_turn(&history).unwrap();
            trace.validate().unwrap();
            let profile = &pipeline.profile;

            // One summary per aspect, in aspect order.
            let ids: Vec<usize> = trace.summaries.iter().map(|s| s.aspect_id).collect();
            prop_assert_eq!(ids, (1..=profile.n_aspects()).collect::<Vec<_>>());
            // Candidates come from known aspects with in-range indices.
            for c in &trace.candidates {
                let a = &profile.aspects[c.aspect_id - 1];
                prop_assert!(c.candidate_index >= 1 && c.candidate_index <= a.candidate_count);
            }
            // Ranks are a permutation listed in order; top_k is the prefix.
            let ranks: Vec<usize> = trace.candidates.iter().map(|c| c.rank.unwrap()).collect();
            prop_assert_eq!(ranks, (1..=trace.candidates.len()).collect::<Vec<_>>());
            prop_assert_eq!(&trace.top_k[..], &trace.candidates[..profile.top_k]);
            for w in trace.candidates.windows(2) {
                prop_assert!(w[0].score.unwrap() <= w[1].score.unwrap());
            }
            // Stages run in order and never overlap.
            let names: Vec<&str> = trace.timings.iter().map(|t| t.stage.as_str()).collect();
            prop_assert_eq!(names, vec!["agents", "coordination", "generation"]);
            for t in &trace.timings {
                prop_assert!(t.start_ms <= t.end_ms);
            }
            for w in trace.timings.windows(2) {
                prop_assert!(w[0].end_ms <= w[1].start_ms);
            }
            history.push_utterance(trace.utterance.clone()).unwrap();
        }
    }
}

#[test]
fn replaying_logged_user_messages_reproduces_the_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.ndjson");
    let pipelines =
        || BTreeMap::from([(Task::Esc, Arc::new(mock_pipeline(Task::Esc, 8).unwrap()))]);

    let manager = SessionManager::with_log(pipelines(), &log).unwrap();
    let id = manager.create_session(Task::Esc).unwrap();
    for text in [
        "My partner left me.",
        "I keep blaming myself.",
        "Maybe I should talk to a friend.",
    ] {
        manager.post_user_message(&id, text).unwrap();
    }
    let original = manager.get_session(&id).unwrap();
    drop(manager);

    let restored = SessionManager::with_log(pipelines(), &log)
        .unwrap()
        .get_session(&id)
        .unwrap();
    let user_texts: Vec<String> = restored
        .history
        .utterances()
        .iter()
        .filter(|u| u.speaker == Speaker::User)
        .map(|u| u.text.clone())
        .collect();
    assert_eq!(user_texts.len(), 3);

    let fresh = SessionManager::new(pipelines());
    let replay = fresh.create_session(Task::Esc).unwrap();
    for text in &user_texts {
        fresh.post_user_message(&replay, text).unwrap();
    }
    let replayed = fresh.get_session(&replay).unwrap();
    let encode = |s: &dialcoord::service::Session| {
        (
            serde_json::to_string(&s.history).unwrap(),
            serde_json::to_string(&s.traces).unwrap(),
        )
    };
    assert_eq!(encode(&original), encode(&replayed));
    assert_eq!(encode(&original), encode(&restored));
}
