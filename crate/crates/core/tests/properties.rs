mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vismc::backend::wire::{WireResponse, WireSuccess};
use vismc::backend::{OracleBackend, SceneCorpus, SceneDocument, SceneObject, SceneRelation};
use vismc::model::{BBox, NounPhrase, Outcome, QueryText, TruthScore, Triplet};
use vismc::parser::parse_query;
use vismc::ranking::{rerank, BaselineRanking, ImageScore};
use vismc::routine::RoutineEntry;
use vismc::synth::{synthesize, PredicateLexicon};
use vismc::vm::{execute, execute_entry, replay_evidence, VmConfig};

const NOUNS: &[&str] = &["cat", "dog", "table", "chair", "lamp", "car", "sign", "tree"];
const COLORS: &[&str] = &["red", "blue", "green"];
const PREDICATES: &[&str] = &[
    "on", "under", "above", "below", "near", "left of", "right of", "in", "behind", "with", "holding", "chasing",
];

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let x0: f64 = rng.random_range(0.0..0.9);
    let y0: f64 = rng.random_range(0.0..0.9);
    let x1 = (x0 + rng.random_range(0.05..0.5)).min(1.0);
    let y1 = (y0 + rng.random_range(0.05..0.5)).min(1.0);
    BBox::new(x0, y0, x1, y1).unwrap()
}

fn random_scene(rng: &mut ChaCha8Rng, id: usize) -> SceneDocument {
    let n = rng.random_range(1..=6);
    let objects: Vec<SceneObject> = (0..n)
        .map(|i| SceneObject {
            id: i as u32 + 1,
            category: NOUNS[rng.random_range(0..NOUNS.len())].to_string(),
            synonyms: Vec::new(),
            bbox: random_box(rng),
            attributes: if rng.random_bool(0.5) { vec![COLORS[rng.random_range(0..COLORS.len())].to_string()] } else { Vec::new() },
            text: rng.random_bool(0.2).then(|| "OPEN 24 hours".to_string()),
        })
        .collect();
    let relations = (0..rng.random_range(0..=2))
        .map(|_| SceneRelation {
            subject_id: rng.random_range(1..=n) as u32,
            predicate: "chasing".into(),
            object_id: rng.random_range(1..=n) as u32,
        })
        .collect();
    SceneDocument {
        image_id: format!("img{id}"),
        width: 640,
        height: 480,
        objects,
        relations,
    }
}

fn random_np(rng: &mut ChaCha8Rng) -> NounPhrase {
    let mut np = NounPhrase::head(NOUNS[rng.random_range(0..NOUNS.len())]);
    if rng.random_bool(0.3) {
        np = np.with_attributes([COLORS[rng.random_range(0..COLORS.len())]]);
    }
    if rng.random_bool(0.2) {
        np = np.with_count(rng.random_range(1..=3));
    }
    np
}

fn random_triplet(rng: &mut ChaCha8Rng) -> Triplet {
    match rng.random_range(0..10) {
        0 => Triplet::new(0, random_np(rng), "reads", NounPhrase::literal("open")),
        1 => Triplet::new(0, NounPhrase::head(NOUNS[rng.random_range(0..NOUNS.len())]), "is", NounPhrase::head(COLORS[rng.random_range(0..3)])),
        _ => Triplet::new(0, random_np(rng), PREDICATES[rng.random_range(0..PREDICATES.len())], random_np(rng)),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    /// The VM agrees with the brute-force evaluator on random scenes, not
    /// just the bundled ones, and every satisfied verdict replays.
    #[test]
    fn vm_matches_brute_force_on_random_scenes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenes: Vec<SceneDocument> = (0..4).map(|i| random_scene(&mut rng, i)).collect();
        let corpus = SceneCorpus::new(scenes.clone()).unwrap();
        let backend = OracleBackend::new(corpus);
        let cfg = VmConfig::default();
        let lex = PredicateLexicon::default();
        for _ in 0..5 {
            let t = random_triplet(&mut rng);
            let program = synthesize(&t, &lex).unwrap();
            for s in &scenes {
                let v = execute(&program, &s.image_id, &backend, &cfg);
                prop_assert_eq!(v.outcome == Outcome::Satisfied, common::satisfies(s, &t, &cfg), "{} on {:?}", t, s);
                prop_assert!(v.is_well_formed());
                if v.outcome == Outcome::Satisfied {
                    prop_assert!(v.evidence.iter().all(|e| replay_evidence(e, &cfg)));
                }
            }
        }
    }

    #[test]
    fn execution_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, 0);
        let backend = OracleBackend::new(SceneCorpus::new([scene]).unwrap());
        let entry = RoutineEntry::Program(synthesize(&random_triplet(&mut rng), &PredicateLexicon::default()).unwrap());
        let cfg = VmConfig::default();
        prop_assert_eq!(execute_entry(&entry, "img0", &backend, &cfg), execute_entry(&entry, "img0", &backend, &cfg));
    }

    #[test]
    fn simple_queries_give_one_triplet(
        det in prop::sample::select(vec!["a", "the", ""]),
        color in prop::sample::select(COLORS.to_vec()),
        s in prop::sample::select(NOUNS.to_vec()),
        p in prop::sample::select(vec!["on", "under", "near", "above", "behind", "next to"]),
        o in prop::sample::select(NOUNS.to_vec()),
    ) {
        let text = format!("{det} {color} {s} {p} a {o}");
        let q = QueryText::new(text.trim()).unwrap();
        let spec = parse_query(&q).unwrap();
        prop_assert_eq!(spec.triplets.len(), 1);
        let t = &spec.triplets[0];
        prop_assert_eq!(&t.subject.head, s);
        prop_assert_eq!(&t.subject.attributes, &vec![color.to_string()]);
        prop_assert_eq!(&t.predicate, p);
        prop_assert_eq!(&t.object.head, o);
        prop_assert_eq!(parse_query(&q).unwrap(), spec);
    }

    #[test]
    fn rerank_permutes_and_orders(seed in any::<u64>(), k in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids: Vec<String> = (0..k).map(|i| format!("i{i}")).collect();
        ids.shuffle(&mut rng);
        let base = BaselineRanking::new("q", ids.clone()).unwrap();
        let scores: BTreeMap<String, ImageScore> = ids
            .iter()
            .map(|id| (id.clone(), TruthScore::new(rng.random_range(0..=3), 3).unwrap().into()))
            .collect();
        let out = rerank(&base, &scores).unwrap();
        let mut got: Vec<String> = out.entries.iter().map(|e| e.image_id.clone()).collect();
        got.sort();
        let mut want = ids.clone();
        want.sort();
        prop_assert_eq!(got, want);
        for w in out.entries.windows(2) {
            prop_assert!(w[0].rerank_score >= w[1].rerank_score);
            if w[0].rerank_score == w[1].rerank_score {
                prop_assert!(w[0].baseline_rank < w[1].baseline_rank);
            }
        }
        // a full score at the top of the baseline always stays first
        if scores[&ids[0]].score.is_full() {
            prop_assert_eq!(&out.entries[0].image_id, &ids[0]);
        }
    }

    #[test]
    fn wire_success_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let results: Vec<Vec<BBox>> = (0..rng.random_range(1..4))
            .map(|_| (0..rng.random_range(0..4)).map(|_| random_box(&mut rng).with_score(rng.random_range(0.0..=1.0)).with_label("x")).collect())
            .collect();
        let msg = WireResponse::Success(WireSuccess { results, texts: vec!["t".into()], model: "m".into(), latency_ms: 3 });
        prop_assert_eq!(WireResponse::parse(msg.to_json().as_bytes()).unwrap(), msg);
    }
}

#[test]
fn bundled_queries_parse_deterministically() {
    for q in common::queries() {
        let text = QueryText::new(&q.query).unwrap();
        let a = parse_query(&text).unwrap();
        let b = parse_query(&text).unwrap();
        assert_eq!(a, b, "{}", q.query_id);
        assert!(!a.triplets.is_empty());
    }
}
