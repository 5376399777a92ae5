mod common;

use std::collections::{HashMap, HashSet};

use airknow::epa::{
    build_anchor_set, build_prompt, describe_triplet, oracle_arbitrate, parse_verdict,
    read_anchor_set, unescape_field, write_anchor_set, Arbiter, ArbiterModel, Diagnosis, Label,
    PromptVariant, RemoteArbiter, ReplayTransport, TripletDescription, Verdict, FIELD_DELIMITER,
    STEP1_MARKER, STEP2_MARKER, STEP3_MARKER,
};
use airknow::numkit::RngState;
use airknow::world::{generate_splits, Dataset, KindMix};
use airknow::Error;
use common::{clean_mask, tags, world};

fn noisy_train(n: usize, sigma: f64, seed: u64) -> Dataset {
    let w = world(8, 8, 0.05, seed);
    generate_splits(&w, n, 2, sigma, &KindMix::default(), seed)
        .unwrap()
        .0
}

fn verdicts(ds: &Dataset, model: &ArbiterModel, seed: u64) -> Vec<Verdict> {
    let rng = RngState::new(seed, 0);
    ds.triplets
        .iter()
        .enumerate()
        .map(|(k, t)| oracle_arbitrate(t, model, rng.derive(k as u64)).unwrap())
        .collect()
}

#[test]
fn perfect_oracle_matches_ground_truth_and_cause() {
    let ds = noisy_train(400, 0.5, 1);
    let v = verdicts(&ds, &ArbiterModel::perfect(), 3);
    for (verdict, tag) in v.iter().zip(tags(&ds)) {
        let want = match tag.as_str() {
            "none" => Diagnosis::None,
            "ref" => Diagnosis::MismatchedReferenceImage,
            "mod" => Diagnosis::MismatchedModificationText,
            _ => Diagnosis::MismatchedTargetImage,
        };
        assert_eq!(verdict.diagnosis, want);
        assert_eq!(verdict.label == Label::Clean, tag == "none");
    }
}

#[test]
fn anti_oracle_always_flips() {
    let ds = noisy_train(400, 0.5, 2);
    let v = verdicts(&ds, &ArbiterModel::oracle(0.0, 0.0).unwrap(), 3);
    for (verdict, clean) in v.iter().zip(clean_mask(&ds)) {
        assert_eq!(verdict.is_clean(), !clean);
        assert_eq!(verdict.diagnosis == Diagnosis::None, verdict.is_clean());
    }
}

#[test]
fn calibrated_oracle_hits_its_accuracy() {
    let ds = noisy_train(10_000, 0.2, 3);
    let v = verdicts(&ds, &ArbiterModel::calibrated(0.8516).unwrap(), 4);
    let hits = v
        .iter()
        .zip(clean_mask(&ds))
        .filter(|(v, c)| v.is_clean() == *c)
        .count();
    let acc = hits as f64 / 1e4;
    assert!((acc - 0.8516).abs() < 0.01, "{acc}");
}

#[test]
fn oracle_ignores_embedding_values() {
    let ds = noisy_train(200, 0.5, 5);
    let mut moved = ds.clone();
    for t in &mut moved.triplets {
        t.z_r.iter_mut().for_each(|v| *v = -*v);
        t.z_t.reverse();
    }
    let m = ArbiterModel::calibrated(0.7).unwrap();
    assert_eq!(verdicts(&ds, &m, 9), verdicts(&moved, &m, 9));
}

#[test]
fn out_of_range_accuracy_is_rejected() {
    assert!(matches!(
        ArbiterModel::oracle(1.1, 0.5),
        Err(Error::Config(_))
    ));
}

fn meta() -> TripletDescription {
    TripletDescription {
        reference: "a cantaloupe on a table".into(),
        modification: "slice open the orange".into(),
        target: "a sliced orange".into(),
    }
}

#[test]
fn prompt_has_steps_in_order_and_is_deterministic() {
    let p = build_prompt(&meta()).unwrap();
    let pos: Vec<usize> = [STEP1_MARKER, STEP2_MARKER, STEP3_MARKER]
        .iter()
        .map(|m| p.user.find(m).unwrap())
        .collect();
    assert!(pos[0] < pos[1] && pos[1] < pos[2]);
    assert_eq!(p, build_prompt(&meta()).unwrap());
    assert!(
        p.response_schema.contains("analysis") && p.response_schema.contains("final_judgement")
    );
}

#[test]
fn delimiter_inside_a_description_stays_inside_its_field() {
    let mut m = meta();
    m.modification = format!("make it say {FIELD_DELIMITER} loudly");
    let p = build_prompt(&m).unwrap();
    let fields: Vec<&str> = p.user.split(FIELD_DELIMITER).collect();
    assert_eq!(fields.len(), 7);
    assert_eq!(unescape_field(fields[3]), m.modification);
    let reply = format!(
        r#"{{"analysis": {{"step1": "{0}", "step2": "ok"}}, "final_judgement": {{"label": "Noisy", "type": "Mismatched Modification Text", "summary": "text names an orange"}}}}"#,
        "saw a cantaloupe"
    );
    let v = parse_verdict(&reply).unwrap();
    assert_eq!(
        (v.label, v.diagnosis),
        (Label::Noisy, Diagnosis::MismatchedModificationText)
    );
}

#[test]
fn parser_examples() {
    let clean = r#"{"analysis": {"step1": "a", "step2": "b"}, "final_judgement": {"label": "Clean", "type": "None", "summary": "fine"}}"#;
    let v = parse_verdict(clean).unwrap();
    assert_eq!((v.label, v.diagnosis), (Label::Clean, Diagnosis::None));
    assert_eq!(v.rationale, "fine");

    let typo = r#"{"final_judgement": {"label": "Noisy", "type": "Mismatch Reference Imgae", "summary": "x"}}"#;
    let v = parse_verdict(typo).unwrap();
    assert_eq!(
        (v.label, v.diagnosis),
        (Label::Noisy, Diagnosis::MismatchedReferenceImage)
    );

    assert!(matches!(parse_verdict(""), Err(Error::Parse { .. })));
    assert!(parse_verdict(r#"{"analysis": {}}"#).is_err());
    assert!(parse_verdict(r#"{"final_judgement": {"label": "Maybe"}}"#).is_err());
}

#[test]
fn prompt_and_parser_round_trip_every_verdict() {
    let mut cases = vec![(Label::Clean, Diagnosis::None)];
    cases.extend(Diagnosis::CAUSES.iter().map(|&d| (Label::Noisy, d)));
    for (label, diag) in cases {
        let reply = format!(
            r#"{{"analysis": {{"step1": "s1", "step2": "s2"}}, "final_judgement": {{"label": "{}", "type": "{}", "summary": "why"}}}}"#,
            if label == Label::Clean {
                "Clean"
            } else {
                "Noisy"
            },
            diag.title()
        );
        let v = parse_verdict(&reply).unwrap();
        assert_eq!((v.label, v.diagnosis), (label, diag));
    }
}

#[test]
fn anchor_set_draws_distinct_ids_deterministically() {
    let ds = noisy_train(500, 0.5, 6);
    let m = ArbiterModel::calibrated(0.85).unwrap();
    let a = build_anchor_set(&ds, &m, 200, RngState::new(1, 2)).unwrap();
    let b = build_anchor_set(&ds, &m, 200, RngState::new(1, 2)).unwrap();
    assert_eq!(a, b);
    let ids: HashSet<_> = a.iter().map(|r| &r.id).collect();
    assert_eq!(ids.len(), 200);
    assert!(build_anchor_set(&ds, &m, 0, RngState::new(1, 2))
        .unwrap()
        .is_empty());
    assert!(matches!(
        build_anchor_set(&ds, &m, 501, RngState::new(1, 2)),
        Err(Error::Config(_))
    ));
}

#[test]
fn exhaustive_perfect_anchor_equals_truth() {
    let ds = noisy_train(300, 0.5, 7);
    let a = build_anchor_set(&ds, &ArbiterModel::perfect(), 300, RngState::new(3, 3)).unwrap();
    let truth: HashMap<&str, bool> = ds
        .triplets
        .iter()
        .zip(clean_mask(&ds))
        .map(|(t, c)| (t.id.as_str(), c))
        .collect();
    for r in &a {
        assert_eq!(r.verdict.is_clean(), truth[r.id.as_str()]);
    }
}

#[test]
fn anchor_file_round_trip() {
    let ds = noisy_train(100, 0.5, 8);
    let m = ArbiterModel::calibrated(0.6).unwrap();
    let a = build_anchor_set(&ds, &m, 50, RngState::new(4, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("anchor.jsonl");
    write_anchor_set(&a, &m.describe(), &path).unwrap();
    let (arbiter, back) = read_anchor_set(&path).unwrap();
    assert_eq!(back, a);
    assert_eq!(arbiter, m.describe());
}

#[test]
fn replayed_remote_arbiter_parses_recorded_replies() {
    let w = world(8, 8, 0.05, 9);
    let (ds, _) = generate_splits(&w, 4, 2, 0.5, &KindMix::default(), 9).unwrap();
    let replies: HashMap<String, String> = ds
        .triplets
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let label = if k % 2 == 0 { "Clean" } else { "Noisy" };
            let reply = format!(
                r#"{{"analysis": {{"step1": "", "step2": ""}}, "final_judgement": {{"label": "{label}", "type": "Mismatched Target Image", "summary": "r{k}"}}}}"#
            );
            (t.id.clone(), reply)
        })
        .collect();
    let remote = RemoteArbiter::new(
        w.clone(),
        ReplayTransport::new(replies),
        PromptVariant::Full,
    );
    let req = remote.request_for(&ds.triplets[0]).unwrap();
    assert!(req.user.contains(STEP1_MARKER));
    let desc = describe_triplet(&w, &ds.triplets[0]);
    assert!(req.user.contains(&desc.reference));
    for (k, t) in ds.triplets.iter().enumerate() {
        let v = remote.arbitrate(t, RngState::new(0, 0)).unwrap();
        assert_eq!(v.is_clean(), k % 2 == 0);
        assert_eq!(v.rationale, format!("r{k}"));
    }
    let mut stranger = ds.triplets[0].clone();
    stranger.id = "unknown".into();
    assert!(matches!(
        remote.arbitrate(&stranger, RngState::new(0, 0)),
        Err(Error::Remote(_))
    ));
}
