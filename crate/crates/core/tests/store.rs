mod common;

use lemma_miner_core::evaluation::make_folds;
use lemma_miner_core::extraction::parse_lemma_script;
use lemma_miner_core::store::{
    flag_redundant, normalized_hash, query_training, union_stores, AddResult, LemmaStore,
    StoreError, VerifiedLemma,
};

const SQR: &str = "monoid/Monoid.v/sqr";
const COMMUTE: &str = "monoid/Monoid.v/power_commute_with_x";

fn lemma(text: &str, source: &str, model: &str) -> VerifiedLemma {
    let script = format!("```\n{text}\nProof. trivial. Qed.\n```");
    let candidate = parse_lemma_script(&script, source).candidates.remove(0);
    VerifiedLemma::from_candidate(candidate, "monoid", model, 1)
}

fn power_1(source: &str) -> VerifiedLemma {
    lemma("Lemma power_1: forall x: A, power x 1 = x.", source, "m1")
}

#[test]
fn duplicates_are_detected_after_normalization() {
    let store = LemmaStore::in_memory();
    assert_eq!(store.add(power_1(SQR)).unwrap(), AddResult::Added);
    assert_eq!(store.add(power_1(COMMUTE)).unwrap(), AddResult::Duplicate);
    // Another name, keyword, and spacing: same statement.
    let renamed = lemma("Theorem pow_one : forall x: A,\n   power x 1 = x.", COMMUTE, "m2");
    assert_eq!(store.add(renamed).unwrap(), AddResult::Duplicate);
    // A different binder type is a different statement.
    let other = lemma("Lemma power_1: forall x: B, power x 1 = x.", SQR, "m1");
    assert_eq!(store.add(other).unwrap(), AddResult::Added);
    assert_eq!(store.len(), 2);

    let first = &store.snapshot()[0];
    assert_eq!(first.source_theorem_id, SQR);
    assert_eq!(first.id, format!("lem-{}", &first.normalized_hash[..16]));
    assert_eq!(store.links().len(), 2);
    assert_eq!(store.models_for(&first.normalized_hash), ["m1", "m2"]);
}

#[test]
fn hash_ignores_comments_and_layout() {
    assert_eq!(
        normalized_hash("Lemma a: forall n, n + 0 = n."),
        normalized_hash("Lemma  b (* note *) :\n forall n,   n + 0 = n.")
    );
    assert_ne!(
        normalized_hash("Lemma a: forall n, n + 0 = n."),
        normalized_hash("Lemma a: forall n, 0 + n = n.")
    );
}

#[test]
fn persisted_store_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lemmas.jsonl");
    {
        let store = LemmaStore::open(&path).unwrap();
        store.add(power_1(SQR)).unwrap();
        store.add(power_1(COMMUTE)).unwrap();
        store
            .add(lemma("Lemma power_0: forall x: A, power x 0 = one.", SQR, "m1"))
            .unwrap();
    }
    let reopened = LemmaStore::open(&path).unwrap();
    assert_eq!(reopened.len(), 2);
    assert_eq!(reopened.links().len(), 1);
    assert_eq!(reopened.add(power_1(SQR)).unwrap(), AddResult::Duplicate);

    let saved = dir.path().join("copy.jsonl");
    reopened.save(&saved).unwrap();
    let loaded = LemmaStore::load(&saved).unwrap();
    assert_eq!(loaded.snapshot(), reopened.snapshot());
    assert_eq!(loaded.links(), reopened.links());
}

#[test]
fn union_keeps_first_origin_and_links() {
    let a = LemmaStore::in_memory();
    a.add(power_1(SQR)).unwrap();
    let b = LemmaStore::in_memory();
    b.add(power_1(COMMUTE)).unwrap();
    b.add(lemma("Lemma power_0: forall x: A, power x 0 = one.", COMMUTE, "m1"))
        .unwrap();
    let u = union_stores(&a, &b);
    assert_eq!(u.len(), 2);
    assert_eq!(u.snapshot()[0].source_theorem_id, SQR);
    assert_eq!(u.links().len(), 1);
    assert_eq!(u.links()[0].source_theorem_id, COMMUTE);
}

#[test]
fn training_query_respects_folds() {
    let ids: Vec<String> = vec![SQR.into(), COMMUTE.into()];
    let plan = make_folds(&ids, 2, 0).unwrap();
    let sqr_fold = plan.fold_of(SQR).unwrap();
    let commute_fold = plan.fold_of(COMMUTE).unwrap();
    assert_ne!(sqr_fold, commute_fold);

    let store = LemmaStore::in_memory();
    store
        .add(lemma("Lemma power_0: forall x: A, power x 0 = one.", SQR, "m1"))
        .unwrap();
    assert_eq!(query_training(&store, &plan, commute_fold).unwrap().len(), 1);
    assert!(query_training(&store, &plan, sqr_fold).unwrap().is_empty());

    // Mined from both: usable for either fold, tagged with the training origin.
    store.add(power_1(SQR)).unwrap();
    store.add(power_1(COMMUTE)).unwrap();
    let for_sqr = query_training(&store, &plan, sqr_fold).unwrap();
    assert_eq!(for_sqr.len(), 1);
    assert_eq!(for_sqr[0].name, "power_1");
    assert_eq!(for_sqr[0].source_theorem_id, COMMUTE);

    let stray = LemmaStore::in_memory();
    stray.add(power_1("monoid/Monoid.v/missing")).unwrap();
    assert!(matches!(
        query_training(&stray, &plan, 0),
        Err(StoreError::UnknownSourceTheorem { .. })
    ));
}

#[test]
fn redundant_lemmas_restate_definitions() {
    let index = common::fixture("monoid");
    let power_0 = lemma("Lemma power_0: forall x: A, power x 0 = one.", SQR, "m1");
    let power_s = lemma(
        "Lemma power_S: forall (x: A) (n: nat),\n    power x (S n) = dot x (power x n).",
        SQR,
        "m1",
    );
    let power_s_renamed = lemma(
        "Lemma power_S': forall (y: A) (k: nat), power y (S k) = dot y (power y k).",
        SQR,
        "m1",
    );
    assert!(flag_redundant(&power_0, &index));
    assert!(flag_redundant(&power_s, &index));
    assert!(flag_redundant(&power_s_renamed, &index));
    assert!(!flag_redundant(&power_1(SQR), &index));
    let commute = lemma(
        "Lemma c: forall (x: A) (n: nat), dot x (power x n) = dot (power x n) x.",
        SQR,
        "m1",
    );
    assert!(!flag_redundant(&commute, &index));
}
