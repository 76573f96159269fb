mod common;

use lemma_miner_core::agent::CheckerCommand;
use lemma_miner_core::corpus::{count_tactics, sentence::closing_sentences};
use lemma_miner_core::evaluation::{
    aggregate, evaluate, inject_lemmas, make_folds, read_outcomes, render_percent, render_report,
    Condition, EvalConfig, EvalOutcome, EvalResult, InjectOptions, ReportFormat, HAMMER_HEADER,
    HAMMER_STUB,
};
use lemma_miner_core::extraction::parse_lemma_script;
use lemma_miner_core::store::{LemmaStore, VerifiedLemma};

const SQR: &str = "monoid/Monoid.v/sqr";
const COMMUTE: &str = "monoid/Monoid.v/power_commute_with_x";

fn lemmas(script: &str, source: &str, project: &str) -> Vec<VerifiedLemma> {
    parse_lemma_script(&format!("```\n{script}\n```"), source)
        .candidates
        .into_iter()
        .map(|c| VerifiedLemma::from_candidate(c, project, "m", 1))
        .collect()
}

fn power_lemmas() -> Vec<VerifiedLemma> {
    lemmas(
        "Section PowerLemmas.\nContext {A : Type} {dot : A -> A -> A} {one : A} {M : Monoid dot one}.\n\
         Lemma power_0: forall x: A, power x 0 = one.\nProof. trivial. Qed.\n\
         Lemma power_1: forall x: A, power x 1 = x.\nProof. intros x. simpl. apply one_right. Qed.\n\
         End PowerLemmas.",
        SQR,
        "monoid",
    )
}

#[test]
fn baseline_file_is_header_prefix_statement_stub() {
    let index = common::fixture("monoid");
    let thm = index.theorem(COMMUTE).unwrap();
    let file = inject_lemmas(thm, &[], &index, &InjectOptions::default());
    let prefix = index.preceding_text(thm);
    let mut expected = format!("{HAMMER_HEADER}\n{prefix}");
    if !expected.ends_with('\n') {
        expected.push('\n');
    }
    expected.push_str(&format!("{}\n{HAMMER_STUB}\n", thm.statement_text));
    expected.push_str(&closing_sentences(prefix));
    assert_eq!(file.text, expected);
    assert!(file.text.ends_with("Proof. hammer. Qed.\nEnd Power.\n"));
    assert!(file.injected.is_empty());
}

#[test]
fn lemmas_go_before_the_open_section() {
    let index = common::fixture("monoid");
    let thm = index.theorem(COMMUTE).unwrap();
    let baseline = inject_lemmas(thm, &[], &index, &InjectOptions::default()).text;
    let file = inject_lemmas(thm, &power_lemmas(), &index, &InjectOptions::default());
    let names: Vec<&str> = file.injected.iter().map(|(_, n)| n.as_str()).collect();
    assert_eq!(names, ["power_0", "power_1"]);

    let lemma_at = file.text.find("Lemma power_1").unwrap();
    assert!(lemma_at > file.text.find("Fixpoint power").unwrap());
    assert!(lemma_at < file.text.find("Section Power.").unwrap());
    assert!(lemma_at < file.text.find("Theorem power_commute_with_x").unwrap());
    assert_eq!(file.text.matches("End PowerLemmas.").count(), 1);

    // Removing the injected block gives back the baseline.
    let start = file.text.find("Section PowerLemmas.").unwrap();
    let end = file.text.find("End PowerLemmas.\n").unwrap() + "End PowerLemmas.\n".len();
    let stripped = format!("{}{}", &file.text[..start], &file.text[end..]);
    assert_eq!(stripped, baseline);
}

#[test]
fn colliding_names_are_renamed() {
    let index = common::fixture("monoid");
    let thm = index.theorem(COMMUTE).unwrap();
    let mut ls = lemmas("Lemma sqr: forall n: nat, n * n = n * n.\nProof. reflexivity. Qed.", SQR, "monoid");
    ls.extend(lemmas("Lemma power: True.\nProof. exact I. Qed.", SQR, "monoid"));
    let file = inject_lemmas(thm, &ls, &index, &InjectOptions::default());
    let names: Vec<&str> = file.injected.iter().map(|(_, n)| n.as_str()).collect();
    assert_eq!(names, ["sqr_s2r1", "power_s2r1"]);
    assert!(file.text.contains("Lemma sqr_s2r1: forall n: nat, n * n = n * n."));
    assert!(file.text.contains("Lemma power_s2r1: True."));
}

#[test]
fn lemmas_about_unreachable_definitions_are_skipped() {
    let index = common::fixture("corpus_small");
    let thm = index
        .theorems
        .iter()
        .find(|t| t.name == "swap_involutive")
        .unwrap();
    let mut ls = lemmas("Lemma d: forall n, double n = n + n.\nProof. reflexivity. Qed.", "x", "corpus_small");
    ls.extend(lemmas("Lemma s: forall p, px (swap p) = py p.\nProof. reflexivity. Qed.", "x", "corpus_small"));
    let file = inject_lemmas(thm, &ls, &index, &InjectOptions::default());
    assert_eq!(file.skipped, [ls[0].id.clone()]);
    assert_eq!(file.injected, [(ls[1].id.clone(), "s".to_string())]);
}

#[test]
fn enhanced_file_checks_with_real_rocq() {
    let Some(checker) = common::checker_or_skip("enhanced_file_checks_with_real_rocq") else {
        return;
    };
    let index = common::fixture("monoid");
    let thm = index.theorem(COMMUTE).unwrap();
    // Without the prover library: the injected lemmas must still be
    // well-formed in place.
    let opts = InjectOptions {
        header: String::new(),
        stub: "Proof. intros x n. rewrite <- power_S. induction n as [| p IH]; simpl. \
               rewrite (@one_right _ _ _ M), (@one_left _ _ _ M); reflexivity. \
               rewrite <- (@dot_assoc _ _ _ M), <- IH; reflexivity. Qed."
            .into(),
    };
    let mut ls = power_lemmas();
    ls.extend(lemmas(
        "Section PowerLemmas.\nContext {A : Type} {dot : A -> A -> A} {one : A} {M : Monoid dot one}.\n\
         Lemma power_S: forall (x: A) (n: nat), power x (S n) = dot x (power x n).\nProof. trivial. Qed.\n\
         End PowerLemmas.",
        SQR,
        "monoid",
    ));
    let file = inject_lemmas(thm, &ls, &index, &opts);
    let sandbox = tempfile::tempdir().unwrap();
    let run = lemma_miner_core::evaluation::run_hammer(
        &checker,
        &file.text,
        sandbox.path(),
        std::time::Duration::from_secs(120),
    )
    .unwrap();
    assert_eq!(run.result, EvalResult::Proved, "{}\n{}", file.text, run.output);
}

/// `n` outcomes for one condition: `proved` of them proved, with
/// `tactics` spread over the proved ones.
fn synthetic(project: &str, condition: Condition, n: u64, proved: u64, tactics: u64) -> Vec<EvalOutcome> {
    (0..n)
        .map(|i| {
            let share = if i < proved {
                tactics / proved + u64::from(i < tactics % proved)
            } else {
                7
            };
            EvalOutcome {
                theorem_id: format!("{project}/F.v/t{i}"),
                condition,
                result: if i < proved { EvalResult::Proved } else { EvalResult::Failed },
                wall_ms: 0,
                tactic_count: share as usize,
                error: None,
            }
        })
        .collect()
}

fn table(rows: &[(&str, u64, u64, u64, u64, u64)]) -> Vec<EvalOutcome> {
    rows.iter()
        .flat_map(|&(p, n, bp, ep, bt, et)| {
            let mut v = synthetic(p, Condition::Baseline, n, bp, bt);
            v.extend(synthetic(p, Condition::Enhanced, n, ep, et));
            v
        })
        .collect()
}

/// Decimal oracle: `100 * (e - b) / b` to two places, ties away from
/// zero, by truncating to three places and rounding on the last digit.
fn oracle(b: u64, e: u64) -> String {
    let (sign, diff) = if e >= b { ('+', e - b) } else { ('-', b - e) };
    let thousandths = u128::from(diff) * 100_000 / u128::from(b);
    let hundredths = thousandths / 10 + u128::from(thousandths % 10 >= 5);
    format!("{sign}{}.{:02}%", hundredths / 100, hundredths % 100)
}

const TABLE_3: &[(&str, u64, u64, u64, u64, u64)] = &[
    ("compcert", 1000, 293, 345, 1065, 1436),
    ("ext-lib", 187, 78, 82, 265, 301),
    ("coq-art", 947, 446, 501, 1160, 1416),
    ("vfa", 260, 63, 70, 133, 159),
];

const TABLE_4: &[(&str, u64, u64, u64, u64, u64)] = &[
    ("compcert", 1000, 293, 332, 1065, 1320),
    ("ext-lib", 187, 78, 82, 265, 294),
    ("coq-art", 947, 446, 504, 1160, 1377),
    ("vfa", 260, 63, 69, 133, 146),
];

#[test]
fn report_totals_from_synthetic_outcomes() {
    let r3 = aggregate(&table(TABLE_3), &[]);
    assert_eq!((r3.total.baseline_proved, r3.total.enhanced_proved), (880, 998));
    assert_eq!((r3.total.baseline_tactics, r3.total.enhanced_tactics), (2623, 3312));
    assert_eq!(render_percent(r3.total.proved_improvement()), "+13.41%");
    assert_eq!(render_percent(r3.total.tactics_improvement()), "+26.27%");

    let r4 = aggregate(&table(TABLE_4), &[]);
    assert_eq!((r4.total.enhanced_proved, r4.total.enhanced_tactics), (987, 3137));
    assert_eq!(render_percent(r4.total.proved_improvement()), "+12.16%");
    assert_eq!(render_percent(r4.total.tactics_improvement()), "+19.60%");
}

#[test]
fn report_rows_match_exact_arithmetic() {
    for t in [TABLE_3, TABLE_4] {
        let projects: Vec<String> = t.iter().map(|r| r.0.to_string()).collect();
        let report = aggregate(&table(t), &projects);
        for (row, &(p, _, bp, ep, bt, et)) in report.rows.iter().zip(t) {
            assert_eq!(row.project, p);
            assert_eq!(render_percent(row.proved_improvement()), oracle(bp, ep), "{p}");
            assert_eq!(render_percent(row.tactics_improvement()), oracle(bt, et), "{p}");
        }
    }
    let r3 = aggregate(&table(TABLE_3), &[]);
    let by = |p: &str| r3.rows.iter().find(|r| r.project == p).unwrap().clone();
    assert_eq!(render_percent(by("compcert").proved_improvement()), "+17.75%");
    assert_eq!(render_percent(by("compcert").tactics_improvement()), "+34.84%");
    assert_eq!(render_percent(by("ext-lib").proved_improvement()), "+5.13%");
    assert_eq!(render_percent(by("ext-lib").tactics_improvement()), "+13.58%");
    assert_eq!(render_percent(by("coq-art").proved_improvement()), "+12.33%");
    assert_eq!(render_percent(by("vfa").proved_improvement()), "+11.11%");
    assert_eq!(render_percent(by("vfa").tactics_improvement()), "+19.55%");
    // 256/1160 = 22.0689..%
    assert_eq!(render_percent(by("coq-art").tactics_improvement()), "+22.07%");
}

#[test]
fn report_renders_markdown_and_csv() {
    let report = aggregate(&table(TABLE_3), &["vfa".to_string()]);
    let md = render_report(&report, ReportFormat::Markdown);
    assert!(md.lines().nth(2).unwrap().starts_with("| vfa | 63 | 70 | +11.11% | 133 | 159 | +19.55% |"));
    assert!(md.trim_end().ends_with("| Total | 880 | 998 | +13.41% | 2623 | 3312 | +26.27% |"));
    let csv = render_report(&report, ReportFormat::Csv);
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv.lines().last().unwrap(), "Total,880,998,+13.41%,2623,3312,+26.27%");
}

fn fake_prover() -> CheckerCommand {
    CheckerCommand::new("sh").with_args(
        ["-c", "grep -q 'Lemma power_1' \"$1\"", "prover"]
            .into_iter()
            .map(String::from),
    )
}

#[test]
fn evaluate_uses_only_other_fold_lemmas_and_resumes() {
    let index = common::fixture("monoid");
    let plan = make_folds(&[SQR.to_string(), COMMUTE.to_string()], 2, 0).unwrap();
    let store = LemmaStore::in_memory();
    for l in power_lemmas() {
        store.add(l).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let outcomes_path = dir.path().join("outcomes.jsonl");
    let mut cfg = EvalConfig::new(fake_prover(), dir.path().join("sandbox"));
    cfg.jobs = 2;
    cfg.outcomes_path = Some(outcomes_path.clone());
    cfg.files_dir = Some(dir.path().join("files"));

    let run = evaluate(std::slice::from_ref(&index), &store, &plan, &cfg).unwrap();
    let result = |id: &str, c: Condition| {
        run.outcomes
            .iter()
            .find(|o| o.theorem_id == id && o.condition == c)
            .unwrap()
            .result
    };
    assert_eq!(result(COMMUTE, Condition::Baseline), EvalResult::Failed);
    assert_eq!(result(COMMUTE, Condition::Enhanced), EvalResult::Proved);
    assert_eq!(result(SQR, Condition::Enhanced), EvalResult::Failed);
    assert!(run.injections[SQR].is_empty());
    assert_eq!(run.injections[COMMUTE].len(), 2);
    assert!(run.injections[COMMUTE].iter().all(|(_, src)| src == SQR));
    assert!(run.sandbox_errors.is_empty());

    let row = &run.report.rows[0];
    assert_eq!((row.baseline_proved, row.enhanced_proved), (0, 1));
    let commute = index.theorem(COMMUTE).unwrap();
    assert_eq!(row.enhanced_tactics, count_tactics(commute) as u64);
    assert_eq!(read_outcomes(&outcomes_path).unwrap().len(), 4);
    assert_eq!(std::fs::read_dir(dir.path().join("files")).unwrap().count(), 4);

    // A second run finds everything recorded and runs nothing.
    cfg.command = CheckerCommand::new("/nonexistent/prover");
    let again = evaluate(std::slice::from_ref(&index), &store, &plan, &cfg).unwrap();
    assert_eq!(again.outcomes, run.outcomes);
    assert_eq!(read_outcomes(&outcomes_path).unwrap().len(), 4);
}

#[test]
fn missing_prover_is_reported_per_outcome() {
    let index = common::fixture("monoid");
    let plan = make_folds(&[SQR.to_string(), COMMUTE.to_string()], 2, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = EvalConfig::new(CheckerCommand::new("/nonexistent/prover"), dir.path().to_path_buf());
    let run = evaluate(&[index], &LemmaStore::in_memory(), &plan, &cfg).unwrap();
    assert_eq!(run.sandbox_errors.len(), 4);
    assert!(run.outcomes.iter().all(|o| o.result == EvalResult::Failed));
}
