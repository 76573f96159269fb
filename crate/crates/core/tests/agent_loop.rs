use std::sync::atomic::{AtomicUsize, Ordering};

use lemma_miner_core::agent::{
    prove_agent, CheckOutcome, Checker, CheckerError, ErrorClass, Fixer,
};
use lemma_miner_core::extraction::{parse_lemma_script, CandidateLemma};
use lemma_miner_core::gateway::GatewayError;

/// Fails until the proof carries `accept_after` fixes.
struct ScriptedChecker {
    accept_after: Option<usize>,
    calls: AtomicUsize,
}

impl Checker for ScriptedChecker {
    fn check(&self, lemma: &CandidateLemma) -> Result<CheckOutcome, CheckerError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let fixes = lemma.proof.matches("(* fixed *)").count();
        match self.accept_after {
            Some(n) if fixes >= n => Ok(CheckOutcome::success()),
            _ => Ok(CheckOutcome::failure(
                "File \"./Check.v\", line 3, characters 7-14:\nError: The reference square was not found in the current environment.",
            )),
        }
    }
}

struct MarkingFixer {
    classes: std::sync::Mutex<Vec<ErrorClass>>,
}

impl Fixer for MarkingFixer {
    fn fix(
        &self,
        lemma: &CandidateLemma,
        _outcome: &CheckOutcome,
        class: ErrorClass,
    ) -> Result<CandidateLemma, GatewayError> {
        self.classes.lock().unwrap().push(class);
        Ok(CandidateLemma {
            proof: lemma.proof.replacen("Proof.", "Proof. (* fixed *)", 1),
            ..lemma.clone()
        })
    }
}

fn candidate() -> CandidateLemma {
    let parsed = parse_lemma_script(
        "```\nLemma power_1: forall x: A, power x 1 = x.\nProof. trivial. Qed.\n```",
        "monoid/Monoid.v/sqr",
    );
    parsed.candidates.into_iter().next().unwrap()
}

fn fixer() -> MarkingFixer {
    MarkingFixer {
        classes: Default::default(),
    }
}

#[test]
fn succeeds_on_third_check() {
    let checker = ScriptedChecker {
        accept_after: Some(2),
        calls: AtomicUsize::new(0),
    };
    let fixer = fixer();
    let run = prove_agent(&candidate(), 8, &checker, &fixer).unwrap();
    assert_eq!(run.rounds_used(), Some(3));
    assert_eq!(run.checks, 3);
    assert_eq!(run.fixes, 2);
    assert_eq!(checker.calls.load(Ordering::SeqCst), 3);
    assert_eq!(
        *fixer.classes.lock().unwrap(),
        [ErrorClass::UndefinedReference, ErrorClass::UndefinedReference]
    );
    let verified = run.verified.unwrap();
    assert_eq!(verified.name, "power_1");
    assert_eq!(verified.statement, candidate().statement);
}

#[test]
fn first_check_success_needs_no_fix() {
    let checker = ScriptedChecker {
        accept_after: Some(0),
        calls: AtomicUsize::new(0),
    };
    let fixer = fixer();
    let run = prove_agent(&candidate(), 8, &checker, &fixer).unwrap();
    assert_eq!(run.rounds_used(), Some(1));
    assert_eq!(run.fixes, 0);
    assert_eq!(run.verified.unwrap(), candidate());
}

#[test]
fn exhausts_round_limit_without_trailing_fix() {
    for limit in [1, 2, 8] {
        let checker = ScriptedChecker {
            accept_after: None,
            calls: AtomicUsize::new(0),
        };
        let fixer = fixer();
        let run = prove_agent(&candidate(), limit, &checker, &fixer).unwrap();
        assert!(run.verified.is_none());
        assert_eq!(run.rounds_used(), None);
        assert_eq!(checker.calls.load(Ordering::SeqCst), limit);
        assert_eq!(run.fixes, limit - 1);
    }
}

#[test]
fn fixer_errors_propagate() {
    struct Broken;
    impl Fixer for Broken {
        fn fix(&self, _: &CandidateLemma, _: &CheckOutcome, _: ErrorClass) -> Result<CandidateLemma, GatewayError> {
            Err(GatewayError::ReplayMiss { key: "abc".into() })
        }
    }
    let checker = ScriptedChecker {
        accept_after: None,
        calls: AtomicUsize::new(0),
    };
    let err = prove_agent(&candidate(), 8, &checker, &Broken).unwrap_err();
    assert!(err.to_string().contains("abc"), "{err}");
    assert_eq!(checker.calls.load(Ordering::SeqCst), 1);
}
