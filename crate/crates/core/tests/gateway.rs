use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use lemma_miner_core::gateway::{
    transcript_key, Cassette, ChatMessage, ChatTranscript, Gateway, GatewayError,
    GenerationParams, Mode, RetryPolicy, Role, StageTag,
};

fn transcript(user: &str) -> ChatTranscript {
    let mut t = ChatTranscript::with_system("You are terse.");
    t.push_user(user, StageTag::NlProof);
    t
}

fn echo() -> Arc<dyn lemma_miner_core::gateway::Provider> {
    Arc::new(|t: &ChatTranscript, p: &GenerationParams| {
        Ok(format!("{} says: {}", p.model_id, t.last().unwrap().content))
    })
}

#[test]
fn record_then_replay_is_identical_and_offline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let params = GenerationParams::new("m1");
    let recorder = Gateway::builder(Mode::Record)
        .provider(echo())
        .cassette(Cassette::open_append(&path).unwrap())
        .build();
    let recorded = recorder.chat(&transcript("prove it"), &params).unwrap();
    assert_eq!(recorded.role, Role::Assistant);
    assert_eq!(recorder.live_calls(), 1);
    // A second record of the same request reuses the entry.
    recorder.chat(&transcript("prove it"), &params).unwrap();
    assert_eq!(recorder.live_calls(), 1);
    drop(recorder);

    let first = Gateway::replay(Cassette::load(&path).unwrap());
    let second = Gateway::replay(Cassette::load(&path).unwrap());
    let a = first.chat(&transcript("prove it  \n"), &params).unwrap();
    let b = second.chat(&transcript("prove it"), &params).unwrap();
    assert_eq!(a.content, recorded.content);
    assert_eq!(a, b);
    assert_eq!(first.live_calls(), 0);
}

#[test]
fn replay_miss_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    std::fs::write(&path, "").unwrap();
    let gateway = Gateway::replay(Cassette::load(&path).unwrap());
    let t = transcript("never recorded");
    let expected = transcript_key("m1", &t);
    match gateway.chat(&t, &GenerationParams::new("m1")) {
        Err(GatewayError::ReplayMiss { key }) => assert_eq!(key, expected),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(gateway.replay_misses(), [expected]);
}

#[test]
fn transcripts_are_validated() {
    let gateway = Gateway::builder(Mode::Live).provider(echo()).build();
    let params = GenerationParams::new("m");
    let mut ends_with_assistant = transcript("q");
    ends_with_assistant.push(ChatMessage::new(Role::Assistant, "a"));
    assert!(matches!(
        gateway.chat(&ends_with_assistant, &params),
        Err(GatewayError::InvalidTranscript(_))
    ));
    let no_system = ChatTranscript {
        messages: vec![ChatMessage::new(Role::User, "q")],
        ..Default::default()
    };
    assert!(gateway.chat(&no_system, &params).is_err());
    let mut doubled = transcript("q");
    doubled.push_user("again", StageTag::Fix);
    assert!(gateway.chat(&doubled, &params).is_err());
    assert!(gateway.chat(&transcript(""), &params).is_err());
}

#[test]
fn budget_ceiling_is_never_crossed() {
    let mut params = GenerationParams::new("m");
    params.max_output_tokens = 10;
    let gateway = Gateway::builder(Mode::Live)
        .provider(echo())
        .token_ceiling(Some(60))
        .build();
    let mut ok = 0;
    loop {
        match gateway.chat(&transcript("twelve bytes"), &params) {
            Ok(_) => ok += 1,
            Err(GatewayError::BudgetExceeded { used, requested, ceiling }) => {
                assert!(used + requested > ceiling);
                break;
            }
            Err(e) => panic!("{e}"),
        }
        assert!(gateway.tokens_used() <= 60);
    }
    assert!(ok >= 1);
    assert!(gateway.tokens_used() <= 60);
}

#[test]
fn rate_limits_are_retried_then_surfaced() {
    let calls = Arc::new(AtomicU32::new(0));
    let flaky = {
        let calls = Arc::clone(&calls);
        move |_: &ChatTranscript, _: &GenerationParams| {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(GatewayError::RateLimited { attempts: 1 })
            } else {
                Ok("done".to_string())
            }
        }
    };
    let retry = RetryPolicy {
        max_retries: 3,
        base_delay: Duration::from_millis(1),
        max_delay: Duration::from_millis(4),
    };
    let gateway = Gateway::builder(Mode::Live)
        .provider(Arc::new(flaky))
        .retry(retry)
        .build();
    let params = GenerationParams::new("m");
    assert_eq!(gateway.chat(&transcript("q"), &params).unwrap().content, "done");
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    let always = |_: &ChatTranscript, _: &GenerationParams| -> Result<String, GatewayError> {
        Err(GatewayError::RateLimited { attempts: 1 })
    };
    let gateway = Gateway::builder(Mode::Live)
        .provider(Arc::new(always))
        .retry(retry)
        .build();
    assert!(matches!(
        gateway.chat(&transcript("q"), &params),
        Err(GatewayError::RateLimited { attempts: 4 })
    ));
    assert_eq!(retry.delay(10), Duration::from_millis(4));
}

#[test]
fn concurrent_recording_keeps_one_line_per_request() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let gateway = Arc::new(
        Gateway::builder(Mode::Record)
            .provider(echo())
            .cassette(Cassette::open_append(&path).unwrap())
            .build(),
    );
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let gateway = Arc::clone(&gateway);
            thread::spawn(move || {
                gateway
                    .chat(&transcript(&format!("q{}", i % 4)), &GenerationParams::new("m"))
                    .unwrap()
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(Cassette::load(&path).unwrap().len(), 4);
}

#[test]
fn modes_parse() {
    assert_eq!("replay".parse::<Mode>().unwrap(), Mode::Replay);
    assert!("tape".parse::<Mode>().is_err());
}
