use std::collections::BTreeMap;
use std::sync::Arc;

use dbchat_core::smmf::{
    ChatMessage, Gateway, ManualClock, MockBackend, MockReply, MockScript, ModelRequest, Registry, WorkerSpec,
    WorkerStatus, DEFAULT_FAILURE_THRESHOLD,
};
use proptest::prelude::*;

fn gateway(k: usize) -> (Gateway, Vec<(String, Arc<MockBackend>)>) {
    let gw = Gateway::new(Arc::new(Registry::new(Arc::new(ManualClock::default()))));
    let workers = (0..k)
        .map(|w| {
            let backend = Arc::new(MockBackend::echo());
            let id = gw.register(WorkerSpec::new("m", format!("http://w{w}:1")), backend.clone()).unwrap();
            (id, backend)
        })
        .collect();
    (gw, workers)
}

fn ask(gw: &Gateway, text: &str) -> Result<String, String> {
    gw.chat_completion(&ModelRequest::new("m", vec![ChatMessage::user(text)]))
        .map(|r| r.worker_id)
        .map_err(|e| e.to_string())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_robin_is_balanced(k in 1usize..8, n in 0usize..40) {
        let (gw, _) = gateway(k);
        let mut served: BTreeMap<String, usize> = BTreeMap::new();
        for i in 0..n {
            *served.entry(ask(&gw, &format!("q{i}")).unwrap()).or_default() += 1;
        }
        let (lo, hi) = (n / k, n.div_ceil(k));
        prop_assert!(served.values().all(|c| *c == lo || *c == hi), "{:?}", served);
        prop_assert_eq!(served.values().sum::<usize>(), n);
    }

    #[test]
    fn requests_survive_while_one_worker_lives(k in 2usize..6, dead in prop::collection::vec(any::<bool>(), 6), n in 1usize..30) {
        let (gw, workers) = gateway(k);
        let dead: Vec<bool> = dead[..k - 1].iter().copied().chain([false]).collect();
        for ((_, backend), d) in workers.iter().zip(&dead) {
            if *d {
                backend.kill();
            }
        }
        for i in 0..n {
            let served = ask(&gw, &format!("q{i}"));
            prop_assert!(served.is_ok(), "{:?}", served);
        }
        for ((id, backend), d) in workers.iter().zip(&dead) {
            if *d {
                prop_assert!(backend.calls() <= u64::from(DEFAULT_FAILURE_THRESHOLD));
                if backend.calls() == u64::from(DEFAULT_FAILURE_THRESHOLD) {
                    prop_assert_eq!(gw.registry().get(id).unwrap().status, WorkerStatus::Unhealthy);
                }
            }
        }
    }

    #[test]
    fn exact_matchers_beat_contains(message in "[a-z]{1,10}", cut in 0usize..10) {
        let needle: String = message.chars().take(cut.max(1)).collect();
        let script = MockScript::default()
            .with(&format!("contains:{needle}"), "partial")
            .with(&message, "exact");
        prop_assert_eq!(script.lookup(&message), Some(&MockReply::Text("exact".into())));
        let longer = format!("{message}!");
        prop_assert_eq!(script.lookup(&longer), Some(&MockReply::Text("partial".into())));
    }
}
