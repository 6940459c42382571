use std::sync::Arc;
use std::thread;

use usersod_core::BinaryMask;
use usersod_digger::pipeline::start_queue;
use usersod_digger::{
    Backends, CorrectionDecision, CorrectionQueue, OracleDetector, PromptTemplate, QueueError, Status, Verdict,
};
use usersod_synth::{generate_dataset, GeneratorConfig};

fn queue_in(dir: &std::path::Path, scenes: u32) -> CorrectionQueue {
    let scenes = generate_dataset(&GeneratorConfig {
        seed: 4,
        num_scenes: scenes,
        ..GeneratorConfig::default()
    })
    .unwrap();
    start_queue(&scenes, &Backends::oracle(OracleDetector::default()), &PromptTemplate::default(), dir)
        .unwrap()
        .0
}

#[test]
fn second_decision_on_a_sample_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let q = queue_in(dir.path(), 1);
    let id = q.snapshot()[0].id.clone();
    q.decide(CorrectionDecision::new(id.clone(), Verdict::Accept, "a")).unwrap();
    let err = q.decide(CorrectionDecision::new(id.clone(), Verdict::Reject, "b")).unwrap_err();
    assert!(matches!(err, QueueError::AlreadyDecided { status: Status::Accepted, .. }));
    assert_eq!(q.get(&id).unwrap().status, Status::Accepted);
}

#[test]
fn malformed_decisions_are_invalid_and_change_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let q = queue_in(dir.path(), 1);
    let id = q.snapshot()[0].id.clone();
    let bare_edit = CorrectionDecision::new(id.clone(), Verdict::Edit, "a");
    assert!(matches!(q.decide(bare_edit), Err(QueueError::Invalid(_))));
    let mut wrong_size = CorrectionDecision::new(id.clone(), Verdict::Edit, "a");
    wrong_size.edited_mask = Some(BinaryMask::ones(4, 4));
    assert!(matches!(q.decide(wrong_size), Err(QueueError::Invalid(_))));
    let mut blank = CorrectionDecision::new(id.clone(), Verdict::Edit, "a");
    blank.edited_commands = Some(vec!["  ".into()]);
    assert!(matches!(q.decide(blank), Err(QueueError::Invalid(_))));
    assert!(matches!(
        q.decide(CorrectionDecision::new("nope", Verdict::Accept, "a")),
        Err(QueueError::NotFound(_))
    ));
    assert_eq!(q.get(&id).unwrap().status, Status::Pending);
    assert_eq!(q.stats().pending, q.stats().total);
}

#[test]
fn racing_reviewers_get_exactly_one_success() {
    let dir = tempfile::tempdir().unwrap();
    let q = Arc::new(queue_in(dir.path(), 1));
    let id = q.snapshot()[0].id.clone();
    let handles: Vec<_> = (0..8)
        .map(|i| {
            let q = Arc::clone(&q);
            let id = id.clone();
            thread::spawn(move || {
                let verdict = if i % 2 == 0 { Verdict::Accept } else { Verdict::Reject };
                q.decide(CorrectionDecision::new(id, verdict, format!("r{i}"))).is_ok()
            })
        })
        .collect();
    let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|&ok| ok).count();
    assert_eq!(wins, 1);
    drop(q);
    let reopened = CorrectionQueue::open(&dir.path().join("queue")).unwrap();
    assert!(reopened.get(&id).unwrap().status.is_decided());
}

#[test]
fn audit_log_replays_to_the_same_state() {
    let dir = tempfile::tempdir().unwrap();
    let q = queue_in(dir.path(), 3);
    let ids: Vec<String> = q.snapshot().iter().map(|p| p.id.clone()).collect();
    q.decide(CorrectionDecision::new(ids[0].clone(), Verdict::Reject, "r")).unwrap();
    let mut edit = CorrectionDecision::new(ids[1].clone(), Verdict::Edit, "r");
    edit.edited_commands = Some(vec!["I want to find the odd one.".into()]);
    q.decide(edit).unwrap();
    let mut m = BinaryMask::zeros(96, 96);
    m.set(5, 5, true);
    let mut edit_mask = CorrectionDecision::new(ids[2].clone(), Verdict::Edit, "r");
    edit_mask.edited_mask = Some(m);
    q.decide(edit_mask).unwrap();
    q.decide(CorrectionDecision::new(ids[3].clone(), Verdict::Accept, "r")).unwrap();
    let before = q.snapshot();
    let emitted = q.emit();
    drop(q);

    let reopened = CorrectionQueue::open(&dir.path().join("queue")).unwrap();
    assert_eq!(reopened.snapshot(), before);
    assert_eq!(reopened.emit(), emitted);
    // Decisions keep working after a reopen and continue the sequence.
    reopened
        .decide(CorrectionDecision::new(ids[4].clone(), Verdict::Accept, "r"))
        .unwrap();
    drop(reopened);
    let again = CorrectionQueue::open(&dir.path().join("queue")).unwrap();
    assert_eq!(again.get(&ids[4]).unwrap().status, Status::Accepted);
    let seqs: Vec<u64> = std::fs::read_to_string(dir.path().join("queue/audit.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<usersod_digger::AuditEntry>(l).unwrap().seq)
        .collect();
    assert_eq!(seqs, [0, 1, 2, 3, 4]);
}

#[test]
fn tampered_audit_log_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let q = queue_in(dir.path(), 1);
    let id = q.snapshot()[0].id.clone();
    q.decide(CorrectionDecision::new(id.clone(), Verdict::Accept, "r")).unwrap();
    drop(q);
    let path = dir.path().join("queue/audit.jsonl");
    let line = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("{line}{line}")).unwrap();
    assert!(CorrectionQueue::open(&dir.path().join("queue")).is_err());
}

#[test]
fn pages_split_the_queue_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let q = queue_in(dir.path(), 2);
    let all = q.snapshot();
    let size = 2;
    let pages = all.len().div_ceil(size);
    let mut seen = Vec::new();
    for page in 1..=pages {
        let p = q.page(page, size, None);
        assert_eq!(p.total, all.len());
        seen.extend(p.items);
    }
    assert_eq!(seen, all);
    assert!(q.page(pages + 1, size, None).items.is_empty());
}

#[test]
fn pending_pages_shrink_as_decisions_land() {
    let dir = tempfile::tempdir().unwrap();
    let q = queue_in(dir.path(), 1);
    let first = q.page(1, 100, Some(Status::Pending));
    assert_eq!(first.total, q.stats().total);
    q.decide(CorrectionDecision::new(first.items[0].id.clone(), Verdict::Accept, "r")).unwrap();
    let after = q.page(1, 100, Some(Status::Pending));
    assert_eq!(after.total, first.total - 1);
    assert_eq!(after.items, first.items[1..]);
    assert_eq!(q.page(1, 100, Some(Status::Accepted)).items.len(), 1);
}
