use std::fs;

use lowmt_core::humeval::{
    create_session, AnnotationSession, CampaignStore, ErrorInput, NextTask, Segment, StoreError, Submission,
    ANNOTATION_LOG,
};

fn session() -> AnnotationSession {
    let segments = (1..=3)
        .map(|id| Segment {
            id,
            source: format!("foinse {id}"),
            reference: format!("tagairt {id}"),
            outputs: [("rnn", "a"), ("transformer", "b")]
                .into_iter()
                .map(|(s, o)| (s.to_string(), format!("{o} {id}")))
                .collect(),
        })
        .collect();
    create_session(segments, vec!["rnn".into(), "transformer".into()], vec!["x".into(), "y".into()], 11).unwrap()
}

fn fill(store: &mut CampaignStore) {
    for annotator in ["x", "y"] {
        while let NextTask::Task(task) = store.session().next_task(annotator).unwrap() {
            let subs: Vec<Submission> = task
                .outputs
                .iter()
                .map(|o| Submission {
                    segment: task.segment,
                    slot: o.slot.clone(),
                    rating: 3,
                    errors: vec![ErrorInput { category: "grammar".into(), severity: Some("major".into()), span: None }],
                })
                .collect();
            store.submit(annotator, &subs).unwrap();
        }
    }
}

#[test]
fn every_truncation_of_the_log_replays_to_a_consistent_prefix() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut store = CampaignStore::create(dir.path(), &session()).unwrap();
        fill(&mut store);
        assert!(store.session().is_complete());
    }
    let log_path = dir.path().join(ANNOTATION_LOG);
    let full = fs::read(&log_path).unwrap();
    let line_ends: Vec<usize> = full.iter().enumerate().filter(|(_, b)| **b == b'\n').map(|(i, _)| i + 1).collect();
    assert_eq!(line_ends.len(), 12);

    for cut in 0..=full.len() {
        fs::write(&log_path, &full[..cut]).unwrap();
        let complete_lines = line_ends.iter().filter(|&&e| e <= cut).count();
        let (snap, records) = CampaignStore::snapshot(dir.path()).unwrap();
        assert_eq!(records.len(), complete_lines, "cut {cut}");
        assert_eq!(snap.done_units(), complete_lines, "cut {cut}");

        let store = CampaignStore::open(dir.path()).unwrap();
        assert_eq!(store.records().len(), complete_lines);
        drop(store);
        let intact = line_ends.get(complete_lines.wrapping_sub(1)).copied().filter(|_| complete_lines > 0).unwrap_or(0);
        assert_eq!(fs::metadata(&log_path).unwrap().len() as usize, intact, "cut {cut}");
    }

    // resuming after the harshest cut completes the campaign again
    fs::write(&log_path, &full[..line_ends[4] + 3]).unwrap();
    let mut store = CampaignStore::open(dir.path()).unwrap();
    fill(&mut store);
    assert!(store.session().is_complete());
    assert_eq!(store.records().len(), 12);
}

#[test]
fn duplicate_unit_in_log_is_corruption() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut store = CampaignStore::create(dir.path(), &session()).unwrap();
        fill(&mut store);
    }
    let log_path = dir.path().join(ANNOTATION_LOG);
    let text = fs::read_to_string(&log_path).unwrap();
    let first = text.lines().next().unwrap();
    fs::write(&log_path, format!("{first}\n{text}")).unwrap();
    assert!(matches!(CampaignStore::open(dir.path()), Err(StoreError::Corrupt { line: 2, .. })));
}
