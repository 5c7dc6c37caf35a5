mod common;

use brd_core::corpus::Passage;
use brd_core::prompt::TaskTemplate;
use brd_core::teacher::{
    synthesize, BackendKind, BehaviorKind, BehaviorRecord, RejectReason, Status, TaskAnswer,
    Teacher, TeacherConfig, TeachingTemplates,
};
use brd_core::{jsonl, prompt::RenderedPrompt};
use common::{completion, prompt_of, FakeServer};

const BELMONT: &str =
    "It is reported that the Belmont Estate is on sale for $63 million and covers an area of 1.28 acres.";
const TABLE1_RESPONSE: &str = "In this sentence, \"Belmont Estate\" is a geographic entity, \"63 million\" is a numerical entity representing the price of the estate, and \"1.28 acres\" is a geographic entity representing the size of the estate.";

fn remote(url: &str, retry_limit: u32) -> TeacherConfig {
    TeacherConfig {
        backend: BackendKind::Remote,
        endpoint: Some(url.to_string()),
        model: Some("fake-teacher".into()),
        retry_limit,
        backoff_base_ms: 1,
        timeout_s: 5,
        max_in_flight: 2,
        ..TeacherConfig::default()
    }
}

#[test]
fn ner_response_is_stored_verbatim() {
    let server = FakeServer::start(2, |seen| {
        assert_eq!(seen.path, "/v1/chat/completions");
        assert_eq!(seen.body["model"], "fake-teacher");
        assert_eq!(seen.body["temperature"], 0.0);
        assert_eq!(seen.body["messages"][0]["role"], "user");
        let prompt = prompt_of(seen);
        assert!(prompt.starts_with("Perform named entity recognition"));
        assert!(prompt.ends_with(&format!("Enter a sentence:\n{BELMONT}\nOutput:")));
        (200, completion(TABLE1_RESPONSE))
    });
    let teacher = Teacher::from_config(&remote(&server.url, 0)).unwrap();
    assert_eq!(teacher.id(), "remote:fake-teacher");
    let dir = tempfile::tempdir().unwrap();
    let sink = dir.path().join("behaviors.jsonl");
    let passages = vec![Passage::from_sentences("belmont", [BELMONT])];
    let summary = synthesize(
        &passages,
        &[BehaviorKind::Ner],
        &teacher,
        &TeachingTemplates::default(),
        &sink,
    )
    .unwrap();
    assert_eq!(summary.requested, 1);
    let records: Vec<BehaviorRecord> = jsonl::read(&sink).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].response, TABLE1_RESPONSE);
    assert_eq!(records[0].status, Status::Accepted);
    assert_eq!(records[0].teacher_id, "remote:fake-teacher");
}

#[test]
fn persistent_500_becomes_transport_rejection_after_retries() {
    let server = FakeServer::start(1, |_| (500, "boom".into()));
    let teacher = Teacher::from_config(&remote(&server.url, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sink = dir.path().join("behaviors.jsonl");
    let passages = vec![Passage::from_sentences("p", ["Paris is large."])];
    let summary = synthesize(
        &passages,
        &[BehaviorKind::Ner],
        &teacher,
        &TeachingTemplates::default(),
        &sink,
    )
    .unwrap();
    assert_eq!(server.request_count(), 3);
    assert_eq!(summary.transport_failures(), 1);
    let records: Vec<BehaviorRecord> = jsonl::read(&sink).unwrap();
    assert_eq!(records[0].status, Status::Rejected(RejectReason::Transport));
}

#[test]
fn client_errors_are_not_retried() {
    let server = FakeServer::start(1, |_| (404, "missing".into()));
    let teacher = Teacher::from_config(&remote(&server.url, 3)).unwrap();
    let prompt = RenderedPrompt::new("x".into(), "t");
    let answer = teacher.answer_task(&prompt, &["Yes".into(), "No".into()]);
    assert_eq!(answer, TaskAnswer::Rejected(RejectReason::Transport));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn malformed_body_is_a_protocol_rejection() {
    let server = FakeServer::start(1, |_| (200, "{\"choices\": []}".into()));
    let teacher = Teacher::from_config(&remote(&server.url, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sink = dir.path().join("b.jsonl");
    let passages = vec![Passage::from_sentences("p", ["Paris is large."])];
    synthesize(
        &passages,
        &[BehaviorKind::Qra],
        &teacher,
        &TeachingTemplates::default(),
        &sink,
    )
    .unwrap();
    let records: Vec<BehaviorRecord> = jsonl::read(&sink).unwrap();
    assert_eq!(records[0].status, Status::Rejected(RejectReason::Protocol));
    assert_eq!(server.request_count(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_rejection() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let teacher = Teacher::from_config(&remote(&format!("http://127.0.0.1:{port}"), 1)).unwrap();
    let prompt = RenderedPrompt::new("x".into(), "t");
    assert_eq!(
        teacher.answer_task(&prompt, &["Yes".into(), "No".into()]),
        TaskAnswer::Rejected(RejectReason::Transport)
    );
}

#[test]
fn task_answers_map_onto_candidates() {
    let server = FakeServer::start(1, |seen| {
        let prompt = prompt_of(seen);
        assert!(
            prompt.contains("Does the following sentence have a positive or negative sentiment?")
        );
        (200, completion("The sentiment is Negative."))
    });
    let teacher = Teacher::from_config(&remote(&server.url, 0)).unwrap();
    let tpl = TaskTemplate::builtin("sst2").unwrap();
    let fields: indexmap::IndexMap<String, String> =
        [("sentence".to_string(), "A dull film.".to_string())]
            .into_iter()
            .collect();
    let prompt = brd_core::prompt::render_task_prompt(&tpl, &fields).unwrap();
    let answer = teacher.answer_task(&prompt, &["positive".into(), "negative".into()]);
    assert_eq!(answer, TaskAnswer::Answered("negative".into()));
}
