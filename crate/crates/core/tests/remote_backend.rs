use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use agency::problem::Attachment;
use agency::runtime::{
    AgentRole, BackendConfig, BackendError, ChatRequest, ModelBackend, ReasoningEffort,
    RemoteBackend,
};
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use url::Url;

const KEY: &str = "sk-test-4f1e2d";

/// Authorization header and JSON body of one request.
type Seen = (Option<String>, Value);

#[derive(Clone, Default)]
struct Mock {
    /// Number of leading requests answered with HTTP 500.
    fail_first: usize,
    /// Answer with an empty message.
    empty: bool,
    hits: Arc<AtomicUsize>,
    seen: Arc<Mutex<Vec<Seen>>>,
}

async fn completions(
    State(mock): State<Mock>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let auth = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned);
    mock.seen.lock().unwrap().push((auth, body));
    let hit = mock.hits.fetch_add(1, Ordering::SeqCst);
    if hit < mock.fail_first {
        return (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({ "error": "overloaded" })),
        );
    }
    let content = if mock.empty { "" } else { "## Part 1\nok" };
    (
        StatusCode::OK,
        Json(json!({
            "model": "o4-mini-2025",
            "choices": [{ "message": { "role": "assistant", "content": content } }],
            "usage": { "prompt_tokens": 12, "completion_tokens": 34 },
        })),
    )
}

async fn serve(mock: Mock) -> Url {
    let app = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(mock);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Url::parse(&format!("http://{addr}/v1")).unwrap()
}

fn request() -> ChatRequest {
    ChatRequest {
        session_id: "t/solve/1".into(),
        role: AgentRole::Solve,
        index: Some(1),
        system_text: "system text".into(),
        user_parts: vec!["problem text".into()],
        attachments: vec![Attachment {
            filename: "f.png".into(),
            media_type: "image/png".into(),
            data: vec![255, 0],
        }],
        model_id: "o4-mini".into(),
        reasoning_effort: ReasoningEffort::Medium,
        temperature: Some(0.2),
    }
}

fn config(endpoint: Url) -> BackendConfig {
    BackendConfig {
        endpoint: Some(endpoint),
        ..BackendConfig::default()
    }
}

#[tokio::test]
async fn sends_chat_completion_with_bearer_key() {
    let mock = Mock::default();
    let backend = RemoteBackend::new(&config(serve(mock.clone()).await), Some(KEY.into())).unwrap();
    let response = backend.complete(&request()).await.unwrap();
    assert_eq!(response.text, "## Part 1\nok");
    assert_eq!(response.model.as_deref(), Some("o4-mini-2025"));
    assert_eq!(
        (response.prompt_tokens, response.completion_tokens),
        (Some(12), Some(34))
    );

    let seen = mock.seen.lock().unwrap();
    let (auth, body) = &seen[0];
    assert_eq!(auth.as_deref(), Some(format!("Bearer {KEY}").as_str()));
    assert_eq!(body["model"], "o4-mini");
    assert_eq!(body["reasoning_effort"], "medium");
    assert!((body["temperature"].as_f64().unwrap() - 0.2).abs() < 1e-6);
    assert_eq!(
        body["messages"][0],
        json!({ "role": "system", "content": "system text" })
    );
    let content = body["messages"][1]["content"].as_array().unwrap();
    assert_eq!(
        content[0],
        json!({ "type": "text", "text": "problem text" })
    );
    assert_eq!(content[1]["image_url"]["url"], "data:image/png;base64,/wA=");
}

#[tokio::test]
async fn server_errors_are_retryable_http_errors() {
    let mock = Mock {
        fail_first: 1,
        ..Mock::default()
    };
    let backend = RemoteBackend::new(&config(serve(mock.clone()).await), Some(KEY.into())).unwrap();
    let err = backend.complete(&request()).await.unwrap_err();
    assert!(
        matches!(err, BackendError::Http { status: 500, .. }),
        "{err}"
    );
    assert!(err.is_retryable());
    assert!(backend.complete(&request()).await.is_ok());
}

#[tokio::test]
async fn agency_retries_through_a_server_error() {
    use agency::problem::ProblemStatement;
    use agency::runtime::Agency;

    let mock = Mock {
        fail_first: 2,
        ..Mock::default()
    };
    let mut cfg = config(serve(mock.clone()).await);
    cfg.retry.base_backoff = std::time::Duration::from_millis(1);
    let backend = RemoteBackend::new(&cfg, Some(KEY.into())).unwrap();
    let agency = Agency::new(Arc::new(backend), cfg).unwrap();
    let stmt = ProblemStatement {
        id: "p".into(),
        title: "t".into(),
        body_text: "body".into(),
        attachments: vec![],
        qoi: vec!["x".into()],
        parameters: None,
        engineering_context: None,
    };
    let t = agency.run(&stmt, 1).await.unwrap();
    assert_eq!(t.realizations[0].backend_metadata["attempts"], json!(3));
    assert_eq!(mock.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn empty_content_is_an_error() {
    let mock = Mock {
        empty: true,
        ..Mock::default()
    };
    let backend = RemoteBackend::new(&config(serve(mock).await), Some(KEY.into())).unwrap();
    assert!(matches!(
        backend.complete(&request()).await,
        Err(BackendError::EmptyResponse)
    ));
}

#[tokio::test]
async fn unreachable_endpoint_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = Url::parse(&format!("http://{}/v1", listener.local_addr().unwrap())).unwrap();
    drop(listener);
    let backend = RemoteBackend::new(&config(url), Some(KEY.into())).unwrap();
    let err = backend.complete(&request()).await.unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err}");
    assert!(err.is_retryable());
}

#[tokio::test]
async fn wire_logs_never_contain_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mock = Mock {
        fail_first: 1,
        ..Mock::default()
    };
    let backend = RemoteBackend::new(&config(serve(mock).await), Some(KEY.into()))
        .unwrap()
        .with_wire_log(dir.path().join("wire"));
    let _ = backend.complete(&request()).await;
    backend.complete(&request()).await.unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("wire"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "00000-solve-1.request.json",
            "00001-solve-1.response.json",
            "00002-solve-1.request.json",
            "00003-solve-1.response.json"
        ]
    );
    for name in names {
        let text = std::fs::read_to_string(dir.path().join("wire").join(&name)).unwrap();
        assert!(!text.contains(KEY), "{name} leaks the key");
        if name.ends_with("request.json") {
            assert!(text.contains("[REDACTED]"));
        }
    }
}
