//! Solving a problem with a real OpenAI-compatible model.
//!
//! Needs `MODEL_API_KEY` in the environment; without it the example explains
//! what it would do and exits. `MODEL_ENDPOINT` and `MODEL_ID` override the
//! default endpoint and model. Request and response bodies are logged, with
//! the key redacted, under a temporary directory.
//!
//! ```text
//! MODEL_API_KEY=... cargo run --example remote_backend -- 3
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use agency::problem::{render_transcript, ProblemStatement};
use agency::runtime::remote::{request_body, API_KEY_ENV};
use agency::runtime::{Agency, AgencyOptions, BackendConfig, RemoteBackend};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "3".into())
        .parse()?;
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let stmt = ProblemStatement::load(&fixtures.join("pinned-assembly.problem.json"))?;

    let mut config = BackendConfig::default();
    if let Ok(endpoint) = std::env::var("MODEL_ENDPOINT") {
        config.endpoint = Some(endpoint.parse()?);
    }
    if let Ok(model) = std::env::var("MODEL_ID") {
        config.model_id = model;
    }

    if std::env::var_os(API_KEY_ENV).is_none() {
        println!("{API_KEY_ENV} is not set; skipping the remote run.");
        println!(
            "A solve request to {} would look like this:",
            config.endpoint_or_default()
        );
        let prep = agency::runtime::preprocess(&stmt)?;
        let request = agency::runtime::ChatRequest {
            session_id: "example".into(),
            role: agency::runtime::AgentRole::Solve,
            index: Some(1),
            system_text: agency::runtime::AgentInstructions::default_solve().system_message(),
            user_parts: vec![prep.prompt_text],
            attachments: prep.attachments,
            model_id: config.model_id.clone(),
            reasoning_effort: config.reasoning_effort,
            temperature: config.temperature,
        };
        let mut body = request_body(&request);
        if let Some(text) = body["messages"][0]["content"].as_str() {
            body["messages"][0]["content"] =
                format!("{}...", text.chars().take(120).collect::<String>()).into();
        }
        println!("{}", serde_json::to_string_pretty(&body)?);
        return Ok(());
    }

    let out = std::env::temp_dir().join("agency-remote-example");
    let backend = RemoteBackend::from_env(&config)?.with_wire_log(out.join("wire"));
    let agency = Agency::new(Arc::new(backend), config)?.with_options(AgencyOptions {
        out_dir: Some(out.clone()),
        allow_partial: true,
        ..Default::default()
    });
    let transcript = agency.run(&stmt, n).await?;
    print!("{}", render_transcript(&transcript));
    println!("\ntranscript and wire log in {}", out.display());
    Ok(())
}
