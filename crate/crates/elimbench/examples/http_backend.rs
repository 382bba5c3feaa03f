//! Point the harness at a live chat-completions endpoint.
//!
//! ```bash
//! export ELIMBENCH_ENDPOINT="https://api.example.com/v1/chat/completions"
//! export ELIMBENCH_MODEL="some-model-name"
//! export ELIMBENCH_API_KEY="..."        # optional
//! cargo run -p elimbench --example http_backend
//! ```
//!
//! Without `ELIMBENCH_ENDPOINT` set, the example prints the request it
//! would send and exits.

use elimbench::backend::{BackendSpec, CompletionBackend, GenParams, HttpChatBackend, RetryPolicy};
use elimbench::corpus::Question;
use elimbench::parsing::to_prediction;
use elimbench::prompting::{build_prompt, Mode, Strategy, StrategyConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let query = Question::new(
        "http-demo",
        "Where is Chicago?",
        vec!["Illinois".into(), "The Moon".into()],
        0,
    )?;
    let cfg = StrategyConfig::zero_shot(Strategy::ProcessOfElimination, Mode::Cot);
    let prompt = build_prompt(&cfg, &query)?;

    let Ok(endpoint) = std::env::var("ELIMBENCH_ENDPOINT") else {
        println!("ELIMBENCH_ENDPOINT is not set; dry run only.\n");
        println!("the prompt below would be sent as a single user message with");
        println!("temperature 0.3 (plus your model name and bearer token):\n");
        println!("{prompt}");
        return Ok(());
    };
    let model = std::env::var("ELIMBENCH_MODEL").unwrap_or_else(|_| "gpt-3.5-turbo".into());

    let mut spec = BackendSpec::http_chat(endpoint, model);
    if std::env::var("ELIMBENCH_API_KEY").is_ok() {
        spec.auth_env = Some("ELIMBENCH_API_KEY".into());
    }
    spec.rate_limit = Some(2);
    spec.retry = RetryPolicy { max_attempts: 4, ..RetryPolicy::default() };

    let backend = HttpChatBackend::new(&spec)?;
    let params = GenParams { max_tokens: 128, ..GenParams::default() };
    println!("sending one elimination prompt to {} ...\n", backend.backend_id());
    let resp = backend.complete(&prompt, &params)?;
    println!("completion ({:.0} ms):\n{}\n", resp.latency_ms, resp.text);

    let prediction = to_prediction(&resp, &query, Strategy::ProcessOfElimination, Mode::Cot);
    match prediction.chosen_label {
        Some(label) => println!("parsed eliminated choice: ({label})  [status {:?}]", prediction.parse_status),
        None => println!("no label recovered [status {:?}]", prediction.parse_status),
    }
    Ok(())
}
