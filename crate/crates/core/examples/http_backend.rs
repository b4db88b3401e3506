//! Query a completions server that returns per-token alternatives.
//!
//! CONFALIGN_BASE_URL=http://localhost:8000/v1 cargo run --example http_backend -- my-model
//!
//! `CONFALIGN_API_KEY` is sent as a bearer token when set. Without a base
//! URL the example prints the request it would send and exits.

use confalign::backends::{Backend, CompletionRequest, HttpBackend, HttpConfig, BASE_URL_ENV};
use confalign::confidence::{adjusted_internal_confidence, build_option_token_map, extract_chosen_label};
use confalign::dataset::load_dataset;
use confalign::prompting::build_answer_prompt;

fn main() -> confalign::Result<()> {
    let model = std::env::args().nth(1).unwrap_or_else(|| "local-model".into());
    let ds = load_dataset(concat!(env!("CARGO_MANIFEST_DIR"), "/data/sample_mcq.jsonl"))?;
    let q = &ds.questions[0];
    let mut req = CompletionRequest::new(build_answer_prompt(q));
    req.max_tokens = 10;

    let cfg = match HttpConfig::from_env(&model) {
        Ok(cfg) => cfg,
        Err(_) => {
            let backend = HttpBackend::new(HttpConfig::new("http://localhost:8000/v1", &model))?;
            println!("{BASE_URL_ENV} is not set; request body would be:");
            println!("{:#}", backend.request_body(&req));
            return Ok(());
        }
    };
    let backend = HttpBackend::new(cfg)?;
    let c = backend.complete(&req)?;
    println!("answer: {}", c.text.trim());
    let chosen = extract_chosen_label(&c.text, q)?;
    let ic = adjusted_internal_confidence(&c.answer_position_distribution, &build_option_token_map(&q.labels()), chosen)?;
    println!("P_IC({chosen}) = {:.4}", ic.internal_confidence);
    Ok(())
}
