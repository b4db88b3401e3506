#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use confalign::backends::{Backend, Completion, CompletionRequest, ScriptedBackend, TokenScore};
use confalign::dataset::{parse_dataset, Dataset};
use confalign::prompting::{PromptVariant, Scale};
use confalign::Result;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn blessing() -> bool {
    std::env::var("CONFALIGN_BLESS").is_ok_and(|v| v == "1")
}

/// Brute-force adjusted internal confidence: for each label, scan every entry
/// for any of its six spellings and keep the largest probability.
pub fn oracle_p_ic(entries: &[(String, f64)], labels: &[char], chosen: char) -> Option<f64> {
    let spellings = |l: char| {
        let u = l.to_ascii_uppercase();
        let d = l.to_ascii_lowercase();
        vec![
            format!("{u}"),
            format!("{d}"),
            format!(" {u}"),
            format!(" {d}"),
            format!("{u}."),
            format!("{d}."),
        ]
    };
    let mut maxima = Vec::new();
    for &l in labels {
        let s = spellings(l);
        let mut m = 0.0f64;
        for (tok, p) in entries {
            if s.iter().any(|v| v == tok) && *p > m {
                m = *p;
            }
        }
        maxima.push((l, m));
    }
    let total: f64 = maxima.iter().map(|(_, m)| m).sum();
    if total <= 0.0 {
        return None;
    }
    let num = maxima.iter().find(|(l, _)| *l == chosen).map(|(_, m)| *m)?;
    Some(num / total)
}

/// Ranks by counting: 1 + (values below) + (ties - 1) / 2, with the counts
/// taken by binary search in a sorted copy.
pub fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.iter()
        .map(|a| {
            let below = sorted.partition_point(|b| b < a) as f64;
            let equal = sorted.partition_point(|b| b <= a) as f64 - below;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Pearson correlation of the counted ranks.
pub fn oracle_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rx = oracle_ranks(x);
    let ry = oracle_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// The variant that renders with the named template.
pub fn variant_for(template: &str) -> PromptVariant {
    match template {
        "full" => PromptVariant::new(true, true, Scale::Likert6),
        "lsu" => PromptVariant::new(false, false, Scale::Likert6),
        "ttp_lsu" => PromptVariant::new(true, false, Scale::Likert6),
        "oc_lsu" => PromptVariant::new(false, true, Scale::Likert6),
        "numerical" => PromptVariant::new(false, false, Scale::Numerical1To100),
        "likert5" => PromptVariant::new(true, true, Scale::Likert5),
        "likert5_defs" => PromptVariant::new(true, true, Scale::Likert5WithDefinitions),
        "strict" => PromptVariant::new(true, true, Scale::Likert5).with_strict_grammar(),
        other => panic!("unknown template {other}"),
    }
}

/// Counts calls that reach the wrapped backend.
pub struct CountingBackend<B> {
    pub inner: B,
    pub calls: AtomicUsize,
}

impl<B: Backend> CountingBackend<B> {
    pub fn new(inner: B) -> Arc<Self> {
        Arc::new(CountingBackend { inner, calls: AtomicUsize::new(0) })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Completion> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }
}

/// One designed trial of the 40-question scripted run.
pub struct Designed {
    pub ic: f64,
    pub reply: &'static str,
    /// Score of `reply` on the six-level scale, assigned by hand.
    pub vc: f64,
    pub correct: bool,
}

const fn d(ic: f64, reply: &'static str, vc: f64, correct: bool) -> Designed {
    Designed { ic, reply, vc, correct }
}

/// 40 designed (internal, verbalized) pairs. Hand counts under the default
/// thresholds (0.9 / 0.8): 12 consistent alignment, 8 internal
/// overconfidence, 9 external overconfidence, 11 consistent discordance.
pub const DESIGN: [Designed; 40] = [
    // consistent alignment
    d(0.99, "a. Very Certain", 1.0, true),
    d(0.98, "Very certain.", 1.0, true),
    d(0.97, "a. Very Certain. The answer matches the definition.", 1.0, true),
    d(0.96, "b. Fairly Certain", 0.8, true),
    d(0.95, "a. Very Certain", 1.0, true),
    d(0.94, "b. Fairly Certain", 0.8, false),
    d(0.93, "a. Very Certain", 1.0, true),
    d(0.92, "b. fairly certain", 0.8, true),
    d(0.915, "A. Very Certain", 1.0, true),
    d(0.99, "I am very certain about this answer.", 1.0, true),
    d(0.905, "b. Fairly Certain", 0.8, false),
    d(0.97, "a. Very Certain", 1.0, true),
    // internal overconfidence
    d(0.99, "e. Not Certain", 0.2, true),
    d(0.95, "c. Moderately Certain", 0.6, true),
    d(0.93, "d. Somewhat Certain", 0.4, false),
    d(0.97, "f. Very Uncertain", 0.0, false),
    d(0.91, "c. Moderately Certain", 0.6, true),
    d(0.98, "d. Somewhat Certain", 0.4, true),
    d(0.96, "e. Not Certain", 0.2, false),
    d(0.92, "c. Moderately Certain", 0.6, true),
    // external overconfidence
    d(0.69, "a. Very Certain", 1.0, true),
    d(0.55, "b. Fairly Certain", 0.8, true),
    d(0.80, "a. Very Certain", 1.0, false),
    d(0.40, "a. Very Certain", 1.0, true),
    d(0.85, "b. Fairly Certain", 0.8, true),
    d(0.75, "b. Fairly Certain", 0.8, false),
    d(0.62, "a. Very Certain", 1.0, true),
    d(0.88, "a. Very Certain", 1.0, true),
    d(0.50, "b. Fairly Certain", 0.8, false),
    // consistent discordance
    d(0.69, "d. Somewhat Certain", 0.4, false),
    d(0.30, "f. Very Uncertain", 0.0, false),
    d(0.45, "e. Not Certain", 0.2, false),
    d(0.60, "c. Moderately Certain", 0.6, true),
    d(0.35, "d. Somewhat Certain", 0.4, false),
    d(0.72, "c. Moderately Certain", 0.6, true),
    d(0.52, "e. Not Certain", 0.2, true),
    d(0.81, "d. Somewhat Certain", 0.4, false),
    d(0.28, "f. Very Uncertain", 0.0, false),
    d(0.66, "c. Moderately Certain", 0.6, true),
    d(0.77, "e. Not Certain", 0.2, false),
];

pub const DESIGN_COUNTS: [usize; 4] = [12, 8, 9, 11];

const OPTION_TEXTS: [&str; 4] = ["alpha", "beta", "gamma", "delta"];
const LABELS: [char; 4] = ['A', 'B', 'C', 'D'];

fn design_tokens(i: usize) -> Vec<TokenScore> {
    let chosen = i % 4;
    let p = DESIGN[i].ic;
    let rest = (1.0 - p) / 3.0;
    let mut tokens: Vec<TokenScore> = (0..4)
        .map(|j| TokenScore::prob(LABELS[j].to_string(), if j == chosen { p } else { rest }))
        .collect();
    // a lower-case duplicate of the chosen label and a non-option token; neither changes P_IC
    tokens.push(TokenScore::prob(LABELS[chosen].to_ascii_lowercase().to_string(), p / 10.0));
    tokens.push(TokenScore::prob("The", 0.001));
    tokens
}

/// The 40 designed questions, their scripted backend, and each trial's token list.
pub fn designed_run() -> (Dataset, ScriptedBackend, Vec<Vec<(String, f64)>>) {
    let mut lines = String::new();
    let mut backend = ScriptedBackend::new("mock:designed");
    let mut token_lists = Vec::new();
    for (i, item) in DESIGN.iter().enumerate() {
        let chosen = i % 4;
        let gold = if item.correct { chosen } else { (chosen + 1) % 4 };
        let stem = format!("Scripted item {:02}: which word is listed at position {}?", i + 1, chosen + 1);
        let options: Vec<serde_json::Value> = (0..4)
            .map(|j| serde_json::json!({"label": LABELS[j].to_string(), "text": OPTION_TEXTS[j]}))
            .collect();
        let q = serde_json::json!({
            "id": format!("d{:02}", i + 1),
            "stem": stem,
            "options": options,
            "gold": LABELS[gold].to_string(),
        });
        lines.push_str(&q.to_string());
        lines.push('\n');
        let tokens = design_tokens(i);
        token_lists.push(tokens.iter().map(|t| (t.token.clone(), t.score)).collect());
        backend = backend.script(stem, format!("{}. {}", LABELS[chosen], OPTION_TEXTS[chosen]), tokens, item.reply);
    }
    let ds = parse_dataset(lines.as_bytes(), "designed", "designed.jsonl").expect("designed dataset parses");
    (ds, backend, token_lists)
}

pub fn design_labels() -> [char; 4] {
    LABELS
}
