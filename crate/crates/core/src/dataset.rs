//! Multiple-choice question loading and validation.
//!
//! The on-disk format is line-delimited JSON, one question per line:
//!
//! ```text
//! {"id": "q1", "stem": "...", "options": [{"label": "A", "text": "..."}], "gold": "A"}
//! ```
//!
//! Labels are normalized to uppercase on load. Everything else is kept verbatim.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 8;

/// A single option label, `A` through `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(char);

impl Label {
    pub fn new(c: char) -> Option<Self> {
        let c = c.to_ascii_uppercase();
        ('A'..='H').contains(&c).then_some(Label(c))
    }

    /// Zero-based position, `A` = 0.
    pub fn from_index(i: usize) -> Option<Self> {
        if i < MAX_OPTIONS {
            Some(Label((b'A' + i as u8) as char))
        } else {
            None
        }
    }

    pub fn index(self) -> usize {
        (self.0 as u8 - b'A') as usize
    }

    pub fn as_char(self) -> char {
        self.0
    }

    pub fn lower(self) -> char {
        self.0.to_ascii_lowercase()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<String> for Label {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Label::new(c).ok_or_else(|| format!("label {s:?} outside A-H")),
            _ => Err(format!("label {s:?} is not a single letter")),
        }
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.0.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

/// One multiple-choice item. Labels are kept as raw strings so that invalid
/// input can be represented and reported by [`validate_question`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub stem: String,
    pub options: Vec<AnswerOption>,
    #[serde(default)]
    pub gold: Option<String>,
}

impl Question {
    /// Parsed option labels. Only meaningful for validated questions.
    pub fn labels(&self) -> Vec<Label> {
        self.options
            .iter()
            .filter_map(|o| Label::try_from(o.label.clone()).ok())
            .collect()
    }

    pub fn gold_label(&self) -> Option<Label> {
        self.gold.as_ref().and_then(|g| Label::try_from(g.clone()).ok())
    }

    pub fn option_text(&self, label: Label) -> Option<&str> {
        self.options
            .iter()
            .find(|o| o.label.eq_ignore_ascii_case(&label.to_string()))
            .map(|o| o.text.as_str())
    }
}

/// Returns every violated invariant. An empty list means the question is valid.
pub fn validate_question(q: &Question) -> Vec<String> {
    let mut violations = Vec::new();
    if q.id.trim().is_empty() {
        violations.push("empty id".to_string());
    }
    if q.stem.trim().is_empty() {
        violations.push("empty stem".to_string());
    }
    let n = q.options.len();
    if n < MIN_OPTIONS {
        violations.push("fewer than 2 options".to_string());
    }
    if n > MAX_OPTIONS {
        violations.push("more than 8 options".to_string());
    }
    if q.options.iter().any(|o| o.text.trim().is_empty()) {
        violations.push("empty option text".to_string());
    }

    let mut parsed = Vec::with_capacity(n);
    for o in &q.options {
        let mut chars = o.label.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_uppercase() && c <= 'H' => parsed.push(c),
            _ => violations.push(format!("invalid label {:?}", o.label)),
        }
    }
    if parsed.len() == n {
        let mut sorted = parsed.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != parsed.len() {
            violations.push("duplicate labels".to_string());
        } else if parsed.iter().enumerate().any(|(i, &c)| c as usize != 'A' as usize + i) {
            violations.push("labels not contiguous".to_string());
        }
    }
    if let Some(g) = &q.gold {
        if !q.options.iter().any(|o| &o.label == g) {
            violations.push(format!("gold label {g:?} is not an option"));
        }
    }
    violations
}

fn normalize(mut q: Question) -> Question {
    for o in &mut q.options {
        o.label = o.label.trim().to_ascii_uppercase();
    }
    q.gold = q.gold.map(|g| g.trim().to_ascii_uppercase());
    q
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    /// 1-based line number in the source file.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub source_path: String,
    pub question_count: usize,
    /// SHA-256 of the file bytes, hex encoded.
    pub checksum: String,
    /// Number of accepted questions per option count.
    pub option_counts: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub questions: Vec<Question>,
    pub rejected: Vec<LineError>,
    /// Non-blank lines seen in the source.
    pub total_lines: usize,
    pub manifest: DatasetManifest,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path.display(), e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&bytes, &name, &path.display().to_string())
}

/// Parses dataset bytes. `load_dataset` is a thin wrapper over this.
pub fn parse_dataset(bytes: &[u8], name: &str, source_path: &str) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Dataset(format!("not UTF-8: {e}")))?;
    let mut questions = Vec::new();
    let mut rejected = Vec::new();
    let mut total_lines = 0;

    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total_lines += 1;
        let lineno = i + 1;
        let q: Question = match serde_json::from_str(line) {
            Ok(q) => normalize(q),
            Err(e) => {
                rejected.push(LineError { line: lineno, message: format!("malformed record: {e}") });
                continue;
            }
        };
        let violations = validate_question(&q);
        if violations.is_empty() {
            questions.push(q);
        } else {
            rejected.push(LineError { line: lineno, message: violations.join("; ") });
        }
    }

    for r in &rejected {
        log::warn!("{source_path}:{}: rejected: {}", r.line, r.message);
    }
    if questions.is_empty() {
        return Err(Error::Dataset(format!("{source_path}: zero valid records")));
    }

    let mut option_counts = BTreeMap::new();
    for q in &questions {
        *option_counts.entry(q.options.len()).or_insert(0) += 1;
    }
    let manifest = DatasetManifest {
        name: name.to_string(),
        source_path: source_path.to_string(),
        question_count: questions.len(),
        checksum: hex::encode(Sha256::digest(bytes)),
        option_counts,
    };
    Ok(Dataset { questions, rejected, total_lines, manifest })
}

/// Re-emits questions in the canonical line-delimited format.
pub fn serialize_questions(questions: &[Question]) -> String {
    let mut out = String::new();
    for q in questions {
        out.push_str(&serde_json::to_string(q).expect("question serializes"));
        out.push('\n');
    }
    out
}

/// Converts one record in the common hub layout used by CommonsenseQA, QASC,
/// OpenBookQA, ARC and RiddleSense exports:
/// `{"id", "question": {"stem", "choices": [{"label", "text"}]}, "answerKey"}`.
///
/// ARC sometimes uses numeric labels (`1`..`4`); they are remapped to letters.
pub fn convert_hub_record(line: &str) -> Result<Question> {
    #[derive(Deserialize)]
    struct Choice {
        label: String,
        text: String,
    }
    #[derive(Deserialize)]
    struct Inner {
        stem: String,
        choices: Vec<Choice>,
    }
    #[derive(Deserialize)]
    #[serde(rename_all = "camelCase")]
    struct Record {
        id: String,
        question: Inner,
        #[serde(default)]
        answer_key: Option<String>,
    }

    let r: Record = serde_json::from_str(line).map_err(|e| Error::Dataset(format!("hub record: {e}")))?;
    let remap = |l: &str| -> String {
        match l.trim().parse::<usize>() {
            Ok(n) if (1..=MAX_OPTIONS).contains(&n) => ((b'A' + n as u8 - 1) as char).to_string(),
            _ => l.trim().to_ascii_uppercase(),
        }
    };
    Ok(Question {
        id: r.id,
        stem: r.question.stem,
        options: r
            .question
            .choices
            .into_iter()
            .map(|c| AnswerOption { label: remap(&c.label), text: c.text })
            .collect(),
        gold: r.answer_key.filter(|k| !k.trim().is_empty()).map(|k| remap(&k)),
    })
}
