//! Parsing verbalized certainty replies.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::confidence::contains_phrase;
use crate::prompting::{LikertScale, LIKERT5, LIKERT6};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertaintyFailure {
    /// More than one distinct category named.
    MultipleCategories,
    /// No category named.
    NoCategory,
    /// No category, but the reply restates the question's options.
    OptionReiteration,
    /// Numerical reply missing or outside 1..=100.
    NumericOutOfRange,
}

impl CertaintyFailure {
    pub const ALL: [CertaintyFailure; 4] = [
        CertaintyFailure::MultipleCategories,
        CertaintyFailure::NoCategory,
        CertaintyFailure::OptionReiteration,
        CertaintyFailure::NumericOutOfRange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CertaintyFailure::MultipleCategories => "multiple_categories",
            CertaintyFailure::NoCategory => "no_category",
            CertaintyFailure::OptionReiteration => "option_reiteration",
            CertaintyFailure::NumericOutOfRange => "numeric_out_of_range",
        }
    }
}

/// Either a parsed certainty (`score`, plus `category` for Likert scales) or a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertaintyOutcome {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
    pub raw_text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<CertaintyFailure>,
    /// The letter key next to the phrase pointed at a different category.
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub key_conflict: bool,
}

impl CertaintyOutcome {
    fn success(category: Option<&str>, score: f64, raw: &str) -> Self {
        CertaintyOutcome {
            category: category.map(str::to_string),
            score: Some(score),
            raw_text: raw.to_string(),
            failure: None,
            key_conflict: false,
        }
    }

    fn failed(failure: CertaintyFailure, raw: &str) -> Self {
        CertaintyOutcome { category: None, score: None, raw_text: raw.to_string(), failure: Some(failure), key_conflict: false }
    }

    pub fn is_success(&self) -> bool {
        self.failure.is_none()
    }
}

fn phrase_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let mut phrases: Vec<&str> = LIKERT6
            .categories
            .iter()
            .chain(LIKERT5.categories)
            .map(|c| c.phrase)
            .collect();
        phrases.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        phrases.dedup();
        let alts: Vec<String> = phrases
            .iter()
            .map(|p| p.split(' ').map(regex::escape).collect::<Vec<_>>().join(r"[\W_]+"))
            .collect();
        Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("phrase regex")
    })
}

fn key_before_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:^|[\s(])([a-j])[.)]\s*$").expect("key regex"))
}

fn leading_key_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(?:answer:\s*)?\(?([a-j])(?:[.):]|\s*$)").expect("leading key regex"))
}

fn canonical(matched: &str) -> String {
    matched
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses a Likert certainty reply.
///
/// Category phrases are matched longest first, ignoring case and
/// punctuation. A letter key (`a.`) right before a phrase is checked against
/// it; on disagreement the phrase wins and `key_conflict` is set. A reply
/// without any phrase that restates two or more options is an option
/// reiteration; otherwise it may still select a category by a leading key letter.
///
/// `option_texts` are the question's options, used to recognize replies that
/// only restate them.
pub fn parse_certainty(response: &str, scale: &LikertScale, option_texts: &[&str]) -> CertaintyOutcome {
    let mut found: Vec<&str> = Vec::new();
    let mut conflict = false;
    for m in phrase_regex().find_iter(response) {
        let phrase = canonical(m.as_str());
        let Some(cat) = scale.by_phrase(&phrase) else {
            continue;
        };
        if let Some(k) = key_before_regex().captures(&response[..m.start()]) {
            let key = k[1].chars().next().expect("one letter");
            if scale.by_key(key).is_some_and(|kc| kc.phrase != cat.phrase) {
                conflict = true;
                log::debug!("certainty key {key:?} disagrees with phrase {:?}", cat.phrase);
            }
        }
        if !found.contains(&cat.phrase) {
            found.push(cat.phrase);
        }
    }

    match found.as_slice() {
        [one] => {
            let cat = scale.by_phrase(one).expect("phrase from scale");
            let mut out = CertaintyOutcome::success(Some(cat.phrase), cat.score, response);
            out.key_conflict = conflict;
            return out;
        }
        [_, _, ..] => return CertaintyOutcome::failed(CertaintyFailure::MultipleCategories, response),
        [] => {}
    }

    let lower = response.to_lowercase();
    let mut restated: Vec<String> = option_texts
        .iter()
        .map(|t| t.trim().to_lowercase())
        .filter(|t| contains_phrase(&lower, t))
        .collect();
    restated.sort();
    restated.dedup();
    if restated.len() >= 2 {
        return CertaintyOutcome::failed(CertaintyFailure::OptionReiteration, response);
    }

    if let Some(c) = leading_key_regex().captures(response.trim()) {
        let key = c[1].chars().next().expect("one letter");
        if let Some(cat) = scale.by_key(key) {
            return CertaintyOutcome::success(Some(cat.phrase), cat.score, response);
        }
    }
    CertaintyOutcome::failed(CertaintyFailure::NoCategory, response)
}

/// Parses a 1-100 reply: the first integer in the text, divided by 100.
pub fn parse_numeric_certainty(response: &str) -> CertaintyOutcome {
    let bytes = response.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let negative = start > 0 && bytes[start - 1] == b'-';
            let value: Option<u64> = response[start..i].parse().ok();
            return match value {
                Some(v) if !negative && (1..=100).contains(&v) => {
                    CertaintyOutcome::success(None, v as f64 / 100.0, response)
                }
                _ => CertaintyOutcome::failed(CertaintyFailure::NumericOutOfRange, response),
            };
        }
        i += 1;
    }
    CertaintyOutcome::failed(CertaintyFailure::NumericOutOfRange, response)
}

/// Majority vote over repeated samples.
///
/// More than half failing yields the most frequent failure. Otherwise the
/// most frequent successful value wins, ties going to the lower score.
/// The result does not depend on input order.
pub fn self_consistency_vote(outcomes: &[CertaintyOutcome]) -> CertaintyOutcome {
    let raw = || {
        let mut texts: Vec<&str> = outcomes.iter().map(|o| o.raw_text.as_str()).collect();
        texts.sort_unstable();
        texts.join("\n---\n")
    };
    let failures: Vec<CertaintyFailure> = outcomes.iter().filter_map(|o| o.failure).collect();
    if outcomes.is_empty() || failures.len() == outcomes.len() {
        return CertaintyOutcome::failed(CertaintyFailure::NoCategory, &raw());
    }
    if failures.len() * 2 > outcomes.len() {
        let mut counts: BTreeMap<CertaintyFailure, usize> = BTreeMap::new();
        for f in &failures {
            *counts.entry(*f).or_default() += 1;
        }
        let max = counts.values().copied().max().unwrap_or(0);
        let failure = counts.into_iter().find(|(_, n)| *n == max).map(|(f, _)| f).expect("nonempty");
        return CertaintyOutcome::failed(failure, &raw());
    }

    // group by (score bits, category)
    let mut groups: BTreeMap<(u64, Option<&str>), Vec<&CertaintyOutcome>> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| o.is_success()) {
        let score = o.score.expect("successful outcome has a score");
        groups.entry((score.to_bits(), o.category.as_deref())).or_default().push(o);
    }
    let max = groups.values().map(Vec::len).max().expect("at least one success");
    let winner = groups
        .into_iter()
        .filter(|(_, v)| v.len() == max)
        .min_by(|((a, _), _), ((b, _), _)| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)))
        .map(|(_, v)| v)
        .expect("nonempty");
    let representative = winner.iter().min_by(|a, b| a.raw_text.cmp(&b.raw_text)).expect("nonempty");
    CertaintyOutcome {
        category: representative.category.clone(),
        score: representative.score,
        raw_text: raw(),
        failure: None,
        key_conflict: winner.iter().any(|o| o.key_conflict),
    }
}
