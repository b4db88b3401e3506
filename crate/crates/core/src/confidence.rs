//! Internal confidence from answer-position token probabilities.
//!
//! Each option gets the highest probability among the token spellings that
//! stand for it (`B`, `b`, ` B`, ...). The chosen option's value is then
//! normalized by the sum over all options.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::backends::TokenDistribution;
use crate::dataset::{Label, Question};
use crate::error::{Error, Result};

/// Token spellings recognized for each option label.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionTokenMap {
    variants: BTreeMap<Label, BTreeSet<String>>,
    reverse: HashMap<String, Label>,
}

impl OptionTokenMap {
    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.variants.keys().copied()
    }

    pub fn variants(&self, label: Label) -> Option<&BTreeSet<String>> {
        self.variants.get(&label)
    }

    pub fn label_of(&self, token: &str) -> Option<Label> {
        self.reverse.get(token).copied()
    }

    pub fn contains(&self, label: Label) -> bool {
        self.variants.contains_key(&label)
    }
}

/// `{L, l, " L", " l", "L.", "l."}` per label. The punctuated forms can be
/// left out with `include_punctuated = false`.
pub fn build_option_token_map_with(labels: &[Label], include_punctuated: bool) -> OptionTokenMap {
    let mut variants = BTreeMap::new();
    let mut reverse = HashMap::new();
    for &label in labels {
        let (u, l) = (label.as_char(), label.lower());
        let mut set: BTreeSet<String> =
            [format!("{u}"), format!("{l}"), format!(" {u}"), format!(" {l}")].into_iter().collect();
        if include_punctuated {
            set.insert(format!("{u}."));
            set.insert(format!("{l}."));
        }
        for v in &set {
            let prev = reverse.insert(v.clone(), label);
            debug_assert!(prev.is_none() || prev == Some(label), "variant {v:?} shared across labels");
        }
        variants.insert(label, set);
    }
    OptionTokenMap { variants, reverse }
}

pub fn build_option_token_map(labels: &[Label]) -> OptionTokenMap {
    build_option_token_map_with(labels, true)
}

/// How the numerator of the internal confidence is selected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumeratorMode {
    /// The adjusted probability of the option the model actually chose.
    #[default]
    Chosen,
    /// The largest adjusted probability, whichever option it belongs to.
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedConfidence {
    /// Per-option maximum probability, in label order.
    pub per_option: Vec<(Label, f64)>,
    pub chosen: Label,
    /// Numerator.
    pub p_m: f64,
    /// Sum of the per-option maxima.
    pub p_s: f64,
    pub internal_confidence: f64,
}

pub fn adjusted_internal_confidence(
    dist: &TokenDistribution,
    map: &OptionTokenMap,
    chosen: Label,
) -> Result<AdjustedConfidence> {
    adjusted_internal_confidence_with(dist, map, chosen, NumeratorMode::Chosen)
}

pub fn adjusted_internal_confidence_with(
    dist: &TokenDistribution,
    map: &OptionTokenMap,
    chosen: Label,
    mode: NumeratorMode,
) -> Result<AdjustedConfidence> {
    if !dist.is_normalized() {
        return Err(Error::Validation("distribution is not normalized to probabilities".into()));
    }
    if !map.contains(chosen) {
        return Err(Error::Validation(format!("chosen label {chosen} is not an option")));
    }

    let mut best: BTreeMap<Label, f64> = map.labels().map(|l| (l, 0.0)).collect();
    for e in &dist.entries {
        if let Some(label) = map.label_of(&e.token) {
            let slot = best.get_mut(&label).expect("label in map");
            if e.score > *slot {
                *slot = e.score;
            }
        }
    }
    let per_option: Vec<(Label, f64)> = best.into_iter().collect();
    let p_s: f64 = per_option.iter().map(|(_, p)| p).sum();
    if p_s <= 0.0 {
        return Err(Error::NoOptionMass { distribution: dist.clone() });
    }
    let p_m = match mode {
        NumeratorMode::Chosen => per_option.iter().find(|(l, _)| *l == chosen).map(|(_, p)| *p).unwrap_or(0.0),
        NumeratorMode::Argmax => per_option.iter().map(|(_, p)| *p).fold(0.0, f64::max),
    };
    Ok(AdjustedConfidence {
        per_option,
        chosen,
        p_m,
        p_s,
        internal_confidence: (p_m / p_s).clamp(0.0, 1.0),
    })
}

/// True when some option appears under two or more spellings with nonzero
/// probability, e.g. both `B` and `b`.
pub fn has_label_ambiguity(dist: &TokenDistribution, map: &OptionTokenMap) -> bool {
    let mut seen: HashMap<Label, usize> = HashMap::new();
    for e in &dist.entries {
        if e.score > 0.0 {
            if let Some(l) = map.label_of(&e.token) {
                *seen.entry(l).or_default() += 1;
            }
        }
    }
    seen.values().any(|&n| n > 1)
}

/// Finds the option label a free-text response chose.
///
/// A leading `L.`, `L)`, `(L)`, `L:` or a bare `L` wins. Otherwise the
/// response must mention exactly one option text (options whose text is
/// part of another mentioned option's text are discounted).
pub fn extract_chosen_label(response_text: &str, q: &Question) -> Result<Label> {
    let labels = q.labels();
    let mut t = response_text.trim();
    if t.get(..7).is_some_and(|p| p.eq_ignore_ascii_case("answer:")) {
        t = t[7..].trim_start();
    }

    if let Some((label, rest)) = leading_label(t).filter(|(l, _)| labels.contains(l)) {
        let rest = rest.trim_start();
        let punctuated = rest.starts_with(['.', ')', ':']);
        let names_option = q
            .option_text(label)
            .is_some_and(|text| rest.to_lowercase().starts_with(&text.to_lowercase()));
        if punctuated || rest.is_empty() || names_option {
            return Ok(label);
        }
    }

    let lower = t.to_lowercase();
    let matched: Vec<(Label, String)> = q
        .options
        .iter()
        .filter_map(|o| {
            let text = o.text.trim().to_lowercase();
            let label = Label::try_from(o.label.clone()).ok()?;
            contains_phrase(&lower, &text).then_some((label, text))
        })
        .collect();
    let unique: Vec<Label> = matched
        .iter()
        .filter(|(l, text)| !matched.iter().any(|(other, o)| other != l && o.len() > text.len() && o.contains(text.as_str())))
        .map(|(l, _)| *l)
        .collect();
    match unique.as_slice() {
        [one] => Ok(*one),
        [] => Err(Error::UnparseableAnswer(response_text.to_string())),
        _ => Err(Error::AmbiguousAnswer(response_text.to_string())),
    }
}

fn leading_label(t: &str) -> Option<(Label, &str)> {
    let t = t.strip_prefix('(').unwrap_or(t);
    let c = t.chars().next()?;
    if !c.is_ascii_alphabetic() {
        return None;
    }
    let rest = &t[1..];
    // "A" followed by another letter is a word, not a label.
    if rest.chars().next().is_some_and(char::is_alphanumeric) {
        return None;
    }
    Label::new(c).map(|l| (l, rest))
}

/// Case-sensitive containment on word boundaries.
pub(crate) fn contains_phrase(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = !haystack[..start].chars().next_back().is_some_and(is_word)
            || !needle.chars().next().is_some_and(is_word);
        let after_ok =
            !haystack[end..].chars().next().is_some_and(is_word) || !needle.chars().next_back().is_some_and(is_word);
        if before_ok && after_ok {
            return true;
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}
