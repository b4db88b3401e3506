//! Answer-elicitation and confidence-querying prompts.
//!
//! Prompt text lives in template files (see `templates/` in this crate). The
//! built-in set is compiled in; [`Templates::load_dir`] reads a customized
//! copy with the same layout.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Question;
use crate::error::{Error, Result};

/// Certainty scale offered to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Likert6,
    Likert5,
    #[serde(rename = "likert5_defs")]
    Likert5WithDefinitions,
    #[serde(rename = "numerical")]
    Numerical1To100,
}

impl Scale {
    /// The Likert categories for this scale, or `None` for the numerical scale.
    pub fn likert(self) -> Option<&'static LikertScale> {
        match self {
            Scale::Likert6 => Some(&LIKERT6),
            Scale::Likert5 => Some(&LIKERT5),
            Scale::Likert5WithDefinitions => Some(&LIKERT5_DEFS),
            Scale::Numerical1To100 => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikertCategory {
    /// Letter key shown in the prompt (`a`, `b`, ...).
    pub key: char,
    /// Canonical lowercase phrase used for matching.
    pub phrase: &'static str,
    /// Text rendered in the prompt.
    pub display: &'static str,
    pub definition: Option<&'static str>,
    pub score: f64,
}

/// Categories ordered by strictly decreasing score, starting at 1.0.
#[derive(Debug, PartialEq)]
pub struct LikertScale {
    pub name: &'static str,
    pub categories: &'static [LikertCategory],
}

impl LikertScale {
    pub fn by_phrase(&self, phrase: &str) -> Option<&LikertCategory> {
        self.categories.iter().find(|c| c.phrase == phrase)
    }

    pub fn by_key(&self, key: char) -> Option<&LikertCategory> {
        let key = key.to_ascii_lowercase();
        self.categories.iter().find(|c| c.key == key)
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.categories.iter().map(|c| c.score)
    }

    /// Lettered lines in key order, one category per line.
    pub fn render(&self) -> String {
        let mut cats: Vec<_> = self.categories.iter().collect();
        cats.sort_by_key(|c| c.key);
        cats.iter()
            .map(|c| match c.definition {
                Some(d) => format!("{}. {}: {}", c.key, c.display, d),
                None => format!("{}. {}", c.key, c.display),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

const fn cat(key: char, phrase: &'static str, display: &'static str, score: f64) -> LikertCategory {
    LikertCategory { key, phrase, display, definition: None, score }
}

pub static LIKERT6: LikertScale = LikertScale {
    name: "likert6",
    categories: &[
        cat('a', "very certain", "Very Certain", 1.0),
        cat('b', "fairly certain", "Fairly Certain", 0.8),
        cat('c', "moderately certain", "Moderately Certain", 0.6),
        cat('d', "somewhat certain", "Somewhat Certain", 0.4),
        cat('e', "not certain", "Not Certain", 0.2),
        cat('f', "very uncertain", "Very Uncertain", 0.0),
    ],
};

// The five-point scale is printed in ascending order, so the keys run backwards.
pub static LIKERT5: LikertScale = LikertScale {
    name: "likert5",
    categories: &[
        cat('e', "completely certain", "Completely certain", 1.0),
        cat('d', "fairly certain", "Fairly certain", 0.75),
        cat('c', "somewhat certain", "Somewhat certain", 0.5),
        cat('b', "slightly certain", "Slightly certain", 0.25),
        cat('a', "not certain at all", "Not certain at all", 0.0),
    ],
};

pub static LIKERT5_DEFS: LikertScale = LikertScale {
    name: "likert5_defs",
    categories: &[
        LikertCategory {
            definition: Some("Model has high confidence and no doubt in the answer."),
            ..cat('e', "completely certain", "Completely certain", 1.0)
        },
        LikertCategory {
            definition: Some("Model has a reasonable amount of confidence in the answer."),
            ..cat('d', "fairly certain", "Fairly certain", 0.75)
        },
        LikertCategory {
            definition: Some("Model has moderate confidence in the answer."),
            ..cat('c', "somewhat certain", "Somewhat certain", 0.5)
        },
        LikertCategory {
            definition: Some("Model has a small amount of confidence in the answer."),
            ..cat('b', "slightly certain", "Slightly certain", 0.25)
        },
        LikertCategory {
            definition: Some("Model has very low confidence in the answer."),
            ..cat('a', "not certain at all", "Not certain at all", 0.0)
        },
    ],
};

/// Which confidence-querying components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptVariant {
    /// Third-person framing ("A language model was asked").
    pub use_tpp: bool,
    /// Restate all options.
    pub use_oc: bool,
    pub scale: Scale,
    pub strict_grammar: bool,
    pub self_consistency_samples: u32,
}

impl Default for PromptVariant {
    fn default() -> Self {
        PromptVariant::new(true, true, Scale::Likert6)
    }
}

impl PromptVariant {
    pub const fn new(use_tpp: bool, use_oc: bool, scale: Scale) -> Self {
        PromptVariant { use_tpp, use_oc, scale, strict_grammar: false, self_consistency_samples: 1 }
    }

    pub fn with_self_consistency(mut self, samples: u32) -> Self {
        self.self_consistency_samples = samples;
        self
    }

    pub fn with_strict_grammar(mut self) -> Self {
        self.strict_grammar = true;
        self
    }

    /// Name of the CQP template this variant renders with.
    pub fn template_name(&self) -> Result<&'static str> {
        let unsupported = || Err(Error::UnsupportedVariant(format!("{self:?}")));
        if self.self_consistency_samples == 0 {
            return unsupported();
        }
        match self.scale {
            Scale::Numerical1To100 => {
                if self.strict_grammar || self.use_tpp || self.use_oc {
                    return unsupported();
                }
                Ok("numerical")
            }
            _ if self.strict_grammar => {
                if !(self.use_tpp && self.use_oc) {
                    return unsupported();
                }
                Ok("strict")
            }
            Scale::Likert6 => Ok(match (self.use_tpp, self.use_oc) {
                (false, false) => "lsu",
                (true, false) => "ttp_lsu",
                (false, true) => "oc_lsu",
                (true, true) => "full",
            }),
            Scale::Likert5 | Scale::Likert5WithDefinitions => {
                if !(self.use_tpp && self.use_oc) {
                    return unsupported();
                }
                Ok(if self.scale == Scale::Likert5 { "likert5" } else { "likert5_defs" })
            }
        }
    }

    /// Stable identifier used in records and reports.
    pub fn id(&self) -> String {
        let base = self.template_name().unwrap_or("unsupported");
        if self.self_consistency_samples > 1 {
            format!("{base}_sc{}", self.self_consistency_samples)
        } else {
            base.to_string()
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// The five component combinations compared in the ablation, in table order:
/// numerical scale, LSU, TPP+LSU, OC+LSU, TPP+LSU+OC.
pub fn enumerate_ablation_variants() -> Vec<PromptVariant> {
    vec![
        PromptVariant::new(false, false, Scale::Numerical1To100),
        PromptVariant::new(false, false, Scale::Likert6),
        PromptVariant::new(true, false, Scale::Likert6),
        PromptVariant::new(false, true, Scale::Likert6),
        PromptVariant::new(true, true, Scale::Likert6),
    ]
}

pub const CQP_TEMPLATE_NAMES: [&str; 8] =
    ["full", "lsu", "ttp_lsu", "oc_lsu", "numerical", "likert5", "likert5_defs", "strict"];

/// Loaded prompt templates. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Templates {
    answer: String,
    cqp: BTreeMap<&'static str, String>,
}

impl Templates {
    pub fn builtin() -> Self {
        let cqp = [
            ("full", include_str!("../templates/cqp/full.txt")),
            ("lsu", include_str!("../templates/cqp/lsu.txt")),
            ("ttp_lsu", include_str!("../templates/cqp/ttp_lsu.txt")),
            ("oc_lsu", include_str!("../templates/cqp/oc_lsu.txt")),
            ("numerical", include_str!("../templates/cqp/numerical.txt")),
            ("likert5", include_str!("../templates/cqp/likert5.txt")),
            ("likert5_defs", include_str!("../templates/cqp/likert5_defs.txt")),
            ("strict", include_str!("../templates/cqp/strict.txt")),
        ];
        Templates {
            answer: include_str!("../templates/answer.txt").to_string(),
            cqp: cqp.into_iter().map(|(k, v)| (k, v.to_string())).collect(),
        }
    }

    /// Reads `answer.txt` and `cqp/<name>.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |p: std::path::PathBuf| std::fs::read_to_string(&p).map_err(|e| Error::io(p.display(), e));
        let answer = read(dir.join("answer.txt"))?;
        let mut cqp = BTreeMap::new();
        for name in CQP_TEMPLATE_NAMES {
            cqp.insert(name, read(dir.join("cqp").join(format!("{name}.txt")))?);
        }
        Ok(Templates { answer, cqp })
    }

    pub fn build_answer_prompt(&self, q: &Question) -> Result<String> {
        let options_block = q
            .options
            .iter()
            .map(|o| format!("{}. {}", o.label, o.text))
            .collect::<Vec<_>>()
            .join("\n");
        render(&self.answer, &[("question", &q.stem), ("options_block", &options_block)])
    }

    pub fn build_cqp(&self, q: &Question, model_answer: &str, variant: &PromptVariant) -> Result<String> {
        if model_answer.trim().is_empty() {
            return Err(Error::Validation("empty model answer".into()));
        }
        let name = variant.template_name()?;
        let template = &self.cqp[name];
        let scale_block = variant.scale.likert().map(LikertScale::render).unwrap_or_default();
        let choices = if variant.use_oc { choices_text(q) } else { String::new() };
        render(
            template,
            &[
                ("question", &q.stem),
                ("choices_text", &choices),
                ("response_text", model_answer),
                ("scale_block", &scale_block),
            ],
        )
    }
}

impl Default for Templates {
    fn default() -> Self {
        Templates::builtin()
    }
}

/// `"A. text, B. text, ..."`.
pub fn choices_text(q: &Question) -> String {
    q.options
        .iter()
        .map(|o| format!("{}. {}", o.label, o.text))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn build_answer_prompt(q: &Question) -> String {
    Templates::builtin().build_answer_prompt(q).expect("builtin answer template renders")
}

pub fn build_cqp(q: &Question, model_answer: &str, variant: &PromptVariant) -> Result<String> {
    Templates::builtin().build_cqp(q, model_answer, variant)
}

/// Single-pass `{name}` substitution. Substituted values are not rescanned.
fn render(template: &str, vars: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after
            .find('}')
            .ok_or_else(|| Error::Template(format!("unclosed placeholder in {template:?}")))?;
        let name = &after[..end];
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Template(format!("unknown placeholder {{{name}}}")))?;
        out.push_str(value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
