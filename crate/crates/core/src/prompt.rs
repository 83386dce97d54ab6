//! Prompt and completion assembly.
//!
//! Three strings delimit everything the model sees:
//! - `answer_cue` (default `" →"`) ends each few-shot input and the query, telling
//!   the model where its answer starts;
//! - `prompt_suffix` (default `"\n\n###\n\n"`) terminates fine-tune prompts and the
//!   matching inference prompts;
//! - `completion_stop` (default `" END"`) terminates fine-tune completions.
//!
//! Completions start with a single space when `leading_whitespace` is set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QA_TASK_PHRASE: &str = "The task is to extract answers from the given text.";

/// Instruction sentence for few-shot NER on one category.
///
/// `DES` yields "The task is to extract the descriptive entities of materials in
/// the given text"; other built-in categories follow the same pattern, unknown
/// ones fall back to the raw category name.
pub fn ner_task_phrase(category: &str) -> String {
    let what = match category {
        "MAT" => "inorganic materials",
        "SPL" => "symmetry or phase labels",
        "DSC" => "sample descriptors",
        "PRO" => "material properties",
        "APL" => "material applications",
        "SMT" => "synthesis methods",
        "CMT" => "characterization methods",
        "BASEMAT" => "base materials",
        "DOPANT" => "doping agents",
        "DOPMODQ" => "doping modifiers and quantities",
        "DES" => "descriptive entities of materials",
        "MOR" => "morphological entities of materials",
        other => return format!("The task is to extract the {other} entities in the given text"),
    };
    format!("The task is to extract the {what} in the given text")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub task_phrase: Option<String>,
    pub example_separator: String,
    pub answer_cue: String,
    pub prompt_suffix: String,
    pub completion_stop: String,
    pub leading_whitespace: bool,
    pub max_total_tokens: usize,
    /// Tokens reserved for the completion when only a prompt is budgeted.
    pub completion_allowance: usize,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            task_phrase: None,
            example_separator: "\n\n".into(),
            answer_cue: " →".into(),
            prompt_suffix: "\n\n###\n\n".into(),
            completion_stop: " END".into(),
            leading_whitespace: true,
            max_total_tokens: 4097,
            completion_allowance: 256,
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_suffix.is_empty() {
            return Err(Error::Config("prompt_suffix must be non-empty".into()));
        }
        if self.completion_stop.is_empty() {
            return Err(Error::Config("completion_stop must be non-empty".into()));
        }
        if self.completion_stop == self.prompt_suffix {
            return Err(Error::Config("completion_stop must differ from prompt_suffix".into()));
        }
        Ok(())
    }

    /// Strips the completion framing (leading space, stop string) from model output.
    pub fn clean_completion<'a>(&self, completion: &'a str) -> &'a str {
        let text = completion
            .strip_suffix(self.completion_stop.as_str())
            .unwrap_or(completion);
        text.trim()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCompletionPair {
    pub prompt: String,
    pub completion: String,
}

impl PromptCompletionPair {
    pub fn check(&self, template: &PromptTemplate) -> std::result::Result<(), String> {
        if !self.prompt.ends_with(&template.prompt_suffix) {
            return Err(format!("prompt does not end with {:?}", template.prompt_suffix));
        }
        if template.leading_whitespace {
            let mut chars = self.completion.chars();
            if chars.next() != Some(' ') || chars.next().is_some_and(char::is_whitespace) {
                return Err("completion must start with exactly one space".into());
            }
        }
        if !self.completion.ends_with(&template.completion_stop) {
            return Err(format!("completion does not end with {:?}", template.completion_stop));
        }
        Ok(())
    }
}

/// Counts model tokens in a string.
///
/// Implementations must return 0 for `""` and be sub-additive up to one token:
/// `count(a + b) <= count(a) + count(b) + 1`.
pub trait TokenCounter: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Deterministic stand-in for a BPE tokenizer: each maximal run of alphanumeric
/// characters is one token, every other non-whitespace character is one token,
/// whitespace is free.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenCounter;

impl ApproxTokenCounter {
    /// Byte offset just past each token, in order.
    pub fn token_ends(text: &str) -> Vec<usize> {
        let mut ends = Vec::new();
        let mut in_word = false;
        for (b, ch) in text.char_indices() {
            if ch.is_alphanumeric() {
                if in_word {
                    *ends.last_mut().expect("open word") = b + ch.len_utf8();
                } else {
                    ends.push(b + ch.len_utf8());
                }
                in_word = true;
            } else {
                in_word = false;
                if !ch.is_whitespace() {
                    ends.push(b + ch.len_utf8());
                }
            }
        }
        ends
    }
}

impl TokenCounter for ApproxTokenCounter {
    fn name(&self) -> &str {
        "approx-word-punct"
    }

    fn count(&self, text: &str) -> usize {
        Self::token_ends(text).len()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub fn build_finetune_pair(input: &str, target: &str, template: &PromptTemplate) -> Result<PromptCompletionPair> {
    if input.is_empty() {
        return Err(Error::Validation("fine-tune input is empty".into()));
    }
    if target.is_empty() {
        return Err(Error::Validation("fine-tune target is empty".into()));
    }
    let lead = if template.leading_whitespace { " " } else { "" };
    Ok(PromptCompletionPair {
        prompt: format!("{input}{}", template.prompt_suffix),
        completion: format!("{lead}{target}{}", template.completion_stop),
    })
}

/// Inference prompt matching [`build_finetune_pair`]'s prompt side.
pub fn build_finetuned_prompt(input: &str, template: &PromptTemplate) -> String {
    format!("{input}{}", template.prompt_suffix)
}

/// `[phrase sep] (input cue " " target sep)* query cue`
pub fn build_fewshot_prompt(
    task_phrase: Option<&str>,
    examples: &[(String, String)],
    query: &str,
    template: &PromptTemplate,
) -> String {
    let sep = &template.example_separator;
    let cue = &template.answer_cue;
    let mut out = String::new();
    if let Some(phrase) = task_phrase {
        out.push_str(phrase);
        out.push_str(sep);
    }
    for (input, target) in examples {
        out.push_str(input);
        out.push_str(cue);
        out.push(' ');
        out.push_str(target);
        out.push_str(sep);
    }
    out.push_str(query);
    out.push_str(cue);
    out
}

/// The context/question block shared by every QA prompt variant.
pub fn qa_block(question: &str, context: &str) -> String {
    format!("Context: {context}\nQuestion: {question}")
}

pub fn build_qa_prompt(question: &str, context: &str, task_informed: bool, template: &PromptTemplate) -> String {
    let mut out = String::new();
    if task_informed {
        out.push_str(QA_TASK_PHRASE);
        out.push_str(&template.example_separator);
    }
    out.push_str(&qa_block(question, context));
    out.push_str(&template.answer_cue);
    out
}

pub enum Budgeted<'a> {
    Pair(&'a PromptCompletionPair),
    /// A bare prompt; the template's completion allowance is added.
    Prompt(&'a str),
}

/// Returns the counted total when it fits in `template.max_total_tokens`.
pub fn enforce_budget(item: Budgeted<'_>, counter: &dyn TokenCounter, template: &PromptTemplate) -> Result<usize> {
    let counted = match item {
        Budgeted::Pair(p) => counter.count(&p.prompt) + counter.count(&p.completion),
        Budgeted::Prompt("") => 0,
        Budgeted::Prompt(p) => counter.count(p) + template.completion_allowance,
    };
    if counted > template.max_total_tokens {
        return Err(Error::Budget {
            counted,
            limit: template.max_total_tokens,
        });
    }
    Ok(counted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SENTENCE: &str = "LiCoO₂ and LiFePO₄ are used as cathodes of secondary batteries";
    const MARKED: &str = "@@LiCoO₂## and @@LiFePO₄## are used as cathodes of secondary batteries";

    #[test]
    fn finetune_pair_conventions() {
        let t = PromptTemplate::default();
        let pair = build_finetune_pair(SENTENCE, MARKED, &t).unwrap();
        assert!(pair.prompt.ends_with("\n\n###\n\n"));
        assert_eq!(pair.prompt, format!("{SENTENCE}\n\n###\n\n"));
        assert_eq!(pair.completion, format!(" {MARKED} END"));
        assert!(pair.check(&t).is_ok());
    }

    #[test]
    fn finetune_pair_rejects_empty_target() {
        assert!(build_finetune_pair(SENTENCE, "", &PromptTemplate::default()).is_err());
    }

    #[test]
    fn finetune_pair_without_leading_space() {
        let t = PromptTemplate {
            leading_whitespace: false,
            ..Default::default()
        };
        let pair = build_finetune_pair("x", "battery", &t).unwrap();
        assert!(pair.completion.starts_with('b'));
        assert!(pair.check(&t).is_ok());
    }

    #[test]
    fn pair_check_catches_each_invariant() {
        let t = PromptTemplate::default();
        let bad_suffix = PromptCompletionPair {
            prompt: "x".into(),
            completion: " y END".into(),
        };
        let bad_space = PromptCompletionPair {
            prompt: "x\n\n###\n\n".into(),
            completion: "y END".into(),
        };
        let bad_stop = PromptCompletionPair {
            prompt: "x\n\n###\n\n".into(),
            completion: " y".into(),
        };
        for p in [bad_suffix, bad_space, bad_stop] {
            assert!(p.check(&t).is_err());
        }
    }

    #[test]
    fn fewshot_with_des_task_phrase() {
        let t = PromptTemplate::default();
        let phrase = ner_task_phrase("DES");
        assert_eq!(
            phrase,
            "The task is to extract the descriptive entities of materials in the given text"
        );
        let ex = vec![(
            "spherical Au nanoparticles".to_string(),
            "@@spherical## Au nanoparticles".to_string(),
        )];
        let p = build_fewshot_prompt(Some(&phrase), &ex, "dumbbell-like AuNRs", &t);
        assert_eq!(p.lines().next().unwrap(), phrase);
    }

    #[test]
    fn fewshot_zero_examples() {
        let t = PromptTemplate::default();
        assert_eq!(build_fewshot_prompt(Some("Do it."), &[], "q", &t), "Do it.\n\nq →");
        assert_eq!(build_fewshot_prompt(None, &[], "q", &t), "q →");
    }

    #[test]
    fn fewshot_two_examples_two_separators() {
        let t = PromptTemplate::default();
        let ex = vec![("a".to_string(), "A".to_string()), ("b".to_string(), "B".to_string())];
        let p = build_fewshot_prompt(None, &ex, "c", &t);
        assert_eq!(p.matches("\n\n").count(), 2);
        assert_eq!(p, "a → A\n\nb → B\n\nc →");
    }

    #[test]
    fn qa_prompt_phrase_toggle() {
        let t = PromptTemplate::default();
        let on = build_qa_prompt("What is the anode?", "The anode is Li metal.", true, &t);
        let off = build_qa_prompt("What is the anode?", "The anode is Li metal.", false, &t);
        assert!(on.contains("The task is to extract answers from the given text."));
        assert!(!off.contains(QA_TASK_PHRASE));
        assert_eq!(on, format!("{QA_TASK_PHRASE}\n\n{off}"));
        assert_eq!(
            on,
            build_qa_prompt("What is the anode?", "The anode is Li metal.", true, &t)
        );
        assert!(off.starts_with("Context:") && off.ends_with(" →"));
    }

    #[test]
    fn budget_examples() {
        let t = PromptTemplate::default();
        let long = PromptCompletionPair {
            prompt: "w ".repeat(4990),
            completion: "w ".repeat(10),
        };
        match enforce_budget(Budgeted::Pair(&long), &WhitespaceCounter, &t) {
            Err(Error::Budget { counted, limit }) => assert_eq!((counted, limit), (5000, 4097)),
            other => panic!("{other:?}"),
        }
        let empty = PromptCompletionPair {
            prompt: String::new(),
            completion: String::new(),
        };
        assert_eq!(
            enforce_budget(Budgeted::Pair(&empty), &WhitespaceCounter, &t).unwrap(),
            0
        );
        assert_eq!(enforce_budget(Budgeted::Prompt(""), &WhitespaceCounter, &t).unwrap(), 0);
        assert_eq!(WhitespaceCounter.count("a b c"), 3);
    }

    #[test]
    fn bare_prompt_reserves_allowance() {
        let t = PromptTemplate::default();
        assert_eq!(
            enforce_budget(Budgeted::Prompt("a b c"), &WhitespaceCounter, &t).unwrap(),
            259
        );
        let big = "w ".repeat(4097 - 256 + 1);
        assert!(enforce_budget(Budgeted::Prompt(&big), &WhitespaceCounter, &t).is_err());
    }

    #[test]
    fn approx_counter_segments() {
        let c = ApproxTokenCounter;
        assert_eq!(c.count(""), 0);
        assert_eq!(c.count("\n\n###\n\n"), 3);
        assert_eq!(c.count("LiCoO₂ and LiFePO₄"), 3);
        assert_eq!(c.count("@@Fe## alloy"), 6);
    }

    proptest! {
        #[test]
        fn approx_counter_subadditive(a in "\\PC{0,40}", b in "\\PC{0,40}") {
            let c = ApproxTokenCounter;
            let joined = format!("{a}{b}");
            prop_assert!(c.count(&joined) <= c.count(&a) + c.count(&b) + 1);
        }

        #[test]
        fn fewshot_contains_examples_in_order(items in proptest::collection::vec(("[a-z]{3,8}", "[A-Z]{3,8}"), 0..6)) {
            let t = PromptTemplate::default();
            let p = build_fewshot_prompt(None, &items, "query", &t);
            let mut from = 0;
            for (input, target) in &items {
                let block = format!("{input} → {target}\n\n");
                let at = p[from..].find(&block);
                prop_assert!(at.is_some());
                from += at.unwrap() + block.len();
            }
            prop_assert!(p.ends_with("query →"));
        }
    }
}
