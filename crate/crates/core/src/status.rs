//! Object-status extraction.
//!
//! Two extractors share one contract: given a recipe, produce the statuses of
//! every step. [`RuleEngine`] is a deterministic verb-lexicon matcher;
//! [`LlmStatusExtractor`] asks a chat model for a JSON list.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::llm::{ChatMessage, LlmClient};
use crate::recipe::{ObjectStatus, Recipe};

pub const EXTRACT_PROMPT: &str = include_str!("../prompts/extract_statuses.v1.txt");

pub trait StatusExtractor {
    /// Statuses per step, in step order (`result.len() == recipe.n_steps()`).
    fn extract(&self, recipe: &Recipe) -> Result<Vec<Vec<ObjectStatus>>>;
}

/// Replaces every step's statuses with those produced by `extractor`.
pub fn extract_object_statuses(recipe: &Recipe, extractor: &dyn StatusExtractor) -> Result<Recipe> {
    let per_step = extractor.extract(recipe)?;
    if per_step.len() != recipe.n_steps() {
        return Err(Error::MalformedLlmOutput(format!(
            "extractor returned statuses for {} steps, recipe has {}",
            per_step.len(),
            recipe.n_steps()
        )));
    }
    let steps = recipe
        .steps
        .iter()
        .zip(per_step)
        .map(|(s, statuses)| (s.text.clone(), statuses))
        .collect();
    Recipe::with_statuses(recipe.title.clone(), recipe.ingredients.clone(), steps)
}

/// (participle, surface forms)
const LEXICON: &[(&str, &[&str])] = &[
    ("chopped", &["chop", "chops", "chopping", "chopped"]),
    ("diced", &["dice", "dices", "dicing", "diced"]),
    ("sliced", &["slice", "slices", "slicing", "sliced"]),
    ("peeled", &["peel", "peels", "peeling", "peeled"]),
    ("fried", &["fry", "fries", "frying", "fried"]),
    (
        "sautéed",
        &[
            "sauté", "saute", "sautée", "sautee", "sautés", "sautes", "sautéing", "sauteing",
            "sautéed", "sauteed",
        ],
    ),
    ("boiled", &["boil", "boils", "boiling", "boiled"]),
    ("simmered", &["simmer", "simmers", "simmering", "simmered"]),
    ("stirred", &["stir", "stirs", "stirring", "stirred"]),
    ("mixed", &["mix", "mixes", "mixing", "mixed"]),
    ("whisked", &["whisk", "whisks", "whisking", "whisked"]),
    ("cracked", &["crack", "cracks", "cracking", "cracked"]),
    ("added", &["add", "adds", "adding", "added"]),
    ("baked", &["bake", "bakes", "baking", "baked"]),
    ("poured", &["pour", "pours", "pouring", "poured"]),
    ("washed", &["wash", "washes", "washing", "washed"]),
];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "some", "your", "of", "and", "or", "in", "into", "with", "on", "onto", "for",
    "to", "until", "over", "at", "from", "then", "it", "them", "all", "each", "about", "by", "up",
    "well", "gently", "together", "thoroughly", "occasionally", "constantly", "everything",
];

const DETERMINERS: &[&str] = &["a", "an", "the", "some", "your", "all", "each"];

/// Leading words stripped from ingredient lines before matching ("2 cups", "1 large").
const MEASURES: &[&str] = &[
    "g", "kg", "mg", "ml", "l", "oz", "lb", "lbs", "cup", "cups", "tbsp", "tsp", "tablespoon",
    "tablespoons", "teaspoon", "teaspoons", "clove", "cloves", "pinch", "pinches", "can", "cans",
    "slice", "slices", "piece", "pieces", "large", "small", "medium", "handful", "bunch", "dash",
    "pound", "pounds", "ounce", "ounces", "gram", "grams", "of", "fresh",
];

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}'’]+").unwrap())
}

struct Token {
    word: String,
    start: usize,
    end: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    word_re()
        .find_iter(text)
        .map(|m| Token {
            word: m.as_str().to_lowercase(),
            start: m.start(),
            end: m.end(),
        })
        .collect()
}

fn same_word(a: &str, b: &str) -> bool {
    fn stem(w: &str) -> &str {
        if w.len() > 4 && w.ends_with("es") {
            &w[..w.len() - 2]
        } else if w.len() > 3 && w.ends_with('s') {
            &w[..w.len() - 1]
        } else {
            w
        }
    }
    a == b || stem(a) == stem(b)
}

fn participle_of(word: &str) -> Option<&'static str> {
    LEXICON
        .iter()
        .find(|(_, forms)| forms.contains(&word))
        .map(|(pp, _)| *pp)
}

fn is_numeric(word: &str) -> bool {
    word.chars().all(|c| c.is_ascii_digit() || c == '/' || c == '.' || c == '½' || c == '¼')
}

/// Lowercased words of an ingredient line, without quantities, units and trailing notes.
fn ingredient_words(ingredient: &str) -> Vec<String> {
    let head = ingredient.split([',', '(', ';']).next().unwrap_or("");
    let words: Vec<String> = tokenize(head).into_iter().map(|t| t.word).collect();
    let skip = words
        .iter()
        .take_while(|w| is_numeric(w) || MEASURES.contains(&w.as_str()))
        .count();
    words[skip..].to_vec()
}

struct Match {
    first_token: usize,
    last_token: usize,
}

/// Deterministic extractor backed by a fixed verb lexicon.
///
/// Objects are the longest ingredient word sequence found in the step; each
/// object is paired with the nearest lexicon verb before it (or the first one
/// after it). When a step has a lexicon verb but names no ingredient, the noun
/// phrase right after the verb is used instead.
#[derive(Debug, Clone, Default)]
pub struct RuleEngine;

impl RuleEngine {
    pub fn statuses_for_step(&self, step_text: &str, ingredients: &[String], step_index: usize) -> Vec<ObjectStatus> {
        let tokens = tokenize(step_text);
        let verbs: Vec<(usize, &'static str)> = tokens
            .iter()
            .enumerate()
            .filter_map(|(i, t)| participle_of(&t.word).map(|pp| (i, pp)))
            .collect();
        if verbs.is_empty() {
            return Vec::new();
        }

        let mut matches = Vec::new();
        for ingredient in ingredients {
            if let Some(m) = longest_match(&tokens, &ingredient_words(ingredient)) {
                matches.push(m);
            }
        }
        // Drop matches nested in a longer one ("oil" inside "olive oil").
        let spans: Vec<(usize, usize)> = matches.iter().map(|m| (m.first_token, m.last_token)).collect();
        matches.retain(|m| {
            !spans.iter().any(|&(a, b)| {
                a <= m.first_token && m.last_token <= b && (b - a) > (m.last_token - m.first_token)
            })
        });
        matches.sort_by_key(|m| (m.first_token, m.last_token));

        let mut objects: Vec<(usize, String)> = matches
            .iter()
            .map(|m| (m.first_token, span_text(&tokens, m.first_token, m.last_token)))
            .collect();
        if objects.is_empty() {
            objects = verbs
                .iter()
                .filter_map(|&(vi, _)| phrase_after(step_text, &tokens, vi).map(|o| (vi + 1, o)))
                .collect();
        }

        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (pos, object) in objects {
            let verb = verbs
                .iter()
                .rev()
                .find(|(vi, _)| *vi < pos)
                .or_else(|| verbs.first())
                .map(|(_, pp)| *pp)
                .expect("verbs non-empty");
            let state = format!("being {verb}");
            if seen.insert((object.clone(), state.clone())) {
                out.push(ObjectStatus::new(object, state, step_index));
            }
        }
        out
    }
}

impl StatusExtractor for RuleEngine {
    fn extract(&self, recipe: &Recipe) -> Result<Vec<Vec<ObjectStatus>>> {
        Ok(recipe
            .steps
            .iter()
            .map(|s| self.statuses_for_step(&s.text, &recipe.ingredients, s.index))
            .collect())
    }
}

fn longest_match(tokens: &[Token], words: &[String]) -> Option<Match> {
    let n = words.len();
    for len in (1..=n).rev() {
        for start in 0..=(n - len) {
            let gram = &words[start..start + len];
            if STOPWORDS.contains(&gram[0].as_str()) || STOPWORDS.contains(&gram[len - 1].as_str()) {
                continue;
            }
            if let Some(pos) = (0..tokens.len().saturating_sub(len - 1))
                .find(|&p| gram.iter().enumerate().all(|(k, w)| same_word(&tokens[p + k].word, w)))
            {
                return Some(Match {
                    first_token: pos,
                    last_token: pos + len - 1,
                });
            }
        }
    }
    None
}

fn span_text(tokens: &[Token], first: usize, last: usize) -> String {
    tokens[first..=last]
        .iter()
        .map(|t| t.word.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Up to three content words following token `verb`, stopping at punctuation or a stopword.
fn phrase_after(text: &str, tokens: &[Token], verb: usize) -> Option<String> {
    let mut words = Vec::new();
    let mut prev_end = tokens[verb].end;
    for tok in &tokens[verb + 1..] {
        let gap = &text[prev_end..tok.start];
        if gap.chars().any(|c| ",.;:!?()".contains(c)) {
            break;
        }
        prev_end = tok.end;
        if words.is_empty() && DETERMINERS.contains(&tok.word.as_str()) {
            continue;
        }
        if STOPWORDS.contains(&tok.word.as_str()) || participle_of(&tok.word).is_some() || is_numeric(&tok.word) {
            break;
        }
        words.push(tok.word.clone());
        if words.len() == 3 {
            break;
        }
    }
    (!words.is_empty()).then(|| words.join(" "))
}

/// Extractor that delegates to a chat model and validates its JSON reply.
pub struct LlmStatusExtractor<'a> {
    pub client: &'a dyn LlmClient,
}

#[derive(Deserialize)]
struct LlmStatus {
    step: usize,
    object: String,
    state: String,
}

impl StatusExtractor for LlmStatusExtractor<'_> {
    fn extract(&self, recipe: &Recipe) -> Result<Vec<Vec<ObjectStatus>>> {
        let payload = serde_json::json!({
            "title": recipe.title,
            "ingredients": recipe.ingredients,
            "steps": recipe.steps.iter().map(|s| serde_json::json!({"index": s.index, "text": s.text})).collect::<Vec<_>>(),
        });
        let reply = self.client.chat(&[
            ChatMessage::system(EXTRACT_PROMPT),
            ChatMessage::user(payload.to_string()),
        ])?;
        let malformed = |why: &str| Error::MalformedLlmOutput(format!("status list {why}"));
        let value: Value = serde_json::from_str(reply.trim()).map_err(|_| malformed("is not JSON"))?;
        let list = match value {
            Value::Array(items) => items,
            Value::Object(mut map) => match map.remove("statuses") {
                Some(Value::Array(items)) => items,
                _ => return Err(malformed("has no \"statuses\" array")),
            },
            _ => return Err(malformed("is not a list")),
        };
        let mut out = vec![Vec::new(); recipe.n_steps()];
        for item in list {
            let s: LlmStatus = serde_json::from_value(item).map_err(|e| malformed(&format!("item invalid: {e}")))?;
            let (object, state) = (s.object.trim(), s.state.trim());
            if s.step == 0 || s.step > recipe.n_steps() {
                return Err(malformed(&format!("refers to step {} of {}", s.step, recipe.n_steps())));
            }
            if object.is_empty() || state.is_empty() {
                return Err(malformed("contains an empty object or state"));
            }
            out[s.step - 1].push(ObjectStatus::new(object, state, s.step));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockLlm;

    fn one_step(text: &str, ingredients: &[&str]) -> Vec<ObjectStatus> {
        let ings: Vec<String> = ingredients.iter().map(|s| s.to_string()).collect();
        RuleEngine.statuses_for_step(text, &ings, 1)
    }

    #[test]
    fn saute_mushrooms() {
        let s = one_step("Sauté the mushrooms in butter", &["mushrooms"]);
        assert_eq!(s, vec![ObjectStatus::new("mushrooms", "being sautéed", 1)]);
    }

    #[test]
    fn chop_carrots() {
        let s = one_step("Chop carrots", &["3 carrots"]);
        assert_eq!(s, vec![ObjectStatus::new("carrots", "being chopped", 1)]);
        // Also without an ingredient list, through the noun-phrase fallback.
        assert_eq!(one_step("Chop carrots", &[]), s);
    }

    #[test]
    fn no_verb_no_ingredient_is_empty() {
        assert!(one_step("Let it rest for ten minutes.", &["flour"]).is_empty());
        assert!(one_step("Season to taste.", &["salt"]).is_empty());
    }

    #[test]
    fn longest_ingredient_wins() {
        let s = one_step("Pour the olive oil into the pan.", &["2 tbsp olive oil", "oil"]);
        assert_eq!(s, vec![ObjectStatus::new("olive oil", "being poured", 1)]);
    }

    #[test]
    fn objects_pair_with_nearest_preceding_verb() {
        let s = one_step("Chop the onion and fry the garlic.", &["1 onion", "2 cloves garlic, minced"]);
        assert_eq!(
            s,
            vec![
                ObjectStatus::new("onion", "being chopped", 1),
                ObjectStatus::new("garlic", "being fried", 1),
            ]
        );
    }

    #[test]
    fn plural_tolerance() {
        let s = one_step("Peel the potatoes.", &["1 kg potato"]);
        assert_eq!(s, vec![ObjectStatus::new("potatoes", "being peeled", 1)]);
    }

    #[test]
    fn rule_extraction_links_statuses_to_steps() {
        let r = crate::recipe::parse_recipe(include_str!("../tests/fixtures/mushroom_toast.txt")).unwrap();
        let out = extract_object_statuses(&r, &RuleEngine).unwrap();
        for step in &out.steps {
            assert!(step.statuses.iter().all(|s| s.step_index == step.index));
        }
        assert_eq!(out.steps[0].statuses, vec![ObjectStatus::new("mushrooms", "being washed", 1)]);
        assert_eq!(
            out.steps[2].statuses,
            vec![
                ObjectStatus::new("mushrooms", "being sautéed", 3),
                ObjectStatus::new("butter", "being sautéed", 3),
                ObjectStatus::new("garlic", "being sautéed", 3),
            ]
        );
        // "Toast" is not in the lexicon; "pour" is.
        assert_eq!(
            out.steps[3].statuses,
            vec![
                ObjectStatus::new("bread", "being poured", 4),
                ObjectStatus::new("mushrooms", "being poured", 4),
            ]
        );
        // byte-identical on repeat
        assert_eq!(extract_object_statuses(&r, &RuleEngine).unwrap(), out);
    }

    #[test]
    fn llm_extractor_validates_reply() {
        let r = Recipe::new("x", vec!["carrots".into()], ["Chop carrots.", "Boil water."]).unwrap();
        let ok = MockLlm::fixed(r#"[{"step": 1, "object": "carrots", "state": "being chopped"}]"#);
        let out = extract_object_statuses(&r, &LlmStatusExtractor { client: &ok }).unwrap();
        assert_eq!(out.steps[0].statuses.len(), 1);
        assert!(out.steps[1].statuses.is_empty());

        let bad_step = MockLlm::fixed(r#"[{"step": 5, "object": "x", "state": "y"}]"#);
        assert!(matches!(
            extract_object_statuses(&r, &LlmStatusExtractor { client: &bad_step }),
            Err(Error::MalformedLlmOutput(_))
        ));
        let prose = MockLlm::fixed("The carrots are chopped in step one.");
        assert!(matches!(
            extract_object_statuses(&r, &LlmStatusExtractor { client: &prose }),
            Err(Error::MalformedLlmOutput(_))
        ));
        let down = MockLlm::failing("503");
        assert!(matches!(
            extract_object_statuses(&r, &LlmStatusExtractor { client: &down }),
            Err(Error::Backend(_))
        ));
    }
}
