//! Recipe model: parsing raw recipes, normalizing steps and rendering
//! object-status prompts.
//!
//! A [`Recipe`] is always valid once constructed: it has at least one step,
//! its step indices are exactly `1..=N`, and every [`ObjectStatus`] carries
//! the index of the step it is attached to.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::llm::{ChatMessage, LlmClient};

pub const NORMALIZE_PROMPT: &str = include_str!("../prompts/normalize_steps.v1.txt");

/// An ingredient (or intermediate product) together with the transformation it undergoes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectStatus {
    pub object: String,
    pub state: String,
    /// Owning step; implied by position in the recipe file and not serialized.
    #[serde(skip)]
    pub step_index: usize,
}

impl ObjectStatus {
    pub fn new(object: impl Into<String>, state: impl Into<String>, step_index: usize) -> Self {
        Self {
            object: object.into(),
            state: state.into(),
            step_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub text: String,
    #[serde(default)]
    pub statuses: Vec<ObjectStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecipeFile")]
pub struct Recipe {
    pub title: String,
    pub ingredients: Vec<String>,
    pub steps: Vec<Step>,
}

#[derive(Deserialize)]
struct RecipeFile {
    #[serde(default)]
    title: String,
    #[serde(default)]
    ingredients: Vec<String>,
    steps: Vec<Step>,
}

impl TryFrom<RecipeFile> for Recipe {
    type Error = Error;

    fn try_from(file: RecipeFile) -> Result<Self> {
        for (pos, step) in file.steps.iter().enumerate() {
            if step.index != pos + 1 {
                return Err(Error::InvalidRecipe(format!(
                    "step at position {} has index {}, expected {}",
                    pos + 1,
                    step.index,
                    pos + 1
                )));
            }
        }
        let steps = file
            .steps
            .into_iter()
            .map(|s| (s.text, s.statuses))
            .collect();
        Recipe::with_statuses(file.title, file.ingredients, steps)
    }
}

impl Recipe {
    /// Builds a recipe from step texts, assigning indices `1..=N`.
    pub fn new(
        title: impl Into<String>,
        ingredients: Vec<String>,
        steps: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self> {
        let steps = steps.into_iter().map(|t| (t.into(), Vec::new())).collect();
        Self::with_statuses(title, ingredients, steps)
    }

    /// Builds a recipe from `(text, statuses)` pairs. Status step indices are
    /// overwritten with the index of the step they are attached to.
    pub fn with_statuses(
        title: impl Into<String>,
        ingredients: Vec<String>,
        steps: Vec<(String, Vec<ObjectStatus>)>,
    ) -> Result<Self> {
        let steps = steps
            .into_iter()
            .enumerate()
            .map(|(pos, (text, statuses))| Step {
                index: pos + 1,
                text,
                statuses: statuses
                    .into_iter()
                    .map(|s| ObjectStatus {
                        step_index: pos + 1,
                        ..s
                    })
                    .collect(),
            })
            .collect();
        let recipe = Recipe {
            title: title.into(),
            ingredients,
            steps,
        };
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::InvalidRecipe("recipe has no steps".into()));
        }
        for (pos, step) in self.steps.iter().enumerate() {
            if step.index != pos + 1 {
                return Err(Error::InvalidRecipe(format!(
                    "step indices not contiguous at position {}",
                    pos + 1
                )));
            }
            if step.text.trim().is_empty() {
                return Err(Error::InvalidRecipe(format!("step {} has empty text", step.index)));
            }
            for status in &step.statuses {
                if status.step_index != step.index {
                    return Err(Error::InvalidRecipe(format!(
                        "status '{} {}' linked to step {} but attached to step {}",
                        status.object, status.state, status.step_index, step.index
                    )));
                }
                if status.object.trim().is_empty() || status.state.trim().is_empty() {
                    return Err(Error::InvalidRecipe(format!(
                        "step {} has a status with empty object or state",
                        step.index
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Step by 1-based index.
    pub fn step(&self, index: usize) -> Option<&Step> {
        index.checked_sub(1).and_then(|i| self.steps.get(i))
    }

    pub fn has_statuses(&self) -> bool {
        self.steps.iter().any(|s| !s.statuses.is_empty())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("recipe serializes")
    }
}

/// Renders the text prompt fed to the embedding backend for one status.
pub fn render_status_prompt(status: &ObjectStatus) -> String {
    format!("a photo of {} {}", status.object, status.state)
}

fn numbered_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*(?:step\s*)?\d+\s*[.):]\s*(.*)$").unwrap())
}

fn bullet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*[-*•+]\s+(.*)$").unwrap())
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*#*\s*(ingredients?|instructions?|directions?|method|steps?|preparation)\s*:?\s*$",
        )
        .unwrap()
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Preamble,
    Ingredients,
    Steps,
}

enum Line<'a> {
    Numbered(&'a str),
    Bullet(&'a str),
    Plain(&'a str),
}

fn classify(line: &str) -> Line<'_> {
    if let Some(c) = numbered_re().captures(line) {
        return Line::Numbered(c.get(1).unwrap().as_str());
    }
    if let Some(c) = bullet_re().captures(line) {
        return Line::Bullet(c.get(1).unwrap().as_str());
    }
    Line::Plain(line)
}

/// Parses a recipe from JSON (a normalized recipe file, or any object with a
/// `steps` array of strings) or from free text with numbered or bulleted
/// instruction lines.
pub fn parse_recipe(raw: &str) -> Result<Recipe> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::UnparseableRecipe("input is empty".into()));
    }
    if trimmed.starts_with('{') {
        if let Ok(value) = serde_json::from_str::<Value>(trimmed) {
            return parse_structured(&value);
        }
    }
    parse_free_text(trimmed)
}

fn parse_structured(value: &Value) -> Result<Recipe> {
    let steps = value
        .get("steps")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::UnparseableRecipe("JSON input has no \"steps\" array".into()))?;
    if steps.iter().all(|s| s.is_object()) && !steps.is_empty() {
        return serde_json::from_value::<Recipe>(value.clone())
            .map_err(|e| Error::UnparseableRecipe(e.to_string()));
    }
    let texts = steps
        .iter()
        .map(|s| {
            s.as_str()
                .map(clean_step_text)
                .ok_or_else(|| Error::UnparseableRecipe("steps must be strings or step objects".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let texts: Vec<String> = texts.into_iter().filter(|t| !t.is_empty()).collect();
    if texts.is_empty() {
        return Err(Error::UnparseableRecipe("steps array is empty".into()));
    }
    let title = value.get("title").and_then(Value::as_str).unwrap_or("").to_string();
    let ingredients = value
        .get("ingredients")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(Value::as_str)
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
        .unwrap_or_default();
    Recipe::new(title, ingredients, texts)
}

fn parse_free_text(text: &str) -> Result<Recipe> {
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    let has_headers = lines.iter().any(|l| header_re().is_match(l));
    let has_numbered = lines.iter().any(|l| matches!(classify(l), Line::Numbered(_)));

    let mut title = None;
    let mut ingredients = Vec::new();
    let mut steps = Vec::new();
    let mut section = Section::Preamble;

    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(c) = header_re().captures(line) {
            let word = c.get(1).unwrap().as_str().to_lowercase();
            section = if word.starts_with("ingredient") {
                Section::Ingredients
            } else {
                Section::Steps
            };
            continue;
        }
        let kind = classify(line);
        match (section, kind) {
            (Section::Ingredients, Line::Numbered(t) | Line::Bullet(t) | Line::Plain(t)) => {
                let t = t.trim();
                if !t.is_empty() {
                    ingredients.push(t.to_string());
                }
            }
            (Section::Steps, Line::Numbered(t) | Line::Bullet(t) | Line::Plain(t)) => {
                steps.push(clean_step_text(t));
            }
            (Section::Preamble, Line::Numbered(t)) => steps.push(clean_step_text(t)),
            (Section::Preamble, Line::Bullet(t)) => {
                // Without headers, bullets next to a numbered list are the ingredients.
                if has_numbered && !has_headers {
                    ingredients.push(t.trim().to_string());
                } else {
                    steps.push(clean_step_text(t));
                }
            }
            (Section::Preamble, Line::Plain(t)) => {
                if title.is_none() {
                    title = Some(t.trim().to_string());
                }
            }
        }
    }

    steps.retain(|s| !s.is_empty());
    if steps.is_empty() {
        return Err(Error::UnparseableRecipe(
            "no numbered, bulleted or sectioned instruction list found".into(),
        ));
    }
    Recipe::new(title.unwrap_or_default(), ingredients, steps)
}

/// Collapses whitespace and strips list markers such as `3.`, `Step 2:` or `-`.
fn clean_step_text(text: &str) -> String {
    let mut t = text.trim();
    loop {
        if let Some(c) = numbered_re().captures(t) {
            t = c.get(1).unwrap().as_str().trim();
        } else if let Some(c) = bullet_re().captures(t) {
            t = c.get(1).unwrap().as_str().trim();
        } else {
            break;
        }
    }
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalizes steps into single-action imperative sentences.
///
/// Without a client this only cleans whitespace and list numbering (and is
/// idempotent). With a client the whole step list is rewritten by the model;
/// statuses are dropped in that case because the steps they referred to may
/// no longer exist.
pub fn normalize_steps(recipe: &Recipe, llm: Option<&dyn LlmClient>) -> Result<Recipe> {
    let Some(llm) = llm else {
        let steps = recipe
            .steps
            .iter()
            .map(|s| (clean_step_text(&s.text), s.statuses.clone()))
            .filter(|(t, _)| !t.is_empty())
            .collect();
        return Recipe::with_statuses(recipe.title.clone(), recipe.ingredients.clone(), steps);
    };

    let payload = serde_json::json!({
        "title": recipe.title,
        "ingredients": recipe.ingredients,
        "steps": recipe.steps.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(),
    });
    let messages = [
        ChatMessage::system(NORMALIZE_PROMPT),
        ChatMessage::user(payload.to_string()),
    ];
    let reply = llm.chat(&messages)?;
    let texts = parse_step_list(&reply)?;
    Recipe::new(recipe.title.clone(), recipe.ingredients.clone(), texts)
}

/// Accepts a JSON array of strings or `{"steps": [...]}`; anything else is rejected.
fn parse_step_list(reply: &str) -> Result<Vec<String>> {
    let malformed = || {
        let preview: String = reply.chars().take(80).collect();
        Error::MalformedLlmOutput(format!("expected a JSON list of steps, got: {preview}"))
    };
    let value: Value = serde_json::from_str(reply.trim()).map_err(|_| malformed())?;
    let list = match &value {
        Value::Array(items) => items,
        Value::Object(map) => map.get("steps").and_then(Value::as_array).ok_or_else(malformed)?,
        _ => return Err(malformed()),
    };
    let texts = list
        .iter()
        .map(|v| v.as_str().map(clean_step_text).ok_or_else(malformed))
        .collect::<Result<Vec<_>>>()?;
    if texts.is_empty() || texts.iter().any(String::is_empty) {
        return Err(malformed());
    }
    Ok(texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockLlm;

    fn three_steps() -> Recipe {
        Recipe::new(
            "Omelette",
            vec!["eggs".into(), "butter".into()],
            ["Crack the eggs.", "Whisk the eggs.", "Fry the eggs in butter."],
        )
        .unwrap()
    }

    #[test]
    fn structured_input_passes_through() {
        let raw = r#"{"title": "Omelette", "ingredients": ["eggs"],
            "steps": ["Crack the eggs.", "Whisk the eggs.", "Fry the eggs."]}"#;
        let r = parse_recipe(raw).unwrap();
        assert_eq!(r.n_steps(), 3);
        assert_eq!(r.steps[1].text, "Whisk the eggs.");
        assert_eq!(r.ingredients, vec!["eggs"]);
    }

    #[test]
    fn normalized_file_round_trips_with_status_links() {
        let mut r = three_steps();
        r.steps[2].statuses.push(ObjectStatus::new("eggs", "being fried", 3));
        let back = parse_recipe(&r.to_json_pretty()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.steps[2].statuses[0].step_index, 3);
    }

    #[test]
    fn numbered_free_text() {
        let r = parse_recipe("1. Chop onion.\n2. Fry onion.").unwrap();
        assert_eq!(r.n_steps(), 2);
        assert_eq!(r.steps[0].index, 1);
        assert_eq!(r.steps[0].text, "Chop onion.");
        assert_eq!(r.steps[1].index, 2);
        assert_eq!(r.steps[1].text, "Fry onion.");
    }

    #[test]
    fn fixture_with_sections() {
        let raw = include_str!("../tests/fixtures/mushroom_toast.txt");
        let r = parse_recipe(raw).unwrap();
        assert_eq!(r.title, "Mushroom Toast");
        assert_eq!(
            r.ingredients,
            vec!["200 g mushrooms", "2 tbsp butter", "1 clove garlic, minced", "2 slices bread"]
        );
        let texts: Vec<_> = r.steps.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(
            texts,
            vec![
                "Wash the mushrooms.",
                "Slice the mushrooms.",
                "Sauté the mushrooms in butter with the garlic.",
                "Toast the bread and pour the mushrooms on top."
            ]
        );
    }

    #[test]
    fn bullets_beside_numbers_are_ingredients() {
        let r = parse_recipe("Tea\n- water\n- tea leaves\n1. Boil the water.\n2. Pour the water over the tea leaves.").unwrap();
        assert_eq!(r.title, "Tea");
        assert_eq!(r.ingredients, vec!["water", "tea leaves"]);
        assert_eq!(r.n_steps(), 2);
    }

    #[test]
    fn empty_and_listless_inputs_are_unparseable() {
        assert!(matches!(parse_recipe(""), Err(Error::UnparseableRecipe(_))));
        assert!(matches!(parse_recipe("   \n "), Err(Error::UnparseableRecipe(_))));
        assert!(matches!(
            parse_recipe("Just a paragraph about soup."),
            Err(Error::UnparseableRecipe(_))
        ));
        assert!(matches!(parse_recipe(r#"{"title": "x"}"#), Err(Error::UnparseableRecipe(_))));
    }

    #[test]
    fn rejects_non_contiguous_indices() {
        let raw = r#"{"title":"x","ingredients":[],"steps":[{"index":1,"text":"a"},{"index":3,"text":"b"}]}"#;
        assert!(parse_recipe(raw).is_err());
    }

    #[test]
    fn normalize_without_llm_is_identity_on_clean_input() {
        let r = three_steps();
        assert_eq!(normalize_steps(&r, None).unwrap(), r);
    }

    #[test]
    fn normalize_without_llm_cleans_numbering() {
        let r = Recipe::new("x", vec![], ["  2.  Chop   the onion ", "Step 3: Fry it"]).unwrap();
        let n = normalize_steps(&r, None).unwrap();
        assert_eq!(n.steps[0].text, "Chop the onion");
        assert_eq!(n.steps[1].text, "Fry it");
        assert_eq!(normalize_steps(&n, None).unwrap(), n);
    }

    #[test]
    fn normalize_with_llm_splits_compound_step() {
        let r = Recipe::new("x", vec!["onion".into()], ["Chop the onion and fry it", "Serve."]).unwrap();
        let llm = MockLlm::fixed(r#"["Chop the onion.", "Fry the onion.", "Serve."]"#);
        let n = normalize_steps(&r, Some(&llm)).unwrap();
        assert_eq!(n.n_steps(), r.n_steps() + 1);
        assert_eq!(n.steps.iter().map(|s| s.index).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn normalize_rejects_prose() {
        let r = three_steps();
        let llm = MockLlm::fixed("First crack the eggs, then whisk them and fry.");
        assert!(matches!(normalize_steps(&r, Some(&llm)), Err(Error::MalformedLlmOutput(_))));
        let llm = MockLlm::fixed(r#"[1, 2]"#);
        assert!(matches!(normalize_steps(&r, Some(&llm)), Err(Error::MalformedLlmOutput(_))));
    }

    #[test]
    fn normalize_propagates_backend_error() {
        let r = three_steps();
        let llm = MockLlm::failing("connection refused");
        assert!(matches!(normalize_steps(&r, Some(&llm)), Err(Error::Backend(_))));
    }

    #[test]
    fn prompt_template() {
        let s = ObjectStatus::new("carrots", "being chopped", 1);
        assert_eq!(render_status_prompt(&s), "a photo of carrots being chopped");
        let m = ObjectStatus::new("mushrooms", "being sautéed", 2);
        assert_eq!(render_status_prompt(&m), "a photo of mushrooms being sautéed");
        assert_eq!(render_status_prompt(&m), render_status_prompt(&m.clone()));
    }
}
