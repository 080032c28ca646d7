//! Prompt construction for contextual questions.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use oscar_core::frames::FrameRef;
use oscar_core::recipe::{render_status_prompt, Recipe};
use oscar_core::tracker::{PredictionLogEntry, ProgressState};

pub const QA_TEMPLATE: &str = include_str!("../prompts/qa.v1.txt");
pub const QA_TEMPLATE_VERSION: &str = "qa.v1";
pub const DEFAULT_LOG_WINDOW: usize = 50;
pub const NOT_STARTED: &str = "Tracking has not started; no frames have been observed yet.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExchange {
    pub question: String,
    pub answer: String,
    /// Number of log entries that existed when the prompt was built.
    pub log_cursor: usize,
}

/// Everything a prompt is built from.
pub struct QaContext<'a> {
    pub recipe: &'a Recipe,
    pub state: &'a ProgressState,
    pub log: &'a [PredictionLogEntry],
    pub last_frame: Option<&'a FrameRef>,
}

fn step_label(state: &ProgressState, index: usize) -> &'static str {
    if index == state.current {
        "current"
    } else if state.completed.contains(&index) {
        "completed"
    } else if state.missing.contains(&index) {
        "missing"
    } else {
        "remaining"
    }
}

fn list(set: &BTreeSet<usize>) -> String {
    if set.is_empty() {
        "none".into()
    } else {
        set.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
    }
}

fn render_recipe(recipe: &Recipe, state: &ProgressState) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Title: {}", if recipe.title.is_empty() { "(untitled)" } else { &recipe.title });
    if !recipe.ingredients.is_empty() {
        let _ = writeln!(out, "Ingredients:");
        for i in &recipe.ingredients {
            let _ = writeln!(out, "- {i}");
        }
    }
    let _ = writeln!(out, "Steps:");
    for step in &recipe.steps {
        let _ = writeln!(out, "{}. [{}] {}", step.index, step_label(state, step.index), step.text);
        for s in &step.statuses {
            let _ = writeln!(out, "   object status: {}", render_status_prompt(s));
        }
    }
    out.trim_end().to_string()
}

fn render_progress(recipe: &Recipe, state: &ProgressState) -> String {
    let current = match recipe.step(state.current) {
        Some(step) => format!("Current step: {}. {}", step.index, step.text),
        None => format!("Current step: none. {NOT_STARTED}"),
    };
    format!(
        "{current}\nCompleted steps: {}\nMissing steps: {}\nRemaining steps: {}",
        list(&state.completed),
        list(&state.missing),
        list(&state.remaining)
    )
}

fn render_log(log: &[PredictionLogEntry], window: usize) -> String {
    if log.is_empty() {
        return NOT_STARTED.into();
    }
    let start = log.len().saturating_sub(window);
    log[start..]
        .iter()
        .map(|e| {
            let s = &e.state_after;
            format!(
                "t={:.3}s predicted={} current={} completed=[{}] missing=[{}]",
                e.t_s,
                e.predicted,
                s.current,
                list(&s.completed),
                list(&s.missing)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Deterministic prompt: same context and question give the same text.
pub fn build_qa_prompt(ctx: &QaContext<'_>, question: &str, include_last_frame: bool, window: usize) -> String {
    let frame = match (include_last_frame, ctx.last_frame) {
        (true, Some(f)) => format!("\n## Current frame\n{} at t={:.3}s\n", f.image.describe(), f.t_s),
        _ => String::new(),
    };
    QA_TEMPLATE
        .replace("{recipe}", &render_recipe(ctx.recipe, ctx.state))
        .replace("{progress}", &render_progress(ctx.recipe, ctx.state))
        .replace("{log}", &render_log(ctx.log, window))
        .replace("{frame}", &frame)
        .replace("{question}", question.trim())
}

#[cfg(test)]
mod tests {
    use super::*;
    use oscar_core::tracker::{OnlineTracker, TrackerConfig};

    fn recipe() -> Recipe {
        Recipe::new(
            "Mushroom Toast",
            vec!["mushrooms".into()],
            ["Wash the mushrooms.", "Slice the mushrooms.", "Sauté the mushrooms."],
        )
        .unwrap()
    }

    #[test]
    fn empty_log_says_not_started() {
        let r = recipe();
        let state = ProgressState::new(3);
        let p = build_qa_prompt(
            &QaContext {
                recipe: &r,
                state: &state,
                log: &[],
                last_frame: None,
            },
            "What step am I in?",
            false,
            DEFAULT_LOG_WINDOW,
        );
        assert!(p.contains(NOT_STARTED));
        assert!(p.contains("Current step: none."));
        assert!(p.ends_with("What step am I in?\n"));
    }

    #[test]
    fn prompt_names_current_step_and_is_deterministic() {
        let r = recipe();
        let mut tr = OnlineTracker::new(3, TrackerConfig::default()).unwrap();
        let log: Vec<_> = (0..4)
            .map(|t| tr.observe(&[0.1, 0.9, 0.1], t as f64).unwrap())
            .collect();
        let ctx = QaContext {
            recipe: &r,
            state: tr.state(),
            log: &log,
            last_frame: None,
        };
        let a = build_qa_prompt(&ctx, "What step am I in?", false, DEFAULT_LOG_WINDOW);
        assert!(a.contains("Current step: 2. Slice the mushrooms."));
        assert!(a.contains("1. [missing] Wash the mushrooms."));
        assert_eq!(a, build_qa_prompt(&ctx, "What step am I in?", false, DEFAULT_LOG_WINDOW));
        let short = build_qa_prompt(&ctx, "q", false, 2);
        assert_eq!(short.matches("predicted=").count(), 2);
    }
}
