//! Prompt rendering for each task × grounding condition.
//!
//! Default wording is fixed per task; the grounded variants append a
//! sentence pointing the model at the rendered detection boxes. Degrading
//! the image never changes the words. Experiments can override templates
//! per `(task, boxes)` key with `{base}` / `{grounding}` placeholders.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template for {key} references unknown placeholder `{{{placeholder}}}`")]
    UnknownPlaceholder { key: String, placeholder: String },
    #[error("line {line}: expected `task.variant = template`")]
    MalformedTemplateLine { line: usize },
    #[error("line {line}: unknown template key `{key}`")]
    UnknownTemplateKey { line: usize, key: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// The three evaluation tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    CountAircraft,
    RouteStatus,
    Caption,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::CountAircraft, TaskKind::RouteStatus, TaskKind::Caption];

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::CountAircraft => "count_aircraft",
            TaskKind::RouteStatus => "route_status",
            TaskKind::Caption => "caption",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "count_aircraft" | "count" => Ok(TaskKind::CountAircraft),
            "route_status" | "route" => Ok(TaskKind::RouteStatus),
            "caption" => Ok(TaskKind::Caption),
            other => Err(format!(
                "unknown task `{other}` (expected count_aircraft, route_status, or caption)"
            )),
        }
    }
}

/// Whether the image sent with the prompt is degraded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageState {
    Raw,
    Degraded,
}

/// One cell of the condition grid: image state × box overlay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroundingCondition {
    pub image_state: ImageState,
    pub boxes: bool,
}

impl GroundingCondition {
    pub const RAW: Self = Self {
        image_state: ImageState::Raw,
        boxes: false,
    };
    pub const RAW_BOXES: Self = Self {
        image_state: ImageState::Raw,
        boxes: true,
    };
    pub const DEGRADED: Self = Self {
        image_state: ImageState::Degraded,
        boxes: false,
    };
    pub const DEGRADED_BOXES: Self = Self {
        image_state: ImageState::Degraded,
        boxes: true,
    };

    /// Grid in the canonical reporting order.
    pub const ALL: [Self; 4] = [Self::RAW, Self::DEGRADED, Self::RAW_BOXES, Self::DEGRADED_BOXES];

    /// Short machine-readable key, e.g. `raw+boxes`.
    pub fn key(&self) -> &'static str {
        match (self.image_state, self.boxes) {
            (ImageState::Raw, false) => "raw",
            (ImageState::Raw, true) => "raw+boxes",
            (ImageState::Degraded, false) => "degraded",
            (ImageState::Degraded, true) => "degraded+boxes",
        }
    }

    /// Human-readable row label, e.g. `Raw + bounding boxes`.
    pub fn label(&self) -> &'static str {
        match (self.image_state, self.boxes) {
            (ImageState::Raw, false) => "Raw",
            (ImageState::Raw, true) => "Raw + bounding boxes",
            (ImageState::Degraded, false) => "Degraded",
            (ImageState::Degraded, true) => "Degraded + bounding boxes",
        }
    }
}

impl fmt::Display for GroundingCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for GroundingCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::RAW),
            "raw+boxes" => Ok(Self::RAW_BOXES),
            "degraded" => Ok(Self::DEGRADED),
            "degraded+boxes" => Ok(Self::DEGRADED_BOXES),
            other => Err(format!(
                "unknown condition `{other}` (expected raw, raw+boxes, degraded, or degraded+boxes)"
            )),
        }
    }
}

/// Prompt text bound to the task and condition it was rendered for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub task: TaskKind,
    pub condition: GroundingCondition,
}

fn base_text(task: TaskKind) -> &'static str {
    match task {
        TaskKind::CountAircraft => "How many aircraft are there in this picture?",
        TaskKind::RouteStatus => "Which route is unobstructed?",
        TaskKind::Caption => "What does the image depict?",
    }
}

fn grounding_text(task: TaskKind) -> &'static str {
    match task {
        TaskKind::CountAircraft => {
            "Use the aircraft detected by YOLO indicated by the bounding boxes to aid your assessment."
        }
        TaskKind::RouteStatus => {
            "Use the vehicles detected by YOLO indicated by the bounding boxes to aid your assessment."
        }
        TaskKind::Caption => {
            "Use the aircraft detected by YOLO indicated by the bounding boxes to aid your description."
        }
    }
}

/// Per-`(task, boxes)` template overrides. Templates may reference `{base}`
/// and `{grounding}`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptTemplates {
    templates: BTreeMap<(TaskKind, bool), String>,
}

impl PromptTemplates {
    pub fn set(&mut self, task: TaskKind, boxes: bool, template: impl Into<String>) {
        self.templates.insert((task, boxes), template.into());
    }

    pub fn get(&self, task: TaskKind, boxes: bool) -> Option<&str> {
        self.templates.get(&(task, boxes)).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Parses the override file format: one `task.variant = template` per
    /// line, where `variant` is `plain` or `boxes`. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut out = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, template) = trimmed
                .split_once('=')
                .ok_or(PromptError::MalformedTemplateLine { line })?;
            let key = key.trim();
            let template = template.trim();
            let (task_str, variant) = key
                .split_once('.')
                .ok_or(PromptError::MalformedTemplateLine { line })?;
            let task = TaskKind::from_str(task_str).map_err(|_| PromptError::UnknownTemplateKey {
                line,
                key: key.to_string(),
            })?;
            let boxes = match variant {
                "plain" => false,
                "boxes" => true,
                _ => {
                    return Err(PromptError::UnknownTemplateKey {
                        line,
                        key: key.to_string(),
                    })
                }
            };
            out.set(task, boxes, template);
        }
        Ok(out)
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

fn render_template(
    key: &str,
    template: &str,
    base: &str,
    grounding: &str,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if c != '{' {
            out.push(c);
            continue;
        }
        let mut name = String::new();
        let mut closed = false;
        for (_, c2) in chars.by_ref() {
            if c2 == '}' {
                closed = true;
                break;
            }
            name.push(c2);
        }
        if !closed {
            return Err(PromptError::UnknownPlaceholder {
                key: key.to_string(),
                placeholder: name,
            });
        }
        match name.as_str() {
            "base" => out.push_str(base),
            "grounding" => out.push_str(grounding),
            _ => {
                return Err(PromptError::UnknownPlaceholder {
                    key: key.to_string(),
                    placeholder: name,
                })
            }
        }
    }
    Ok(out)
}

/// Renders the prompt for a task under a grounding condition. Without
/// overrides the default wording is used; the degraded variants reuse the
/// raw wording since degradation changes the image, not the question.
pub fn build_prompt(
    task: TaskKind,
    condition: GroundingCondition,
    overrides: Option<&PromptTemplates>,
) -> Result<RenderedPrompt, PromptError> {
    let base = base_text(task);
    let grounding = grounding_text(task);
    let text = match overrides.and_then(|t| t.get(task, condition.boxes)) {
        Some(template) => {
            let key = format!(
                "{}.{}",
                task.name(),
                if condition.boxes { "boxes" } else { "plain" }
            );
            render_template(&key, template, base, grounding)?
        }
        None if condition.boxes => format!("{base} {grounding}"),
        None => base.to_string(),
    };
    Ok(RenderedPrompt {
        text,
        task,
        condition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_count_prompt_is_verbatim() {
        let p = build_prompt(TaskKind::CountAircraft, GroundingCondition::RAW, None).unwrap();
        assert_eq!(p.text, "How many aircraft are there in this picture?");
    }

    #[test]
    fn golden_default_prompts() {
        let cases = [
            (
                TaskKind::CountAircraft,
                false,
                "How many aircraft are there in this picture?",
            ),
            (
                TaskKind::CountAircraft,
                true,
                "How many aircraft are there in this picture? Use the aircraft detected by YOLO indicated by the bounding boxes to aid your assessment.",
            ),
            (TaskKind::RouteStatus, false, "Which route is unobstructed?"),
            (
                TaskKind::RouteStatus,
                true,
                "Which route is unobstructed? Use the vehicles detected by YOLO indicated by the bounding boxes to aid your assessment.",
            ),
            (TaskKind::Caption, false, "What does the image depict?"),
            (
                TaskKind::Caption,
                true,
                "What does the image depict? Use the aircraft detected by YOLO indicated by the bounding boxes to aid your description.",
            ),
        ];
        for (task, boxes, expected) in cases {
            let condition = GroundingCondition {
                image_state: ImageState::Raw,
                boxes,
            };
            let p = build_prompt(task, condition, None).unwrap();
            assert_eq!(p.text, expected, "{task} boxes={boxes}");
        }
    }

    #[test]
    fn caption_boxes_prompt_mentions_description() {
        let p = build_prompt(TaskKind::Caption, GroundingCondition::RAW_BOXES, None).unwrap();
        assert!(p.text.contains("aid your description"));
    }

    #[test]
    fn degraded_text_matches_raw_text() {
        for task in TaskKind::ALL {
            for boxes in [false, true] {
                let raw = build_prompt(
                    task,
                    GroundingCondition {
                        image_state: ImageState::Raw,
                        boxes,
                    },
                    None,
                )
                .unwrap();
                let degraded = build_prompt(
                    task,
                    GroundingCondition {
                        image_state: ImageState::Degraded,
                        boxes,
                    },
                    None,
                )
                .unwrap();
                assert_eq!(raw.text, degraded.text);
            }
        }
    }

    #[test]
    fn grounding_markers_track_boxes_flag() {
        for task in TaskKind::ALL {
            for condition in GroundingCondition::ALL {
                let p = build_prompt(task, condition, None).unwrap();
                assert_eq!(p.text.contains("YOLO"), condition.boxes);
                assert_eq!(p.text.contains("bounding boxes"), condition.boxes);
            }
        }
    }

    #[test]
    fn override_templates_render() {
        let text = "\
# probe prompt sensitivity
count_aircraft.plain = {base} Answer with a single number.
count_aircraft.boxes = {grounding} {base}
";
        let templates = PromptTemplates::parse(text).unwrap();
        let plain = build_prompt(
            TaskKind::CountAircraft,
            GroundingCondition::RAW,
            Some(&templates),
        )
        .unwrap();
        assert_eq!(
            plain.text,
            "How many aircraft are there in this picture? Answer with a single number."
        );
        let boxes = build_prompt(
            TaskKind::CountAircraft,
            GroundingCondition::RAW_BOXES,
            Some(&templates),
        )
        .unwrap();
        assert!(boxes.text.starts_with("Use the aircraft detected by YOLO"));

        // Tasks without overrides fall back to defaults.
        let caption = build_prompt(TaskKind::Caption, GroundingCondition::RAW, Some(&templates)).unwrap();
        assert_eq!(caption.text, "What does the image depict?");
    }

    #[test]
    fn unknown_placeholder_is_an_error() {
        let mut templates = PromptTemplates::default();
        templates.set(TaskKind::Caption, false, "{base} {scene_id}");
        match build_prompt(TaskKind::Caption, GroundingCondition::RAW, Some(&templates)) {
            Err(PromptError::UnknownPlaceholder { placeholder, .. }) => {
                assert_eq!(placeholder, "scene_id")
            }
            other => panic!("expected placeholder error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_template_lines_are_rejected() {
        assert!(matches!(
            PromptTemplates::parse("count_aircraft.plain {base}"),
            Err(PromptError::MalformedTemplateLine { line: 1 })
        ));
        assert!(matches!(
            PromptTemplates::parse("count_aircraft.extra = {base}"),
            Err(PromptError::UnknownTemplateKey { .. })
        ));
    }

    #[test]
    fn condition_round_trips_via_key() {
        for condition in GroundingCondition::ALL {
            assert_eq!(condition.key().parse::<GroundingCondition>().unwrap(), condition);
        }
    }
}
