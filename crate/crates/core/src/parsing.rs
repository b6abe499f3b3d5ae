//! Rule-based extraction of structured answers from free-text VLM replies.
//!
//! Every input string maps to exactly one [`ParsedAnswer`]; extraction never
//! fails. Counting applies rules in precedence order: refusal phrases, then
//! `at least N`, then `approximately N`, then bare `N <keyword>` mentions
//! (digits or the number words zero through twenty), and finally vague
//! quantifiers collapse to `Undefined`. A numeric mention only counts when
//! an object keyword sits within four tokens of it; the nearest keyword wins
//! and ties break toward the earliest mention.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gateway::{VlmExchange, VlmOutcome};
use crate::prompting::TaskKind;

/// Structured result extracted from a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParsedAnswer {
    Count {
        value: u32,
        qualifier: CountQualifier,
    },
    RouteAssessment {
        entries: Vec<(String, RouteStatus)>,
    },
    Caption {
        text: String,
    },
    Undefined {
        reason: UndefinedReason,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountQualifier {
    Exact,
    AtLeast,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteStatus {
    Unobstructed,
    PartiallyObstructed,
    Obstructed,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedReason {
    Refusal,
    NoNumber,
    EmptyResponse,
    BackendFailure,
}

impl ParsedAnswer {
    pub fn count(&self) -> Option<u32> {
        match self {
            ParsedAnswer::Count { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn is_undefined(&self) -> bool {
        matches!(self, ParsedAnswer::Undefined { .. })
    }
}

/// Default object keywords for aircraft counting.
pub const DEFAULT_COUNT_KEYWORDS: [&str; 5] = ["aircraft", "airplane", "airplanes", "plane", "planes"];

/// Default route labels for the disaster-response task.
pub const DEFAULT_ROUTE_LABELS: [&str; 4] = ["primary", "secondary", "main road", "lower road"];

/// Number and keyword must fall within this many tokens of each other.
const PROXIMITY_WINDOW: usize = 4;

const REFUSAL_PHRASES: [&str; 3] = ["unable to", "cannot determine", "i can't"];

const NUMBER_WORDS: [(&str, u32); 21] = [
    ("zero", 0),
    ("one", 1),
    ("two", 2),
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
    ("ten", 10),
    ("eleven", 11),
    ("twelve", 12),
    ("thirteen", 13),
    ("fourteen", 14),
    ("fifteen", 15),
    ("sixteen", 16),
    ("seventeen", 17),
    ("eighteen", 18),
    ("nineteen", 19),
    ("twenty", 20),
];

/// Lowercases, folds typographic apostrophes, and joins comma-grouped digits
/// (`1,024` becomes `1024`).
fn normalize(text: &str) -> String {
    let lowered = text.to_lowercase().replace('\u{2019}', "'");
    let chars: Vec<char> = lowered.chars().collect();
    let mut out = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ','
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_ascii_digit()
            && chars[i + 1].is_ascii_digit()
        {
            continue;
        }
        out.push(c);
    }
    out
}

/// Splits normalized text into word tokens: runs of alphanumerics, keeping
/// internal apostrophes (so `can't` stays one token). Hyphens and all other
/// punctuation separate tokens.
fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '\'' {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    // Trim stray apostrophes left at token edges.
    tokens
        .into_iter()
        .map(|t| t.trim_matches('\'').to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn token_number(token: &str) -> Option<u32> {
    if token.chars().all(|c| c.is_ascii_digit()) && !token.is_empty() {
        return token.parse().ok();
    }
    NUMBER_WORDS
        .iter()
        .find(|(word, _)| *word == token)
        .map(|&(_, value)| value)
}

#[derive(Debug)]
struct CountCandidate {
    value: u32,
    qualifier: CountQualifier,
    keyword_distance: usize,
    position: usize,
}

/// Extracts an object count from free text. See the module docs for the rule
/// order. All inputs produce an answer; none abort.
pub fn extract_count(text: &str, object_keywords: &[&str]) -> ParsedAnswer {
    if text.trim().is_empty() {
        return ParsedAnswer::Undefined {
            reason: UndefinedReason::EmptyResponse,
        };
    }
    let normalized = normalize(text);
    if REFUSAL_PHRASES.iter().any(|p| normalized.contains(p)) {
        return ParsedAnswer::Undefined {
            reason: UndefinedReason::Refusal,
        };
    }

    let tokens = tokenize(&normalized);
    let keywords: Vec<String> = object_keywords.iter().map(|k| k.to_lowercase()).collect();
    let keyword_positions: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| keywords.iter().any(|k| k == *t))
        .map(|(i, _)| i)
        .collect();

    let mut candidates = Vec::new();
    for (i, token) in tokens.iter().enumerate() {
        let Some(value) = token_number(token) else {
            continue;
        };
        let Some(distance) = keyword_positions
            .iter()
            .map(|&k| k.abs_diff(i))
            .min()
            .filter(|&d| d <= PROXIMITY_WINDOW)
        else {
            continue;
        };
        let qualifier = if i >= 2 && tokens[i - 2] == "at" && tokens[i - 1] == "least" {
            CountQualifier::AtLeast
        } else if i >= 1 && matches!(tokens[i - 1].as_str(), "approximately" | "about" | "around") {
            CountQualifier::Approximate
        } else {
            CountQualifier::Exact
        };
        candidates.push(CountCandidate {
            value,
            qualifier,
            keyword_distance: distance,
            position: i,
        });
    }

    for qualifier in [
        CountQualifier::AtLeast,
        CountQualifier::Approximate,
        CountQualifier::Exact,
    ] {
        if let Some(best) = candidates
            .iter()
            .filter(|c| c.qualifier == qualifier)
            .min_by_key(|c| (c.keyword_distance, c.position))
        {
            return ParsedAnswer::Count {
                value: best.value,
                qualifier: best.qualifier,
            };
        }
    }

    // Vague quantifiers ("several", "numerous", "many") and everything else
    // fall through: no usable number.
    ParsedAnswer::Undefined {
        reason: UndefinedReason::NoNumber,
    }
}

fn status_phrases() -> [(&'static [&'static str], RouteStatus); 5] {
    [
        (&["partially", "obstructed"], RouteStatus::PartiallyObstructed),
        (&["unobstructed"], RouteStatus::Unobstructed),
        (&["obstructed"], RouteStatus::Obstructed),
        (&["blocked"], RouteStatus::Obstructed),
        (&["clear"], RouteStatus::Unobstructed),
    ]
}

fn match_sequence(tokens: &[String], start: usize, sequence: &[&str]) -> bool {
    tokens.len().saturating_sub(start) >= sequence.len()
        && sequence
            .iter()
            .zip(&tokens[start..])
            .all(|(want, have)| want == have)
}

/// Extracts route statuses: each configured label found in the text is paired
/// with the status keyword nearest to it within the same sentence. When the
/// token `summary` appears, only the summary section (last occurrence onward)
/// is considered. Labels that never appear are omitted.
pub fn extract_route_status(text: &str, route_labels: &[&str]) -> ParsedAnswer {
    if text.trim().is_empty() {
        return ParsedAnswer::Undefined {
            reason: UndefinedReason::EmptyResponse,
        };
    }
    let normalized = normalize(text);
    let sentences: Vec<Vec<String>> = normalized
        .split(['.', '!', '?'])
        .map(tokenize)
        .filter(|s| !s.is_empty())
        .collect();

    let summary_start = sentences
        .iter()
        .rposition(|s| s.iter().any(|t| t == "summary"))
        .unwrap_or(0);
    let section = &sentences[summary_start..];

    let labels: Vec<(String, Vec<String>)> = route_labels
        .iter()
        .map(|l| {
            let lower = l.to_lowercase();
            let parts = tokenize(&lower);
            (lower, parts)
        })
        .collect();

    // (section sentence idx, token idx, label) at first occurrence.
    let mut found: Vec<(usize, usize, &str)> = Vec::new();
    for (label, parts) in &labels {
        'search: for (si, sentence) in section.iter().enumerate() {
            for ti in 0..sentence.len() {
                if match_sequence(sentence, ti, &parts.iter().map(String::as_str).collect::<Vec<_>>()) {
                    found.push((si, ti, label.as_str()));
                    break 'search;
                }
            }
        }
    }
    if found.is_empty() {
        return ParsedAnswer::Undefined {
            reason: UndefinedReason::NoNumber,
        };
    }
    found.sort_by_key(|&(si, ti, _)| (si, ti));

    let mut entries = Vec::with_capacity(found.len());
    for (si, label_pos, label) in found {
        let sentence = &section[si];
        // Collect status phrase starts in this sentence, longest match first.
        let mut statuses: Vec<(usize, RouteStatus)> = Vec::new();
        let mut ti = 0;
        while ti < sentence.len() {
            let mut matched = None;
            for (phrase, status) in status_phrases() {
                if match_sequence(sentence, ti, phrase) {
                    matched = Some((phrase.len(), status));
                    break;
                }
            }
            if let Some((len, status)) = matched {
                statuses.push((ti, status));
                ti += len;
            } else {
                ti += 1;
            }
        }
        let status = statuses
            .iter()
            .min_by_key(|(pos, _)| (pos.abs_diff(label_pos), *pos))
            .map(|&(_, s)| s)
            .unwrap_or(RouteStatus::Unknown);
        entries.push((label.to_string(), status));
    }

    ParsedAnswer::RouteAssessment { entries }
}

/// Routes a backend exchange to the task-appropriate extractor. Failed
/// exchanges become `Undefined(BackendFailure)`.
pub fn classify_exchange(exchange: &VlmExchange, task: TaskKind) -> ParsedAnswer {
    let text = match &exchange.outcome {
        VlmOutcome::Response(text) => text,
        VlmOutcome::Failure(_) => {
            return ParsedAnswer::Undefined {
                reason: UndefinedReason::BackendFailure,
            }
        }
    };
    match task {
        TaskKind::CountAircraft => extract_count(text, &DEFAULT_COUNT_KEYWORDS),
        TaskKind::RouteStatus => extract_route_status(text, &DEFAULT_ROUTE_LABELS),
        TaskKind::Caption => {
            if text.trim().is_empty() {
                ParsedAnswer::Undefined {
                    reason: UndefinedReason::EmptyResponse,
                }
            } else {
                ParsedAnswer::Caption { text: text.clone() }
            }
        }
    }
}

impl fmt::Display for CountQualifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CountQualifier::Exact => "exact",
            CountQualifier::AtLeast => "at_least",
            CountQualifier::Approximate => "approximate",
        })
    }
}

impl FromStr for CountQualifier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "at_least" => Ok(Self::AtLeast),
            "approximate" => Ok(Self::Approximate),
            other => Err(format!("unknown qualifier `{other}`")),
        }
    }
}

impl fmt::Display for RouteStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RouteStatus::Unobstructed => "unobstructed",
            RouteStatus::PartiallyObstructed => "partially_obstructed",
            RouteStatus::Obstructed => "obstructed",
            RouteStatus::Unknown => "unknown",
        })
    }
}

impl FromStr for RouteStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unobstructed" => Ok(Self::Unobstructed),
            "partially_obstructed" => Ok(Self::PartiallyObstructed),
            "obstructed" => Ok(Self::Obstructed),
            "unknown" => Ok(Self::Unknown),
            other => Err(format!("unknown route status `{other}`")),
        }
    }
}

impl fmt::Display for UndefinedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UndefinedReason::Refusal => "refusal",
            UndefinedReason::NoNumber => "no_number",
            UndefinedReason::EmptyResponse => "empty_response",
            UndefinedReason::BackendFailure => "backend_failure",
        })
    }
}

impl FromStr for UndefinedReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "refusal" => Ok(Self::Refusal),
            "no_number" => Ok(Self::NoNumber),
            "empty_response" => Ok(Self::EmptyResponse),
            "backend_failure" => Ok(Self::BackendFailure),
            other => Err(format!("unknown undefined reason `{other}`")),
        }
    }
}

fn escape_line(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape_line(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

impl ParsedAnswer {
    /// Canonical key-value text form, used by the `parse` subcommand and the
    /// corpus `.expected` files.
    pub fn to_kv_string(&self) -> String {
        match self {
            ParsedAnswer::Count { value, qualifier } => {
                format!("kind = count\nvalue = {value}\nqualifier = {qualifier}\n")
            }
            ParsedAnswer::RouteAssessment { entries } => {
                let mut out = String::from("kind = route_assessment\n");
                for (label, status) in entries {
                    out.push_str(&format!("{label} = {status}\n"));
                }
                out
            }
            ParsedAnswer::Caption { text } => {
                format!("kind = caption\ntext = {}\n", escape_line(text))
            }
            ParsedAnswer::Undefined { reason } => {
                format!("kind = undefined\nreason = {reason}\n")
            }
        }
    }

    /// Parses the key-value form back into an answer.
    pub fn from_kv_str(text: &str) -> Result<Self, String> {
        let mut pairs = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("expected `key = value`, got `{line}`"))?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        let kind = pairs
            .iter()
            .find(|(k, _)| k == "kind")
            .map(|(_, v)| v.clone())
            .ok_or("missing `kind` line")?;
        let field = |name: &str| -> Result<String, String> {
            pairs
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| format!("missing `{name}` line"))
        };
        match kind.as_str() {
            "count" => Ok(ParsedAnswer::Count {
                value: field("value")?
                    .parse()
                    .map_err(|e| format!("bad value: {e}"))?,
                qualifier: field("qualifier")?.parse()?,
            }),
            "caption" => Ok(ParsedAnswer::Caption {
                text: unescape_line(&field("text")?),
            }),
            "undefined" => Ok(ParsedAnswer::Undefined {
                reason: field("reason")?.parse()?,
            }),
            "route_assessment" => {
                let entries: Result<Vec<_>, String> = pairs
                    .iter()
                    .filter(|(k, _)| k != "kind")
                    .map(|(k, v)| Ok((k.clone(), v.parse::<RouteStatus>()?)))
                    .collect();
                Ok(ParsedAnswer::RouteAssessment { entries: entries? })
            }
            other => Err(format!("unknown kind `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(text: &str) -> ParsedAnswer {
        extract_count(text, &DEFAULT_COUNT_KEYWORDS)
    }

    #[test]
    fn at_least_thirteen_airplanes() {
        let answer = count("There are at least 13 airplanes visible in the scene");
        assert_eq!(
            answer,
            ParsedAnswer::Count {
                value: 13,
                qualifier: CountQualifier::AtLeast
            }
        );
    }

    #[test]
    fn at_least_fourteen_airplanes_with_tail() {
        let answer = count("There are at least 14 airplanes visible in the scene, with some positioned closer");
        assert_eq!(
            answer,
            ParsedAnswer::Count {
                value: 14,
                qualifier: CountQualifier::AtLeast
            }
        );
    }

    #[test]
    fn several_airplanes_is_no_number() {
        let answer = count("Several airplanes are parked in designated areas.");
        assert_eq!(
            answer,
            ParsedAnswer::Undefined {
                reason: UndefinedReason::NoNumber
            }
        );
    }

    #[test]
    fn zero_is_a_valid_count() {
        let answer = count("There are 0 aircraft here.");
        assert_eq!(
            answer,
            ParsedAnswer::Count {
                value: 0,
                qualifier: CountQualifier::Exact
            }
        );
    }

    #[test]
    fn nearest_keyword_breaks_number_ties() {
        // Candidate tuples: ("twelve", planes, distance 1) beats
        // ("two", planes, distance 2); "terminals" is not a keyword.
        let answer = count("The image shows twelve planes near two terminals.");
        assert_eq!(
            answer,
            ParsedAnswer::Count {
                value: 12,
                qualifier: CountQualifier::Exact
            }
        );
    }

    #[test]
    fn word_and_digit_forms_agree() {
        assert_eq!(count("thirteen aircraft"), count("13 aircraft"));
    }

    #[test]
    fn refusal_phrases_win() {
        for text in [
            "I'm unable to provide a count for this image.",
            "I cannot determine the number of aircraft.",
            "Sorry, I can't help with that.",
            "I CANNOT DETERMINE anything here.",
        ] {
            assert_eq!(
                count(text),
                ParsedAnswer::Undefined {
                    reason: UndefinedReason::Refusal
                },
                "{text}"
            );
        }
    }

    #[test]
    fn approximate_quantifiers() {
        let answer = count("There are approximately 20 airplanes on the tarmac.");
        assert_eq!(
            answer,
            ParsedAnswer::Count {
                value: 20,
                qualifier: CountQualifier::Approximate
            }
        );
        let answer = count("About 7 planes are visible.");
        assert_eq!(
            answer,
            ParsedAnswer::Count {
                value: 7,
                qualifier: CountQualifier::Approximate
            }
        );
    }

    #[test]
    fn at_least_outranks_bare_mentions() {
        let answer = count("Two planes are taxiing and there are at least 13 airplanes parked.");
        assert_eq!(
            answer,
            ParsedAnswer::Count {
                value: 13,
                qualifier: CountQualifier::AtLeast
            }
        );
    }

    #[test]
    fn numbers_without_nearby_keyword_are_ignored() {
        let answer = count("The runway is 3200 meters long and painted white.");
        assert_eq!(
            answer,
            ParsedAnswer::Undefined {
                reason: UndefinedReason::NoNumber
            }
        );
    }

    #[test]
    fn colon_form_counts() {
        let answer = count("Aircraft: 7");
        assert_eq!(
            answer,
            ParsedAnswer::Count {
                value: 7,
                qualifier: CountQualifier::Exact
            }
        );
    }

    #[test]
    fn comma_grouped_digits_normalize() {
        let answer = count("There are 1,024 planes in this absurd scene.");
        assert_eq!(
            answer,
            ParsedAnswer::Count {
                value: 1024,
                qualifier: CountQualifier::Exact
            }
        );
    }

    #[test]
    fn empty_count_input() {
        assert_eq!(
            count(""),
            ParsedAnswer::Undefined {
                reason: UndefinedReason::EmptyResponse
            }
        );
        assert_eq!(
            count("   \n "),
            ParsedAnswer::Undefined {
                reason: UndefinedReason::EmptyResponse
            }
        );
    }

    fn route(text: &str) -> ParsedAnswer {
        extract_route_status(text, &DEFAULT_ROUTE_LABELS)
    }

    #[test]
    fn summary_section_wins() {
        let text = "The primary route looks blocked from here. \
                    Summary: Primary Route (Main Road over the Bridge): Partially obstructed. \
                    Secondary Route (Lower Road): Unobstructed and clear for use.";
        let answer = route(text);
        let ParsedAnswer::RouteAssessment { entries } = &answer else {
            panic!("expected route assessment, got {answer:?}");
        };
        assert!(entries.contains(&("primary".to_string(), RouteStatus::PartiallyObstructed)));
        assert!(entries.contains(&("secondary".to_string(), RouteStatus::Unobstructed)));
        assert!(entries.contains(&("main road".to_string(), RouteStatus::PartiallyObstructed)));
        assert!(entries.contains(&("lower road".to_string(), RouteStatus::Unobstructed)));
    }

    #[test]
    fn label_without_status_is_unknown() {
        let answer = route("The primary route crosses the river near the town.");
        assert_eq!(
            answer,
            ParsedAnswer::RouteAssessment {
                entries: vec![("primary".to_string(), RouteStatus::Unknown)]
            }
        );
    }

    #[test]
    fn blocked_maps_to_obstructed_and_clear_to_unobstructed() {
        let answer = route("The primary route is blocked. The secondary route is clear.");
        assert_eq!(
            answer,
            ParsedAnswer::RouteAssessment {
                entries: vec![
                    ("primary".to_string(), RouteStatus::Obstructed),
                    ("secondary".to_string(), RouteStatus::Unobstructed),
                ]
            }
        );
    }

    #[test]
    fn no_labels_is_no_number() {
        assert_eq!(
            route("The weather is fine and the airport is busy."),
            ParsedAnswer::Undefined {
                reason: UndefinedReason::NoNumber
            }
        );
    }

    #[test]
    fn empty_route_input() {
        assert_eq!(
            route(""),
            ParsedAnswer::Undefined {
                reason: UndefinedReason::EmptyResponse
            }
        );
    }

    #[test]
    fn partially_obstructed_is_not_plain_obstructed() {
        let answer = route("Primary route: partially obstructed near the bridge.");
        assert_eq!(
            answer,
            ParsedAnswer::RouteAssessment {
                entries: vec![("primary".to_string(), RouteStatus::PartiallyObstructed)]
            }
        );
    }

    #[test]
    fn kv_round_trip() {
        let answers = [
            ParsedAnswer::Count {
                value: 13,
                qualifier: CountQualifier::AtLeast,
            },
            ParsedAnswer::RouteAssessment {
                entries: vec![
                    ("primary".to_string(), RouteStatus::PartiallyObstructed),
                    ("lower road".to_string(), RouteStatus::Unobstructed),
                ],
            },
            ParsedAnswer::Caption {
                text: "An airport.\nWith planes \\ runways.".to_string(),
            },
            ParsedAnswer::Undefined {
                reason: UndefinedReason::Refusal,
            },
        ];
        for answer in answers {
            let text = answer.to_kv_string();
            let back = ParsedAnswer::from_kv_str(&text).unwrap();
            assert_eq!(answer, back, "{text}");
        }
    }
}
