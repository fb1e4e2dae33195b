//! Operator-prompt rendering and `<PROMPT>` response parsing.

use serde::{Deserialize, Serialize};

use super::{EvolutionError, PromptCandidate};
use crate::backends::ChatMessage;
use crate::templates::OperatorTemplate;

const OPEN: &str = "<prompt>";
const CLOSE: &str = "</prompt>";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("expected {expected} prompts, found {found}")]
    WrongCount { found: usize, expected: usize },
    #[error("prompt {index} is empty")]
    EmptyPrompt { index: usize },
    #[error("opening tag at byte {offset} has no closing tag")]
    Unclosed { offset: usize },
}

/// The text sent to the operator: a system turn with the instruction block
/// and a user turn listing the scored prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorPrompt {
    pub system: String,
    pub user: String,
}

impl OperatorPrompt {
    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![ChatMessage::system(&self.system), ChatMessage::user(&self.user)]
    }

    /// Both turns, separated by a blank line.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

/// One round trip with the operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorExchange {
    pub rendered_prompt: String,
    pub raw_response: String,
    pub parsed: Vec<String>,
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn scored_line(index: usize, candidate: &PromptCandidate) -> Result<String, EvolutionError> {
    let scores = candidate
        .scores
        .as_ref()
        .ok_or(EvolutionError::Unscored(candidate.id))?;
    let values: Vec<String> = scores.normalized().values().map(|v| format!("{v:.2}")).collect();
    Ok(format!("{index}. {} ({})", one_line(&candidate.text), values.join(", ")))
}

/// Renders the source (index 0) followed by `selected` in the given order.
///
/// `selected` is expected in rank order and must not contain the source.
pub fn render_operator_prompt(
    source: &PromptCandidate,
    selected: &[&PromptCandidate],
    template: &OperatorTemplate,
    offspring: usize,
) -> Result<OperatorPrompt, EvolutionError> {
    let mut lines = Vec::with_capacity(selected.len() + 1);
    lines.push(scored_line(0, source)?);
    for (i, candidate) in selected.iter().enumerate() {
        lines.push(scored_line(i + 1, candidate)?);
    }
    Ok(OperatorPrompt {
        system: template.system_text(offspring),
        user: lines.join("\n"),
    })
}

fn find_from(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    haystack[from..].find(needle).map(|i| i + from)
}

/// Spans between `<PROMPT>` tags (case-insensitive), in order, trimmed.
/// Each item is `Err(offset)` for an opening tag that is not closed before
/// the next opening tag or the end of input.
fn spans(raw: &str) -> Vec<Result<&str, usize>> {
    // ASCII lowercasing keeps byte offsets aligned with `raw`
    let lower = raw.to_ascii_lowercase();
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(open) = find_from(&lower, OPEN, pos) {
        let body_start = open + OPEN.len();
        let close = find_from(&lower, CLOSE, body_start);
        let next_open = find_from(&lower, OPEN, body_start);
        match close {
            Some(c) if next_open.is_none_or(|n| c < n) => {
                out.push(Ok(raw[body_start..c].trim()));
                pos = c + CLOSE.len();
            }
            _ => {
                out.push(Err(open));
                pos = body_start;
            }
        }
    }
    out
}

/// Strict parse: exactly `expected` well-formed, nonempty spans.
pub fn parse_operator_response(raw: &str, expected: usize) -> Result<Vec<String>, ParseError> {
    let spans = spans(raw);
    if let Some(offset) = spans.iter().find_map(|s| s.err()) {
        return Err(ParseError::Unclosed { offset });
    }
    let prompts: Vec<&str> = spans.into_iter().map_while(Result::ok).collect();
    if let Some(index) = prompts.iter().position(|p| p.is_empty()) {
        return Err(ParseError::EmptyPrompt { index });
    }
    if prompts.len() != expected {
        return Err(ParseError::WrongCount { found: prompts.len(), expected });
    }
    Ok(prompts.into_iter().map(str::to_string).collect())
}

/// Lenient parse: every well-formed nonempty span, ignoring the rest.
pub fn extract_prompts(raw: &str) -> Vec<String> {
    spans(raw)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_spans() {
        let got = parse_operator_response("<PROMPT>a</PROMPT><PROMPT>b</PROMPT><PROMPT>c</PROMPT>", 3);
        assert_eq!(got.unwrap(), vec!["a", "b", "c"]);
    }

    #[test]
    fn no_tags() {
        assert_eq!(
            parse_operator_response("no tags here", 3),
            Err(ParseError::WrongCount { found: 0, expected: 3 })
        );
    }

    #[test]
    fn chatter_and_whitespace() {
        let raw = "Sure! Here you go:\n<PROMPT> x </PROMPT>\nHope this helps.";
        assert_eq!(parse_operator_response(raw, 1).unwrap(), vec!["x"]);
    }

    #[test]
    fn unclosed_and_empty() {
        assert_eq!(
            parse_operator_response("<PROMPT>a</PROMPT><PROMPT>b", 2),
            Err(ParseError::Unclosed { offset: 18 })
        );
        assert_eq!(
            parse_operator_response("<PROMPT>a</PROMPT><PROMPT>  </PROMPT>", 2),
            Err(ParseError::EmptyPrompt { index: 1 })
        );
    }

    #[test]
    fn lenient_keeps_good_spans() {
        let raw = "<PROMPT>a</PROMPT><PROMPT> </PROMPT><PROMPT>b<PROMPT>c</PROMPT>";
        assert_eq!(extract_prompts(raw), vec!["a", "c"]);
    }
}
