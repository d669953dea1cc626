//! Prompt assembly with exemplar injection, token budgeting, and
//! extraction of fenced code from model replies.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Mode;

/// Default layout: preamble, then exemplars, then the request.
pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/default_prompt.txt");
const DEFAULT_PREAMBLE_RAW: &str = include_str!("../templates/default_preamble.txt");

/// Default token budget for a rendered prompt.
pub const DEFAULT_TOKEN_BUDGET: usize = 32_000;

/// Characters per budget unit.
pub const CHARS_PER_TOKEN: usize = 4;

const EXEMPLAR_HEADER: &str = "Reference examples of similar objects with working scripts:\n\n";

pub fn default_preamble() -> &'static str {
    DEFAULT_PREAMBLE_RAW.trim_end()
}

/// Budget units of `text`: characters divided by four, rounded up.
pub fn budget_units(text: &str) -> usize {
    text.chars().count().div_ceil(CHARS_PER_TOKEN)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("user request is empty")]
    EmptyRequest,
    #[error("budget of {budget} units cannot fit the preamble and request ({required} units)")]
    BudgetTooSmall { required: usize, budget: usize },
    #[error("template placeholder `{{{{{0}}}}}` is not recognised")]
    UnknownPlaceholder(String),
    #[error("template has an unterminated placeholder at byte {0}")]
    UnterminatedPlaceholder(usize),
    #[error("template is missing the `{{{{request}}}}` placeholder")]
    MissingRequestPlaceholder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Preamble,
    Exemplars,
    Request,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Slot),
}

/// A prompt layout with `{{preamble}}`, `{{exemplars}}` and `{{request}}`
/// placeholders, plus the system preamble text it is rendered with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    segments: Vec<Segment>,
    preamble: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE, default_preamble()).expect("bundled template parses")
    }
}

impl PromptTemplate {
    pub fn parse(source: &str, preamble: &str) -> Result<Self, PromptError> {
        let mut segments = Vec::new();
        let mut rest = source;
        let mut offset = 0;
        while let Some(start) = rest.find("{{") {
            if start > 0 {
                segments.push(Segment::Text(String::from(&rest[..start])));
            }
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or(PromptError::UnterminatedPlaceholder(offset + start))?;
            let slot = match after[..end].trim() {
                "preamble" => Slot::Preamble,
                "exemplars" => Slot::Exemplars,
                "request" => Slot::Request,
                other => return Err(PromptError::UnknownPlaceholder(String::from(other))),
            };
            segments.push(Segment::Slot(slot));
            let consumed = start + 2 + end + 2;
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(String::from(rest)));
        }
        if !segments.contains(&Segment::Slot(Slot::Request)) {
            return Err(PromptError::MissingRequestPlaceholder);
        }
        Ok(Self {
            segments,
            preamble: String::from(preamble),
        })
    }

    pub fn preamble(&self) -> &str {
        &self.preamble
    }

    pub fn with_preamble(mut self, preamble: impl Into<String>) -> Self {
        self.preamble = preamble.into();
        self
    }

    fn render(&self, preamble: &str, exemplars: &str, request: &str) -> String {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(Slot::Preamble) => out.push_str(preamble),
                Segment::Slot(Slot::Exemplars) => out.push_str(exemplars),
                Segment::Slot(Slot::Request) => out.push_str(request),
            }
        }
        out
    }
}

/// A retrieved example as injected into the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub description: String,
    pub code: String,
}

/// Prior state carried into a refinement turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub original_request: String,
    pub previous_script: String,
}

/// What to assemble. `exemplars: None` selects base mode.
#[derive(Debug, Clone, Copy)]
pub struct PromptRequest<'a> {
    pub user_request: &'a str,
    pub exemplars: Option<&'a [Exemplar]>,
    pub revision: Option<&'a Revision>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub mode: Mode,
    pub system_preamble: String,
    /// Retained exemplars in rank order.
    pub exemplar_blocks: Vec<Exemplar>,
    /// Lowest-ranked exemplars removed to meet the budget.
    pub dropped_blocks: usize,
    pub user_request: String,
    pub revision: Option<Revision>,
    pub token_budget: usize,
    /// Full prompt including the preamble.
    pub rendered: String,
    /// Prompt with the preamble slot left empty, sent after a system message.
    pub user_message: String,
}

impl PromptContext {
    pub fn budget_units(&self) -> usize {
        budget_units(&self.rendered)
    }

    /// The request section alone, as substituted for `{{request}}`.
    pub fn request_section(&self) -> String {
        render_request(&self.user_request, self.revision.as_ref())
    }
}

fn fence(code: &str) -> String {
    let mut out = String::from("```python\n");
    out.push_str(code);
    if !code.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("```\n");
    out
}

/// Description, fenced script, separator.
pub fn render_exemplar_block(rank: usize, exemplar: &Exemplar) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "### Example {rank}");
    let _ = writeln!(out, "Description: {}", exemplar.description);
    out.push_str(&fence(&exemplar.code));
    out.push_str("---\n\n");
    out
}

fn render_exemplars(blocks: &[Exemplar]) -> String {
    if blocks.is_empty() {
        return String::new();
    }
    let mut out = String::from(EXEMPLAR_HEADER);
    for (i, block) in blocks.iter().enumerate() {
        out.push_str(&render_exemplar_block(i + 1, block));
    }
    out
}

fn render_request(user_request: &str, revision: Option<&Revision>) -> String {
    match revision {
        None => format!("### Request\n{user_request}\n"),
        Some(rev) => format!(
            "### Original request\n{}\n\n### Current script\n{}\n### Revision\n{}\nReturn the complete revised script.\n",
            rev.original_request,
            fence(&rev.previous_script),
            user_request
        ),
    }
}

/// Renders the prompt, keeping the longest rank-order prefix of exemplars
/// whose rendered prompt fits `budget`. Blocks are dropped whole.
pub fn assemble_prompt(
    request: PromptRequest<'_>,
    template: &PromptTemplate,
    budget: usize,
) -> Result<PromptContext, PromptError> {
    if request.user_request.trim().is_empty() {
        return Err(PromptError::EmptyRequest);
    }
    let mode = if request.exemplars.is_some() {
        Mode::Rag
    } else {
        Mode::Base
    };
    let candidates = request.exemplars.unwrap_or(&[]);
    let request_section = render_request(request.user_request, request.revision);

    for keep in (0..=candidates.len()).rev() {
        let exemplars = render_exemplars(&candidates[..keep]);
        let rendered = template.render(&template.preamble, &exemplars, &request_section);
        let units = budget_units(&rendered);
        if units <= budget {
            let user_message = String::from(
                template
                    .render("", &exemplars, &request_section)
                    .trim_start(),
            );
            return Ok(PromptContext {
                mode,
                system_preamble: template.preamble.clone(),
                exemplar_blocks: candidates[..keep].to_vec(),
                dropped_blocks: candidates.len() - keep,
                user_request: String::from(request.user_request),
                revision: request.revision.cloned(),
                token_budget: budget,
                rendered,
                user_message,
            });
        }
        if keep == 0 {
            return Err(PromptError::BudgetTooSmall {
                required: units,
                budget,
            });
        }
    }
    unreachable!("loop returns at keep == 0")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("response contains no code")]
    EmptyResponse,
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Contents of every triple-backtick block, in order, joined by newlines;
/// the whole text when there are none. The result is trimmed. An
/// unterminated block runs to the end of the text.
pub fn extract_code_block(response: &str) -> Result<String, ExtractError> {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in response.lines() {
        if is_fence(line) {
            match current.take() {
                Some(lines) => blocks.push(lines.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    if let Some(lines) = current {
        blocks.push(lines.join("\n"));
    }

    let script = if blocks.is_empty() {
        String::from(response.trim())
    } else {
        String::from(blocks.join("\n").trim())
    };
    if script.is_empty() {
        return Err(ExtractError::EmptyResponse);
    }
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn exemplars() -> Vec<Exemplar> {
        vec![
            Exemplar {
                description: "A four-legged oak chair".into(),
                code: "import bpy\nbpy.ops.mesh.primitive_cube_add()\n".into(),
            },
            Exemplar {
                description: "A round side table".into(),
                code: "import bpy\nbpy.ops.mesh.primitive_cylinder_add()".into(),
            },
            Exemplar {
                description: "A padded stool".into(),
                code: "import bpy\nbpy.ops.mesh.primitive_uv_sphere_add()\n".into(),
            },
        ]
    }

    fn rag(budget: usize) -> Result<PromptContext, PromptError> {
        let ex = exemplars();
        assemble_prompt(
            PromptRequest {
                user_request: "a wooden chair",
                exemplars: Some(&ex),
                revision: None,
            },
            &PromptTemplate::default(),
            budget,
        )
    }

    #[test]
    fn rag_prompt_keeps_rank_order_and_verbatim_text() {
        let ctx = rag(DEFAULT_TOKEN_BUDGET).unwrap();
        assert_eq!(ctx.mode, Mode::Rag);
        assert_eq!(ctx.exemplar_blocks.len(), 3);
        let mut last = 0;
        for ex in exemplars() {
            let at = ctx.rendered.find(&ex.description).unwrap();
            assert!(at > last);
            last = at;
            assert!(ctx.rendered.contains(&ex.code));
        }
        assert!(ctx.rendered.starts_with(default_preamble()));
        assert!(!ctx.user_message.contains(default_preamble()));
    }

    #[test]
    fn base_prompt_has_no_exemplars() {
        let ctx = assemble_prompt(
            PromptRequest {
                user_request: "a wooden chair",
                exemplars: None,
                revision: None,
            },
            &PromptTemplate::default(),
            DEFAULT_TOKEN_BUDGET,
        )
        .unwrap();
        assert_eq!(ctx.mode, Mode::Base);
        assert!(ctx.exemplar_blocks.is_empty());
        assert!(!ctx.rendered.contains("### Example"));
        let rag = rag(DEFAULT_TOKEN_BUDGET).unwrap();
        assert!(rag.rendered.contains(default_preamble()));
        assert!(rag.rendered.contains(&ctx.request_section()));
    }

    #[test]
    fn tight_budget_drops_lowest_rank_whole() {
        let full = rag(DEFAULT_TOKEN_BUDGET).unwrap();
        let third = render_exemplar_block(3, &exemplars()[2]);
        let without_third = budget_units(&full.rendered.replacen(&third, "", 1));
        let ctx = rag(without_third).unwrap();
        assert_eq!(ctx.exemplar_blocks, exemplars()[..2].to_vec());
        assert_eq!(ctx.dropped_blocks, 1);
        assert!(!ctx.rendered.contains("A padded stool"));
        // one unit short of the full prompt also drops exactly one block
        assert_eq!(
            rag(full.budget_units() - 1).unwrap().exemplar_blocks.len(),
            2
        );
    }

    #[test]
    fn budget_too_small_for_request() {
        assert!(matches!(
            rag(5),
            Err(PromptError::BudgetTooSmall { budget: 5, .. })
        ));
    }

    #[test]
    fn empty_request_rejected() {
        let r = assemble_prompt(
            PromptRequest {
                user_request: "  ",
                exemplars: None,
                revision: None,
            },
            &PromptTemplate::default(),
            100,
        );
        assert_eq!(r, Err(PromptError::EmptyRequest));
    }

    #[test]
    fn revision_carries_previous_script() {
        let rev = Revision {
            original_request: "a table".into(),
            previous_script: "A".into(),
        };
        let ctx = assemble_prompt(
            PromptRequest {
                user_request: "make it taller",
                exemplars: None,
                revision: Some(&rev),
            },
            &PromptTemplate::default(),
            DEFAULT_TOKEN_BUDGET,
        )
        .unwrap();
        assert!(ctx.rendered.contains("```python\nA\n```"));
        assert!(ctx.rendered.contains("make it taller"));
        assert!(ctx.rendered.contains("a table"));
    }

    #[test]
    fn template_parsing() {
        assert_eq!(
            PromptTemplate::parse("{{preamble}} {{nope}}", ""),
            Err(PromptError::UnknownPlaceholder("nope".into()))
        );
        assert_eq!(
            PromptTemplate::parse("{{preamble}}", ""),
            Err(PromptError::MissingRequestPlaceholder)
        );
        assert_eq!(
            PromptTemplate::parse("x {{request", ""),
            Err(PromptError::UnterminatedPlaceholder(2))
        );
        let t = PromptTemplate::parse("[{{ request }}]", "").unwrap();
        assert_eq!(t.render("", "", "r"), "[r]");
    }

    #[test]
    fn placeholder_text_inside_values_is_not_expanded() {
        let ctx = assemble_prompt(
            PromptRequest {
                user_request: "{{preamble}}",
                exemplars: None,
                revision: None,
            },
            &PromptTemplate::default(),
            DEFAULT_TOKEN_BUDGET,
        )
        .unwrap();
        assert_eq!(ctx.rendered.matches(default_preamble()).count(), 1);
        assert!(ctx.rendered.contains("{{preamble}}"));
    }

    #[test]
    fn extract_single_block() {
        assert_eq!(
            extract_code_block("here:\n```python\nx=1\n```").unwrap(),
            "x=1"
        );
    }

    #[test]
    fn extract_concatenates_blocks() {
        let text = "first\n```python\na=1\n```\nthen\n```\nb=2\n```\n";
        assert_eq!(extract_code_block(text).unwrap(), "a=1\nb=2");
    }

    #[test]
    fn extract_without_fences_returns_trimmed_text() {
        assert_eq!(extract_code_block("import bpy").unwrap(), "import bpy");
        assert_eq!(
            extract_code_block("  import bpy\n\n").unwrap(),
            "import bpy"
        );
    }

    #[test]
    fn extract_unterminated_block() {
        assert_eq!(
            extract_code_block("```py\nx = 2\ny = 3").unwrap(),
            "x = 2\ny = 3"
        );
    }

    #[test]
    fn extract_empty() {
        assert_eq!(extract_code_block(""), Err(ExtractError::EmptyResponse));
        assert_eq!(
            extract_code_block("```\n```"),
            Err(ExtractError::EmptyResponse)
        );
    }

    #[test]
    fn budget_units_rounds_up() {
        assert_eq!(budget_units(""), 0);
        assert_eq!(budget_units("abcd"), 1);
        assert_eq!(budget_units("abcde"), 2);
        assert_eq!(budget_units("éééé"), 1);
    }
}
