//! Maps proprietary-schema questions to open-domain equivalents so systems
//! without database access can be benchmarked on comparable questions.
//!
//! Every accepted question yields exactly one mapping record: mapped,
//! unmapped (the model found no adequate public-data equivalent), or failed
//! (with the error preserved). Downstream stages treat unmapped and failed
//! records the same way — the question is skipped for open-web systems.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Difficulty, SyntheticQuestion, PLAIN_SYSTEM_PROMPT};
use crate::gateway::{extract_json, ChatRequest, Gateway, GatewayError};
use crate::util::normalize_ws;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MappingRecord {
    pub question_id: String,
    pub original_question: String,
    pub persona: String,
    pub kpi: String,
    pub difficulty: Difficulty,
    /// Open-domain equivalent; empty exactly when `unmapped` is true.
    pub mapped_question: String,
    pub unmapped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum MapperError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("malformed mapping payload: {0}")]
    MalformedPayload(String),
    #[error("mapper echoed a different question: expected {expected:?}, got {got:?}")]
    EchoMismatch { expected: String, got: String },
}

impl MapperError {
    pub fn kind(&self) -> &'static str {
        match self {
            MapperError::Gateway(e) => e.kind(),
            MapperError::MalformedPayload(_) => "malformed_payload",
            MapperError::EchoMismatch { .. } => "echo_mismatch",
        }
    }

    /// Errors that abort the stage rather than being recorded per question:
    /// configuration problems and cassette misses indicate the run itself is
    /// broken, not that one mapping came back unusable.
    fn is_fatal(&self) -> bool {
        matches!(
            self,
            MapperError::Gateway(
                GatewayError::CassetteMiss { .. }
                    | GatewayError::UnknownProvider(_)
                    | GatewayError::InvalidRequest(_)
                    | GatewayError::Io(_)
            )
        )
    }
}

// Several wrapped lines end in a deliberate trailing space and the second
// line starts with one; line breaks and spacing are written as explicit
// escapes so no byte here is at the mercy of editor whitespace handling.
const MAPPER_TEMPLATE: &str = "You are a subject-matter expert in {DOMAIN} with deep experience\n \
in KPIs, personas, and data-driven analysis. \n\
Your responsibility is to map each original user question to the \n\
single best-matching question that is directly answerable using \n\
open web\u{2013}searchable data.\n\
\n\
Task:\n\
For each row in the input CSV:\n\
1. Analyze the original user question, including its analytical \n\
intent and scope.\n\
2. Evaluate the candidate questions derived from web search \n\
results.\n\
3. Select the ONE candidate question that most accurately \n\
aligns with:\n   \
- The intent and analytical depth of the original question\n   \
- The referenced KPI (or a clearly defined, industry-accepted \n   \
proxy KPI)\n   \
- The persona\u{2019}s typical decision-making needs\n   \
- The specified difficulty level (simple / medium / hard)\n\
\n\
Selection rules:\n\
- Do NOT rewrite or paraphrase.\n\
- Do NOT introduce new KPIs.\n\
- The mapped question must be answerable using publicly available, \n\
open web data.\n\
- Preserve the analytical level implied by the difficulty:\n  \
- simple: descriptive, single-metric, snapshot questions\n  \
- medium: comparative, segmented, or time-based questions\n  \
- hard: multi-step, trend-based, segmented, or contextualized \n  \
questions\n\
- If multiple candidates are plausible:\n  \
- Prefer the most specific, unambiguous, and commonly used \n  \
industry question.\n  \
- Prefer exact KPI alignment over loosely related metrics.\n\
- If no candidate adequately matches all criteria, \n\
return an empty string (\"\") for \"mapped_question\".\n\
\n\
Input:\n\
\n\
Row context:\n\
- original_question: {original_question}\n\
- persona: {persona}\n\
- kpi: {kpi}\n\
- difficulty: {difficulty}\n\
\n\
Output:\n\
Return results STRICTLY in the following JSON format:\n\
\n\
{{\n  \
\"original_question\": \"{original_question}\",\n  \
\"mapped_question\": \"string\"\n\
}}\n\
\n\
Output ONLY valid JSON.\n\
Do NOT include explanations, comments, or any additional text.";

/// Renders the mapping prompt for one question. Candidate questions, when
/// available (e.g. harvested from web search), are appended to the row
/// context; without candidates the model maps from its own knowledge.
pub fn render_mapper_prompt(
    domain: &str,
    original_question: &str,
    persona_display: &str,
    kpi: &str,
    difficulty: Difficulty,
    candidates: &[String],
) -> String {
    let mut prompt = MAPPER_TEMPLATE
        .replace("{original_question}", original_question)
        .replace("{persona}", persona_display)
        .replace("{kpi}", kpi)
        .replace("{difficulty}", difficulty.name())
        .replace("{DOMAIN}", domain)
        .replace("{{", "{")
        .replace("}}", "}");
    if !candidates.is_empty() {
        let list = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| format!("  {}. {c}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        prompt = prompt.replace(
            "\n\nOutput:\nReturn results STRICTLY",
            &format!("\n- candidate_questions:\n{list}\n\nOutput:\nReturn results STRICTLY"),
        );
    }
    prompt
}

fn parse_mapping_payload(text: &str) -> Result<(String, String), MapperError> {
    let value = extract_json(text).map_err(|e| MapperError::MalformedPayload(e.to_string()))?;
    let original = value
        .get("original_question")
        .and_then(|v| v.as_str())
        .ok_or_else(|| {
            MapperError::MalformedPayload("payload has no string \"original_question\"".into())
        })?;
    let mapped = value
        .get("mapped_question")
        .and_then(|v| v.as_str())
        .ok_or_else(|| {
            MapperError::MalformedPayload("payload has no string \"mapped_question\"".into())
        })?;
    Ok((original.to_string(), mapped.to_string()))
}

/// Maps one question, retrying once on a malformed payload and verifying
/// the model echoed the question it was given.
pub fn map_question(
    question: &SyntheticQuestion,
    persona_display: &str,
    candidates: &[String],
    domain: &str,
    gateway: &Gateway,
    provider: &str,
) -> Result<MappingRecord, MapperError> {
    let request = ChatRequest {
        provider: provider.to_string(),
        model: gateway.model_for(provider)?,
        system_prompt: PLAIN_SYSTEM_PROMPT.to_string(),
        user_prompt: render_mapper_prompt(
            domain,
            &question.text,
            persona_display,
            &question.kpi,
            question.difficulty,
            candidates,
        ),
        temperature: 0.0,
        max_output_tokens: None,
    };

    let mut payload = None;
    let mut last_err = None;
    for _ in 0..2 {
        let response = gateway.complete(&request)?;
        match parse_mapping_payload(&response.text) {
            Ok(parsed) => {
                payload = Some(parsed);
                break;
            }
            Err(e) => {
                log::warn!("malformed mapping payload for {}, retrying once: {e}", question.id);
                last_err = Some(e);
            }
        }
    }
    let (echoed, mapped) = match payload {
        Some(p) => p,
        None => return Err(last_err.expect("retry loop ran")),
    };

    if normalize_ws(&echoed) != normalize_ws(&question.text) {
        return Err(MapperError::EchoMismatch {
            expected: question.text.clone(),
            got: echoed,
        });
    }

    let mapped = mapped.trim().to_string();
    Ok(MappingRecord {
        question_id: question.id.clone(),
        original_question: question.text.clone(),
        persona: persona_display.to_string(),
        kpi: question.kpi.clone(),
        difficulty: question.difficulty,
        unmapped: mapped.is_empty(),
        mapped_question: mapped,
        error: None,
    })
}

/// Maps a batch of questions in id order. Per-question model failures are
/// recorded (as unmapped, with the error) rather than aborting; structural
/// failures — cassette misses, unknown providers — abort the stage.
/// Output always contains exactly one record per input question.
pub fn map_questions(
    questions: &[SyntheticQuestion],
    persona_names: &BTreeMap<String, String>,
    candidates: &BTreeMap<String, Vec<String>>,
    domain: &str,
    gateway: &Gateway,
    provider: &str,
) -> Result<Vec<MappingRecord>, MapperError> {
    let mut sorted: Vec<&SyntheticQuestion> = questions.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let no_candidates: Vec<String> = Vec::new();
    let mut records = Vec::with_capacity(sorted.len());
    for question in sorted {
        let persona_display = persona_names
            .get(&question.persona_id)
            .map(String::as_str)
            .unwrap_or(question.persona_id.as_str());
        let question_candidates =
            candidates.get(&question.id).unwrap_or(&no_candidates);
        match map_question(question, persona_display, question_candidates, domain, gateway, provider)
        {
            Ok(record) => records.push(record),
            Err(err) if err.is_fatal() => return Err(err),
            Err(err) => {
                log::error!("mapping {} failed: {err}", question.id);
                records.push(MappingRecord {
                    question_id: question.id.clone(),
                    original_question: question.text.clone(),
                    persona: persona_display.to_string(),
                    kpi: question.kpi.clone(),
                    difficulty: question.difficulty,
                    mapped_question: String::new(),
                    unmapped: true,
                    error: Some(err.to_string()),
                });
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_substitutes_row_context_and_unescapes_braces() {
        let prompt = render_mapper_prompt(
            "credit union banking",
            "What is the 90+ DPD Rate for retail members year to date?",
            "Risk & Credit Analytics Mgr; CRO; Compliance",
            "90+ DPD Rate",
            Difficulty::Simple,
            &[],
        );
        assert!(prompt.starts_with(
            "You are a subject-matter expert in credit union banking with deep experience\n in KPIs,"
        ));
        assert!(prompt
            .contains("- original_question: What is the 90+ DPD Rate for retail members year to date?"));
        assert!(prompt.contains("- persona: Risk & Credit Analytics Mgr; CRO; Compliance"));
        assert!(prompt.contains("- kpi: 90+ DPD Rate"));
        assert!(prompt.contains("- difficulty: simple"));
        // Escaped braces around the output schema render as literal braces,
        // and the echoed question appears inside the schema example.
        assert!(prompt.contains(
            "{\n  \"original_question\": \"What is the 90+ DPD Rate for retail members year to date?\",\n  \"mapped_question\": \"string\"\n}"
        ));
        assert!(!prompt.contains("{{"));
        assert!(!prompt.contains("{DOMAIN}"));
        // No candidates block when none were supplied.
        assert!(!prompt.contains("candidate_questions"));
    }

    #[test]
    fn prompt_appends_candidates_when_present() {
        let prompt = render_mapper_prompt(
            "credit union banking",
            "Q?",
            "Persona",
            "KPI",
            Difficulty::Hard,
            &["First candidate?".to_string(), "Second candidate?".to_string()],
        );
        let block = "- difficulty: hard\n- candidate_questions:\n  1. First candidate?\n  2. Second candidate?\n\nOutput:";
        assert!(prompt.contains(block), "prompt was:\n{prompt}");
    }

    #[test]
    fn payload_parsing_requires_both_fields() {
        let good = r#"{"original_question": "Q?", "mapped_question": "M?"}"#;
        assert_eq!(
            parse_mapping_payload(good).unwrap(),
            ("Q?".to_string(), "M?".to_string())
        );
        let unmapped = r#"{"original_question": "Q?", "mapped_question": ""}"#;
        assert_eq!(parse_mapping_payload(unmapped).unwrap().1, "");
        assert!(parse_mapping_payload(r#"{"mapped_question": "M?"}"#).is_err());
        assert!(parse_mapping_payload(r#"{"original_question": "Q?"}"#).is_err());
        assert!(parse_mapping_payload("prose").is_err());
    }
}
