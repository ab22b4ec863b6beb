//! Answer collection from the systems under test.
//!
//! Structured-search systems are asked the original questions one at a
//! time over their answer API. Open-web systems receive batches of mapped
//! questions as CSV input under a standardized instruction prompt that
//! constrains answers to 3–5 sentences. Answers outside that band are
//! flagged (not rejected); empty answers are kept with their own status so
//! the judge can score non-answers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SyntheticQuestion;
use crate::gateway::{extract_json, ChatRequest, Gateway, GatewayError};
use crate::mapper::MappingRecord;
use crate::util::normalize_ws;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Answers from the proprietary database; asked the original questions.
    StructuredSearch,
    /// Answers from the open web; asked the mapped equivalents.
    OpenWebLlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionSource {
    Original,
    Mapped,
}

/// One system under test.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemProfile {
    pub system_id: String,
    pub kind: SystemKind,
    pub provider: String,
    pub question_source: QuestionSource,
}

/// Checks the kind/source pairing that keeps the comparison honest: a
/// database system must answer original questions, an open-web system the
/// mapped ones.
pub fn validate_systems(systems: &[SystemProfile]) -> Result<(), CollectError> {
    if systems.is_empty() {
        return Err(CollectError::Config("at least one system must be configured".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for system in systems {
        if system.system_id.trim().is_empty() {
            return Err(CollectError::Config("system with empty system_id".into()));
        }
        if !seen.insert(system.system_id.as_str()) {
            return Err(CollectError::Config(format!(
                "duplicate system_id {:?}",
                system.system_id
            )));
        }
        let expected = match system.kind {
            SystemKind::StructuredSearch => QuestionSource::Original,
            SystemKind::OpenWebLlm => QuestionSource::Mapped,
        };
        if system.question_source != expected {
            return Err(CollectError::Config(format!(
                "system {:?}: {:?} systems must use {:?} questions",
                system.system_id, system.kind, expected
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStatus {
    Ok,
    /// The system returned an empty string; judged as a non-answer.
    Empty,
    /// The call or payload failed; excluded from evaluation.
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub system_id: String,
    pub question_source: QuestionSource,
    /// The question text actually sent to the system.
    pub asked_question: String,
    pub answer_text: String,
    pub sentence_count: usize,
    pub collected_at: String,
    pub status: AnswerStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A question skipped for one system, with the reason (e.g. unmapped).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipNote {
    pub question_id: String,
    pub system_id: String,
    pub reason: String,
}

/// Answer whose sentence count falls outside the expected 3–5 band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LengthFlag {
    pub question_id: String,
    pub system_id: String,
    pub sentence_count: usize,
}

#[derive(Debug, Clone)]
pub struct CollectOutcome {
    pub answers: Vec<AnswerRecord>,
    pub skips: Vec<SkipNote>,
    pub flagged: Vec<LengthFlag>,
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("collection configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl CollectError {
    pub fn kind(&self) -> &'static str {
        match self {
            CollectError::Config(_) => "config",
            CollectError::Gateway(e) => e.kind(),
        }
    }
}

fn is_fatal(err: &GatewayError) -> bool {
    matches!(
        err,
        GatewayError::CassetteMiss { .. }
            | GatewayError::UnknownProvider(_)
            | GatewayError::InvalidRequest(_)
            | GatewayError::Io(_)
    )
}

/// Counts sentences: runs of `.`, `!`, `?` followed by whitespace or end of
/// text terminate a sentence. Decimal points ("3.4 percent") do not, and
/// trailing text without terminal punctuation counts as one sentence.
pub fn sentence_count(text: &str) -> usize {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return 0;
    }
    let chars: Vec<char> = trimmed.chars().collect();
    let mut count = 0;
    let mut has_content = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j], '.' | '!' | '?') {
                j += 1;
            }
            let terminal = j >= chars.len() || chars[j].is_whitespace();
            if terminal && has_content {
                count += 1;
                has_content = false;
            }
            i = j;
        } else {
            if !c.is_whitespace() {
                has_content = true;
            }
            i += 1;
        }
    }
    if has_content {
        count += 1;
    }
    count
}

/// Expected answer length band, in sentences.
pub const SENTENCE_BAND: std::ops::RangeInclusive<usize> = 3..=5;

const RESPONSE_TEMPLATE: &str = "You are a data analyst specializing in {DOMAIN}.
Answer questions using only commonly available open web knowledge.

Task:
- Answer ONLY the questions listed in the \"answerable_question\" column.

Rules:
1. Do NOT rephrase or modify the question text.
2. Do NOT use information from any other columns.
3. If a question cannot be answered with general open web data,
return an empty string (\"\").
4. Limit each answer to 3\u{2013}5 sentences.
5. Do NOT include citations, sources, opinions, or assumptions.

Output:
Return ONLY valid JSON with no extra text.

Schema:
{
  \"answers\": [
    {
      \"question\": \"string (exact from answerable_question)\",
      \"answer\": \"string (3\u{2013}5 sentences or empty)\"
    }
  ]
}

Generate the JSON response now.";

/// Instruction prompt for open-web answer generation. The question batch
/// travels separately as CSV input (see [`build_input_csv`]).
pub fn render_response_prompt(domain: &str) -> String {
    RESPONSE_TEMPLATE.replace("{DOMAIN}", domain)
}

/// System message sent alongside direct structured-search questions.
pub const STRUCTURED_SYSTEM_PROMPT: &str =
    "You answer business questions from the structured database.";

/// One-column CSV carrying a batch of questions, quoted as needed,
/// LF-terminated.
pub fn build_input_csv(questions: &[&str]) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(["answerable_question"]).expect("header writes");
    for question in questions {
        writer.write_record([question]).expect("row writes");
    }
    String::from_utf8(writer.into_inner().expect("csv buffer")).expect("csv is UTF-8")
}

struct PendingAnswer {
    question_id: String,
    asked_question: String,
}

fn make_record(
    system: &SystemProfile,
    question_id: &str,
    asked_question: &str,
    answer_text: String,
    collected_at: String,
    error: Option<String>,
) -> AnswerRecord {
    let status = if error.is_some() {
        AnswerStatus::Failed
    } else if answer_text.trim().is_empty() {
        AnswerStatus::Empty
    } else {
        AnswerStatus::Ok
    };
    AnswerRecord {
        question_id: question_id.to_string(),
        system_id: system.system_id.clone(),
        question_source: system.question_source,
        asked_question: asked_question.to_string(),
        sentence_count: sentence_count(&answer_text),
        answer_text,
        collected_at,
        status,
        error,
    }
}

/// Collects answers from every configured system for the accepted
/// questions. Records are returned sorted by (system_id, question_id);
/// unmapped questions produce skip notes for open-web systems; answers
/// outside the sentence band are flagged.
pub fn collect(
    questions: &[SyntheticQuestion],
    mappings: &[MappingRecord],
    systems: &[SystemProfile],
    domain: &str,
    batch_size: usize,
    gateway: &Gateway,
) -> Result<CollectOutcome, CollectError> {
    validate_systems(systems)?;
    if batch_size == 0 {
        return Err(CollectError::Config("batch_size must be at least 1".into()));
    }

    let mut sorted: Vec<&SyntheticQuestion> = questions.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mapping_by_id: std::collections::BTreeMap<&str, &MappingRecord> =
        mappings.iter().map(|m| (m.question_id.as_str(), m)).collect();

    let mut answers = Vec::new();
    let mut skips = Vec::new();

    for system in systems {
        match system.kind {
            SystemKind::StructuredSearch => {
                collect_structured(system, &sorted, gateway, &mut answers)?;
            }
            SystemKind::OpenWebLlm => {
                collect_open_web(
                    system,
                    &sorted,
                    &mapping_by_id,
                    domain,
                    batch_size,
                    gateway,
                    &mut answers,
                    &mut skips,
                )?;
            }
        }
    }

    answers.sort_by(|a, b| {
        (a.system_id.as_str(), a.question_id.as_str())
            .cmp(&(b.system_id.as_str(), b.question_id.as_str()))
    });

    let flagged = answers
        .iter()
        .filter(|a| a.status == AnswerStatus::Ok && !SENTENCE_BAND.contains(&a.sentence_count))
        .map(|a| {
            log::info!(
                "answer {}/{} has {} sentences, outside the {}–{} band",
                a.system_id,
                a.question_id,
                a.sentence_count,
                SENTENCE_BAND.start(),
                SENTENCE_BAND.end()
            );
            LengthFlag {
                question_id: a.question_id.clone(),
                system_id: a.system_id.clone(),
                sentence_count: a.sentence_count,
            }
        })
        .collect();

    Ok(CollectOutcome { answers, skips, flagged })
}

fn collect_structured(
    system: &SystemProfile,
    questions: &[&SyntheticQuestion],
    gateway: &Gateway,
    answers: &mut Vec<AnswerRecord>,
) -> Result<(), CollectError> {
    // An answer API takes the bare question; a chat provider under test
    // gets it as the user turn. Either way the question text is the payload.
    let model = gateway.model_for(&system.provider)?;

    for question in questions {
        let request = ChatRequest {
            provider: system.provider.clone(),
            model: model.clone(),
            system_prompt: STRUCTURED_SYSTEM_PROMPT.to_string(),
            user_prompt: question.text.clone(),
            temperature: 0.0,
            max_output_tokens: None,
        };
        match gateway.complete(&request) {
            Ok(response) => answers.push(make_record(
                system,
                &question.id,
                &question.text,
                response.text,
                response.timestamp,
                None,
            )),
            Err(err) if is_fatal(&err) => return Err(err.into()),
            Err(err) => {
                log::error!("{}/{} failed: {err}", system.system_id, question.id);
                answers.push(make_record(
                    system,
                    &question.id,
                    &question.text,
                    String::new(),
                    String::new(),
                    Some(err.to_string()),
                ));
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn collect_open_web(
    system: &SystemProfile,
    questions: &[&SyntheticQuestion],
    mapping_by_id: &std::collections::BTreeMap<&str, &MappingRecord>,
    domain: &str,
    batch_size: usize,
    gateway: &Gateway,
    answers: &mut Vec<AnswerRecord>,
    skips: &mut Vec<SkipNote>,
) -> Result<(), CollectError> {
    let model = gateway.model_for(&system.provider)?;
    let instructions = render_response_prompt(domain);

    let mut pending: Vec<PendingAnswer> = Vec::new();
    for question in questions {
        match mapping_by_id.get(question.id.as_str()) {
            Some(mapping) if !mapping.unmapped => pending.push(PendingAnswer {
                question_id: question.id.clone(),
                asked_question: mapping.mapped_question.clone(),
            }),
            Some(_) => skips.push(SkipNote {
                question_id: question.id.clone(),
                system_id: system.system_id.clone(),
                reason: "unmapped".into(),
            }),
            None => skips.push(SkipNote {
                question_id: question.id.clone(),
                system_id: system.system_id.clone(),
                reason: "no mapping record".into(),
            }),
        }
    }

    for chunk in pending.chunks(batch_size) {
        let texts: Vec<&str> = chunk.iter().map(|p| p.asked_question.as_str()).collect();
        let request = ChatRequest {
            provider: system.provider.clone(),
            model: model.clone(),
            system_prompt: instructions.clone(),
            user_prompt: build_input_csv(&texts),
            temperature: 0.0,
            max_output_tokens: None,
        };

        match call_answer_batch(gateway, &request, chunk.len()) {
            Ok((batch, collected_at)) => {
                for (pending_answer, answer) in chunk.iter().zip(batch) {
                    let error = if normalize_ws(&answer.question)
                        != normalize_ws(&pending_answer.asked_question)
                    {
                        Some(format!(
                            "echo mismatch: sent {:?}, got {:?}",
                            pending_answer.asked_question, answer.question
                        ))
                    } else {
                        None
                    };
                    let text = if error.is_some() { String::new() } else { answer.answer };
                    answers.push(make_record(
                        system,
                        &pending_answer.question_id,
                        &pending_answer.asked_question,
                        text,
                        collected_at.clone(),
                        error,
                    ));
                }
            }
            Err(BatchFailure::Fatal(err)) => return Err(err),
            Err(BatchFailure::Recorded(note)) => {
                log::error!("{} batch failed: {note}", system.system_id);
                for pending_answer in chunk {
                    answers.push(make_record(
                        system,
                        &pending_answer.question_id,
                        &pending_answer.asked_question,
                        String::new(),
                        String::new(),
                        Some(note.clone()),
                    ));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug)]
struct BatchAnswer {
    question: String,
    answer: String,
}

enum BatchFailure {
    Fatal(CollectError),
    Recorded(String),
}

/// One batched answer call with a single retry on malformed output.
fn call_answer_batch(
    gateway: &Gateway,
    request: &ChatRequest,
    expected: usize,
) -> Result<(Vec<BatchAnswer>, String), BatchFailure> {
    let mut last_note = None;
    for _ in 0..2 {
        let response = match gateway.complete(request) {
            Ok(r) => r,
            Err(err) if is_fatal(&err) => return Err(BatchFailure::Fatal(err.into())),
            Err(err) => return Err(BatchFailure::Recorded(err.to_string())),
        };
        match parse_answer_payload(&response.text, expected) {
            Ok(batch) => return Ok((batch, response.timestamp)),
            Err(note) => {
                log::warn!("malformed answer payload, retrying once: {note}");
                last_note = Some(note);
            }
        }
    }
    Err(BatchFailure::Recorded(last_note.expect("retry loop ran")))
}

fn parse_answer_payload(text: &str, expected: usize) -> Result<Vec<BatchAnswer>, String> {
    let value = extract_json(text).map_err(|e| e.to_string())?;
    let items = value
        .get("answers")
        .and_then(|a| a.as_array())
        .ok_or_else(|| "payload has no \"answers\" array".to_string())?;
    if items.len() != expected {
        return Err(format!("expected {expected} answers, payload has {}", items.len()));
    }
    items
        .iter()
        .map(|item| {
            let question = item
                .get("question")
                .and_then(|q| q.as_str())
                .ok_or_else(|| "answer entry has no string \"question\"".to_string())?;
            let answer = item
                .get("answer")
                .and_then(|a| a.as_str())
                .ok_or_else(|| "answer entry has no string \"answer\"".to_string())?;
            Ok(BatchAnswer { question: question.to_string(), answer: answer.to_string() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_count_handles_punctuation_and_decimals() {
        assert_eq!(sentence_count("One. Two! Three?"), 3);
        assert_eq!(sentence_count("Rates rose to 3.4 percent last year."), 1);
        assert_eq!(sentence_count("No terminal punctuation"), 1);
        assert_eq!(sentence_count(""), 0);
        assert_eq!(sentence_count("   "), 0);
        assert_eq!(sentence_count("Really?! Yes."), 2);
        assert_eq!(sentence_count("Ends abruptly. And then"), 2);
        assert_eq!(sentence_count("..."), 0);
    }

    #[test]
    fn response_prompt_substitutes_domain_only() {
        let prompt = render_response_prompt("credit union banking");
        assert!(prompt.starts_with("You are a data analyst specializing in credit union banking.\n"));
        assert!(prompt.contains("Answer ONLY the questions listed in the \"answerable_question\" column."));
        assert!(prompt.contains("Limit each answer to 3\u{2013}5 sentences."));
        assert!(prompt.ends_with("Generate the JSON response now."));
        assert!(!prompt.contains("{DOMAIN}"));
    }

    #[test]
    fn input_csv_quotes_only_when_needed() {
        let csv = build_input_csv(&["Plain question?", "With, comma?", "With \"quotes\"?"]);
        assert_eq!(
            csv,
            "answerable_question\nPlain question?\n\"With, comma?\"\n\"With \"\"quotes\"\"?\"\n"
        );
    }

    #[test]
    fn system_validation_enforces_kind_source_pairing() {
        let good = vec![
            SystemProfile {
                system_id: "db".into(),
                kind: SystemKind::StructuredSearch,
                provider: "p1".into(),
                question_source: QuestionSource::Original,
            },
            SystemProfile {
                system_id: "web".into(),
                kind: SystemKind::OpenWebLlm,
                provider: "p2".into(),
                question_source: QuestionSource::Mapped,
            },
        ];
        assert!(validate_systems(&good).is_ok());

        let mismatched = vec![SystemProfile {
            system_id: "db".into(),
            kind: SystemKind::StructuredSearch,
            provider: "p1".into(),
            question_source: QuestionSource::Mapped,
        }];
        assert!(matches!(validate_systems(&mismatched), Err(CollectError::Config(_))));

        let duplicated = vec![good[0].clone(), good[0].clone()];
        assert!(matches!(validate_systems(&duplicated), Err(CollectError::Config(_))));
        assert!(validate_systems(&[]).is_err());
    }

    #[test]
    fn answer_payload_parsing_enforces_count_and_shape() {
        let good = r#"{"answers": [{"question": "Q1?", "answer": "A1."}, {"question": "Q2?", "answer": ""}]}"#;
        let parsed = parse_answer_payload(good, 2).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].question, "Q1?");
        assert_eq!(parsed[1].answer, "");

        assert!(parse_answer_payload(good, 3).unwrap_err().contains("expected 3"));
        assert!(parse_answer_payload(r#"{"answers": [{"question": "Q1?"}]}"#, 1).is_err());
        assert!(parse_answer_payload(r#"{"other": []}"#, 0).is_err());
    }

    #[test]
    fn record_status_tracks_content_and_errors() {
        let system = SystemProfile {
            system_id: "db".into(),
            kind: SystemKind::StructuredSearch,
            provider: "p".into(),
            question_source: QuestionSource::Original,
        };
        let ok = make_record(&system, "q1", "Q?", "An answer. More. Done.".into(), "t".into(), None);
        assert_eq!(ok.status, AnswerStatus::Ok);
        assert_eq!(ok.sentence_count, 3);

        let empty = make_record(&system, "q1", "Q?", "".into(), "t".into(), None);
        assert_eq!(empty.status, AnswerStatus::Empty);

        let failed =
            make_record(&system, "q1", "Q?", "".into(), "t".into(), Some("boom".into()));
        assert_eq!(failed.status, AnswerStatus::Failed);
    }
}
