//! Deterministic in-process provider simulator.
//!
//! Each profile mimics one role in the pipeline (question writer, mapper,
//! open-web responder, database answerer, score judge) by parsing the real
//! prompts and synthesizing hash-seeded responses. Output depends only on
//! the prompt contents and the provider's model name, so recording against
//! the stub always produces identical cassettes — which is how the bundled
//! offline fixtures are built and exercised without network access.
//!
//! The synthesized corpus is deliberately imperfect: a fraction of generated
//! questions violate quality-gate rules, some mappings come back unmapped,
//! some answers are empty or carry a "no data points were found" fallback,
//! and judge scores spread across the full range. This keeps every
//! downstream code path (rejection logging, skips, failure accounting,
//! histogram shapes) exercised end to end.

use serde_json::json;

use super::{ChatRequest, ProviderConfig, Transport, TransportError};
use crate::util::stable_hash;

pub struct StubTransport;

const SEGMENTS: [&str; 16] = [
    "retail members",
    "commercial members",
    "indirect auto borrowers",
    "first-mortgage holders",
    "credit card revolvers",
    "new members",
    "members under 30",
    "members over 60",
    "high-balance households",
    "single-service members",
    "multi-product households",
    "branch-banked members",
    "digital-first members",
    "small-business accounts",
    "HELOC borrowers",
    "payroll-deposit members",
];

const PERIODS: [&str; 14] = [
    "over the last quarter",
    "over the trailing twelve months",
    "year to date",
    "month over month",
    "for the current fiscal year",
    "since the last rate change",
    "over the past six months",
    "quarter over quarter",
    "over the last two years",
    "as of the latest close",
    "versus the prior year",
    "across the last three quarters",
    "through the first half",
    "since the most recent audit",
];

const ANGLES: [&str; 12] = [
    "by branch",
    "by product line",
    "by origination channel",
    "by vintage",
    "by balance tier",
    "by region",
    "by account age",
    "by member segment",
    "by delivery channel",
    "by credit tier",
    "by county",
    "by tenure band",
];

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let rest = &text[from..];
    let to = rest.find(end)?;
    Some(&rest[..to])
}

fn between_last<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.rfind(start)? + start.len();
    let rest = &text[from..];
    let to = rest.find(end)?;
    Some(&rest[..to])
}

fn line_value<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(prefix))
}

fn parse_error(profile: &str, what: &str) -> TransportError {
    TransportError::fatal(format!("stub profile {profile}: prompt missing {what}"))
}

fn maybe_fence(payload: String, hash: u64, modulus: u64) -> String {
    if hash % modulus == 0 {
        format!("```json\n{payload}\n```")
    } else {
        payload
    }
}

fn idx(hash: u64, shift: u32, len: usize) -> usize {
    ((hash >> shift) as usize) % len
}

/// Synthesizes the question batch for one persona/KPI/difficulty context.
/// Roughly one context in five gets its last slot replaced by a question
/// that violates exactly one quality-gate rule.
fn writer_questions(
    model: &str,
    persona: &str,
    kpi: &str,
    difficulty: &str,
    n: usize,
) -> Vec<String> {
    let mut questions = Vec::with_capacity(n);
    for i in 0..n {
        let h = stable_hash(&[model, persona, kpi, difficulty, &i.to_string()]);
        let segment = SEGMENTS[idx(h, 0, SEGMENTS.len())];
        let period = PERIODS[idx(h, 8, PERIODS.len())];
        let angle = ANGLES[idx(h, 16, ANGLES.len())];
        let question = match difficulty {
            "simple" => format!("What is the {kpi} for {segment} {period}?"),
            "medium" => format!("How does the {kpi} for {segment} vary {angle} {period}?"),
            _ => format!(
                "How has the {kpi} for {segment} trended {period}, and which cohorts {angle} concentrate the exposure?"
            ),
        };
        questions.push(question);
    }

    let inject = stable_hash(&[model, persona, difficulty, "inject"]);
    if inject % 5 == 0 && n >= 2 {
        let last = n - 1;
        questions[last] = match (inject >> 8) % 5 {
            0 => questions[0].clone(),
            1 => format!("{} right now", questions[0]),
            2 => "Current rate?".to_string(),
            3 => "the rate the rate the rate the rate".to_string(),
            _ => "what is it of the for to in on at?".to_string(),
        };
    }
    questions
}

fn writer_response(model: &str, prompt: &str) -> Result<String, TransportError> {
    const PROFILE: &str = "question-writer";
    let persona =
        between(prompt, "You are a ", " as ").ok_or_else(|| parse_error(PROFILE, "persona"))?;
    let kpi = between(prompt, "Your goal is to improve the following KPI:\n", "\n")
        .map(|l| l.trim_end_matches('.'))
        .ok_or_else(|| parse_error(PROFILE, "KPI"))?;
    let difficulty = between(prompt, "Provide actionable ", " difficulty questions")
        .ok_or_else(|| parse_error(PROFILE, "difficulty"))?;
    let n: usize = between_last(prompt, "Generate ", " questions directly in JSON format:")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| parse_error(PROFILE, "question count"))?;

    let questions = writer_questions(model, persona, kpi, difficulty, n);
    let payload = json!({ "questions": questions }).to_string();
    let wrap = stable_hash(&[model, persona, kpi, difficulty, "fence"]);
    Ok(maybe_fence(payload, wrap, 3))
}

fn mapper_response(model: &str, prompt: &str) -> Result<String, TransportError> {
    const PROFILE: &str = "question-mapper";
    let original = line_value(prompt, "- original_question: ")
        .ok_or_else(|| parse_error(PROFILE, "original_question"))?;
    let kpi = line_value(prompt, "- kpi: ").ok_or_else(|| parse_error(PROFILE, "kpi"))?;
    let difficulty =
        line_value(prompt, "- difficulty: ").ok_or_else(|| parse_error(PROFILE, "difficulty"))?;

    let h = stable_hash(&[model, original, "map"]);
    let mapped = if h % 8 == 0 {
        String::new()
    } else {
        let period = PERIODS[idx(h, 8, PERIODS.len())];
        match difficulty {
            "simple" => {
                format!("What is the industry average {kpi} across U.S. credit unions {period}?")
            }
            "medium" => format!(
                "How does the average {kpi} differ across U.S. credit union asset-size tiers {period}?"
            ),
            _ => format!(
                "How has the {kpi} trended across U.S. credit unions {period}, and which regions concentrate it?"
            ),
        }
    };
    let payload =
        json!({ "original_question": original, "mapped_question": mapped }).to_string();
    Ok(maybe_fence(payload, stable_hash(&[model, original, "fence"]), 5))
}

fn web_answer(model: &str, question: &str) -> String {
    let h = stable_hash(&[model, question, "answer"]);
    if h % 12 == 0 {
        return String::new();
    }
    let whole = (h >> 16) % 20;
    let frac = (h >> 24) % 10;
    let period = PERIODS[idx(h, 8, PERIODS.len())];
    let direction = if (h >> 32) % 2 == 0 { "rise" } else { "decline" };
    let basis_points = (h >> 40) % 90 + 5;
    let sentences = [
        format!(
            "Industry data for U.S. credit unions places the measure near {whole}.{frac} percent {period}."
        ),
        format!(
            "NCUA quarterly summaries indicate a {direction} of roughly {basis_points} basis points versus the prior period."
        ),
        "Larger institutions generally report figures close to the industry median.".to_string(),
        "Analysts attribute most of the movement to prevailing rate conditions and seasonal lending patterns.".to_string(),
        "The overall trend has remained stable across the trailing year.".to_string(),
        "Regional variation is present but modest.".to_string(),
    ];
    let count = if h % 9 == 0 {
        2
    } else if h % 13 == 0 {
        6
    } else {
        3 + ((h >> 48) % 3) as usize
    };
    sentences[..count].join(" ")
}

fn responder_response(model: &str, input_csv: &str) -> Result<String, TransportError> {
    const PROFILE: &str = "web-responder";
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input_csv.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| TransportError::fatal(format!("stub profile {PROFILE}: bad CSV: {e}")))?
        .clone();
    let column = headers
        .iter()
        .position(|h| h == "answerable_question")
        .ok_or_else(|| parse_error(PROFILE, "answerable_question column"))?;

    let mut answers = Vec::new();
    for record in reader.records() {
        let record = record
            .map_err(|e| TransportError::fatal(format!("stub profile {PROFILE}: bad CSV row: {e}")))?;
        let question = record
            .get(column)
            .ok_or_else(|| parse_error(PROFILE, "question cell"))?
            .to_string();
        let answer = web_answer(model, &question);
        answers.push(json!({ "question": question, "answer": answer }));
    }
    if answers.is_empty() {
        return Err(parse_error(PROFILE, "question rows"));
    }
    let payload = json!({ "answers": answers }).to_string();
    Ok(maybe_fence(payload, stable_hash(&[model, input_csv, "fence"]), 4))
}

fn db_response(model: &str, question: &str) -> String {
    let h = stable_hash(&[model, question, "dbanswer"]);
    if h % 7 == 0 {
        return "No data points were found to answer this question. Consider adjusting the time range or other filters and trying again.".to_string();
    }
    if h % 53 == 0 {
        return String::new();
    }
    let whole = (h >> 16) % 25;
    let frac = (h >> 24) % 10;
    let accounts = 1_200 + (h >> 32) % 90_000;
    let mut sentences = vec![
        format!(
            "Based on the core banking records, the requested measure stands at {whole}.{frac} percent for the selected population."
        ),
        "The figure is computed from ACCOUNT and LOAN records joined on account number.".to_string(),
        format!("Coverage spans {accounts} member accounts that meet the filter criteria."),
    ];
    if h % 11 == 0 {
        sentences.truncate(2);
    } else if h % 2 == 0 {
        sentences.push(
            "Drill-down detail by branch and product is available in the saved view.".to_string(),
        );
    }
    sentences.join(" ")
}

/// Score shaping, in twentieths so every value serializes as an exact
/// two-decimal number. Bias stays low with occasional spikes; substantive
/// answers score high with sparse failures; empty or fallback answers sink
/// the content metrics while voice stays middling.
fn judge_score(model: &str, metric: &str, question: &str, answer: &str) -> (f64, String) {
    let h = stable_hash(&[model, metric, question, answer]);
    let hollow = answer.trim().is_empty() || answer.contains("No data points were found");
    let twentieths: u64 = if metric == "bias" {
        if h % 17 == 0 {
            12
        } else {
            h % 3
        }
    } else if hollow {
        match metric {
            "answer_relevancy" | "focus" => 0,
            "completeness" => (h >> 8) % 3,
            "helpfulness" => 1,
            "engagement" => 2 + (h >> 8) % 3,
            "voice" => 9 + (h >> 8) % 4,
            _ => 2,
        }
    } else {
        match metric {
            "answer_relevancy" => {
                if h % 19 == 0 {
                    6
                } else {
                    15 + h % 6
                }
            }
            "completeness" => {
                if h % 5 == 0 {
                    3 + (h >> 8) % 3
                } else {
                    17 + (h >> 8) % 4
                }
            }
            "focus" => {
                if h % 23 == 0 {
                    8
                } else {
                    14 + h % 7
                }
            }
            "engagement" => 11 + h % 9,
            "helpfulness" => {
                if h % 21 == 0 {
                    7
                } else {
                    13 + h % 8
                }
            }
            "voice" => 16 + h % 5,
            _ => 10 + h % 8,
        }
    };
    let score = twentieths.min(20) as f64 / 20.0;
    let reason = if hollow && metric != "bias" {
        format!("The response offers no substantive content for the question, so {metric} sits near the bottom of the scale.")
    } else {
        format!("Assessed {metric} against the stated criterion for this persona and KPI context.")
    };
    (score, reason)
}

fn judge_response(model: &str, prompt: &str) -> Result<String, TransportError> {
    const PROFILE: &str = "score-judge";
    let metric = line_value(prompt, "Evaluation criterion: ")
        .ok_or_else(|| parse_error(PROFILE, "criterion line"))?;
    let question =
        line_value(prompt, "- question: ").ok_or_else(|| parse_error(PROFILE, "question line"))?;
    let answer = between(prompt, "Response to evaluate:\n", "\n\nOutput STRICTLY")
        .ok_or_else(|| parse_error(PROFILE, "response block"))?;

    let (score, reason) = judge_score(model, metric, question, answer);
    let payload = json!({ "score": score, "reason": reason }).to_string();
    Ok(maybe_fence(payload, stable_hash(&[model, metric, question, answer, "fence"]), 4))
}

impl Transport for StubTransport {
    fn execute(
        &self,
        provider: &ProviderConfig,
        request: &ChatRequest,
    ) -> Result<String, TransportError> {
        let model = provider.model.as_str();
        match provider.stub_profile.as_deref() {
            Some("question-writer") => writer_response(model, &request.user_prompt),
            Some("question-mapper") => mapper_response(model, &request.user_prompt),
            Some("web-responder") => responder_response(model, &request.user_prompt),
            Some("db-answerer") => Ok(db_response(model, &request.user_prompt)),
            Some("score-judge") => judge_response(model, &request.user_prompt),
            other => Err(TransportError::fatal(format!(
                "stub transport needs a known stub_profile, got {other:?}"
            ))),
        }
    }
}
