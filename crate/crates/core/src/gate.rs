//! Deterministic quality gate for candidate questions.
//!
//! Candidates pass through, in order: exact-duplicate detection (normalized
//! text), near-duplicate detection (cosine similarity against previously
//! accepted questions), token-length bounds, lexical diversity (type-token
//! ratio), stopword-ratio, and — optionally — an LLM coherence review for
//! questions that survive every deterministic check. A duplicate verdict
//! short-circuits the remaining checks; otherwise every failing check is
//! listed so a rejection is fully explained.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SyntheticQuestion;
use crate::gateway::{extract_json, ChatRequest, Gateway, GatewayError};

/// Characters that survive tokenization even though they are not
/// alphanumeric: comparison/math/currency marks that carry meaning in
/// business questions ("90+", "<= 90 days", "$10k").
const KEPT_SYMBOLS: [char; 8] = ['$', '+', '<', '=', '>', '^', '|', '~'];

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || KEPT_SYMBOLS.contains(&c)
}

/// Lowercases and splits text into tokens. Whitespace and punctuation
/// separate tokens; runs of separators collapse (no empty tokens).
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !is_token_char(c))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn term_frequencies(tokens: &[String]) -> HashMap<&str, f64> {
    let mut tf: HashMap<&str, f64> = HashMap::new();
    for token in tokens {
        *tf.entry(token.as_str()).or_insert(0.0) += 1.0;
    }
    tf
}

/// Cosine similarity between the term-frequency vectors of two texts.
/// 1.0 for identical token multisets, 0.0 for disjoint vocabulary or when
/// either side has no tokens.
pub fn similarity(a: &str, b: &str) -> f64 {
    let tokens_a = tokenize(a);
    let tokens_b = tokenize(b);
    if tokens_a.is_empty() || tokens_b.is_empty() {
        return 0.0;
    }
    let tf_a = term_frequencies(&tokens_a);
    let tf_b = term_frequencies(&tokens_b);
    let dot: f64 = tf_a
        .iter()
        .filter_map(|(token, weight_a)| tf_b.get(token).map(|weight_b| weight_a * weight_b))
        .sum();
    let norm_a: f64 = tf_a.values().map(|w| w * w).sum::<f64>().sqrt();
    let norm_b: f64 = tf_b.values().map(|w| w * w).sum::<f64>().sqrt();
    dot / (norm_a * norm_b)
}

/// Type-token ratio: distinct tokens over total tokens. Empty input counts
/// as fully diverse so the length check, not this one, explains it.
pub fn lexical_diversity(tokens: &[String]) -> f64 {
    if tokens.is_empty() {
        return 1.0;
    }
    let distinct: HashSet<&str> = tokens.iter().map(String::as_str).collect();
    distinct.len() as f64 / tokens.len() as f64
}

/// Fraction of tokens that appear in the stopword list. Empty input is 0.
pub fn stopword_ratio(tokens: &[String], stopwords: &HashSet<String>) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    let hits = tokens.iter().filter(|t| stopwords.contains(t.as_str())).count();
    hits as f64 / tokens.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateConfig {
    #[serde(default = "default_min_tokens")]
    pub min_tokens: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_similarity_threshold")]
    pub similarity_threshold: f64,
    #[serde(default = "default_min_lexical_diversity")]
    pub min_lexical_diversity: f64,
    #[serde(default = "default_max_stopword_ratio")]
    pub max_stopword_ratio: f64,
    #[serde(default)]
    pub llm_review_enabled: bool,
    /// Provider used for the optional LLM review.
    #[serde(default)]
    pub review_provider: Option<String>,
}

fn default_min_tokens() -> usize {
    5
}
fn default_max_tokens() -> usize {
    60
}
fn default_similarity_threshold() -> f64 {
    0.9
}
fn default_min_lexical_diversity() -> f64 {
    0.5
}
fn default_max_stopword_ratio() -> f64 {
    0.6
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            min_tokens: default_min_tokens(),
            max_tokens: default_max_tokens(),
            similarity_threshold: default_similarity_threshold(),
            min_lexical_diversity: default_min_lexical_diversity(),
            max_stopword_ratio: default_max_stopword_ratio(),
            llm_review_enabled: false,
            review_provider: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Duplicate,
    Similarity,
    Length,
    LexicalDiversity,
    StopwordRatio,
    LlmReview,
}

/// One failed check with the value that tripped it and optional context
/// (the id of the clashing question, or the reviewer's reason).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedCheck {
    pub check: CheckKind,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Gate decision for one candidate. `failed_checks` is empty exactly when
/// the question was accepted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateVerdict {
    pub question_id: String,
    pub accepted: bool,
    pub failed_checks: Vec<FailedCheck>,
}

#[derive(Debug, Clone)]
pub struct GateOutcome {
    pub accepted: Vec<SyntheticQuestion>,
    pub verdicts: Vec<GateVerdict>,
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("gate configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl GateError {
    pub fn kind(&self) -> &'static str {
        match self {
            GateError::Config(_) => "config",
            GateError::Gateway(e) => e.kind(),
        }
    }
}

/// Everything the optional LLM review needs; omitted entirely when the
/// review is disabled.
pub struct LlmReview<'a> {
    pub gateway: &'a Gateway,
    pub provider: String,
    pub domain: String,
    /// persona_id → display name, for readable review prompts.
    pub persona_names: BTreeMap<String, String>,
}

const REVIEW_TEMPLATE: &str = r#"You are reviewing one candidate benchmark question for a {domain} dataset.

Criterion: the question must be coherent English, specific enough to answer from business data, and plausibly tied to the persona and KPI below.

- question: {question}
- persona: {persona}
- kpi: {kpi}

Output STRICTLY in the following JSON format:
{
  "verdict": "yes" or "no",
  "reason": "string"
}

Output ONLY valid JSON.
Do NOT include explanations, comments, or any additional text."#;

pub fn render_review_prompt(
    domain: &str,
    question: &str,
    persona_display: &str,
    kpi: &str,
) -> String {
    REVIEW_TEMPLATE
        .replace("{question}", question)
        .replace("{persona}", persona_display)
        .replace("{kpi}", kpi)
        .replace("{domain}", domain)
}

/// Asks the review model for a yes/no verdict, retrying once on malformed
/// output. Returns `(approved, reason)`.
fn llm_review_verdict(
    review: &LlmReview,
    question: &SyntheticQuestion,
) -> Result<(bool, String), GateError> {
    let persona_display = review
        .persona_names
        .get(&question.persona_id)
        .cloned()
        .unwrap_or_else(|| question.persona_id.clone());
    let request = ChatRequest {
        provider: review.provider.clone(),
        model: review.gateway.model_for(&review.provider)?,
        system_prompt: crate::dataset::PLAIN_SYSTEM_PROMPT.to_string(),
        user_prompt: render_review_prompt(
            &review.domain,
            &question.text,
            &persona_display,
            &question.kpi,
        ),
        temperature: 0.0,
        max_output_tokens: None,
    };

    let mut last_err = None;
    for _ in 0..2 {
        let response = review.gateway.complete(&request)?;
        match parse_review_payload(&response.text) {
            Ok(result) => return Ok(result),
            Err(e) => {
                log::warn!("malformed review payload for {}, retrying once: {e}", question.id);
                last_err = Some(e);
            }
        }
    }
    Err(GateError::Gateway(last_err.expect("retry loop ran")))
}

fn parse_review_payload(text: &str) -> Result<(bool, String), GatewayError> {
    let value = extract_json(text)?;
    let verdict = value.get("verdict").and_then(|v| v.as_str()).ok_or_else(|| {
        GatewayError::MalformedPayload("review payload has no string \"verdict\"".into())
    })?;
    let approved = match verdict.to_ascii_lowercase().as_str() {
        "yes" => true,
        "no" => false,
        other => {
            return Err(GatewayError::MalformedPayload(format!(
                "review verdict must be yes/no, got {other:?}"
            )))
        }
    };
    let reason =
        value.get("reason").and_then(|v| v.as_str()).unwrap_or_default().to_string();
    Ok((approved, reason))
}

/// Runs the gate over candidates in input order. Deduplication and
/// similarity compare each candidate against *previously accepted*
/// questions only, so the gate is greedy and order-dependent by design:
/// run twice over the same input, it yields identical verdicts.
pub fn run_gate(
    candidates: &[SyntheticQuestion],
    config: &GateConfig,
    stopwords: &HashSet<String>,
    review: Option<&LlmReview>,
) -> Result<GateOutcome, GateError> {
    if config.min_tokens > config.max_tokens {
        return Err(GateError::Config(format!(
            "min_tokens {} exceeds max_tokens {}",
            config.min_tokens, config.max_tokens
        )));
    }
    if config.llm_review_enabled && review.is_none() {
        return Err(GateError::Config(
            "llm_review_enabled is set but no review context was supplied".into(),
        ));
    }

    let mut accepted: Vec<SyntheticQuestion> = Vec::new();
    // Normalized text of accepted questions → id, for duplicate detection.
    let mut accepted_texts: HashMap<String, String> = HashMap::new();
    let mut verdicts = Vec::with_capacity(candidates.len());

    for candidate in candidates {
        let tokens = tokenize(&candidate.text);
        let normalized = tokens.join(" ");
        let mut failed: Vec<FailedCheck> = Vec::new();

        if let Some(original_id) = accepted_texts.get(&normalized) {
            failed.push(FailedCheck {
                check: CheckKind::Duplicate,
                value: 1.0,
                note: Some(format!("duplicate of {original_id}")),
            });
            verdicts.push(GateVerdict {
                question_id: candidate.id.clone(),
                accepted: false,
                failed_checks: failed,
            });
            continue;
        }

        // Near-duplicate: highest similarity against anything accepted.
        let mut best: Option<(f64, &str)> = None;
        for earlier in &accepted {
            let score = similarity(&candidate.text, &earlier.text);
            if best.map_or(true, |(s, _)| score > s) {
                best = Some((score, earlier.id.as_str()));
            }
        }
        if let Some((score, other_id)) = best {
            if score >= config.similarity_threshold {
                failed.push(FailedCheck {
                    check: CheckKind::Similarity,
                    value: score,
                    note: Some(format!("near duplicate of {other_id}")),
                });
            }
        }

        if tokens.len() < config.min_tokens || tokens.len() > config.max_tokens {
            failed.push(FailedCheck {
                check: CheckKind::Length,
                value: tokens.len() as f64,
                note: None,
            });
        }

        let diversity = lexical_diversity(&tokens);
        if diversity < config.min_lexical_diversity {
            failed.push(FailedCheck {
                check: CheckKind::LexicalDiversity,
                value: diversity,
                note: None,
            });
        }

        let stop_ratio = stopword_ratio(&tokens, stopwords);
        if stop_ratio > config.max_stopword_ratio {
            failed.push(FailedCheck {
                check: CheckKind::StopwordRatio,
                value: stop_ratio,
                note: None,
            });
        }

        // The LLM review runs only for questions that are already clean:
        // it is a last-line coherence check, not a replacement for the
        // deterministic rules (and it costs a model call per question).
        if failed.is_empty() && config.llm_review_enabled {
            let review = review.expect("validated above");
            let (approved, reason) = llm_review_verdict(review, candidate)?;
            if !approved {
                failed.push(FailedCheck {
                    check: CheckKind::LlmReview,
                    value: 0.0,
                    note: Some(reason),
                });
            }
        }

        let is_accepted = failed.is_empty();
        if is_accepted {
            accepted_texts.insert(normalized, candidate.id.clone());
            accepted.push(candidate.clone());
        }
        verdicts.push(GateVerdict {
            question_id: candidate.id.clone(),
            accepted: is_accepted,
            failed_checks: failed,
        });
    }

    Ok(GateOutcome { accepted, verdicts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Difficulty, Provenance};

    fn question(id: &str, text: &str) -> SyntheticQuestion {
        SyntheticQuestion {
            id: id.into(),
            text: text.into(),
            persona_id: "p".into(),
            kpi: "KPI".into(),
            difficulty: Difficulty::Simple,
            provenance: Provenance::Synthetic,
            generation_batch: "b".into(),
        }
    }

    fn stopword_set() -> HashSet<String> {
        ["what", "is", "the", "of", "for", "to", "in", "on", "at", "it", "all", "us", "a", "an"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn tokenize_matches_contract_examples() {
        assert_eq!(
            tokenize("What is the 90+ DPD Rate?"),
            vec!["what", "is", "the", "90+", "dpd", "rate"]
        );
        assert_eq!(tokenize("a,,b"), vec!["a", "b"]);
        assert_eq!(tokenize("  spaced\tout  "), vec!["spaced", "out"]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("???"), Vec::<String>::new());
        // Currency and comparison marks stay inside tokens.
        assert_eq!(tokenize("balances > $10k"), vec!["balances", ">", "$10k"]);
    }

    #[test]
    fn similarity_matches_contract_examples() {
        assert!((similarity("a b", "a c") - 0.5).abs() < 1e-12);
        assert!((similarity("same text here", "same text here") - 1.0).abs() < 1e-12);
        assert_eq!(similarity("abc", "xyz"), 0.0);
        assert_eq!(similarity("", "anything"), 0.0);
        // Symmetric.
        let ab = similarity("alpha beta gamma", "alpha beta delta");
        let ba = similarity("alpha beta delta", "alpha beta gamma");
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn lexical_diversity_matches_contract_example() {
        let tokens = tokenize("what is the total the");
        assert_eq!(tokens, vec!["what", "is", "the", "total", "the"]);
        assert!((lexical_diversity(&tokens) - 0.8).abs() < 1e-12);
        assert_eq!(lexical_diversity(&[]), 1.0);
    }

    #[test]
    fn stopword_ratio_counts_hits() {
        let stops = stopword_set();
        let tokens = tokenize("what is the delinquency ratio");
        assert!((stopword_ratio(&tokens, &stops) - 0.6).abs() < 1e-12);
        assert_eq!(stopword_ratio(&[], &stops), 0.0);
    }

    #[test]
    fn duplicate_short_circuits_other_checks() {
        let candidates = vec![
            question("q1", "What is the delinquency ratio for retail members this quarter?"),
            question("q2", "What is the delinquency ratio for retail members this quarter?"),
        ];
        let outcome =
            run_gate(&candidates, &GateConfig::default(), &stopword_set(), None).unwrap();
        assert_eq!(outcome.accepted.len(), 1);
        let verdict = &outcome.verdicts[1];
        assert!(!verdict.accepted);
        assert_eq!(verdict.failed_checks.len(), 1);
        assert_eq!(verdict.failed_checks[0].check, CheckKind::Duplicate);
        assert_eq!(verdict.failed_checks[0].note.as_deref(), Some("duplicate of q1"));
    }

    #[test]
    fn duplicate_detection_ignores_case_and_punctuation() {
        let candidates = vec![
            question("q1", "What is the Delinquency Ratio for retail members this quarter?"),
            question("q2", "what is the delinquency ratio, for retail members this quarter"),
        ];
        let outcome =
            run_gate(&candidates, &GateConfig::default(), &stopword_set(), None).unwrap();
        assert_eq!(outcome.accepted.len(), 1);
        assert_eq!(outcome.verdicts[1].failed_checks[0].check, CheckKind::Duplicate);
    }

    #[test]
    fn near_duplicates_fail_similarity() {
        let base = "How has the delinquency ratio for indirect auto borrowers trended over the last quarter?";
        let near = format!("{base} right now");
        let candidates = vec![question("q1", base), question("q2", &near)];
        let outcome =
            run_gate(&candidates, &GateConfig::default(), &stopword_set(), None).unwrap();
        assert_eq!(outcome.accepted.len(), 1);
        let verdict = &outcome.verdicts[1];
        let failure = &verdict.failed_checks[0];
        assert_eq!(failure.check, CheckKind::Similarity);
        assert!(failure.value >= 0.9 && failure.value < 1.0, "similarity {}", failure.value);
        assert_eq!(failure.note.as_deref(), Some("near duplicate of q1"));
    }

    #[test]
    fn length_bounds_reject_short_and_long() {
        let long_text = (0..70).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let candidates = vec![question("short", "Current rate?"), question("long", &long_text)];
        let outcome =
            run_gate(&candidates, &GateConfig::default(), &stopword_set(), None).unwrap();
        assert!(outcome.accepted.is_empty());
        assert_eq!(outcome.verdicts[0].failed_checks[0].check, CheckKind::Length);
        assert_eq!(outcome.verdicts[0].failed_checks[0].value, 2.0);
        assert_eq!(outcome.verdicts[1].failed_checks[0].check, CheckKind::Length);
        assert_eq!(outcome.verdicts[1].failed_checks[0].value, 70.0);
    }

    #[test]
    fn diversity_and_stopword_failures_are_both_listed() {
        // Every token is a stopword and the same two repeat: both checks
        // fail and both appear.
        let candidates = vec![question("q", "the of the of the of")];
        let outcome =
            run_gate(&candidates, &GateConfig::default(), &stopword_set(), None).unwrap();
        let checks: Vec<CheckKind> =
            outcome.verdicts[0].failed_checks.iter().map(|f| f.check).collect();
        assert!(checks.contains(&CheckKind::LexicalDiversity));
        assert!(checks.contains(&CheckKind::StopwordRatio));
    }

    #[test]
    fn accepted_questions_have_empty_failed_checks() {
        let candidates =
            vec![question("q", "How many indirect auto loans were opened by branch this month?")];
        let outcome =
            run_gate(&candidates, &GateConfig::default(), &stopword_set(), None).unwrap();
        assert_eq!(outcome.accepted.len(), 1);
        assert!(outcome.verdicts[0].accepted);
        assert!(outcome.verdicts[0].failed_checks.is_empty());
    }

    #[test]
    fn gate_is_idempotent_over_its_own_output() {
        let candidates = vec![
            question("q1", "What is the 90+ DPD Rate for retail members this quarter?"),
            question("q2", "What is the 90+ DPD Rate for retail members this quarter?"),
            question("q3", "How do dormant account rates compare across branches this year?"),
            question("q4", "bad"),
        ];
        let config = GateConfig::default();
        let stops = stopword_set();
        let first = run_gate(&candidates, &config, &stops, None).unwrap();
        let second = run_gate(&first.accepted, &config, &stops, None).unwrap();
        assert_eq!(second.accepted.len(), first.accepted.len());
        assert!(second.verdicts.iter().all(|v| v.accepted));
    }

    #[test]
    fn misconfigured_bounds_error() {
        let config = GateConfig { min_tokens: 10, max_tokens: 5, ..GateConfig::default() };
        let err = run_gate(&[], &config, &stopword_set(), None).unwrap_err();
        assert!(matches!(err, GateError::Config(_)));
    }

    #[test]
    fn review_prompt_and_payload_parsing() {
        let prompt = render_review_prompt("credit union banking", "Q?", "Fraud Analyst", "KPI X");
        assert!(prompt.contains("- question: Q?"));
        assert!(prompt.contains("- persona: Fraud Analyst"));
        assert!(prompt.contains("- kpi: KPI X"));
        assert!(prompt.starts_with("You are reviewing one candidate benchmark question for a credit union banking dataset."));

        assert_eq!(
            parse_review_payload(r#"{"verdict": "yes", "reason": "fine"}"#).unwrap(),
            (true, "fine".to_string())
        );
        assert_eq!(
            parse_review_payload(r#"{"verdict": "NO", "reason": "contradictory"}"#).unwrap(),
            (false, "contradictory".to_string())
        );
        assert!(parse_review_payload(r#"{"verdict": "maybe"}"#).is_err());
        assert!(parse_review_payload("nope").is_err());
    }

    #[test]
    fn enabled_review_without_context_is_config_error() {
        let config = GateConfig { llm_review_enabled: true, ..GateConfig::default() };
        assert!(matches!(
            run_gate(&[], &config, &stopword_set(), None),
            Err(GateError::Config(_))
        ));
    }
}
