//! Question dataset: persona/KPI catalogs, golden few-shot examples,
//! difficulty definitions, and LLM-backed synthetic question generation
//! over the persona × difficulty grid.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{extract_json, ChatRequest, Gateway, GatewayError};
use crate::util::derive_seed;

/// Question complexity tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Simple,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Simple, Difficulty::Medium, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }

    /// Stable ordering index used for sorting report rows.
    pub fn rank(self) -> usize {
        match self {
            Difficulty::Simple => 0,
            Difficulty::Medium => 1,
            Difficulty::Hard => 2,
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simple" => Ok(Difficulty::Simple),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(format!("unknown difficulty {other:?}")),
        }
    }
}

/// What a difficulty tier means, spelled out for the generation prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DifficultyDefinition {
    pub level: Difficulty,
    pub definition_text: String,
}

/// A business role (or group of roles) that asks questions, with the KPIs
/// it cares about.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub display_name: String,
    pub kpis: Vec<String>,
}

/// Hand-curated exemplar question used as few-shot context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldenQuestion {
    pub text: String,
    pub persona_id: String,
    pub kpi: String,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Golden,
    Synthetic,
}

/// A generated benchmark question, tagged with its full grounding context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticQuestion {
    pub id: String,
    pub text: String,
    pub persona_id: String,
    pub kpi: String,
    pub difficulty: Difficulty,
    pub provenance: Provenance,
    /// Identifier of the persona × difficulty generation call that produced
    /// this question.
    pub generation_batch: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("missing value for prompt placeholder: {0}")]
    MissingPlaceholder(&'static str),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl DatasetError {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetError::Schema(_) => "schema_violation",
            DatasetError::DanglingReference(_) => "dangling_reference",
            DatasetError::MissingPlaceholder(_) => "missing_placeholder",
            DatasetError::Io(_) => "io",
            DatasetError::Json(_) => "parse",
            DatasetError::Gateway(e) => e.kind(),
        }
    }
}

/// The three input catalogs, loaded and cross-validated together.
#[derive(Debug, Clone)]
pub struct Catalogs {
    pub personas: Vec<Persona>,
    pub golden: Vec<GoldenQuestion>,
    pub difficulties: Vec<DifficultyDefinition>,
}

impl Catalogs {
    pub fn persona(&self, id: &str) -> Option<&Persona> {
        self.personas.iter().find(|p| p.id == id)
    }

    pub fn definition(&self, level: Difficulty) -> Option<&DifficultyDefinition> {
        self.difficulties.iter().find(|d| d.level == level)
    }

    /// Map of persona id to display name, for stages that only need labels.
    pub fn persona_names(&self) -> BTreeMap<String, String> {
        self.personas.iter().map(|p| (p.id.clone(), p.display_name.clone())).collect()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen_ids = HashSet::new();
        for persona in &self.personas {
            if persona.id.trim().is_empty() {
                return Err(DatasetError::Schema("persona with empty id".into()));
            }
            if !seen_ids.insert(persona.id.as_str()) {
                return Err(DatasetError::Schema(format!("duplicate persona id {:?}", persona.id)));
            }
            if persona.display_name.trim().is_empty() {
                return Err(DatasetError::Schema(format!(
                    "persona {:?} has empty display_name",
                    persona.id
                )));
            }
            if persona.kpis.is_empty() || persona.kpis.iter().any(|k| k.trim().is_empty()) {
                return Err(DatasetError::Schema(format!(
                    "persona {:?} must list at least one non-empty KPI",
                    persona.id
                )));
            }
        }

        for (i, g) in self.golden.iter().enumerate() {
            if g.text.trim().is_empty() {
                return Err(DatasetError::Schema(format!("golden question {i} has empty text")));
            }
            let Some(persona) = self.persona(&g.persona_id) else {
                return Err(DatasetError::DanglingReference(format!(
                    "golden question {i} references unknown persona {:?}",
                    g.persona_id
                )));
            };
            if !persona.kpis.iter().any(|k| k == &g.kpi) {
                log::warn!(
                    "golden question {i} uses KPI {:?} not listed for persona {:?}",
                    g.kpi,
                    g.persona_id
                );
            }
        }

        for level in Difficulty::ALL {
            let matching: Vec<_> =
                self.difficulties.iter().filter(|d| d.level == level).collect();
            if matching.len() != 1 {
                return Err(DatasetError::Schema(format!(
                    "difficulty {level} must have exactly one definition, found {}",
                    matching.len()
                )));
            }
            if matching[0].definition_text.trim().is_empty() {
                return Err(DatasetError::Schema(format!("difficulty {level} definition is empty")));
            }
        }
        Ok(())
    }
}

/// Loads and validates the persona, golden-question, and difficulty catalogs
/// (each a JSON array file).
pub fn load_catalogs(
    personas_path: &Path,
    golden_path: &Path,
    difficulties_path: &Path,
) -> Result<Catalogs, DatasetError> {
    let read = |path: &Path| -> Result<String, DatasetError> {
        std::fs::read_to_string(path).map_err(|e| {
            DatasetError::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })
    };
    let catalogs = Catalogs {
        personas: serde_json::from_str(&read(personas_path)?)?,
        golden: serde_json::from_str(&read(golden_path)?)?,
        difficulties: serde_json::from_str(&read(difficulties_path)?)?,
    };
    catalogs.validate()?;
    Ok(catalogs)
}

/// Which pool few-shot examples were ultimately drawn from, weakest tier
/// reached. Recorded per generation context so fallback behaviour is
/// auditable afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FewShotTier {
    PersonaAndDifficulty,
    DifficultyOnly,
    AnyGolden,
    ZeroShot,
}

/// Samples up to `k` golden questions for a generation context, preferring
/// exact persona + difficulty matches, then same-difficulty questions from
/// other personas, then any golden question. Sampling within each tier is
/// seeded, so the same seed always yields the same examples.
pub fn sample_few_shot(
    golden: &[GoldenQuestion],
    persona_id: &str,
    difficulty: Difficulty,
    k: usize,
    seed: u64,
) -> (Vec<GoldenQuestion>, FewShotTier) {
    if k == 0 || golden.is_empty() {
        return (Vec::new(), FewShotTier::ZeroShot);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let tier_pools: [(FewShotTier, Vec<usize>); 3] = [
        (
            FewShotTier::PersonaAndDifficulty,
            golden
                .iter()
                .enumerate()
                .filter(|(_, g)| g.persona_id == persona_id && g.difficulty == difficulty)
                .map(|(i, _)| i)
                .collect(),
        ),
        (
            FewShotTier::DifficultyOnly,
            golden
                .iter()
                .enumerate()
                .filter(|(_, g)| g.persona_id != persona_id && g.difficulty == difficulty)
                .map(|(i, _)| i)
                .collect(),
        ),
        (
            FewShotTier::AnyGolden,
            golden
                .iter()
                .enumerate()
                .filter(|(_, g)| g.difficulty != difficulty)
                .map(|(i, _)| i)
                .collect(),
        ),
    ];

    let mut picked = Vec::new();
    let mut tier_used = FewShotTier::ZeroShot;
    for (tier, mut pool) in tier_pools {
        if picked.len() >= k {
            break;
        }
        pool.shuffle(&mut rng);
        for index in pool {
            if picked.len() >= k {
                break;
            }
            picked.push(golden[index].clone());
            tier_used = tier;
        }
    }
    if picked.is_empty() {
        tier_used = FewShotTier::ZeroShot;
    }
    (picked, tier_used)
}

/// Parameters for one full generation sweep over the persona grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationSpec {
    pub n_per_context: u32,
    pub few_shot_k: usize,
    pub seed: u64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Domain phrase substituted into prompts (e.g. "credit union banking").
    pub domain: String,
    /// Plain-text description of the schema's join topology.
    pub table_joins_text: String,
    #[serde(default = "all_difficulties")]
    pub difficulties: Vec<Difficulty>,
}

fn default_temperature() -> f64 {
    1.0
}

fn all_difficulties() -> Vec<Difficulty> {
    Difficulty::ALL.to_vec()
}

const GENERATION_TEMPLATE: &str = r#"You are a {row['persona']} as {domain} expert.
###
Your goal is to improve the following KPI:
{row['kpi']}.

### Task
Provide actionable {row['difficulty']} difficulty questions
to achieve this goal.

#### {row['difficulty']} difficulty questions must :
{difficulty_meaning}

### Table join
{TABLE_JOINS}

Here are some example questions:
{examples_text}.

### Output Rules (MANDATORY)
- Output JSON only
- Do NOT include explanations, markdown, or extra text
- Each question must be concise, specific, and clearly
tied to the bank domain and the KPI

### Output Schema
{
  "questions": [
    "string",
    "string",
    ...
  ]
}

Generate {n_questions} questions directly in JSON format:"#;

/// System message for roles whose full instruction lives in the user turn.
pub const PLAIN_SYSTEM_PROMPT: &str = "You are a helpful assistant.";

/// Renders the question-generation prompt for one persona/KPI/difficulty
/// context. With no examples, the examples slot reads "(none)".
pub fn render_generation_prompt(
    persona_display: &str,
    domain: &str,
    kpi: &str,
    difficulty: Difficulty,
    definition_text: &str,
    table_joins_text: &str,
    examples: &[String],
    n_questions: u32,
) -> Result<String, DatasetError> {
    if persona_display.trim().is_empty() {
        return Err(DatasetError::MissingPlaceholder("persona"));
    }
    if domain.trim().is_empty() {
        return Err(DatasetError::MissingPlaceholder("domain"));
    }
    if kpi.trim().is_empty() {
        return Err(DatasetError::MissingPlaceholder("kpi"));
    }
    if definition_text.trim().is_empty() {
        return Err(DatasetError::MissingPlaceholder("difficulty_meaning"));
    }
    if table_joins_text.trim().is_empty() {
        return Err(DatasetError::MissingPlaceholder("table_joins"));
    }
    if n_questions == 0 {
        return Err(DatasetError::MissingPlaceholder("n_questions"));
    }
    let examples_text =
        if examples.is_empty() { "(none)".to_string() } else { examples.join("\n") };
    Ok(GENERATION_TEMPLATE
        .replace("{row['persona']}", persona_display)
        .replace("{row['kpi']}", kpi)
        .replace("{row['difficulty']}", difficulty.name())
        .replace("{difficulty_meaning}", definition_text)
        .replace("{TABLE_JOINS}", table_joins_text)
        .replace("{examples_text}", &examples_text)
        .replace("{n_questions}", &n_questions.to_string())
        .replace("{domain}", domain))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextStatus {
    Ok,
    /// Model returned fewer questions than requested.
    Partial,
    /// Both the call and its single retry failed; context contributed
    /// nothing.
    Failed,
}

/// Audit record for one persona × difficulty generation call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextOutcome {
    pub persona_id: String,
    pub difficulty: Difficulty,
    pub kpi: String,
    pub few_shot_tier: FewShotTier,
    pub examples_used: usize,
    pub requested: u32,
    pub received: usize,
    pub status: ContextStatus,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub questions: Vec<SyntheticQuestion>,
    pub outcomes: Vec<ContextOutcome>,
}

/// The KPI for a context: personas cycle through their KPI list by
/// difficulty position, so multi-KPI personas spread coverage instead of
/// repeating their first KPI at every level.
pub fn kpi_for_context(persona: &Persona, difficulty_index: usize) -> &str {
    &persona.kpis[difficulty_index % persona.kpis.len()]
}

/// Runs the full persona × difficulty generation grid through the gateway.
///
/// Every context issues one model call (retried once on a malformed
/// payload). Failures are recorded per context rather than aborting the
/// sweep, so one bad response cannot sink a long generation run.
pub fn generate_questions(
    spec: &GenerationSpec,
    catalogs: &Catalogs,
    gateway: &Gateway,
    provider: &str,
) -> Result<GenerationOutput, DatasetError> {
    if spec.difficulties.is_empty() {
        return Err(DatasetError::Schema("generation difficulties list is empty".into()));
    }
    let model = gateway.model_for(provider)?;
    let mut questions = Vec::new();
    let mut outcomes = Vec::new();

    for persona in &catalogs.personas {
        for (difficulty_index, &difficulty) in spec.difficulties.iter().enumerate() {
            let kpi = kpi_for_context(persona, difficulty_index).to_string();
            let definition = catalogs.definition(difficulty).ok_or_else(|| {
                DatasetError::Schema(format!("no definition for difficulty {difficulty}"))
            })?;
            let context_seed =
                derive_seed(spec.seed, &format!("{}/{}", persona.id, difficulty));
            let (examples, tier) = sample_few_shot(
                &catalogs.golden,
                &persona.id,
                difficulty,
                spec.few_shot_k,
                context_seed,
            );
            let example_texts: Vec<String> =
                examples.iter().map(|g| g.text.clone()).collect();

            let prompt = render_generation_prompt(
                &persona.display_name,
                &spec.domain,
                &kpi,
                difficulty,
                &definition.definition_text,
                &spec.table_joins_text,
                &example_texts,
                spec.n_per_context,
            )?;
            let request = ChatRequest {
                provider: provider.to_string(),
                model: model.clone(),
                system_prompt: PLAIN_SYSTEM_PROMPT.to_string(),
                user_prompt: prompt,
                temperature: spec.temperature,
                max_output_tokens: None,
            };

            let mut outcome = ContextOutcome {
                persona_id: persona.id.clone(),
                difficulty,
                kpi: kpi.clone(),
                few_shot_tier: tier,
                examples_used: example_texts.len(),
                requested: spec.n_per_context,
                received: 0,
                status: ContextStatus::Ok,
                note: None,
            };

            match call_for_questions(gateway, &request) {
                Ok(mut texts) => {
                    if texts.len() > spec.n_per_context as usize {
                        outcome.note = Some(format!(
                            "model returned {} questions, truncated to {}",
                            texts.len(),
                            spec.n_per_context
                        ));
                        texts.truncate(spec.n_per_context as usize);
                    } else if texts.len() < spec.n_per_context as usize {
                        outcome.status = ContextStatus::Partial;
                        outcome.note = Some(format!(
                            "model returned {} of {} requested questions",
                            texts.len(),
                            spec.n_per_context
                        ));
                    }
                    outcome.received = texts.len();
                    for (i, text) in texts.into_iter().enumerate() {
                        questions.push(SyntheticQuestion {
                            id: format!("q-{}-{}-{:02}", persona.id, difficulty, i + 1),
                            text,
                            persona_id: persona.id.clone(),
                            kpi: kpi.clone(),
                            difficulty,
                            provenance: Provenance::Synthetic,
                            generation_batch: format!("b-{}-{}", persona.id, difficulty),
                        });
                    }
                }
                Err(DatasetError::Gateway(err)) => {
                    log::error!(
                        "generation context {}/{} failed: {err}",
                        persona.id,
                        difficulty
                    );
                    outcome.status = ContextStatus::Failed;
                    outcome.note = Some(err.to_string());
                }
                Err(other) => return Err(other),
            }
            outcomes.push(outcome);
        }
    }

    Ok(GenerationOutput { questions, outcomes })
}

/// One generation call with a single retry on malformed output. A second
/// malformed payload surfaces as the final error.
fn call_for_questions(
    gateway: &Gateway,
    request: &ChatRequest,
) -> Result<Vec<String>, DatasetError> {
    let mut last_err = None;
    for _ in 0..2 {
        let response = gateway.complete(request).map_err(DatasetError::Gateway)?;
        match parse_question_payload(&response.text) {
            Ok(texts) => return Ok(texts),
            Err(e) => {
                log::warn!("malformed question payload, retrying once: {e}");
                last_err = Some(e);
            }
        }
    }
    Err(DatasetError::Gateway(last_err.expect("retry loop ran")))
}

fn parse_question_payload(text: &str) -> Result<Vec<String>, GatewayError> {
    let value = extract_json(text)?;
    let array = value
        .get("questions")
        .and_then(|q| q.as_array())
        .ok_or_else(|| {
            GatewayError::MalformedPayload("payload has no \"questions\" array".into())
        })?;
    array
        .iter()
        .map(|item| {
            item.as_str().map(str::to_string).ok_or_else(|| {
                GatewayError::MalformedPayload("\"questions\" contains a non-string entry".into())
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn persona(id: &str, kpis: &[&str]) -> Persona {
        Persona {
            id: id.into(),
            display_name: format!("Display {id}"),
            kpis: kpis.iter().map(|k| k.to_string()).collect(),
        }
    }

    fn golden(text: &str, persona_id: &str, difficulty: Difficulty) -> GoldenQuestion {
        GoldenQuestion {
            text: text.into(),
            persona_id: persona_id.into(),
            kpi: "KPI".into(),
            difficulty,
        }
    }

    fn definitions() -> Vec<DifficultyDefinition> {
        Difficulty::ALL
            .iter()
            .map(|&level| DifficultyDefinition {
                level,
                definition_text: format!("{level} definition"),
            })
            .collect()
    }

    #[test]
    fn difficulty_parses_and_orders() {
        assert_eq!("Simple".parse::<Difficulty>().unwrap(), Difficulty::Simple);
        assert_eq!(" hard ".parse::<Difficulty>().unwrap(), Difficulty::Hard);
        assert!("extreme".parse::<Difficulty>().is_err());
        assert!(Difficulty::Simple.rank() < Difficulty::Medium.rank());
        assert!(Difficulty::Medium.rank() < Difficulty::Hard.rank());
        assert_eq!(Difficulty::Medium.to_string(), "medium");
    }

    #[test]
    fn kpi_round_robin_cycles_by_difficulty_position() {
        let p = persona("p", &["a", "b"]);
        assert_eq!(kpi_for_context(&p, 0), "a");
        assert_eq!(kpi_for_context(&p, 1), "b");
        assert_eq!(kpi_for_context(&p, 2), "a");
        let single = persona("s", &["only"]);
        assert_eq!(kpi_for_context(&single, 2), "only");
    }

    #[test]
    fn catalog_validation_catches_problems() {
        let ok = Catalogs {
            personas: vec![persona("a", &["k1"])],
            golden: vec![golden("Q?", "a", Difficulty::Simple)],
            difficulties: definitions(),
        };
        assert!(ok.validate().is_ok());

        let dup = Catalogs {
            personas: vec![persona("a", &["k"]), persona("a", &["k"])],
            golden: vec![],
            difficulties: definitions(),
        };
        assert!(matches!(dup.validate(), Err(DatasetError::Schema(_))));

        let no_kpi = Catalogs {
            personas: vec![Persona { id: "a".into(), display_name: "A".into(), kpis: vec![] }],
            golden: vec![],
            difficulties: definitions(),
        };
        assert!(matches!(no_kpi.validate(), Err(DatasetError::Schema(_))));

        let dangling = Catalogs {
            personas: vec![persona("a", &["k"])],
            golden: vec![golden("Q?", "ghost", Difficulty::Simple)],
            difficulties: definitions(),
        };
        assert!(matches!(dangling.validate(), Err(DatasetError::DanglingReference(_))));

        let missing_level = Catalogs {
            personas: vec![persona("a", &["k"])],
            golden: vec![],
            difficulties: definitions().into_iter().take(2).collect(),
        };
        assert!(matches!(missing_level.validate(), Err(DatasetError::Schema(_))));
    }

    #[test]
    fn few_shot_prefers_exact_matches_then_falls_back() {
        let golden_set = vec![
            golden("exact one", "p1", Difficulty::Simple),
            golden("exact two", "p1", Difficulty::Simple),
            golden("other persona", "p2", Difficulty::Simple),
            golden("other difficulty", "p1", Difficulty::Hard),
        ];
        let (picked, tier) = sample_few_shot(&golden_set, "p1", Difficulty::Simple, 5, 7);
        // Both exact matches come first, then the same-difficulty question,
        // then anything else.
        assert_eq!(picked.len(), 4);
        let first_two: HashSet<&str> =
            picked[..2].iter().map(|g| g.text.as_str()).collect();
        assert!(first_two.contains("exact one") && first_two.contains("exact two"));
        assert_eq!(picked[2].text, "other persona");
        assert_eq!(picked[3].text, "other difficulty");
        assert_eq!(tier, FewShotTier::AnyGolden);

        let (only_exact, tier) = sample_few_shot(&golden_set, "p1", Difficulty::Simple, 2, 7);
        assert_eq!(only_exact.len(), 2);
        assert_eq!(tier, FewShotTier::PersonaAndDifficulty);

        let (zero, tier) = sample_few_shot(&golden_set, "p1", Difficulty::Simple, 0, 7);
        assert!(zero.is_empty());
        assert_eq!(tier, FewShotTier::ZeroShot);
    }

    #[test]
    fn few_shot_is_seed_deterministic() {
        let golden_set: Vec<_> = (0..10)
            .map(|i| golden(&format!("g{i}"), "px", Difficulty::Medium))
            .collect();
        let (a, _) = sample_few_shot(&golden_set, "other", Difficulty::Medium, 3, 99);
        let (b, _) = sample_few_shot(&golden_set, "other", Difficulty::Medium, 3, 99);
        let (c, _) = sample_few_shot(&golden_set, "other", Difficulty::Medium, 3, 100);
        let texts = |v: &[GoldenQuestion]| v.iter().map(|g| g.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(&a), texts(&b));
        assert_ne!(texts(&a), texts(&c), "different seeds should reshuffle");
    }

    #[test]
    fn generation_prompt_substitutes_every_placeholder() {
        let prompt = render_generation_prompt(
            "Fraud Analyst; Risk Mgr",
            "credit union banking",
            "High-Balance Exposure",
            Difficulty::Medium,
            "Queries requiring filtering and grouping.",
            "Root table: ACCOUNT",
            &["Example question one?".to_string()],
            4,
        )
        .unwrap();
        assert!(prompt.starts_with("You are a Fraud Analyst; Risk Mgr as credit union banking expert.\n"));
        assert!(prompt.contains("Your goal is to improve the following KPI:\nHigh-Balance Exposure.\n"));
        assert!(prompt.contains("Provide actionable medium difficulty questions"));
        assert!(prompt.contains("#### medium difficulty questions must :\nQueries requiring filtering and grouping."));
        assert!(prompt.contains("### Table join\nRoot table: ACCOUNT\n"));
        assert!(prompt.contains("Here are some example questions:\nExample question one?.\n"));
        assert!(prompt.ends_with("Generate 4 questions directly in JSON format:"));
        // The JSON schema block stays literal.
        assert!(prompt.contains("{\n  \"questions\": [\n    \"string\",\n    \"string\",\n    ...\n  ]\n}"));
        assert!(!prompt.contains("{row["));
        assert!(!prompt.contains("{domain}"));
    }

    #[test]
    fn generation_prompt_rejects_empty_inputs() {
        let err = render_generation_prompt(
            "",
            "domain",
            "kpi",
            Difficulty::Simple,
            "def",
            "joins",
            &[],
            1,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::MissingPlaceholder("persona")));
    }

    #[test]
    fn question_payload_parsing() {
        let good = r#"{"questions": ["a?", "b?"]}"#;
        assert_eq!(parse_question_payload(good).unwrap(), vec!["a?", "b?"]);
        let fenced = "```json\n{\"questions\": [\"a?\"]}\n```";
        assert_eq!(parse_question_payload(fenced).unwrap(), vec!["a?"]);
        assert!(parse_question_payload(r#"{"other": []}"#).is_err());
        assert!(parse_question_payload(r#"{"questions": [1]}"#).is_err());
        assert!(parse_question_payload("not json").is_err());
    }
}
