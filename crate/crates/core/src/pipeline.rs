//! End-to-end orchestration: eight stages that each read the previous
//! stage's artifacts from the run directory and write their own, with a
//! manifest tracking progress so interrupted runs resume at the first
//! incomplete stage.
//!
//! Stage order: generate -> gate -> map -> collect -> judge -> stats ->
//! token_ratio -> report. Each stage gets its own cassette subdirectory, so
//! recorded traffic is organized by what produced it.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    build_histograms, chi_square_report, summarize, token_ratio_series, write_chi_square_csv,
    write_histograms_csv, write_summary_csv, write_token_ratio_csv, TokenPair,
};
use crate::collect::{collect, AnswerRecord, AnswerStatus, LengthFlag, SkipNote};
use crate::config::{ConfigError, RunConfig};
use crate::dataset::{
    generate_questions, load_catalogs, Catalogs, Difficulty, GenerationSpec, SyntheticQuestion,
};
use crate::gate::{run_gate, GateVerdict, LlmReview};
use crate::gateway::{Gateway, Mode};
use crate::judge::{evaluate, EvaluationRecord, RubricSet};
use crate::manifest::{RunManifest, StageStatus, MANIFEST_FILE};
use crate::mapper::{map_questions, MappingRecord};
use crate::util::{derive_seed, read_jsonl, sha256_hex, write_jsonl};

pub const STAGES: [&str; 8] =
    ["generate", "gate", "map", "collect", "judge", "stats", "token_ratio", "report"];

pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const GENERATION_REPORT_FILE: &str = "generation_report.jsonl";
pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const GATE_REPORT_FILE: &str = "gate_report.jsonl";
pub const MAPPINGS_FILE: &str = "mappings.jsonl";
pub const ANSWERS_FILE: &str = "answers.jsonl";
pub const COLLECT_REPORT_FILE: &str = "collect_report.jsonl";
pub const EVALUATIONS_FILE: &str = "evaluations.jsonl";
pub const SUMMARY_CSV: &str = "reports/summary.csv";
pub const CHI_SQUARE_CSV: &str = "reports/chi_square.csv";
pub const HISTOGRAMS_CSV: &str = "reports/histograms.csv";
pub const TOKEN_RATIO_CSV: &str = "reports/token_ratio.csv";
pub const REPORT_MD: &str = "reports/report.md";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed ({kind}): {message}")]
    Stage { stage: &'static str, kind: String, message: String },
    #[error("manifest: {0}")]
    Manifest(#[from] crate::manifest::ManifestError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown stage: {0}")]
    UnknownStage(String),
    #[error(
        "run {0} was started with a different configuration or mode; \
         pick a new run id or restore the original settings"
    )]
    ConfigChanged(String),
}

impl PipelineError {
    /// Machine-readable form for stderr: `{"error": {stage, kind, message}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let (stage, kind) = match self {
            PipelineError::Config(_) => ("", "config"),
            PipelineError::Stage { stage, kind, .. } => (*stage, kind.as_str()),
            PipelineError::Manifest(_) => ("", "manifest"),
            PipelineError::Io(_) => ("", "io"),
            PipelineError::UnknownStage(_) => ("", "unknown_stage"),
            PipelineError::ConfigChanged(_) => ("", "config_changed"),
        };
        serde_json::json!({
            "error": { "stage": stage, "kind": kind, "message": self.to_string() }
        })
    }

    /// Config problems exit with a distinct code so wrappers can tell a bad
    /// invocation from a failed run. Reusing a run id with different
    /// settings counts: the invocation, not the pipeline, is at fault.
    pub fn is_config_error(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::ConfigChanged(_))
    }
}

/// A stage-scoped error before the stage name is attached.
struct StageError {
    kind: String,
    message: String,
}

impl StageError {
    fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        StageError { kind: kind.into(), message: message.into() }
    }
}

macro_rules! stage_error_from {
    ($type:ty) => {
        impl From<$type> for StageError {
            fn from(err: $type) -> Self {
                StageError { kind: err.kind().to_string(), message: err.to_string() }
            }
        }
    };
}

stage_error_from!(crate::dataset::DatasetError);
stage_error_from!(crate::gate::GateError);
stage_error_from!(crate::mapper::MapperError);
stage_error_from!(crate::collect::CollectError);
stage_error_from!(crate::judge::JudgeError);
stage_error_from!(crate::analytics::AnalyticsError);

impl From<std::io::Error> for StageError {
    fn from(err: std::io::Error) -> Self {
        StageError { kind: "io".into(), message: err.to_string() }
    }
}

/// Side records from collection, tagged so both kinds share one JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CollectNote {
    Skip(SkipNote),
    LengthFlag(LengthFlag),
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Explicit run id; defaults to a digest of the configuration and mode,
    /// so identical setups share a directory.
    pub run_id: Option<String>,
    pub mode: Mode,
    /// Overrides `judge.tau` for this run.
    pub tau: Option<f64>,
    /// Overrides `stats.alpha` for this run.
    pub alpha: Option<f64>,
}

pub struct Pipeline {
    config: RunConfig,
    mode: Mode,
    run_dir: PathBuf,
    manifest: RunManifest,
}

impl Pipeline {
    /// Opens (or creates) the run directory and its manifest. Flag
    /// overrides are folded into the config *before* it is snapshotted, so
    /// the manifest always records the values the run actually used, and a
    /// resume with different overrides is caught as a config change.
    pub fn open(mut config: RunConfig, options: &PipelineOptions) -> Result<Pipeline, PipelineError> {
        if let Some(tau) = options.tau {
            config.judge.tau = tau;
        }
        if let Some(alpha) = options.alpha {
            config.stats.alpha = alpha;
        }
        config.validate()?;

        let snapshot = serde_json::to_value(&config)
            .map_err(|e| ConfigError::Invalid(format!("config cannot be serialized: {e}")))?;
        let run_id = match &options.run_id {
            Some(id) => id.clone(),
            None => default_run_id(&snapshot, options.mode),
        };
        let run_dir = config.paths.runs_dir.join(&run_id);
        std::fs::create_dir_all(&run_dir)?;

        let manifest_path = run_dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let existing = RunManifest::load(&manifest_path)?;
            if existing.config != snapshot || existing.mode != options.mode {
                return Err(PipelineError::ConfigChanged(run_id));
            }
            existing
        } else {
            let stage_seeds = BTreeMap::from([(
                "generate".to_string(),
                derive_seed(config.master_seed, "generate"),
            )]);
            let manifest = RunManifest::new(
                &run_id,
                options.mode,
                config.master_seed,
                stage_seeds,
                snapshot,
                &STAGES,
            );
            manifest.save(&manifest_path)?;
            manifest
        };

        Ok(Pipeline { config, mode: options.mode, run_dir, manifest })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Runs one stage, updating its manifest status and the artifact
    /// inventory whether it succeeds or fails.
    pub fn run_stage(&mut self, stage: &str) -> Result<(), PipelineError> {
        let stage: &'static str = STAGES
            .iter()
            .find(|s| **s == stage)
            .copied()
            .ok_or_else(|| PipelineError::UnknownStage(stage.to_string()))?;
        log::info!("running stage {stage}");

        let result = match stage {
            "generate" => self.stage_generate(),
            "gate" => self.stage_gate(),
            "map" => self.stage_map(),
            "collect" => self.stage_collect(),
            "judge" => self.stage_judge(),
            "stats" => self.stage_stats(),
            "token_ratio" => self.stage_token_ratio(),
            "report" => self.stage_report(),
            _ => unreachable!("stage list is exhaustive"),
        };

        let status = if result.is_ok() { StageStatus::Complete } else { StageStatus::Failed };
        self.manifest.set_status(stage, status)?;
        self.manifest.refresh_inventory(&self.run_dir)?;
        self.manifest.save(&self.run_dir.join(MANIFEST_FILE))?;

        result.map_err(|e| PipelineError::Stage { stage, kind: e.kind, message: e.message })
    }

    /// Runs every stage in order. With `resume`, stages already complete
    /// are skipped; without it, the whole pipeline re-executes.
    pub fn run_all(&mut self, resume: bool) -> Result<(), PipelineError> {
        for stage in STAGES {
            if resume && self.manifest.status(stage)? == StageStatus::Complete {
                log::info!("skipping completed stage {stage}");
                continue;
            }
            self.run_stage(stage)?;
        }
        Ok(())
    }

    fn gateway_for(&self, stage: &str) -> Gateway {
        Gateway::new(
            self.config.providers.clone(),
            self.mode,
            self.config.paths.cassette_dir.join(stage),
        )
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn read_artifact<T: serde::de::DeserializeOwned>(
        &self,
        name: &str,
        produced_by: &str,
    ) -> Result<Vec<T>, StageError> {
        let path = self.artifact(name);
        if !path.exists() {
            return Err(StageError::new(
                "missing_artifact",
                format!("{name} not found in the run directory; run `{produced_by}` first"),
            ));
        }
        read_jsonl(&path).map_err(StageError::from)
    }

    fn catalogs(&self) -> Result<Catalogs, StageError> {
        Ok(load_catalogs(
            &self.config.paths.personas,
            &self.config.paths.golden_questions,
            &self.config.paths.difficulties,
        )?)
    }

    fn persona_names(&self, catalogs: &Catalogs) -> BTreeMap<String, String> {
        catalogs
            .personas
            .iter()
            .map(|p| (p.id.clone(), p.display_name.clone()))
            .collect()
    }

    fn stage_generate(&self) -> Result<(), StageError> {
        let catalogs = self.catalogs()?;
        let spec = GenerationSpec {
            n_per_context: self.config.generation.n_per_context,
            few_shot_k: self.config.generation.few_shot_k,
            seed: self.manifest.stage_seeds["generate"],
            temperature: self.config.generation.temperature,
            domain: self.config.domain.clone(),
            table_joins_text: self.config.table_joins_text.clone(),
            difficulties: Difficulty::ALL.to_vec(),
        };
        let gateway = self.gateway_for("generate");
        let output =
            generate_questions(&spec, &catalogs, &gateway, &self.config.generation.provider)?;
        write_jsonl(&self.artifact(CANDIDATES_FILE), &output.questions)?;
        write_jsonl(&self.artifact(GENERATION_REPORT_FILE), &output.outcomes)?;
        Ok(())
    }

    fn stage_gate(&self) -> Result<(), StageError> {
        let candidates: Vec<SyntheticQuestion> =
            self.read_artifact(CANDIDATES_FILE, "generate")?;
        let stopwords = load_stopwords(&self.config.paths.stopwords)?;

        let review_gateway;
        let review = if self.config.gate.llm_review_enabled {
            let provider = self
                .config
                .gate
                .review_provider
                .clone()
                .expect("validated: review provider present when review enabled");
            review_gateway = self.gateway_for("gate");
            let catalogs = self.catalogs()?;
            Some(LlmReview {
                gateway: &review_gateway,
                provider,
                domain: self.config.domain.clone(),
                persona_names: self.persona_names(&catalogs),
            })
        } else {
            None
        };

        let outcome = run_gate(&candidates, &self.config.gate, &stopwords, review.as_ref())?;
        write_jsonl(&self.artifact(QUESTIONS_FILE), &outcome.accepted)?;
        write_jsonl(&self.artifact(GATE_REPORT_FILE), &outcome.verdicts)?;
        Ok(())
    }

    fn stage_map(&self) -> Result<(), StageError> {
        let questions: Vec<SyntheticQuestion> = self.read_artifact(QUESTIONS_FILE, "gate")?;
        let catalogs = self.catalogs()?;
        let gateway = self.gateway_for("map");
        let records = map_questions(
            &questions,
            &self.persona_names(&catalogs),
            &BTreeMap::new(),
            &self.config.domain,
            &gateway,
            &self.config.mapper.provider,
        )?;
        write_jsonl(&self.artifact(MAPPINGS_FILE), &records)?;
        Ok(())
    }

    fn stage_collect(&self) -> Result<(), StageError> {
        let questions: Vec<SyntheticQuestion> = self.read_artifact(QUESTIONS_FILE, "gate")?;
        let mappings: Vec<MappingRecord> = self.read_artifact(MAPPINGS_FILE, "map")?;
        let gateway = self.gateway_for("collect");
        let outcome = collect(
            &questions,
            &mappings,
            &self.config.collect.systems,
            &self.config.domain,
            self.config.collect.batch_size,
            &gateway,
        )?;
        write_jsonl(&self.artifact(ANSWERS_FILE), &outcome.answers)?;
        let notes: Vec<CollectNote> = outcome
            .skips
            .into_iter()
            .map(CollectNote::Skip)
            .chain(outcome.flagged.into_iter().map(CollectNote::LengthFlag))
            .collect();
        write_jsonl(&self.artifact(COLLECT_REPORT_FILE), &notes)?;
        Ok(())
    }

    fn stage_judge(&self) -> Result<(), StageError> {
        let questions: Vec<SyntheticQuestion> = self.read_artifact(QUESTIONS_FILE, "gate")?;
        let answers: Vec<AnswerRecord> = self.read_artifact(ANSWERS_FILE, "collect")?;
        let rubrics = RubricSet::load_dir(&self.config.paths.rubrics_dir)?;
        let gateway = self.gateway_for("judge");
        let records = evaluate(&gateway, &self.config.judge, &rubrics, &answers, &questions)?;
        write_jsonl(&self.artifact(EVALUATIONS_FILE), &records)?;
        Ok(())
    }

    fn stage_stats(&self) -> Result<(), StageError> {
        let evaluations: Vec<EvaluationRecord> = self.read_artifact(EVALUATIONS_FILE, "judge")?;
        let stats = &self.config.stats;
        let tau = self.config.judge.tau;

        let summary = summarize(&evaluations, tau, stats.margin_method);
        write_summary_csv(&summary, &self.artifact(SUMMARY_CSV))?;

        let chi_rows = chi_square_report(
            &evaluations,
            &stats.subject_system,
            &stats.primary_metric,
            tau,
            stats.alpha,
        )?;
        write_chi_square_csv(&chi_rows, &self.artifact(CHI_SQUARE_CSV))?;

        let histograms = build_histograms(&evaluations)?;
        write_histograms_csv(&histograms, &self.artifact(HISTOGRAMS_CSV))?;
        Ok(())
    }

    fn stage_token_ratio(&self) -> Result<(), StageError> {
        let path = &self.config.paths.token_pairs;
        if !path.exists() {
            return Err(StageError::new(
                "missing_artifact",
                format!("token pair fixture {} not found", path.display()),
            ));
        }
        let pairs: Vec<TokenPair> = read_jsonl(path)?;
        let points = token_ratio_series(&pairs)?;
        write_token_ratio_csv(&points, &self.artifact(TOKEN_RATIO_CSV))?;
        Ok(())
    }

    fn stage_report(&self) -> Result<(), StageError> {
        let candidates: Vec<SyntheticQuestion> =
            self.read_artifact(CANDIDATES_FILE, "generate")?;
        let verdicts: Vec<GateVerdict> = self.read_artifact(GATE_REPORT_FILE, "gate")?;
        let mappings: Vec<MappingRecord> = self.read_artifact(MAPPINGS_FILE, "map")?;
        let answers: Vec<AnswerRecord> = self.read_artifact(ANSWERS_FILE, "collect")?;
        let notes: Vec<CollectNote> = self.read_artifact(COLLECT_REPORT_FILE, "collect")?;
        let evaluations: Vec<EvaluationRecord> = self.read_artifact(EVALUATIONS_FILE, "judge")?;

        for (csv, producer) in [
            (SUMMARY_CSV, "stats"),
            (CHI_SQUARE_CSV, "stats"),
            (HISTOGRAMS_CSV, "stats"),
            (TOKEN_RATIO_CSV, "token-ratio"),
        ] {
            if !self.artifact(csv).exists() {
                return Err(StageError::new(
                    "missing_artifact",
                    format!("{csv} not found in the run directory; run `{producer}` first"),
                ));
            }
        }

        let markdown = render_report(
            &self.manifest.run_id,
            &self.config,
            &candidates,
            &verdicts,
            &mappings,
            &answers,
            &notes,
            &evaluations,
            &std::fs::read_to_string(self.artifact(SUMMARY_CSV))?,
            &std::fs::read_to_string(self.artifact(CHI_SQUARE_CSV))?,
            &std::fs::read_to_string(self.artifact(TOKEN_RATIO_CSV))?,
        );
        std::fs::write(self.artifact(REPORT_MD), markdown)?;
        Ok(())
    }
}

/// Deterministic default run id: a digest of the resolved config and mode,
/// so re-running an identical setup lands in the same directory.
fn default_run_id(config_snapshot: &serde_json::Value, mode: Mode) -> String {
    let canonical = serde_json::to_string(config_snapshot).expect("snapshot serializes");
    let mode_name = serde_json::to_string(&mode).expect("mode serializes");
    let digest = sha256_hex(format!("{canonical}\n{mode_name}").as_bytes());
    format!("run-{}", &digest[..12])
}

/// One lowercase stopword per line; blank lines and `#` comments ignored.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>, std::io::Error> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|line| !line.is_empty() && !line.starts_with('#'))
        .map(|line| line.to_lowercase())
        .collect())
}

/// Turns a CSV artifact into a markdown table. Report rendering works from
/// the emitted CSVs rather than recomputing, so the markdown always matches
/// the files it sits next to.
fn csv_to_markdown_table(csv_text: &str) -> String {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(csv_text.as_bytes());
    let mut lines = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(_) => continue,
        };
        let cells: Vec<&str> = record.iter().collect();
        lines.push(format!("| {} |", cells.join(" | ")));
        if index == 0 {
            lines.push(format!("|{}|", vec!["---"; cells.len()].join("|")));
        }
    }
    lines.join("\n")
}

#[allow(clippy::too_many_arguments)]
fn render_report(
    run_id: &str,
    config: &RunConfig,
    candidates: &[SyntheticQuestion],
    verdicts: &[GateVerdict],
    mappings: &[MappingRecord],
    answers: &[AnswerRecord],
    notes: &[CollectNote],
    evaluations: &[EvaluationRecord],
    summary_csv: &str,
    chi_square_csv: &str,
    token_ratio_csv: &str,
) -> String {
    let rejected = verdicts.iter().filter(|v| !v.accepted).count();
    let accepted = verdicts.len() - rejected;
    let unmapped = mappings.iter().filter(|m| m.unmapped).count();
    let ok = answers.iter().filter(|a| a.status == AnswerStatus::Ok).count();
    let empty = answers.iter().filter(|a| a.status == AnswerStatus::Empty).count();
    let failed = answers.iter().filter(|a| a.status == AnswerStatus::Failed).count();
    let skipped = notes.iter().filter(|n| matches!(n, CollectNote::Skip(_))).count();
    let flagged = notes.iter().filter(|n| matches!(n, CollectNote::LengthFlag(_))).count();
    let judge_failed = evaluations.iter().filter(|e| e.judge_failed).count();

    let ratio_lines: Vec<&str> = token_ratio_csv.lines().skip(1).collect();
    let ratio_summary = if ratio_lines.is_empty() {
        "No token pairs were measured.".to_string()
    } else {
        let ratio_of = |line: &str| line.rsplit(',').next().unwrap_or("?").to_string();
        format!(
            "{} question/SQL pairs; ratios span {} to {} (sorted curve in `{}`).",
            ratio_lines.len(),
            ratio_of(ratio_lines[0]),
            ratio_of(ratio_lines[ratio_lines.len() - 1]),
            TOKEN_RATIO_CSV,
        )
    };

    format!(
        "# Benchmark report: {run_id}\n\
         \n\
         Domain: {domain}. Success threshold tau = {tau}; significance level alpha = {alpha}.\n\
         \n\
         ## Pipeline counts\n\
         \n\
         - Candidate questions generated: {candidates_n}\n\
         - Accepted by the quality gate: {accepted} (rejected {rejected})\n\
         - Open-domain mappings: {mapped} mapped, {unmapped} unmapped\n\
         - Answers collected: {ok} ok, {empty} empty, {failed} failed ({skipped} skipped)\n\
         - Answers outside the 3-5 sentence band: {flagged}\n\
         - Evaluated records: {evaluated} ({judge_failed} judge failures excluded from rates)\n\
         \n\
         ## Success rates\n\
         \n\
         Rates use the boundary-inclusive rule (score >= tau counts as success); margins are 95% half-widths.\n\
         \n\
         {summary_table}\n\
         \n\
         ## Pairwise chi-square ({metric})\n\
         \n\
         Yates-corrected 2x2 tests of {subject} against each other system per difficulty.\n\
         \n\
         {chi_table}\n\
         \n\
         ## Token-length ratios\n\
         \n\
         {ratio_summary}\n",
        domain = config.domain,
        tau = config.judge.tau,
        alpha = config.stats.alpha,
        candidates_n = candidates.len(),
        mapped = mappings.len() - unmapped,
        evaluated = evaluations.len(),
        summary_table = csv_to_markdown_table(summary_csv),
        metric = config.stats.primary_metric,
        subject = config.stats.subject_system,
        chi_table = csv_to_markdown_table(chi_square_csv),
    )
}
