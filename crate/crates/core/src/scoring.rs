//! Minimal-pair scoring: the scorer contract, aggregation of per-token
//! log-probabilities, decisions and persisted score records.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ngram::NGramIndex;
use crate::par::Exec;
use crate::stimuli::{StimulusItem, VerbPair};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("cannot aggregate an empty score sequence")]
    EmptySequence,
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("no tokenization entry for {0:?}")]
    MissingTokenization(String),
    #[error("invalid candidate score: {0}")]
    InvalidScore(String),
    #[error("invalid scorer id: {0}")]
    InvalidScorerId(String),
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerFamily {
    NgramOracle,
    NeuralProvider,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScorerId {
    pub family: ScorerFamily,
    pub model_name: String,
    pub size_label: Option<String>,
    pub seed: Option<i64>,
    pub step: Option<u64>,
    pub order: Option<usize>,
}

impl ScorerId {
    pub fn oracle(name: &str, order: usize) -> Self {
        ScorerId {
            family: ScorerFamily::NgramOracle,
            model_name: name.to_string(),
            size_label: None,
            seed: None,
            step: None,
            order: Some(order),
        }
    }

    pub fn checkpoint(name: &str, size: &str, seed: i64, step: u64) -> Self {
        ScorerId {
            family: ScorerFamily::NeuralProvider,
            model_name: name.to_string(),
            size_label: Some(size.to_string()),
            seed: Some(seed),
            step: Some(step),
            order: None,
        }
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let checkpoint = self.size_label.is_some() && self.seed.is_some() && self.step.is_some();
        let none = self.size_label.is_none() && self.seed.is_none() && self.step.is_none();
        let ok = match self.family {
            ScorerFamily::NgramOracle => self.order.is_some() && none,
            ScorerFamily::NeuralProvider => self.order.is_none() && checkpoint,
        };
        if ok && !self.model_name.is_empty() {
            Ok(())
        } else {
            Err(ScoringError::InvalidScorerId(format!("{self:?}")))
        }
    }

    /// Filesystem-safe label, unique per scorer identity.
    pub fn label(&self) -> String {
        let raw = match self.family {
            ScorerFamily::NgramOracle => {
                format!("oracle-{}-order{}", self.model_name, self.order.unwrap_or(0))
            }
            ScorerFamily::NeuralProvider => format!(
                "{}-{}-seed{}-step{}",
                self.model_name,
                self.size_label.as_deref().unwrap_or("na"),
                self.seed.unwrap_or(0),
                self.step.unwrap_or(0)
            ),
        };
        raw.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
            .collect()
    }
}

impl fmt::Display for ScorerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub surface: String,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

impl CandidateScore {
    pub fn new(surface: &str, tokens: Vec<String>, logprobs: Vec<f64>) -> Result<Self, ScoringError> {
        let score = CandidateScore {
            surface: surface.to_string(),
            tokens,
            logprobs,
        };
        score.check()?;
        Ok(score)
    }

    fn check(&self) -> Result<(), ScoringError> {
        if self.tokens.is_empty() {
            return Err(ScoringError::InvalidScore(format!("{:?} has no tokens", self.surface)));
        }
        if self.tokens.len() != self.logprobs.len() {
            return Err(ScoringError::InvalidScore(format!(
                "{} tokens but {} log-probs",
                self.tokens.len(),
                self.logprobs.len()
            )));
        }
        if let Some(lp) = self.logprobs.iter().find(|lp| !(lp.is_finite() && **lp <= 0.0)) {
            return Err(ScoringError::InvalidScore(format!("log-prob {lp} is not finite and <= 0")));
        }
        Ok(())
    }

    pub fn total(&self, mode: Aggregation) -> f64 {
        aggregate(&self.logprobs, mode).expect("candidate scores are nonempty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbClass {
    Be,
    SingleToken,
    MultiToken,
}

impl VerbClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VerbClass::Be => "be",
            VerbClass::SingleToken => "single_token",
            VerbClass::MultiToken => "multi_token",
        }
    }
}

impl fmt::Display for VerbClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(format!("unknown aggregation {s:?} (expected sum or mean)")),
        }
    }
}

pub fn aggregate(scores: &[f64], mode: Aggregation) -> Result<f64, ScoringError> {
    if scores.is_empty() {
        return Err(ScoringError::EmptySequence);
    }
    let sum: f64 = scores.iter().sum();
    Ok(match mode {
        Aggregation::Sum => sum,
        Aggregation::Mean => sum / scores.len() as f64,
    })
}

/// Strictly higher score for the correct form; ties are incorrect.
pub fn decide(correct_score: f64, incorrect_score: f64) -> Result<bool, ScoringError> {
    for s in [correct_score, incorrect_score] {
        if !s.is_finite() {
            return Err(ScoringError::NonFinite(s));
        }
    }
    Ok(correct_score > incorrect_score)
}

pub fn classify_verb(pair: &VerbPair, tokenization: &HashMap<String, usize>) -> Result<VerbClass, ScoringError> {
    let count = |w: &str| {
        tokenization
            .get(w)
            .copied()
            .ok_or_else(|| ScoringError::MissingTokenization(w.to_string()))
    };
    let sg = count(&pair.singular_form)?;
    let pl = count(&pair.plural_form)?;
    Ok(if pair.is_be() {
        VerbClass::Be
    } else if sg > 1 || pl > 1 {
        VerbClass::MultiToken
    } else {
        VerbClass::SingleToken
    })
}

/// Verb forms with the single leading space every scorer receives.
pub fn candidate_surfaces(item: &StimulusItem) -> (String, String) {
    (format!(" {}", item.correct_form), format!(" {}", item.incorrect_form))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub item_id: String,
    pub scorer: ScorerId,
    pub correct: CandidateScore,
    pub incorrect: CandidateScore,
    pub verb_class: VerbClass,
    pub decision_sum: bool,
    pub decision_mean: bool,
}

impl ScoreRecord {
    pub fn new(
        item_id: &str,
        scorer: ScorerId,
        correct: CandidateScore,
        incorrect: CandidateScore,
        verb_class: VerbClass,
    ) -> Result<Self, ScoringError> {
        correct.check()?;
        incorrect.check()?;
        let decision_sum = decide(correct.total(Aggregation::Sum), incorrect.total(Aggregation::Sum))?;
        let decision_mean = decide(correct.total(Aggregation::Mean), incorrect.total(Aggregation::Mean))?;
        Ok(ScoreRecord {
            item_id: item_id.to_string(),
            scorer,
            correct,
            incorrect,
            verb_class,
            decision_sum,
            decision_mean,
        })
    }

    pub fn decision(&self, mode: Aggregation) -> bool {
        match mode {
            Aggregation::Sum => self.decision_sum,
            Aggregation::Mean => self.decision_mean,
        }
    }
}

/// Something that assigns per-token log-probabilities to continuations.
pub trait Scorer: Send + Sync {
    fn id(&self) -> &ScorerId;

    /// Whether `score` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }

    fn score(&self, context: &str, candidates: &[String]) -> Result<Vec<CandidateScore>, ScoringError>;
}

/// n-gram oracle of a fixed order over a shared index.
pub struct OracleScorer {
    id: ScorerId,
    index: Arc<NGramIndex>,
    order: usize,
}

impl OracleScorer {
    pub fn new(name: &str, index: Arc<NGramIndex>, order: usize) -> Result<Self, ScoringError> {
        if order < 1 || order > index.max_order() {
            return Err(ScoringError::InvalidScorerId(format!(
                "order {order} outside 1..={}",
                index.max_order()
            )));
        }
        Ok(OracleScorer {
            id: ScorerId::oracle(name, order),
            index,
            order,
        })
    }

    pub fn index(&self) -> &NGramIndex {
        &self.index
    }
}

impl Scorer for OracleScorer {
    fn id(&self) -> &ScorerId {
        &self.id
    }

    fn score(&self, context: &str, candidates: &[String]) -> Result<Vec<CandidateScore>, ScoringError> {
        candidates
            .iter()
            .map(|cand| {
                let scored = self
                    .index
                    .oracle_score_tokens(self.order, context, cand)
                    .map_err(|e| ScoringError::Scorer(e.to_string()))?;
                let (tokens, logprobs) = scored.into_iter().unzip();
                CandidateScore::new(cand, tokens, logprobs)
            })
            .collect()
    }
}

/// Always prefers the grammatical form; the terminal "grammar" heuristic.
pub struct GoldScorer {
    id: ScorerId,
    correct: HashMap<(String, String), bool>,
}

impl GoldScorer {
    pub const CORRECT_LOGPROB: f64 = -0.105_360_515_657_826_3; // ln 0.9
    pub const INCORRECT_LOGPROB: f64 = -std::f64::consts::LN_10;

    pub fn new(id: ScorerId, items: &[StimulusItem]) -> Self {
        let mut correct = HashMap::new();
        for item in items {
            let (c, i) = candidate_surfaces(item);
            correct.insert((item.prefix_text.clone(), c), true);
            correct.insert((item.prefix_text.clone(), i), false);
        }
        GoldScorer { id, correct }
    }
}

impl Scorer for GoldScorer {
    fn id(&self) -> &ScorerId {
        &self.id
    }

    fn score(&self, context: &str, candidates: &[String]) -> Result<Vec<CandidateScore>, ScoringError> {
        candidates
            .iter()
            .map(|cand| {
                let key = (context.to_string(), cand.clone());
                let is_correct = self
                    .correct
                    .get(&key)
                    .ok_or_else(|| ScoringError::Scorer(format!("no gold label for {context:?} + {cand:?}")))?;
                let lp = if *is_correct {
                    Self::CORRECT_LOGPROB
                } else {
                    Self::INCORRECT_LOGPROB
                };
                CandidateScore::new(cand, vec![cand.trim_start().to_string()], vec![lp])
            })
            .collect()
    }
}

/// Presents another scorer under a different identity, e.g. a pseudo
/// checkpoint whose behaviour is borrowed from a heuristic oracle.
pub struct RelabeledScorer {
    id: ScorerId,
    inner: Arc<dyn Scorer>,
}

impl RelabeledScorer {
    pub fn new(id: ScorerId, inner: Arc<dyn Scorer>) -> Self {
        RelabeledScorer { id, inner }
    }
}

impl Scorer for RelabeledScorer {
    fn id(&self) -> &ScorerId {
        &self.id
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }

    fn score(&self, context: &str, candidates: &[String]) -> Result<Vec<CandidateScore>, ScoringError> {
        self.inner.score(context, candidates)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemFailure {
    pub item_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreRun {
    pub records: Vec<ScoreRecord>,
    pub failures: Vec<ItemFailure>,
}

fn score_one(scorer: &dyn Scorer, item: &StimulusItem) -> Result<ScoreRecord, ScoringError> {
    let (c, i) = candidate_surfaces(item);
    let mut scores = scorer.score(&item.prefix_text, &[c, i])?;
    if scores.len() != 2 {
        return Err(ScoringError::Scorer(format!("expected 2 results, got {}", scores.len())));
    }
    let incorrect = scores.pop().expect("len checked");
    let correct = scores.pop().expect("len checked");
    let tokenization: HashMap<String, usize> = [
        (item.correct_form.clone(), correct.tokens.len()),
        (item.incorrect_form.clone(), incorrect.tokens.len()),
    ]
    .into_iter()
    .collect();
    // only the lemma matters for `be`; the form order is irrelevant here
    let pair = VerbPair {
        lemma: item.verb_lemma.clone(),
        singular_form: item.correct_form.clone(),
        plural_form: item.incorrect_form.clone(),
    };
    let class = classify_verb(&pair, &tokenization)?;
    ScoreRecord::new(&item.id, scorer.id().clone(), correct, incorrect, class)
}

/// Score every item; failures are collected instead of aborting the run.
pub fn score_items(scorer: &dyn Scorer, items: &[StimulusItem], exec: Exec) -> ScoreRun {
    let exec = if scorer.concurrent() { exec } else { Exec::Sequential };
    let results = exec.map(items, |item| score_one(scorer, item));
    let mut run = ScoreRun::default();
    for (item, result) in items.iter().zip(results) {
        match result {
            Ok(r) => run.records.push(r),
            Err(e) => run.failures.push(ItemFailure {
                item_id: item.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    run
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    item_id: String,
    scorer: ScorerId,
    verb_class: VerbClass,
    correct_tokens: Vec<String>,
    correct_logprobs: Vec<f64>,
    incorrect_tokens: Vec<String>,
    incorrect_logprobs: Vec<f64>,
    decision_sum: bool,
    decision_mean: bool,
}

/// JSON Lines, one record per line. Floats use the shortest representation
/// that parses back to the identical `f64`.
pub fn write_records<W: Write>(mut w: W, records: &[ScoreRecord]) -> std::io::Result<()> {
    for r in records {
        let line = RecordLine {
            item_id: r.item_id.clone(),
            scorer: r.scorer.clone(),
            verb_class: r.verb_class,
            correct_tokens: r.correct.tokens.clone(),
            correct_logprobs: r.correct.logprobs.clone(),
            incorrect_tokens: r.incorrect.tokens.clone(),
            incorrect_logprobs: r.incorrect.logprobs.clone(),
            decision_sum: r.decision_sum,
            decision_mean: r.decision_mean,
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Read records back; decisions are recomputed and must match the stored flags.
pub fn read_records<R: Read>(r: R) -> Result<Vec<ScoreRecord>, ScoringError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| ScoringError::Parse { line: idx + 1, message };
        let raw: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        raw.scorer.validate().map_err(|e| parse_err(e.to_string()))?;
        let cand = |tokens: Vec<String>, logprobs: Vec<f64>| {
            let surface = format!(" {}", tokens.concat());
            CandidateScore::new(&surface, tokens, logprobs)
        };
        let correct = cand(raw.correct_tokens, raw.correct_logprobs).map_err(|e| parse_err(e.to_string()))?;
        let incorrect = cand(raw.incorrect_tokens, raw.incorrect_logprobs).map_err(|e| parse_err(e.to_string()))?;
        let rec = ScoreRecord::new(&raw.item_id, raw.scorer, correct, incorrect, raw.verb_class)
            .map_err(|e| parse_err(e.to_string()))?;
        if rec.decision_sum != raw.decision_sum || rec.decision_mean != raw.decision_mean {
            return Err(parse_err("stored decisions disagree with log-probs".into()));
        }
        out.push(rec);
    }
    Ok(out)
}
