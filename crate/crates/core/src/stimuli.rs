//! Minimal-pair stimuli for subject-verb agreement.
//!
//! An item is a sentence prefix ending right before the verb, plus the
//! agreeing and non-agreeing verb forms. Two structures are supported:
//! simple (`The athlete | knows`) and noun-PP attractor
//! (`The athlete near the bikes | knows`).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StimulusError {
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("invalid derivation: {0}")]
    InvalidDerivation(String),
    #[error("missing prepositional-phrase span for item {0}")]
    MissingSpan(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate item id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: item {id} is invalid: {}", join_violations(.violations))]
    InvalidItem {
        line: usize,
        id: String,
        violations: Vec<Violation>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Number {
    #[serde(rename = "sg")]
    Singular,
    #[serde(rename = "pl")]
    Plural,
}

impl Number {
    pub fn letter(self) -> char {
        match self {
            Number::Singular => 'S',
            Number::Plural => 'P',
        }
    }

    pub fn other(self) -> Number {
        match self {
            Number::Singular => Number::Plural,
            Number::Plural => Number::Singular,
        }
    }

    pub const BOTH: [Number; 2] = [Number::Singular, Number::Plural];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounPair {
    pub singular: String,
    pub plural: String,
}

impl NounPair {
    pub fn new(singular: &str, plural: &str) -> Result<Self, StimulusError> {
        let pair = NounPair {
            singular: singular.trim().to_string(),
            plural: plural.trim().to_string(),
        };
        pair.check()?;
        Ok(pair)
    }

    fn check(&self) -> Result<(), StimulusError> {
        if self.singular.is_empty() || self.plural.is_empty() {
            return Err(StimulusError::InvalidTemplate("empty noun form".into()));
        }
        if self.singular == self.plural {
            return Err(StimulusError::InvalidTemplate(format!(
                "noun forms must differ (got {:?} twice)",
                self.singular
            )));
        }
        Ok(())
    }

    pub fn form(&self, number: Number) -> &str {
        match number {
            Number::Singular => &self.singular,
            Number::Plural => &self.plural,
        }
    }

    fn word_count(&self) -> usize {
        self.singular.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbPair {
    pub lemma: String,
    pub singular_form: String,
    pub plural_form: String,
}

impl VerbPair {
    pub fn new(lemma: &str, singular_form: &str, plural_form: &str) -> Result<Self, StimulusError> {
        let pair = VerbPair {
            lemma: lemma.trim().to_string(),
            singular_form: singular_form.trim().to_string(),
            plural_form: plural_form.trim().to_string(),
        };
        pair.check()?;
        Ok(pair)
    }

    pub fn be() -> Self {
        VerbPair {
            lemma: "be".into(),
            singular_form: "is".into(),
            plural_form: "are".into(),
        }
    }

    fn check(&self) -> Result<(), StimulusError> {
        let forms = [&self.lemma, &self.singular_form, &self.plural_form];
        if forms.iter().any(|f| f.is_empty()) {
            return Err(StimulusError::InvalidTemplate("empty verb field".into()));
        }
        if forms[1..].iter().any(|f| f.contains(char::is_whitespace)) {
            return Err(StimulusError::InvalidTemplate(format!(
                "verb forms of {:?} must be single words",
                self.lemma
            )));
        }
        if self.singular_form == self.plural_form {
            return Err(StimulusError::InvalidTemplate(format!(
                "verb forms of {:?} must differ",
                self.lemma
            )));
        }
        if self.lemma == "be" && (self.singular_form != "is" || self.plural_form != "are") {
            return Err(StimulusError::InvalidTemplate("lemma be must map to is/are".into()));
        }
        Ok(())
    }

    pub fn form(&self, number: Number) -> &str {
        match number {
            Number::Singular => &self.singular_form,
            Number::Plural => &self.plural_form,
        }
    }

    pub fn is_be(&self) -> bool {
        self.lemma == "be"
    }
}

/// Verb lemma lookup used for validation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    verbs: BTreeMap<String, VerbPair>,
}

const STANDARD_VERBS: [(&str, &str, &str); 16] = [
    ("be", "is", "are"),
    ("admire", "admires", "admire"),
    ("approve", "approves", "approve"),
    ("avoid", "avoids", "avoid"),
    ("confuse", "confuses", "confuse"),
    ("criticize", "criticizes", "criticize"),
    ("discourage", "discourages", "discourage"),
    ("encourage", "encourages", "encourage"),
    ("engage", "engages", "engage"),
    ("greet", "greets", "greet"),
    ("inspire", "inspires", "inspire"),
    ("know", "knows", "know"),
    ("observe", "observes", "observe"),
    ("remember", "remembers", "remember"),
    ("stimulate", "stimulates", "stimulate"),
    ("understand", "understands", "understand"),
];

impl Lexicon {
    pub fn empty() -> Self {
        Lexicon::default()
    }

    /// The sixteen verbs of the bundled frequency table.
    pub fn standard() -> Self {
        let mut lex = Lexicon::empty();
        for (lemma, sg, pl) in STANDARD_VERBS {
            lex.insert(VerbPair::new(lemma, sg, pl).expect("static verb table"));
        }
        lex
    }

    pub fn insert(&mut self, verb: VerbPair) {
        self.verbs.insert(verb.lemma.clone(), verb);
    }

    pub fn get(&self, lemma: &str) -> Option<&VerbPair> {
        self.verbs.get(lemma)
    }

    pub fn verbs(&self) -> impl Iterator<Item = &VerbPair> {
        self.verbs.values()
    }

    pub fn len(&self) -> usize {
        self.verbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verbs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Structure {
    #[serde(rename = "simple")]
    Simple,
    #[serde(rename = "nounpp")]
    NounPP,
}

/// Experimental cell: S, P, SS, SP, PS or PP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Condition {
    structure: Structure,
    subject_number: Number,
    attractor_number: Option<Number>,
}

impl Condition {
    pub fn simple(subject: Number) -> Self {
        Condition {
            structure: Structure::Simple,
            subject_number: subject,
            attractor_number: None,
        }
    }

    pub fn nounpp(subject: Number, attractor: Number) -> Self {
        Condition {
            structure: Structure::NounPP,
            subject_number: subject,
            attractor_number: Some(attractor),
        }
    }

    /// Checked constructor; the attractor is present iff the structure is NounPP.
    pub fn new(
        structure: Structure,
        subject_number: Number,
        attractor_number: Option<Number>,
    ) -> Option<Self> {
        match (structure, attractor_number) {
            (Structure::Simple, None) => Some(Condition::simple(subject_number)),
            (Structure::NounPP, Some(a)) => Some(Condition::nounpp(subject_number, a)),
            _ => None,
        }
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn subject_number(&self) -> Number {
        self.subject_number
    }

    pub fn attractor_number(&self) -> Option<Number> {
        self.attractor_number
    }

    /// `None` for simple items.
    pub fn attractor_match(&self) -> Option<bool> {
        self.attractor_number.map(|a| a == self.subject_number)
    }

    pub fn label(&self) -> String {
        let mut s = String::with_capacity(2);
        s.push(self.subject_number.letter());
        if let Some(a) = self.attractor_number {
            s.push(a.letter());
        }
        s
    }

    /// S, P, SS, SP, PS, PP in that order.
    pub fn all() -> [Condition; 6] {
        use Number::*;
        [
            Condition::simple(Singular),
            Condition::simple(Plural),
            Condition::nounpp(Singular, Singular),
            Condition::nounpp(Singular, Plural),
            Condition::nounpp(Plural, Singular),
            Condition::nounpp(Plural, Plural),
        ]
    }

    pub fn of_structure(structure: Structure) -> Vec<Condition> {
        Condition::all()
            .into_iter()
            .filter(|c| c.structure == structure)
            .collect()
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |c: char| match c {
            'S' | 's' => Ok(Number::Singular),
            'P' | 'p' => Ok(Number::Plural),
            _ => Err(format!("unknown condition label {s:?}")),
        };
        let chars: Vec<char> = s.trim().chars().collect();
        match chars.as_slice() {
            [a] => Ok(Condition::simple(num(*a)?)),
            [a, b] => Ok(Condition::nounpp(num(*a)?, num(*b)?)),
            _ => Err(format!("unknown condition label {s:?}")),
        }
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let label = String::deserialize(d)?;
        label.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "template")]
    Template,
    #[serde(rename = "bigbench")]
    BigBenchImport,
    #[serde(rename = "bock_cutting")]
    BockCuttingImport,
}

/// Template identifier carrying the subject length, `name#s<k>`.
///
/// The PP span of a noun-PP prefix `The <subject> <prep> the <attractor>`
/// is everything after the first `1 + k` words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateRef {
    pub name: String,
    pub subject_words: usize,
}

impl TemplateRef {
    pub fn parse(id: &str) -> Option<Self> {
        let (name, k) = id.rsplit_once("#s")?;
        let subject_words = k.parse().ok().filter(|&k| k > 0)?;
        Some(TemplateRef {
            name: name.to_string(),
            subject_words,
        })
    }
}

impl fmt::Display for TemplateRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#s{}", self.name, self.subject_words)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusItem {
    pub id: String,
    pub source: Source,
    pub prefix_text: String,
    pub correct_form: String,
    pub incorrect_form: String,
    pub verb_lemma: String,
    pub condition: Condition,
    pub template_id: Option<String>,
}

/// Stable content id over (prefix, forms, condition).
pub fn content_id(prefix: &str, correct: &str, incorrect: &str, condition: Condition) -> String {
    let key = format!("{prefix}\u{1f}{correct}\u{1f}{incorrect}\u{1f}{}", condition.label());
    crate::sha256_hex(key.as_bytes())[..16].to_string()
}

impl StimulusItem {
    fn build(
        source: Source,
        prefix_text: String,
        verb: &VerbPair,
        condition: Condition,
        template_id: Option<String>,
    ) -> Self {
        let correct = verb.form(condition.subject_number()).to_string();
        let incorrect = verb.form(condition.subject_number().other()).to_string();
        StimulusItem {
            id: content_id(&prefix_text, &correct, &incorrect, condition),
            source,
            prefix_text,
            correct_form: correct,
            incorrect_form: incorrect,
            verb_lemma: verb.lemma.clone(),
            condition,
            template_id,
        }
    }
}

fn check_word(field: &str, value: &str) -> Result<(), StimulusError> {
    if value.trim().is_empty() {
        Err(StimulusError::InvalidTemplate(format!("empty {field}")))
    } else {
        Ok(())
    }
}

/// Expand one noun-PP template into the four attractor conditions.
pub fn expand_nounpp(
    subject: &NounPair,
    preposition: &str,
    attractor: &NounPair,
    verb: &VerbPair,
    template_id: &str,
) -> Result<Vec<StimulusItem>, StimulusError> {
    subject.check()?;
    attractor.check()?;
    verb.check()?;
    check_word("preposition", preposition)?;
    check_word("template id", template_id)?;
    let tref = TemplateRef {
        name: template_id.to_string(),
        subject_words: subject.word_count(),
    };
    let mut out = Vec::with_capacity(4);
    for s in Number::BOTH {
        for a in Number::BOTH {
            let prefix = format!(
                "The {} {} the {}",
                subject.form(s),
                preposition.trim(),
                attractor.form(a)
            );
            out.push(StimulusItem::build(
                Source::Template,
                prefix,
                verb,
                Condition::nounpp(s, a),
                Some(tref.to_string()),
            ));
        }
    }
    Ok(out)
}

/// Expand a simple template (`The <subject> <verb>`) into S and P.
pub fn expand_simple(
    subject: &NounPair,
    verb: &VerbPair,
    template_id: &str,
) -> Result<Vec<StimulusItem>, StimulusError> {
    subject.check()?;
    verb.check()?;
    check_word("template id", template_id)?;
    let tref = TemplateRef {
        name: template_id.to_string(),
        subject_words: subject.word_count(),
    };
    Ok(Number::BOTH
        .into_iter()
        .map(|s| {
            StimulusItem::build(
                Source::Template,
                format!("The {}", subject.form(s)),
                verb,
                Condition::simple(s),
                Some(tref.to_string()),
            )
        })
        .collect())
}

/// Remove the prepositional phrase from a noun-PP item.
pub fn derive_simple(item: &StimulusItem) -> Result<StimulusItem, StimulusError> {
    if item.condition.structure() != Structure::NounPP {
        return Err(StimulusError::InvalidDerivation(format!(
            "item {} is already simple",
            item.id
        )));
    }
    let tref = item
        .template_id
        .as_deref()
        .and_then(TemplateRef::parse)
        .ok_or_else(|| StimulusError::MissingSpan(item.id.clone()))?;
    let words: Vec<&str> = item.prefix_text.split_whitespace().collect();
    let keep = 1 + tref.subject_words;
    // determiner + subject + at least a preposition and the attractor
    if words.len() < keep + 2 {
        return Err(StimulusError::MissingSpan(item.id.clone()));
    }
    let prefix = words[..keep].join(" ");
    let condition = Condition::simple(item.condition.subject_number());
    Ok(StimulusItem {
        id: content_id(&prefix, &item.correct_form, &item.incorrect_form, condition),
        source: item.source,
        prefix_text: prefix,
        correct_form: item.correct_form.clone(),
        incorrect_form: item.incorrect_form.clone(),
        verb_lemma: item.verb_lemma.clone(),
        condition,
        template_id: item.template_id.clone(),
    })
}

/// Add derived simple items for every noun-PP item, dropping duplicates by id.
pub fn with_simple_items(items: Vec<StimulusItem>) -> Result<Vec<StimulusItem>, StimulusError> {
    let mut seen: HashSet<String> = items.iter().map(|i| i.id.clone()).collect();
    let mut out = Vec::with_capacity(items.len() * 3 / 2);
    for item in items {
        let derived = if item.condition.structure() == Structure::NounPP
            && item.template_id.is_some()
        {
            Some(derive_simple(&item)?)
        } else {
            None
        };
        out.push(item);
        if let Some(d) = derived {
            if seen.insert(d.id.clone()) {
                out.push(d);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyPrefix,
    PrefixWhitespace,
    EmptyForm,
    IdenticalForms,
    MalformedCondition,
    LexiconMiss(String),
    Agreement { expected: String, found: String },
    WrongIncorrectForm { expected: String, found: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyPrefix => f.write_str("empty prefix"),
            Violation::PrefixWhitespace => f.write_str("prefix has leading or trailing whitespace"),
            Violation::EmptyForm => f.write_str("empty verb form"),
            Violation::IdenticalForms => f.write_str("correct and incorrect forms are identical"),
            Violation::MalformedCondition => {
                f.write_str("attractor number must be present exactly for nounpp")
            }
            Violation::LexiconMiss(l) => write!(f, "lemma {l:?} not in lexicon"),
            Violation::Agreement { expected, found } => {
                write!(f, "correct form {found:?} does not agree with subject (expected {expected:?})")
            }
            Violation::WrongIncorrectForm { expected, found } => {
                write!(f, "incorrect form {found:?} is not the other form {expected:?}")
            }
        }
    }
}

/// Collect every invariant an item violates.
pub fn validate_item(item: &StimulusItem, lexicon: &Lexicon) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if item.prefix_text.trim().is_empty() {
        v.push(Violation::EmptyPrefix);
    } else if item.prefix_text.trim() != item.prefix_text {
        v.push(Violation::PrefixWhitespace);
    }
    if item.correct_form.is_empty() || item.incorrect_form.is_empty() {
        v.push(Violation::EmptyForm);
    }
    if item.correct_form == item.incorrect_form {
        v.push(Violation::IdenticalForms);
    }
    let c = item.condition;
    if Condition::new(c.structure(), c.subject_number(), c.attractor_number()).is_none() {
        v.push(Violation::MalformedCondition);
    }
    match lexicon.get(&item.verb_lemma) {
        None => v.push(Violation::LexiconMiss(item.verb_lemma.clone())),
        Some(verb) => {
            let expected = verb.form(c.subject_number());
            if item.correct_form != expected {
                v.push(Violation::Agreement {
                    expected: expected.to_string(),
                    found: item.correct_form.clone(),
                });
            }
            let other = verb.form(c.subject_number().other());
            if item.incorrect_form != other {
                v.push(Violation::WrongIncorrectForm {
                    expected: other.to_string(),
                    found: item.incorrect_form.clone(),
                });
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// One line of the native JSONL format.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeLine {
    id: String,
    source: Source,
    prefix_text: String,
    correct_form: String,
    incorrect_form: String,
    verb_lemma: String,
    structure: Structure,
    subject_number: Number,
    attractor_number: Option<Number>,
    template_id: Option<String>,
}

impl From<&StimulusItem> for NativeLine {
    fn from(item: &StimulusItem) -> Self {
        NativeLine {
            id: item.id.clone(),
            source: item.source,
            prefix_text: item.prefix_text.clone(),
            correct_form: item.correct_form.clone(),
            incorrect_form: item.incorrect_form.clone(),
            verb_lemma: item.verb_lemma.clone(),
            structure: item.condition.structure(),
            subject_number: item.condition.subject_number(),
            attractor_number: item.condition.attractor_number(),
            template_id: item.template_id.clone(),
        }
    }
}

impl NativeLine {
    fn into_item(self) -> Result<StimulusItem, String> {
        let condition = Condition::new(self.structure, self.subject_number, self.attractor_number)
            .ok_or_else(|| "attractor_number must be set exactly for nounpp items".to_string())?;
        Ok(StimulusItem {
            id: self.id,
            source: self.source,
            prefix_text: self.prefix_text,
            correct_form: self.correct_form,
            incorrect_form: self.incorrect_form,
            verb_lemma: self.verb_lemma,
            condition,
            template_id: self.template_id,
        })
    }
}

/// One row of the tabular import format (CSV with header).
#[derive(Debug, Deserialize)]
struct TabularRow {
    source: Source,
    prefix_text: String,
    correct_form: String,
    incorrect_form: String,
    verb_lemma: String,
    condition: String,
    #[serde(default)]
    template_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportFormat {
    NativeJsonl,
    TabularPairs,
}

impl FromStr for ImportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" | "jsonl" | "native_jsonl" => Ok(ImportFormat::NativeJsonl),
            "tabular" | "csv" | "tabular_pairs" => Ok(ImportFormat::TabularPairs),
            _ => Err(format!("unknown import format {s:?}")),
        }
    }
}

pub fn import_items(
    path: &Path,
    format: ImportFormat,
    lexicon: &Lexicon,
) -> Result<Vec<StimulusItem>, StimulusError> {
    let file = std::fs::File::open(path)?;
    read_items(file, format, lexicon)
}

/// Parse and validate items; ids must be unique.
pub fn read_items<R: Read>(
    reader: R,
    format: ImportFormat,
    lexicon: &Lexicon,
) -> Result<Vec<StimulusItem>, StimulusError> {
    let parsed = match format {
        ImportFormat::NativeJsonl => parse_native(reader)?,
        ImportFormat::TabularPairs => parse_tabular(reader)?,
    };
    let mut ids = HashSet::new();
    let mut out = Vec::with_capacity(parsed.len());
    for (line, item) in parsed {
        if let Err(violations) = validate_item(&item, lexicon) {
            return Err(StimulusError::InvalidItem {
                line,
                id: item.id,
                violations,
            });
        }
        if !ids.insert(item.id.clone()) {
            return Err(StimulusError::DuplicateId { line, id: item.id });
        }
        out.push(item);
    }
    Ok(out)
}

fn parse_native<R: Read>(reader: R) -> Result<Vec<(usize, StimulusItem)>, StimulusError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: NativeLine = serde_json::from_str(&line).map_err(|e| StimulusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let item = raw.into_item().map_err(|message| StimulusError::Parse {
            line: line_no,
            message,
        })?;
        out.push((line_no, item));
    }
    Ok(out)
}

fn parse_tabular<R: Read>(reader: R) -> Result<Vec<(usize, StimulusItem)>, StimulusError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (idx, row) in rdr.deserialize::<TabularRow>().enumerate() {
        // header is line 1
        let line_no = idx + 2;
        let row = row.map_err(|e| StimulusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let condition: Condition = row
            .condition
            .parse()
            .map_err(|message| StimulusError::Parse { line: line_no, message })?;
        let template_id = row.template_id.filter(|t| !t.is_empty());
        out.push((
            line_no,
            StimulusItem {
                id: content_id(&row.prefix_text, &row.correct_form, &row.incorrect_form, condition),
                source: row.source,
                prefix_text: row.prefix_text,
                correct_form: row.correct_form,
                incorrect_form: row.incorrect_form,
                verb_lemma: row.verb_lemma,
                condition,
                template_id,
            },
        ));
    }
    Ok(out)
}

/// Write items in the native JSONL format (LF line endings).
pub fn write_items<W: Write>(mut writer: W, items: &[StimulusItem]) -> std::io::Result<()> {
    for item in items {
        let line = serde_json::to_string(&NativeLine::from(item)).map_err(std::io::Error::other)?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

/// One noun-PP template as stored in template files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub subject: NounPair,
    pub preposition: String,
    pub attractor: NounPair,
    pub verb: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    #[serde(rename = "template", default)]
    pub templates: Vec<Template>,
}

pub const BUNDLED_TEMPLATES: &str = include_str!("../fixtures/templates.toml");

impl TemplateSet {
    pub fn bundled() -> Self {
        TemplateSet::parse(BUNDLED_TEMPLATES).expect("bundled templates parse")
    }

    pub fn parse(text: &str) -> Result<Self, StimulusError> {
        toml::from_str(text).map_err(|e| StimulusError::InvalidTemplate(e.to_string()))
    }

    /// Expand all templates; `include_simple` adds the derived S/P items.
    pub fn expand(
        &self,
        lexicon: &Lexicon,
        include_simple: bool,
    ) -> Result<Vec<StimulusItem>, StimulusError> {
        let mut items = Vec::new();
        for t in &self.templates {
            let verb = lexicon.get(&t.verb).ok_or_else(|| {
                StimulusError::InvalidTemplate(format!("template {}: unknown verb {:?}", t.id, t.verb))
            })?;
            items.extend(expand_nounpp(&t.subject, &t.preposition, &t.attractor, verb, &t.id)?);
        }
        if include_simple {
            items = with_simple_items(items)?;
        }
        Ok(items)
    }

    /// Every noun pair mentioned as subject or attractor, deduplicated.
    pub fn nouns(&self) -> Vec<NounPair> {
        let mut out: Vec<NounPair> = Vec::new();
        for t in &self.templates {
            for n in [&t.subject, &t.attractor] {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn athlete() -> Vec<StimulusItem> {
        let subj = NounPair::new("athlete", "athletes").unwrap();
        let attr = NounPair::new("bike", "bikes").unwrap();
        let verb = VerbPair::new("know", "knows", "know").unwrap();
        expand_nounpp(&subj, "near", &attr, &verb, "athlete-bike").unwrap()
    }

    fn find(items: &[StimulusItem], label: &str) -> StimulusItem {
        items.iter().find(|i| i.condition.label() == label).unwrap().clone()
    }

    #[test]
    fn expand_athlete_ps() {
        let items = athlete();
        assert_eq!(items.len(), 4);
        let ps = find(&items, "PS");
        assert_eq!(ps.prefix_text, "The athletes near the bike");
        assert_eq!(ps.correct_form, "know");
        assert_eq!(ps.incorrect_form, "knows");
    }

    #[test]
    fn expand_cat_sp_matches_string_assembly() {
        let subj = NounPair::new("cat", "cats").unwrap();
        let attr = NounPair::new("dog", "dogs").unwrap();
        let verb = VerbPair::new("sleep", "sleeps", "sleep").unwrap();
        let items = expand_nounpp(&subj, "near", &attr, &verb, "t").unwrap();
        let sp = find(&items, "SP");
        let expected = ["The", "cat", "near", "the", "dogs"].join(" ");
        assert_eq!(sp.prefix_text, expected);
        assert_eq!(sp.correct_form, "sleeps");
    }

    #[test]
    fn identical_noun_forms_rejected() {
        assert!(matches!(
            NounPair::new("sheep", "sheep"),
            Err(StimulusError::InvalidTemplate(_))
        ));
        let bad = NounPair { singular: "sheep".into(), plural: "sheep".into() };
        let attr = NounPair::new("bike", "bikes").unwrap();
        let r = expand_nounpp(&bad, "near", &attr, &VerbPair::be(), "x");
        assert!(matches!(r, Err(StimulusError::InvalidTemplate(_))));
    }

    #[test]
    fn empty_preposition_rejected() {
        let subj = NounPair::new("cat", "cats").unwrap();
        let r = expand_nounpp(&subj, " ", &subj, &VerbPair::be(), "x");
        assert!(matches!(r, Err(StimulusError::InvalidTemplate(_))));
    }

    #[test]
    fn derive_simple_removes_pp() {
        let ss = find(&athlete(), "SS");
        let s = derive_simple(&ss).unwrap();
        assert_eq!(s.prefix_text, "The athlete");
        assert_eq!(s.condition, Condition::simple(Number::Singular));
        assert!(derive_simple(&s).is_err_and(|e| matches!(e, StimulusError::InvalidDerivation(_))));
    }

    #[test]
    fn derive_simple_multiword_subject() {
        let subj = NounPair::new("teaching assistant", "teaching assistants").unwrap();
        let attr = NounPair::new("desk", "desks").unwrap();
        let items = expand_nounpp(&subj, "near", &attr, &VerbPair::be(), "ta").unwrap();
        let sp = find(&items, "SP");
        assert_eq!(sp.prefix_text, "The teaching assistant near the desks");
        let s = derive_simple(&sp).unwrap();
        assert_eq!(s.prefix_text, "The teaching assistant");
        assert_eq!(s.condition.label(), "S");
        assert_eq!(s.correct_form, "is");
    }

    #[test]
    fn derive_simple_without_template_is_missing_span() {
        let mut item = find(&athlete(), "SP");
        item.template_id = None;
        assert!(matches!(derive_simple(&item), Err(StimulusError::MissingSpan(_))));
    }

    #[test]
    fn validate_reports_agreement_and_lexicon() {
        let lex = Lexicon::standard();
        let ss = find(&athlete(), "SS");
        assert!(validate_item(&ss, &lex).is_ok());

        let mut bad = ss.clone();
        std::mem::swap(&mut bad.correct_form, &mut bad.incorrect_form);
        let v = validate_item(&bad, &lex).unwrap_err();
        assert!(v.iter().any(|x| matches!(x, Violation::Agreement { .. })));

        let mut miss = ss;
        miss.verb_lemma = "sleep".into();
        let v = validate_item(&miss, &lex).unwrap_err();
        assert_eq!(v, vec![Violation::LexiconMiss("sleep".into())]);
    }

    #[test]
    fn native_roundtrip_and_errors() {
        let lex = Lexicon::standard();
        let items = athlete();
        let mut buf = Vec::new();
        write_items(&mut buf, &items).unwrap();
        let back = read_items(buf.as_slice(), ImportFormat::NativeJsonl, &lex).unwrap();
        assert_eq!(back, items);

        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = lines[2].replace("\"correct_form\":\"know\",", "");
        let broken = lines.join("\n");
        match read_items(broken.as_bytes(), ImportFormat::NativeJsonl, &lex) {
            Err(StimulusError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("correct_form"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let dup = format!("{}\n{}\n", text.lines().next().unwrap(), text.lines().next().unwrap());
        assert!(matches!(
            read_items(dup.as_bytes(), ImportFormat::NativeJsonl, &lex),
            Err(StimulusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn tabular_import() {
        let csv = "source,prefix_text,correct_form,incorrect_form,verb_lemma,condition,template_id\n\
                   bock_cutting,The key to the cabinets,is,are,be,SP,key#s1\n\
                   bigbench,The athletes,know,knows,know,P,\n";
        let items = read_items(csv.as_bytes(), ImportFormat::TabularPairs, &Lexicon::standard()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].source, Source::BockCuttingImport);
        assert_eq!(derive_simple(&items[0]).unwrap().prefix_text, "The key");
        assert_eq!(items[1].template_id, None);
    }

    #[test]
    fn condition_labels_roundtrip() {
        for c in Condition::all() {
            assert_eq!(c.label().parse::<Condition>().unwrap(), c);
        }
        assert_eq!(Condition::nounpp(Number::Singular, Number::Plural).attractor_match(), Some(false));
        assert_eq!(Condition::simple(Number::Plural).attractor_match(), None);
        assert!(Condition::new(Structure::Simple, Number::Plural, Some(Number::Plural)).is_none());
    }

    #[test]
    fn bundled_templates_expand() {
        let set = TemplateSet::bundled();
        let items = set.expand(&Lexicon::standard(), true).unwrap();
        assert_eq!(items.len(), set.templates.len() * 6);
        let lex = Lexicon::standard();
        assert!(items.iter().all(|i| validate_item(i, &lex).is_ok()));
        let verbs: HashSet<&str> = set.templates.iter().map(|t| t.verb.as_str()).collect();
        assert_eq!(verbs.len(), 16);
    }
}
