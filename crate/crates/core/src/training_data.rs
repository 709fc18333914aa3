//! Wizard-of-the-Internet style dialogue records: JSONL schema, validation,
//! statistics, training-pair extraction and the knowledge regularization mixer.
//!
//! One dialogue per line, keys in canonical order:
//!
//! ```text
//! {"id","persona":[..],"turns":[{"speaker","text",
//!    "searches":[{"query","results":[{"url","title","content"}]}],
//!    "selected":[{"doc_url","sentence"}]}]}
//! ```
//!
//! Turns may also carry an optional `"annotation"` object and dialogues an
//! optional `"rating"`; both are written only when present.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{domain_of, Document, Source};
use crate::fusion_decode::{assemble_fid_contexts, FiDInput, SourceKind, DEFAULT_N_DOCS};
use crate::metrics::knowledge_text;
use crate::query_gen::{DialogueContext, Speaker};
use crate::text::{contains_normalized, word_count};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema violation in {field}: {message}")]
    SchemaViolation {
        line: usize,
        field: String,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}: {}", self.line, self.field, self.message)
    }
}

impl From<Violation> for DatasetError {
    fn from(v: Violation) -> Self {
        if v.field == "json" {
            DatasetError::Parse {
                line: v.line,
                message: v.message,
            }
        } else {
            DatasetError::SchemaViolation {
                line: v.line,
                field: v.field,
                message: v.message,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultDoc {
    pub url: String,
    pub title: String,
    pub content: String,
}

impl ResultDoc {
    pub fn to_document(&self) -> Result<Document, crate::corpus::CorpusError> {
        let source = if self.content.trim().is_empty() {
            Source::Live
        } else {
            Source::CommonCrawl
        };
        Document::new(&self.url, &self.title, &self.content, source)
    }

    pub fn from_document(doc: &Document) -> Self {
        ResultDoc {
            url: doc.url().to_owned(),
            title: doc.title().to_owned(),
            content: doc.content().to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchAction {
    pub query: String,
    pub results: Vec<ResultDoc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectedSentence {
    pub doc_url: String,
    pub sentence: String,
}

/// Per-turn human evaluation checkboxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnAnnotation {
    pub consistent: bool,
    pub engaging: bool,
    pub knowledgeable: bool,
    pub factually_incorrect: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub searches: Vec<SearchAction>,
    #[serde(default)]
    pub selected: Vec<SelectedSentence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<TurnAnnotation>,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Turn {
            speaker,
            text: text.into(),
            searches: Vec::new(),
            selected: Vec::new(),
            annotation: None,
        }
    }

    /// Every recorded result of this turn, first occurrence of each url.
    pub fn recorded_documents(&self) -> Vec<&ResultDoc> {
        let mut seen = HashSet::new();
        self.searches
            .iter()
            .flat_map(|s| &s.results)
            .filter(|r| seen.insert(r.url.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WizIntDialogue {
    pub id: String,
    #[serde(rename = "persona")]
    pub apprentice_persona: Vec<String>,
    pub turns: Vec<Turn>,
    /// Overall 1-5 rating from an evaluation session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
}

impl WizIntDialogue {
    /// Conversation state before turn `index`.
    pub fn context_before(&self, index: usize) -> DialogueContext {
        let mut ctx = DialogueContext {
            persona: self.apprentice_persona.clone(),
            turns: Vec::new(),
        };
        for t in &self.turns[..index] {
            ctx.push(t.speaker, t.text.clone());
        }
        ctx
    }

    /// Checks every schema invariant; `line` is used for reporting.
    pub fn validate(&self, line: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |field: String, message: &str| {
            out.push(Violation {
                line,
                field,
                message: message.to_owned(),
            })
        };
        if self.id.trim().is_empty() {
            bad("id".into(), "must be non-empty");
        }
        if self.apprentice_persona.is_empty() {
            bad("persona".into(), "must be non-empty");
        }
        if self.turns.len() < 2 {
            bad("turns".into(), "need at least 2 turns");
        }
        if matches!(self.rating, Some(r) if !(1..=5).contains(&r)) {
            bad("rating".into(), "must be 1..5");
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let at = |f: &str| format!("turns[{i}].{f}");
            if turn.speaker == Speaker::Apprentice {
                if !turn.searches.is_empty() {
                    bad(at("searches"), "apprentice turns cannot search");
                }
                if !turn.selected.is_empty() {
                    bad(at("selected"), "apprentice turns cannot select knowledge");
                }
            }
            for (j, s) in turn.searches.iter().enumerate() {
                if s.query.trim().is_empty() {
                    bad(at(&format!("searches[{j}].query")), "must be non-empty");
                }
                for (k, r) in s.results.iter().enumerate() {
                    if domain_of(&r.url).is_err() {
                        bad(
                            at(&format!("searches[{j}].results[{k}].url")),
                            "unparseable url",
                        );
                    }
                }
            }
            let docs = turn.recorded_documents();
            for (j, sel) in turn.selected.iter().enumerate() {
                let field = at(&format!("selected[{j}]"));
                if sel.sentence.trim().is_empty() {
                    bad(field, "sentence must be non-empty");
                    continue;
                }
                match docs.iter().find(|d| d.url == sel.doc_url) {
                    None => bad(field, "doc_url is not among this turn's search results"),
                    Some(d)
                        if !contains_normalized(&d.content, &sel.sentence)
                            && !contains_normalized(&d.title, &sel.sentence) =>
                    {
                        bad(field, "sentence does not occur in the referenced document")
                    }
                    Some(_) => {}
                }
            }
        }
        out
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<WizIntDialogue, Violation> {
    let dialogue: WizIntDialogue = serde_json::from_str(line).map_err(|e| Violation {
        line: line_no,
        field: "json".into(),
        message: e.to_string(),
    })?;
    Ok(dialogue)
}

/// Parses JSONL text, failing on the first violation.
pub fn parse_dataset(text: &str) -> Result<Vec<WizIntDialogue>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d = parse_line(line, i + 1)?;
        if let Some(v) = d.validate(i + 1).into_iter().next() {
            return Err(v.into());
        }
        out.push(d);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<WizIntDialogue>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d = parse_line(&line, i + 1)?;
        if let Some(v) = d.validate(i + 1).into_iter().next() {
            return Err(v.into());
        }
        out.push(d);
    }
    Ok(out)
}

/// Every violation in a JSONL text, parse errors included.
pub fn validate_dataset(text: &str) -> Vec<Violation> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .flat_map(|(i, l)| match parse_line(l, i + 1) {
            Ok(d) => d.validate(i + 1),
            Err(v) => vec![v],
        })
        .collect()
}

/// Canonical JSONL: compact JSON, schema key order, one dialogue per line.
pub fn to_jsonl(dialogues: &[WizIntDialogue]) -> String {
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(
    path: impl AsRef<Path>,
    dialogues: &[WizIntDialogue],
) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(to_jsonl(dialogues).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Dataset summary in the layout of the collection statistics table.
///
/// Utterance length is measured in whitespace-delimited words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dialogues: usize,
    pub utterances: usize,
    pub mean_utterance_words: f64,
    pub mean_utterances_per_dialogue: f64,
    pub searches: usize,
    pub unique_selected_urls: usize,
    pub unique_selected_domains: usize,
    pub wizard_turns: usize,
    pub searching_turns: usize,
    pub pct_wizard_turns_with_search: f64,
    pub mean_queries_per_searching_turn: f64,
    pub pct_searching_turns_with_selection: f64,
}

#[derive(Default)]
struct Counts {
    dialogues: usize,
    utterances: usize,
    words: usize,
    searches: usize,
    wizard_turns: usize,
    searching_turns: usize,
    selecting_searching_turns: usize,
    urls: HashSet<String>,
}

impl Counts {
    fn merge(mut self, other: Counts) -> Counts {
        self.dialogues += other.dialogues;
        self.utterances += other.utterances;
        self.words += other.words;
        self.searches += other.searches;
        self.wizard_turns += other.wizard_turns;
        self.searching_turns += other.searching_turns;
        self.selecting_searching_turns += other.selecting_searching_turns;
        self.urls.extend(other.urls);
        self
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_stats(dialogues: &[WizIntDialogue]) -> DatasetStats {
    let c = dialogues
        .par_iter()
        .map(|d| {
            let mut c = Counts {
                dialogues: 1,
                ..Default::default()
            };
            for t in &d.turns {
                c.utterances += 1;
                c.words += word_count(&t.text);
                c.searches += t.searches.len();
                if t.speaker == Speaker::Wizard {
                    c.wizard_turns += 1;
                    if !t.searches.is_empty() {
                        c.searching_turns += 1;
                        if !t.selected.is_empty() {
                            c.selecting_searching_turns += 1;
                        }
                    }
                }
                c.urls.extend(t.selected.iter().map(|s| s.doc_url.clone()));
            }
            c
        })
        .reduce(Counts::default, Counts::merge);
    let domains: HashSet<String> = c.urls.iter().filter_map(|u| domain_of(u).ok()).collect();
    DatasetStats {
        dialogues: c.dialogues,
        utterances: c.utterances,
        mean_utterance_words: ratio(c.words, c.utterances),
        mean_utterances_per_dialogue: ratio(c.utterances, c.dialogues),
        searches: c.searches,
        unique_selected_urls: c.urls.len(),
        unique_selected_domains: domains.len(),
        wizard_turns: c.wizard_turns,
        searching_turns: c.searching_turns,
        pct_wizard_turns_with_search: 100.0 * ratio(c.searching_turns, c.wizard_turns),
        mean_queries_per_searching_turn: ratio(c.searches, c.searching_turns),
        pct_searching_turns_with_selection: 100.0
            * ratio(c.selecting_searching_turns, c.searching_turns),
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: [(&str, String); 10] = [
            ("Number of Dialogues", self.dialogues.to_string()),
            ("Number of Utterances", self.utterances.to_string()),
            (
                "Average Utterance Length",
                format!("{:.2}", self.mean_utterance_words),
            ),
            (
                "Average Utterances per Dialogue",
                format!("{:.1}", self.mean_utterances_per_dialogue),
            ),
            ("Number of Searches", self.searches.to_string()),
            (
                "Number of unique URLs selected",
                self.unique_selected_urls.to_string(),
            ),
            (
                "Number of unique Domains selected",
                self.unique_selected_domains.to_string(),
            ),
            (
                "% wizard turns with search",
                format!("{:.2}", self.pct_wizard_turns_with_search),
            ),
            (
                "Queries per searching turn",
                format!("{:.2}", self.mean_queries_per_searching_turn),
            ),
            (
                "% searching turns with selection",
                format!("{:.1}", self.pct_searching_turns_with_selection),
            ),
        ];
        for (i, (label, value)) in rows.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{label:<36}{value:>12}")?;
        }
        Ok(())
    }
}

/// Which query of a multi-query wizard turn becomes the training target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySelection {
    First,
    #[default]
    Last,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPair {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub context: DialogueContext,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsePair {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub context: DialogueContext,
    pub response: String,
    pub docs: Vec<ResultDoc>,
    pub selected: Vec<SelectedSentence>,
}

impl ResponsePair {
    pub fn documents(&self) -> Vec<Document> {
        self.docs
            .iter()
            .filter_map(|d| d.to_document().ok())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    QueryPairs,
    ResponsePairs,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pairs {
    Query(Vec<QueryPair>),
    Response(Vec<ResponsePair>),
}

impl Pairs {
    pub fn len(&self) -> usize {
        match self {
            Pairs::Query(p) => p.len(),
            Pairs::Response(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn extract_pairs(dialogues: &[WizIntDialogue], kind: PairKind) -> Pairs {
    match kind {
        PairKind::QueryPairs => {
            Pairs::Query(extract_query_pairs(dialogues, QuerySelection::default()))
        }
        PairKind::ResponsePairs => Pairs::Response(extract_response_pairs(dialogues)),
    }
}

pub fn extract_query_pairs(
    dialogues: &[WizIntDialogue],
    selection: QuerySelection,
) -> Vec<QueryPair> {
    let mut out = Vec::new();
    for d in dialogues {
        for (i, t) in d.turns.iter().enumerate() {
            if t.speaker != Speaker::Wizard || t.searches.is_empty() {
                continue;
            }
            let picked: Vec<&SearchAction> = match selection {
                QuerySelection::First => t.searches.first().into_iter().collect(),
                QuerySelection::Last => t.searches.last().into_iter().collect(),
                QuerySelection::All => t.searches.iter().collect(),
            };
            let context = d.context_before(i);
            out.extend(picked.into_iter().map(|s| QueryPair {
                dialogue_id: d.id.clone(),
                turn_index: i,
                context: context.clone(),
                query: s.query.clone(),
            }));
        }
    }
    out
}

pub fn extract_response_pairs(dialogues: &[WizIntDialogue]) -> Vec<ResponsePair> {
    let mut out = Vec::new();
    for d in dialogues {
        for (i, t) in d.turns.iter().enumerate() {
            if t.speaker != Speaker::Wizard {
                continue;
            }
            out.push(ResponsePair {
                dialogue_id: d.id.clone(),
                turn_index: i,
                context: d.context_before(i),
                response: t.text.clone(),
                docs: t.recorded_documents().into_iter().cloned().collect(),
                selected: t.selected.clone(),
            });
        }
    }
    out
}

/// One line of a query-evaluation cases file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEvalCase {
    pub context: DialogueContext,
    pub gold_query: String,
    #[serde(rename = "R")]
    pub gold_retrieved: Vec<String>,
    #[serde(rename = "D")]
    pub selected: Vec<String>,
}

/// Cases for query-quality evaluation: R is what the wizard's (last) query
/// returned, D the documents knowledge was selected from.
pub fn extract_query_eval_cases(dialogues: &[WizIntDialogue]) -> Vec<QueryEvalCase> {
    let mut out = Vec::new();
    for d in dialogues {
        for (i, t) in d.turns.iter().enumerate() {
            let Some(search) = t.searches.last() else {
                continue;
            };
            let mut seen = HashSet::new();
            out.push(QueryEvalCase {
                context: d.context_before(i),
                gold_query: search.query.clone(),
                gold_retrieved: search.results.iter().map(|r| r.url.clone()).collect(),
                selected: t
                    .selected
                    .iter()
                    .filter(|s| seen.insert(s.doc_url.as_str()))
                    .map(|s| s.doc_url.clone())
                    .collect(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Response,
    Knowledge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub fid_input: FiDInput,
    pub target: String,
    pub task: Task,
}

/// Emits the knowledge-generation task with probability `rho` on turns that
/// have selected knowledge, and the response task otherwise. Turns without
/// selections draw no random number.
pub fn mix_regularized<R: Rng + ?Sized>(
    example: &ResponsePair,
    rho: f64,
    rng: &mut R,
) -> TrainingExample {
    let fid_input = assemble_fid_contexts(
        &example.context,
        &example.documents(),
        SourceKind::Search,
        DEFAULT_N_DOCS,
    );
    let knowledge = !example.selected.is_empty() && rng.gen::<f64>() < rho.clamp(0.0, 1.0);
    if knowledge {
        TrainingExample {
            fid_input,
            target: knowledge_text(&example.selected),
            task: Task::Knowledge,
        }
    } else {
        TrainingExample {
            fid_input,
            target: example.response.clone(),
            task: Task::Response,
        }
    }
}

/// Per-domain selection counts, most common first.
pub fn selected_domain_counts(dialogues: &[WizIntDialogue]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for d in dialogues {
        for t in &d.turns {
            for s in &t.selected {
                if let Ok(domain) = domain_of(&s.doc_url) {
                    *counts.entry(domain).or_default() += 1;
                }
            }
        }
    }
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}
