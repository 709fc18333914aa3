//! Session state machine, independent of HTTP.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use sea_core::query_gen::Speaker;
use sea_core::search_engine::SearchResults;
use sea_core::text::{contains_normalized, split_sentences};
use sea_core::training_data::{
    to_jsonl, ResultDoc, SearchAction, SelectedSentence, Turn, TurnAnnotation, Violation,
    WizIntDialogue,
};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Wizard,
    Eval,
}

/// A search result as shown to the wizard, pre-split into selectable sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultView {
    pub url: String,
    pub title: String,
    pub content: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchView {
    pub query: String,
    pub augment_news: bool,
    pub engine_id: String,
    pub results: Vec<ResultView>,
}

impl SearchView {
    pub fn from_results(r: &SearchResults) -> Self {
        SearchView {
            query: r.query.text.clone(),
            augment_news: r.query.augment_news,
            engine_id: r.engine_id.clone(),
            results: r
                .results
                .iter()
                .map(|d| ResultView {
                    url: d.url().to_owned(),
                    title: d.title().to_owned(),
                    content: d.content().to_owned(),
                    sentences: split_sentences(d.content()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Session {
    pub id: String,
    pub role: Role,
    pub persona_options: Vec<String>,
    pub persona: Vec<String>,
    pub turns: Vec<Turn>,
    /// Searches and selections of the wizard turn being composed.
    pub pending_searches: Vec<SearchAction>,
    pub pending_selected: Vec<SelectedSentence>,
    pub rating: Option<u8>,
    pub turn_limit: usize,
    pub require_annotation: bool,
}

impl Session {
    pub fn new(id: String, role: Role, persona_options: Vec<String>, turn_limit: usize) -> Self {
        Session {
            id,
            role,
            persona_options,
            persona: Vec::new(),
            turns: Vec::new(),
            pending_searches: Vec::new(),
            pending_selected: Vec::new(),
            rating: None,
            turn_limit,
            require_annotation: role == Role::Eval,
        }
    }

    pub fn set_persona(&mut self, persona: &str, refinement: Option<&str>) -> Result<(), ApiError> {
        let persona = persona.trim();
        if persona.is_empty() {
            return Err(ApiError::bad_request(
                "empty_persona",
                "persona must be non-empty",
            ));
        }
        self.persona = vec![persona.to_owned()];
        if let Some(r) = refinement.map(str::trim).filter(|r| !r.is_empty()) {
            self.persona.push(r.to_owned());
        }
        Ok(())
    }

    pub fn check_wizard(&self) -> Result<(), ApiError> {
        if self.role != Role::Wizard {
            return Err(ApiError::conflict(
                "wrong_role",
                "only wizard sessions can search and select",
            ));
        }
        Ok(())
    }

    pub fn record_search(&mut self, results: &SearchResults) {
        self.pending_searches.push(SearchAction {
            query: results.query.text.clone(),
            results: results
                .results
                .iter()
                .map(ResultDoc::from_document)
                .collect(),
        });
    }

    /// Selections must quote a document returned during the current turn.
    pub fn select(&mut self, doc_url: &str, sentence: &str) -> Result<(), ApiError> {
        self.check_wizard()?;
        let doc = self
            .pending_searches
            .iter()
            .flat_map(|s| &s.results)
            .find(|r| r.url == doc_url)
            .ok_or_else(|| {
                ApiError::unprocessable("invalid_selection", "document was not returned this turn")
            })?;
        if !contains_normalized(&doc.content, sentence)
            && !contains_normalized(&doc.title, sentence)
        {
            return Err(ApiError::unprocessable(
                "invalid_selection",
                "sentence is not in the document",
            ));
        }
        let sel = SelectedSentence {
            doc_url: doc_url.to_owned(),
            sentence: sentence.trim().to_owned(),
        };
        if !self.pending_selected.contains(&sel) {
            self.pending_selected.push(sel);
        }
        Ok(())
    }

    fn check_limit(&self) -> Result<(), ApiError> {
        if self.turns.len() >= self.turn_limit {
            return Err(ApiError::conflict(
                "turn_limit",
                format!("conversation is limited to {} messages", self.turn_limit),
            ));
        }
        Ok(())
    }

    pub fn unannotated_bot_turn(&self) -> Option<usize> {
        if self.role != Role::Eval {
            return None;
        }
        self.turns
            .iter()
            .position(|t| t.speaker == Speaker::Wizard && t.annotation.is_none())
    }

    /// Appends a human message. Wizard turns take the pending searches and
    /// selections with them.
    pub fn add_message(&mut self, speaker: Speaker, text: &str) -> Result<usize, ApiError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ApiError::bad_request(
                "empty_message",
                "message text must be non-empty",
            ));
        }
        self.check_limit()?;
        if self.require_annotation {
            if let Some(i) = self.unannotated_bot_turn() {
                return Err(ApiError::conflict(
                    "annotation_required",
                    format!("annotate turn {i} before sending another message"),
                ));
            }
        }
        let mut turn = Turn::new(speaker, text);
        if speaker == Speaker::Wizard {
            turn.searches = std::mem::take(&mut self.pending_searches);
            turn.selected = std::mem::take(&mut self.pending_selected);
        }
        self.turns.push(turn);
        Ok(self.turns.len() - 1)
    }

    pub fn add_bot_turn(&mut self, text: String) -> Result<usize, ApiError> {
        self.check_limit()?;
        self.turns.push(Turn::new(Speaker::Wizard, text));
        Ok(self.turns.len() - 1)
    }

    pub fn at_limit(&self) -> bool {
        self.turns.len() >= self.turn_limit
    }

    pub fn annotate(
        &mut self,
        turn_index: usize,
        annotation: TurnAnnotation,
    ) -> Result<(), ApiError> {
        if self.role != Role::Eval {
            return Err(ApiError::conflict(
                "wrong_role",
                "only eval sessions take annotations",
            ));
        }
        match self.turns.get_mut(turn_index) {
            Some(t) if t.speaker == Speaker::Wizard => {
                t.annotation = Some(annotation);
                Ok(())
            }
            Some(_) => Err(ApiError::unprocessable(
                "not_a_bot_turn",
                "only bot turns are annotated",
            )),
            None => Err(ApiError::not_found(
                "no_such_turn",
                format!("turn {turn_index} does not exist"),
            )),
        }
    }

    pub fn set_rating(&mut self, rating: u8) -> Result<(), ApiError> {
        if !(1..=5).contains(&rating) {
            return Err(ApiError::bad_request(
                "bad_rating",
                "rating must be between 1 and 5",
            ));
        }
        self.rating = Some(rating);
        Ok(())
    }

    pub fn to_dialogue(&self) -> WizIntDialogue {
        WizIntDialogue {
            id: self.id.clone(),
            apprentice_persona: self.persona.clone(),
            turns: self.turns.clone(),
            rating: self.rating,
        }
    }

    /// One schema-valid JSONL line, or every violation.
    pub fn export(&self) -> Result<String, Vec<Violation>> {
        let d = self.to_dialogue();
        let violations = d.validate(1);
        if violations.is_empty() {
            Ok(to_jsonl(&[d]))
        } else {
            Err(violations)
        }
    }
}

/// Attribute percentages over annotated bot turns and the mean final rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sessions: usize,
    pub annotated_turns: usize,
    pub consistent_pct: f64,
    pub engaging_pct: f64,
    pub knowledgeable_pct: f64,
    pub factually_incorrect_pct: f64,
    pub rated_sessions: usize,
    pub mean_rating: Option<f64>,
}

pub fn aggregate<'a>(sessions: impl IntoIterator<Item = &'a Session>) -> Aggregate {
    let mut n_sessions = 0;
    let mut counts = [0usize; 4];
    let mut annotated = 0usize;
    let mut rating_sum = 0usize;
    let mut rated = 0usize;
    let mut seen = HashSet::new();
    for s in sessions {
        if s.role != Role::Eval || !seen.insert(s.id.as_str()) {
            continue;
        }
        n_sessions += 1;
        for a in s.turns.iter().filter_map(|t| t.annotation) {
            annotated += 1;
            for (c, flag) in counts.iter_mut().zip([
                a.consistent,
                a.engaging,
                a.knowledgeable,
                a.factually_incorrect,
            ]) {
                *c += usize::from(flag);
            }
        }
        if let Some(r) = s.rating {
            rated += 1;
            rating_sum += r as usize;
        }
    }
    let pct = |c: usize| {
        if annotated == 0 {
            0.0
        } else {
            100.0 * c as f64 / annotated as f64
        }
    };
    Aggregate {
        sessions: n_sessions,
        annotated_turns: annotated,
        consistent_pct: pct(counts[0]),
        engaging_pct: pct(counts[1]),
        knowledgeable_pct: pct(counts[2]),
        factually_incorrect_pct: pct(counts[3]),
        rated_sessions: rated,
        mean_rating: (rated > 0).then(|| rating_sum as f64 / rated as f64),
    }
}
