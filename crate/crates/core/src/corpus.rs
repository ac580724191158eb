//! Corpus representation, tokenization, vocabulary, and data loading.
//!
//! Conversations come from JSON files in the usual conversational-QA
//! layout (a story, parallel question/answer arrays keyed by `turn_id`,
//! optional extra reference answer sets), or from a synthetic generator
//! that produces entity-chain conversations whose questions depend on the
//! previous turn's answer.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Core data model
// ---------------------------------------------------------------------------

/// Where a conversation's passage comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Children,
    Literature,
    MidHigh,
    News,
    Wikipedia,
    Synthetic,
}

impl Domain {
    /// Maps a dataset `source` string to a domain, case-insensitively.
    pub fn from_source(source: &str) -> Option<Domain> {
        match source.to_lowercase().as_str() {
            "mctest" | "children" | "childrens-stories" | "children's stories" => {
                Some(Domain::Children)
            }
            "gutenberg" | "literature" => Some(Domain::Literature),
            "race" | "mid-high" | "mid_high" | "midhigh" | "mid/high" => Some(Domain::MidHigh),
            "cnn" | "news" => Some(Domain::News),
            "wikipedia" | "wiki" => Some(Domain::Wikipedia),
            "synthetic" => Some(Domain::Synthetic),
            _ => None,
        }
    }

    /// Report label for this domain.
    pub fn label(self) -> &'static str {
        match self {
            Domain::Children => "children",
            Domain::Literature => "literature",
            Domain::MidHigh => "mid-high",
            Domain::News => "news",
            Domain::Wikipedia => "wikipedia",
            Domain::Synthetic => "synthetic",
        }
    }

    /// Canonical `source` string used when writing files.
    fn source_tag(self) -> &'static str {
        match self {
            Domain::Children => "mctest",
            Domain::Literature => "gutenberg",
            Domain::MidHigh => "race",
            Domain::News => "cnn",
            Domain::Wikipedia => "wikipedia",
            Domain::Synthetic => "synthetic",
        }
    }
}

/// The four-way answer classification the model predicts alongside spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnswerType {
    Yes,
    No,
    Unknown,
    Span,
}

impl AnswerType {
    /// Index of this type in the model's class head.
    pub fn class_index(self) -> usize {
        match self {
            AnswerType::Yes => 0,
            AnswerType::No => 1,
            AnswerType::Unknown => 2,
            AnswerType::Span => 3,
        }
    }

    pub fn from_class_index(i: usize) -> Option<AnswerType> {
        match i {
            0 => Some(AnswerType::Yes),
            1 => Some(AnswerType::No),
            2 => Some(AnswerType::Unknown),
            3 => Some(AnswerType::Span),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AnswerType::Yes => "yes",
            AnswerType::No => "no",
            AnswerType::Unknown => "unknown",
            AnswerType::Span => "span",
        }
    }
}

/// Classifies a gold answer string: literal "yes"/"no"/"unknown" (after
/// trimming and lowercasing) map to the closed classes, everything else is
/// an extractive span.
pub fn derive_answer_type(answer_text: &str) -> AnswerType {
    match answer_text.trim().to_lowercase().as_str() {
        "yes" => AnswerType::Yes,
        "no" => AnswerType::No,
        "unknown" => AnswerType::Unknown,
        _ => AnswerType::Span,
    }
}

/// One answer: the free-form text plus its supporting character span in
/// the passage (`span_start == -1` marks an unanswerable turn).
#[derive(Debug, Clone, PartialEq)]
pub struct Answer {
    pub text: String,
    pub span_start: i64,
    pub span_end: i64,
    pub span_text: String,
}

/// One question/answer round of a conversation.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    /// 1-based position of the turn within its conversation.
    pub turn_id: u32,
    pub question_text: String,
    pub gold: Answer,
    /// Extra reference answers used only for scoring.
    pub additional_refs: Vec<Answer>,
    pub answer_type: AnswerType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub domain: Domain,
    pub passage: String,
    pub turns: Vec<Turn>,
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// A token plus its character span (end-exclusive) in the source string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub token: String,
    pub start: usize,
    pub end: usize,
}

/// Tokenizes text and reports each token's character offsets.
///
/// Rules: lowercase everything, split on whitespace, and break every
/// non-alphanumeric character out as a standalone token (so "Cotton?"
/// becomes `cotton`, `?`).
pub fn tokenize_with_offsets(text: &str) -> Vec<TokenSpan> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut word_start = 0usize;
    let mut n_chars = 0usize;

    let flush = |out: &mut Vec<TokenSpan>, word: &mut String, start: usize, end: usize| {
        if !word.is_empty() {
            out.push(TokenSpan {
                token: word.to_lowercase(),
                start,
                end,
            });
            word.clear();
        }
    };

    for (i, ch) in text.chars().enumerate() {
        n_chars = i + 1;
        if ch.is_whitespace() {
            flush(&mut out, &mut word, word_start, i);
        } else if ch.is_alphanumeric() {
            if word.is_empty() {
                word_start = i;
            }
            word.push(ch);
        } else {
            flush(&mut out, &mut word, word_start, i);
            out.push(TokenSpan {
                token: ch.to_lowercase().collect(),
                start: i,
                end: i + 1,
            });
        }
    }
    flush(&mut out, &mut word, word_start, n_chars);
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|t| t.token).collect()
}

/// Maps a character span to the token range it overlaps: the first token
/// that ends after `start` through the last token that begins before
/// `end`. Returns `None` when no token overlaps the span.
pub fn char_span_to_token_span(
    tokens: &[TokenSpan],
    start: usize,
    end: usize,
) -> Option<(usize, usize)> {
    let first = tokens.iter().position(|t| t.end > start)?;
    let last = tokens.iter().rposition(|t| t.start < end)?;
    if first <= last {
        Some((first, last))
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const Q_SEP_ID: u32 = 2;
pub const A_SEP_ID: u32 = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
/// Marker inserted before each question in an encoded history.
pub const Q_SEP_TOKEN: &str = "<q>";
/// Marker inserted before each history answer.
pub const A_SEP_TOKEN: &str = "<a>";

const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, Q_SEP_TOKEN, A_SEP_TOKEN];

/// Token/id bijection with four reserved entries at the lowest ids.
///
/// The tokenizer can never produce the reserved strings (they contain `<`
/// and `>`, which always split), so reserved ids cannot be shadowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocab {
    fn with_reserved() -> Vocab {
        let id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab {
            id_to_token,
            token_to_id,
        }
    }

    /// Builds a vocabulary over a corpus: tokens of the passages,
    /// questions, and gold answer texts, admitted when their total count
    /// reaches `min_count`, with ids assigned in first-occurrence order.
    pub fn build(corpus: &[Conversation], min_count: usize) -> Vocab {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut order: Vec<String> = Vec::new();
        let tally = |text: &str, counts: &mut HashMap<String, usize>, order: &mut Vec<String>| {
            for tok in tokenize(text) {
                match counts.get_mut(&tok) {
                    Some(c) => *c += 1,
                    None => {
                        counts.insert(tok.clone(), 1);
                        order.push(tok);
                    }
                }
            }
        };
        for conv in corpus {
            tally(&conv.passage, &mut counts, &mut order);
            for turn in &conv.turns {
                tally(&turn.question_text, &mut counts, &mut order);
                tally(&turn.gold.text, &mut counts, &mut order);
            }
        }

        let mut vocab = Vocab::with_reserved();
        for tok in order {
            if counts[&tok] >= min_count {
                let id = vocab.id_to_token.len() as u32;
                vocab.token_to_id.insert(tok.clone(), id);
                vocab.id_to_token.push(tok);
            }
        }
        vocab
    }

    /// Id for a token, falling back to the unknown-token id.
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved entries are always present
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Vec<String> {
        v.id_to_token
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = String;

    fn try_from(id_to_token: Vec<String>) -> std::result::Result<Vocab, String> {
        if id_to_token.len() < RESERVED.len()
            || RESERVED
                .iter()
                .zip(&id_to_token)
                .any(|(want, got)| want != got)
        {
            return Err("vocabulary does not start with the reserved tokens".into());
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), i as u32).is_some() {
                return Err(format!("duplicate vocabulary entry {tok:?}"));
            }
        }
        Ok(Vocab {
            id_to_token,
            token_to_id,
        })
    }
}

// ---------------------------------------------------------------------------
// JSON loading and writing
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RawDataset {
    data: Vec<RawConversation>,
}

#[derive(Serialize, Deserialize)]
struct RawConversation {
    id: String,
    source: String,
    story: String,
    questions: Vec<RawQuestion>,
    answers: Vec<RawAnswer>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    additional_answers: BTreeMap<String, Vec<RawAnswer>>,
}

#[derive(Serialize, Deserialize)]
struct RawQuestion {
    input_text: String,
    turn_id: u32,
}

#[derive(Serialize, Deserialize)]
struct RawAnswer {
    span_start: i64,
    span_end: i64,
    span_text: String,
    input_text: String,
    turn_id: u32,
}

fn integrity(conv: &str, turn: u32, message: impl Into<String>) -> Error {
    Error::Integrity {
        conversation_id: conv.to_string(),
        turn_id: turn,
        message: message.into(),
    }
}

/// Checks an answer's span against the passage:
/// - `span_start == -1` (with `span_end == -1`) is reserved for
///   unanswerable turns;
/// - otherwise the span must lie inside the passage and its characters
///   must reproduce `span_text` exactly (character offsets, end
///   exclusive).
fn validate_answer(conv_id: &str, passage: &str, raw: &RawAnswer) -> Result<Answer> {
    let answer = Answer {
        text: raw.input_text.clone(),
        span_start: raw.span_start,
        span_end: raw.span_end,
        span_text: raw.span_text.clone(),
    };
    if raw.span_start < 0 || raw.span_end < 0 {
        if raw.span_start != -1 || raw.span_end != -1 {
            return Err(integrity(
                conv_id,
                raw.turn_id,
                format!(
                    "negative span must be (-1, -1), got ({}, {})",
                    raw.span_start, raw.span_end
                ),
            ));
        }
        if derive_answer_type(&raw.input_text) != AnswerType::Unknown {
            return Err(integrity(
                conv_id,
                raw.turn_id,
                format!(
                    "span_start = -1 is reserved for unanswerable turns, \
                     but the answer is {:?}",
                    raw.input_text
                ),
            ));
        }
        return Ok(answer);
    }

    let (start, end) = (raw.span_start as usize, raw.span_end as usize);
    let n_chars = passage.chars().count();
    if start > end || end > n_chars {
        return Err(integrity(
            conv_id,
            raw.turn_id,
            format!("span ({start}, {end}) out of range for a {n_chars}-character passage"),
        ));
    }
    let extracted: String = passage.chars().skip(start).take(end - start).collect();
    if extracted != raw.span_text {
        return Err(integrity(
            conv_id,
            raw.turn_id,
            format!(
                "span ({start}, {end}) reads {extracted:?} but span_text is {:?}",
                raw.span_text
            ),
        ));
    }
    Ok(answer)
}

fn convert_conversation(raw: RawConversation) -> Result<Conversation> {
    let domain = Domain::from_source(&raw.source).ok_or_else(|| Error::UnknownSource {
        conversation_id: raw.id.clone(),
        source_name: raw.source.clone(),
    })?;
    if raw.story.is_empty() {
        return Err(integrity(&raw.id, 0, "empty passage"));
    }
    if raw.questions.is_empty() {
        return Err(integrity(&raw.id, 0, "conversation has no turns"));
    }
    if raw.questions.len() != raw.answers.len() {
        return Err(integrity(
            &raw.id,
            0,
            format!(
                "{} questions but {} answers",
                raw.questions.len(),
                raw.answers.len()
            ),
        ));
    }

    let mut turns = Vec::with_capacity(raw.questions.len());
    for (i, (q, a)) in raw.questions.iter().zip(&raw.answers).enumerate() {
        let expect = (i + 1) as u32;
        if q.turn_id != expect || a.turn_id != expect {
            return Err(integrity(
                &raw.id,
                expect,
                format!(
                    "turn ids must be consecutive from 1: \
                     question {} / answer {} at position {}",
                    q.turn_id, a.turn_id, i
                ),
            ));
        }
        if q.input_text.trim().is_empty() {
            return Err(integrity(&raw.id, expect, "empty question"));
        }
        let gold = validate_answer(&raw.id, &raw.story, a)?;
        turns.push(Turn {
            turn_id: expect,
            question_text: q.input_text.clone(),
            answer_type: derive_answer_type(&gold.text),
            gold,
            additional_refs: Vec::new(),
        });
    }

    // Reference sets attach per turn, ordered by their numeric set key.
    let mut set_keys: Vec<&String> = raw.additional_answers.keys().collect();
    set_keys.sort_by_key(|k| (k.parse::<u64>().ok(), (*k).clone()));
    for key in set_keys {
        for ans in &raw.additional_answers[key] {
            let idx = ans.turn_id as usize;
            if idx == 0 || idx > turns.len() {
                return Err(integrity(
                    &raw.id,
                    ans.turn_id,
                    format!("additional answer set {key:?} names a turn that does not exist"),
                ));
            }
            let validated = validate_answer(&raw.id, &raw.story, ans)?;
            turns[idx - 1].additional_refs.push(validated);
        }
    }

    Ok(Conversation {
        id: raw.id,
        domain,
        passage: raw.story,
        turns,
    })
}

/// Parses a JSON corpus from a string. Syntax errors are reported with
/// their byte offset; semantic problems name the conversation and turn.
pub fn parse_coqa(text: &str) -> Result<Vec<Conversation>> {
    let raw: RawDataset = serde_json::from_str(text).map_err(|e| Error::Format {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    raw.data.into_iter().map(convert_conversation).collect()
}

/// Loads a JSON corpus from disk.
pub fn load_coqa(path: impl AsRef<Path>) -> Result<Vec<Conversation>> {
    parse_coqa(&std::fs::read_to_string(path)?)
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    text.len()
}

fn to_raw(convs: &[Conversation]) -> RawDataset {
    let data = convs
        .iter()
        .map(|c| {
            // Reference sets can only be reconstructed when every turn
            // carries the same number of extra references (which is how
            // complete sets arrive); otherwise they are dropped.
            let n_sets = c.turns.iter().map(|t| t.additional_refs.len()).max().unwrap_or(0);
            let complete = c.turns.iter().all(|t| t.additional_refs.len() == n_sets);
            let mut additional_answers = BTreeMap::new();
            if n_sets > 0 && complete {
                for k in 0..n_sets {
                    additional_answers.insert(
                        k.to_string(),
                        c.turns
                            .iter()
                            .map(|t| raw_answer(&t.additional_refs[k], t.turn_id))
                            .collect(),
                    );
                }
            }
            RawConversation {
                id: c.id.clone(),
                source: c.domain.source_tag().to_string(),
                story: c.passage.clone(),
                questions: c
                    .turns
                    .iter()
                    .map(|t| RawQuestion {
                        input_text: t.question_text.clone(),
                        turn_id: t.turn_id,
                    })
                    .collect(),
                answers: c.turns.iter().map(|t| raw_answer(&t.gold, t.turn_id)).collect(),
                additional_answers,
            }
        })
        .collect();
    RawDataset { data }
}

fn raw_answer(a: &Answer, turn_id: u32) -> RawAnswer {
    RawAnswer {
        span_start: a.span_start,
        span_end: a.span_end,
        span_text: a.span_text.clone(),
        input_text: a.text.clone(),
        turn_id,
    }
}

/// Serializes conversations back to the JSON corpus format.
pub fn serialize_coqa(convs: &[Conversation]) -> String {
    serde_json::to_string_pretty(&to_raw(convs)).expect("corpus serialization cannot fail")
}

pub fn write_coqa(convs: &[Conversation], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serialize_coqa(convs))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

/// Configuration for the synthetic entity-chain generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of conversations to generate.
    pub conversations: usize,
    /// Rounds (turns) per conversation.
    pub rounds: usize,
    /// Number of distinct entity names available; must exceed `rounds`.
    pub entity_pool: usize,
    /// Probability that a turn after the first refers to the previous
    /// answer only as "it" instead of naming the entity.
    pub dependency_prob: f64,
}

const BASE_NAMES: [&str; 40] = [
    "arlo", "bram", "cora", "dane", "edna", "finn", "gwen", "hugo", "iris", "jude", "kira",
    "liam", "mona", "nils", "opal", "pria", "quin", "rosa", "sven", "tess", "ursa", "vito",
    "wren", "xeno", "yara", "zane", "alma", "bode", "cleo", "dara", "enzo", "faye", "gus",
    "hana", "ivan", "jana", "kent", "lola", "marl", "nora",
];

const VERBS: [&str; 8] = [
    "chased", "followed", "watched", "helped", "praised", "trained", "visited", "trusted",
];

fn entity_name(i: usize) -> String {
    if i < BASE_NAMES.len() {
        BASE_NAMES[i].to_string()
    } else {
        format!("{}{}", BASE_NAMES[i % BASE_NAMES.len()], i / BASE_NAMES.len())
    }
}

/// Generates conversations over chains of entity facts.
///
/// Each conversation picks `rounds + 1` distinct entities and builds one
/// fact sentence per round, "the X <verb> the Y .", where Y then serves
/// as the subject of the next fact. The fact sentences appear in the
/// passage in shuffled order. Turn i asks for the object of fact i in
/// passive voice; with probability `dependency_prob` the subject is
/// referenced only as "it" (the previous turn's answer), which makes the
/// question unanswerable without that answer. Generation is fully
/// deterministic in `(config, seed)`.
pub fn gen_synthetic(config: &SynthConfig, seed: u64) -> Result<Vec<Conversation>> {
    if config.conversations == 0 || config.rounds == 0 {
        return Err(Error::Config(
            "synthetic corpus needs at least one conversation and one round".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.dependency_prob) {
        return Err(Error::Config(format!(
            "dependency_prob must lie in [0, 1], got {}",
            config.dependency_prob
        )));
    }
    if config.entity_pool <= config.rounds {
        return Err(Error::Config(format!(
            "entity_pool ({}) must exceed rounds ({}): each conversation \
             chains rounds + 1 distinct entities",
            config.entity_pool, config.rounds
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(config.conversations);

    for c in 0..config.conversations {
        let mut pool: Vec<usize> = (0..config.entity_pool).collect();
        pool.shuffle(&mut rng);
        let entities: Vec<String> =
            pool[..config.rounds + 1].iter().map(|&i| entity_name(i)).collect();
        let verbs: Vec<&str> = (0..config.rounds)
            .map(|_| VERBS[rng.random_range(0..VERBS.len())])
            .collect();

        let mut order: Vec<usize> = (0..config.rounds).collect();
        order.shuffle(&mut rng);

        // Assemble the passage, tracking each fact's object span. Names
        // and verbs are ASCII, so character and byte offsets coincide;
        // offsets are still tracked in characters.
        let mut passage = String::new();
        let mut cursor = 0usize;
        let mut object_span = vec![(0usize, 0usize); config.rounds];
        for (pos, &fact) in order.iter().enumerate() {
            if pos > 0 {
                passage.push(' ');
                cursor += 1;
            }
            let subject = &entities[fact];
            let object = &entities[fact + 1];
            let verb = verbs[fact];
            let obj_start = cursor + 4 + subject.chars().count() + 1 + verb.chars().count() + 5;
            let obj_end = obj_start + object.chars().count();
            object_span[fact] = (obj_start, obj_end);
            let sentence = format!("the {subject} {verb} the {object} .");
            cursor += sentence.chars().count();
            passage.push_str(&sentence);
        }

        let mut turns = Vec::with_capacity(config.rounds);
        for i in 1..=config.rounds {
            let fact = i - 1;
            let verb = verbs[fact];
            let anaphoric = i > 1 && rng.random::<f64>() < config.dependency_prob;
            let question_text = if anaphoric {
                format!("who was {verb} by it ?")
            } else {
                format!("who was {verb} by the {} ?", entities[fact])
            };
            let object = entities[fact + 1].clone();
            let (start, end) = object_span[fact];
            debug_assert_eq!(
                passage.chars().skip(start).take(end - start).collect::<String>(),
                object
            );
            turns.push(Turn {
                turn_id: i as u32,
                question_text,
                gold: Answer {
                    text: object.clone(),
                    span_start: start as i64,
                    span_end: end as i64,
                    span_text: object,
                },
                additional_refs: Vec::new(),
                answer_type: AnswerType::Span,
            });
        }

        out.push(Conversation {
            id: format!("syn-{seed:08x}-{c:04}"),
            domain: Domain::Synthetic,
            passage,
            turns,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
