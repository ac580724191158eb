//! Answer scoring and evaluation reports.
//!
//! Scoring follows the usual extractive-QA recipe: answers are normalized
//! (case, punctuation, articles, whitespace), compared as bags of words for
//! F1 and as whole strings for exact match, and scored against multiple
//! reference answers either by taking the best reference or by a
//! leave-one-out average. Reports slice the corpus by domain, answer type,
//! conversation length, and question length.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, AnswerType, Conversation};
use crate::par::map_ordered;
use crate::{Error, Result};

/// One predicted answer, keyed the same way the dataset keys gold answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub turn_id: u32,
    pub answer: String,
}

/// How to combine scores against multiple reference answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringScheme {
    /// Score against the best-matching reference.
    Max,
    /// Average over references of the best match among the others; with a
    /// single reference this degenerates to scoring against it directly.
    LeaveOneOut,
}

impl ScoringScheme {
    pub fn label(self) -> &'static str {
        match self {
            ScoringScheme::Max => "max",
            ScoringScheme::LeaveOneOut => "leave-one-out",
        }
    }
}

/// Normalizes an answer string for comparison: lowercase, drop ASCII
/// punctuation, drop the articles "a"/"an"/"the", collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let stripped: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let words: Vec<&str> = stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect();
    words.join(" ")
}

fn bag(s: &str) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for w in normalize_answer(s).split_whitespace() {
        *counts.entry(w.to_string()).or_insert(0) += 1;
    }
    counts
}

/// Bag-of-words F1 between a prediction and one gold answer.
///
/// Overlap is counted with multiplicity (a repeated word must be repeated
/// to get full credit). Two empty normalized answers count as a match.
pub fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = bag(pred);
    let g = bag(gold);
    let np: usize = p.values().sum();
    let ng: usize = g.values().sum();
    if np == 0 && ng == 0 {
        return 1.0;
    }
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let overlap: usize = p
        .iter()
        .map(|(w, &c)| c.min(g.get(w).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / np as f64;
    let recall = overlap as f64 / ng as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Exact match on normalized strings: 1.0 or 0.0.
pub fn em_single(pred: &str, gold: &str) -> f64 {
    if normalize_answer(pred) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

/// Scores a prediction against one or more references under `scheme`.
///
/// `scorer` is the per-pair metric (`f1_single` or `em_single`). An empty
/// reference list is an input error.
pub fn score_multi(
    pred: &str,
    refs: &[&str],
    scheme: ScoringScheme,
    scorer: impl Fn(&str, &str) -> f64,
) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Input(
            "score_multi requires at least one reference answer".into(),
        ));
    }
    if refs.len() == 1 {
        return Ok(scorer(pred, refs[0]));
    }
    match scheme {
        ScoringScheme::Max => Ok(refs
            .iter()
            .map(|g| scorer(pred, g))
            .fold(f64::NEG_INFINITY, f64::max)),
        ScoringScheme::LeaveOneOut => {
            let mut total = 0.0;
            for k in 0..refs.len() {
                let best = refs
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, g)| scorer(pred, g))
                    .fold(f64::NEG_INFINITY, f64::max);
                total += best;
            }
            Ok(total / refs.len() as f64)
        }
    }
}

/// Number of word tokens in a question: tokens that contain at least one
/// alphanumeric character, so standalone punctuation does not count.
pub fn question_word_count(question: &str) -> usize {
    tokenize(question)
        .iter()
        .filter(|t| t.chars().any(|c| c.is_alphanumeric()))
        .count()
}

/// Buckets a question by word count: QL1 < 3 <= QL2 < 5 <= QL3 < 7 <= QL4
/// < 10 <= QL5.
pub fn question_length_bucket(question: &str) -> &'static str {
    match question_word_count(question) {
        0..=2 => "QL1",
        3..=4 => "QL2",
        5..=6 => "QL3",
        7..=9 => "QL4",
        _ => "QL5",
    }
}

/// Buckets a conversation by round count: fewer than 12 rounds is
/// "shorter", 12 or more is "longer".
pub fn conversation_length_bucket(rounds: usize) -> &'static str {
    if rounds < 12 {
        "shorter"
    } else {
        "longer"
    }
}

/// Mean EM and F1 (scaled to 0-100) over a group of turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub em: f64,
    pub f1: f64,
    pub count: usize,
}

/// Scores for one bucket, split by answer type with a bucket-wide total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketBreakdown {
    pub by_type: BTreeMap<String, CellScore>,
    pub overall: CellScore,
}

/// Full evaluation report over a corpus.
///
/// Maps are ordered and cells with no member turns are simply absent, so
/// serialized reports are deterministic and comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: String,
    pub total_turns: usize,
    pub overall: CellScore,
    pub by_domain: BTreeMap<String, CellScore>,
    pub by_answer_type: BTreeMap<String, CellScore>,
    pub by_conversation_length: BTreeMap<String, BucketBreakdown>,
    pub by_question_length: BTreeMap<String, BucketBreakdown>,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    em_sum: f64,
    f1_sum: f64,
    n: usize,
}

impl Acc {
    fn add(&mut self, em: f64, f1: f64) {
        self.em_sum += em;
        self.f1_sum += f1;
        self.n += 1;
    }

    fn cell(self) -> CellScore {
        CellScore {
            em: 100.0 * self.em_sum / self.n as f64,
            f1: 100.0 * self.f1_sum / self.n as f64,
            count: self.n,
        }
    }
}

struct TurnScore {
    em: f64,
    f1: f64,
    domain: &'static str,
    answer_type: AnswerType,
    conv_bucket: &'static str,
    ql_bucket: &'static str,
}

fn score_conversation(
    conv: &Conversation,
    by_key: &HashMap<(&str, u32), &str>,
    scheme: ScoringScheme,
) -> Result<Vec<TurnScore>> {
    let conv_bucket = conversation_length_bucket(conv.turns.len());
    let mut out = Vec::with_capacity(conv.turns.len());
    for turn in &conv.turns {
        let pred = by_key
            .get(&(conv.id.as_str(), turn.turn_id))
            .copied()
            .expect("coverage checked before scoring");
        let mut refs: Vec<&str> = vec![turn.gold.text.as_str()];
        refs.extend(turn.additional_refs.iter().map(|a| a.text.as_str()));
        let f1 = score_multi(pred, &refs, scheme, f1_single)?;
        let em = score_multi(pred, &refs, scheme, em_single)?;
        out.push(TurnScore {
            em,
            f1,
            domain: conv.domain.label(),
            answer_type: turn.answer_type,
            conv_bucket,
            ql_bucket: question_length_bucket(&turn.question_text),
        });
    }
    Ok(out)
}

/// Scores predictions against a corpus and aggregates every breakdown.
///
/// Every turn in the corpus must have a prediction; the turns that do not
/// are collected into a coverage error. Extra predictions for unknown
/// turns are ignored.
pub fn aggregate_report(
    predictions: &[PredictionRecord],
    corpus: &[Conversation],
    scheme: ScoringScheme,
) -> Result<EvalReport> {
    let mut by_key: HashMap<(&str, u32), &str> = HashMap::new();
    for p in predictions {
        by_key.insert((p.id.as_str(), p.turn_id), p.answer.as_str());
    }

    let mut missing: Vec<(String, u32)> = Vec::new();
    for conv in corpus {
        for turn in &conv.turns {
            if !by_key.contains_key(&(conv.id.as_str(), turn.turn_id)) {
                missing.push((conv.id.clone(), turn.turn_id));
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::Coverage { missing });
    }

    // Conversations are scored independently (in parallel when enabled)
    // and reduced in corpus order.
    let scored = map_ordered(corpus, |conv| score_conversation(conv, &by_key, scheme));

    let mut overall = Acc::default();
    let mut by_domain: BTreeMap<String, Acc> = BTreeMap::new();
    let mut by_answer_type: BTreeMap<String, Acc> = BTreeMap::new();
    let mut by_conv_len: BTreeMap<String, (BTreeMap<String, Acc>, Acc)> = BTreeMap::new();
    let mut by_q_len: BTreeMap<String, (BTreeMap<String, Acc>, Acc)> = BTreeMap::new();

    for conv_scores in scored {
        for t in conv_scores? {
            overall.add(t.em, t.f1);
            by_domain
                .entry(t.domain.to_string())
                .or_default()
                .add(t.em, t.f1);
            by_answer_type
                .entry(t.answer_type.label().to_string())
                .or_default()
                .add(t.em, t.f1);
            for (bucket, map) in [
                (t.conv_bucket, &mut by_conv_len),
                (t.ql_bucket, &mut by_q_len),
            ] {
                let (by_type, total) = map.entry(bucket.to_string()).or_default();
                by_type
                    .entry(t.answer_type.label().to_string())
                    .or_default()
                    .add(t.em, t.f1);
                total.add(t.em, t.f1);
            }
        }
    }

    if overall.n == 0 {
        return Err(Error::Input("cannot aggregate an empty corpus".into()));
    }

    let finish_buckets = |map: BTreeMap<String, (BTreeMap<String, Acc>, Acc)>| {
        map.into_iter()
            .map(|(k, (by_type, total))| {
                (
                    k,
                    BucketBreakdown {
                        by_type: by_type.into_iter().map(|(t, a)| (t, a.cell())).collect(),
                        overall: total.cell(),
                    },
                )
            })
            .collect()
    };

    Ok(EvalReport {
        scheme: scheme.label().to_string(),
        total_turns: overall.n,
        overall: overall.cell(),
        by_domain: by_domain.into_iter().map(|(k, a)| (k, a.cell())).collect(),
        by_answer_type: by_answer_type
            .into_iter()
            .map(|(k, a)| (k, a.cell()))
            .collect(),
        by_conversation_length: finish_buckets(by_conv_len),
        by_question_length: finish_buckets(by_q_len),
    })
}
