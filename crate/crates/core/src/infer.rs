//! Whole-conversation inference under gold or self-predicted history.
//!
//! The two modes differ only in where the history window's answers come
//! from. `Sm` fills each previous turn with its gold answer; `Mp` feeds
//! the model its own predictions from the turns it just answered, which
//! is the honest deployment condition and the one exposure bias hurts.
//! A [`GoldAccessLog`] counts every gold-answer read so tests (and
//! callers) can prove the `Mp` path never touches the annotations.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Conversation, Vocab};
use crate::metrics::PredictionRecord;
use crate::model::{forward, predict_answer, AnswerPrediction, ModelParams};
use crate::par::map_ordered;
use crate::sampling::{HistoryChoice, Provenance};
use crate::trainer::build_history_input;
use crate::{Error, Result};

/// History conditioning at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceMode {
    /// Gold history: previous answers come from the annotations.
    Sm,
    /// Predicted history: previous answers are the model's own.
    Mp,
}

impl InferenceMode {
    pub fn label(self) -> &'static str {
        match self {
            InferenceMode::Sm => "sm",
            InferenceMode::Mp => "mp",
        }
    }
}

/// Counts reads of gold answers during inference.
#[derive(Debug, Default)]
pub struct GoldAccessLog {
    reads: AtomicU64,
}

impl GoldAccessLog {
    pub fn new() -> GoldAccessLog {
        GoldAccessLog::default()
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    fn record(&self) {
        self.reads.fetch_add(1, Ordering::Relaxed);
    }
}

/// All predictions for one conversation, in turn order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversationResult {
    pub conversation_id: String,
    pub predictions: Vec<AnswerPrediction>,
}

fn answer_conversation_impl(
    params: &ModelParams,
    vocab: &Vocab,
    conv: &Conversation,
    mode: InferenceMode,
    window: usize,
    max_span_len: usize,
    log: &GoldAccessLog,
    mut input_sink: Option<&mut Vec<Vec<String>>>,
) -> Result<ConversationResult> {
    if conv.turns.is_empty() {
        return Err(Error::Input(format!("conversation {} has no turns", conv.id)));
    }
    let passage_tokens = tokenize(&conv.passage);
    let passage_ids = vocab.encode(&passage_tokens);

    let mut own_answers: Vec<String> = Vec::with_capacity(conv.turns.len());
    let mut predictions = Vec::with_capacity(conv.turns.len());
    for (idx, _turn) in conv.turns.iter().enumerate() {
        let turn_index = idx + 1;
        let tokens = build_history_input(conv, turn_index, window, |j: u32| {
            // Turns are answered in order, so every j < turn_index has an
            // entry in own_answers by the time it is requested.
            match mode {
                InferenceMode::Sm => {
                    log.record();
                    HistoryChoice {
                        answer_text: conv.turns[(j - 1) as usize].gold.text.clone(),
                        provenance: Provenance::Gold,
                    }
                }
                InferenceMode::Mp => HistoryChoice {
                    answer_text: own_answers[(j - 1) as usize].clone(),
                    provenance: Provenance::Predicted,
                },
            }
        });
        if let Some(sink) = input_sink.as_deref_mut() {
            sink.push(tokens.clone());
        }
        let question_ids = vocab.encode(&tokens);
        let trace = forward(params, &passage_ids, &question_ids)?;
        let pred = predict_answer(&trace, &passage_tokens, max_span_len);
        own_answers.push(pred.answer_text.clone());
        predictions.push(pred);
    }
    Ok(ConversationResult {
        conversation_id: conv.id.clone(),
        predictions,
    })
}

/// Answers every turn of a conversation in order.
pub fn answer_conversation(
    params: &ModelParams,
    vocab: &Vocab,
    conv: &Conversation,
    mode: InferenceMode,
    window: usize,
    max_span_len: usize,
) -> Result<ConversationResult> {
    let log = GoldAccessLog::new();
    answer_conversation_impl(params, vocab, conv, mode, window, max_span_len, &log, None)
}

/// Like [`answer_conversation`], recording gold-answer reads in `log`.
pub fn answer_conversation_logged(
    params: &ModelParams,
    vocab: &Vocab,
    conv: &Conversation,
    mode: InferenceMode,
    window: usize,
    max_span_len: usize,
    log: &GoldAccessLog,
) -> Result<ConversationResult> {
    answer_conversation_impl(params, vocab, conv, mode, window, max_span_len, log, None)
}

/// Like [`answer_conversation`], also returning the token sequence fed to
/// the encoder at each turn (useful for inspecting what the model saw).
pub fn answer_conversation_traced(
    params: &ModelParams,
    vocab: &Vocab,
    conv: &Conversation,
    mode: InferenceMode,
    window: usize,
    max_span_len: usize,
) -> Result<(ConversationResult, Vec<Vec<String>>)> {
    let log = GoldAccessLog::new();
    let mut inputs = Vec::new();
    let result = answer_conversation_impl(
        params,
        vocab,
        conv,
        mode,
        window,
        max_span_len,
        &log,
        Some(&mut inputs),
    )?;
    Ok((result, inputs))
}

/// Answers every conversation of a corpus; conversations fan out in
/// parallel when the `parallel` feature is on, and results keep corpus
/// order either way.
pub fn evaluate_corpus(
    params: &ModelParams,
    vocab: &Vocab,
    corpus: &[Conversation],
    mode: InferenceMode,
    window: usize,
    max_span_len: usize,
) -> Result<Vec<ConversationResult>> {
    map_ordered(corpus, |conv| {
        answer_conversation(params, vocab, conv, mode, window, max_span_len)
    })
    .into_iter()
    .collect()
}

/// Sequential twin of [`evaluate_corpus`], kept unconditionally for
/// benchmarking the parallel path against and for bit-for-bit
/// cross-checking.
pub fn evaluate_corpus_seq(
    params: &ModelParams,
    vocab: &Vocab,
    corpus: &[Conversation],
    mode: InferenceMode,
    window: usize,
    max_span_len: usize,
) -> Result<Vec<ConversationResult>> {
    corpus
        .iter()
        .map(|conv| answer_conversation(params, vocab, conv, mode, window, max_span_len))
        .collect()
}

/// Flattens results into records sorted by conversation id, then turn.
pub fn prediction_records(results: &[ConversationResult]) -> Vec<PredictionRecord> {
    let mut records: Vec<PredictionRecord> = results
        .iter()
        .flat_map(|r| {
            r.predictions.iter().enumerate().map(|(i, p)| PredictionRecord {
                id: r.conversation_id.clone(),
                turn_id: (i + 1) as u32,
                answer: p.answer_text.clone(),
            })
        })
        .collect();
    records.sort_by(|a, b| (&a.id, a.turn_id).cmp(&(&b.id, b.turn_id)));
    records
}

/// Serializes prediction records as a JSON array (stable bytes for equal
/// inputs; an empty record set serializes to `[]`).
pub fn serialize_predictions(records: &[PredictionRecord]) -> String {
    serde_json::to_string_pretty(records).expect("prediction serialization cannot fail")
}

/// Writes sorted predictions for `results` to `path`.
pub fn write_predictions(results: &[ConversationResult], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serialize_predictions(&prediction_records(results)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, SynthConfig, Vocab};
    use crate::model::{init_params, Dims};

    fn setup(dep: f64) -> (ModelParams, Vocab, Vec<Conversation>) {
        let corpus = gen_synthetic(
            &SynthConfig {
                conversations: 3,
                rounds: 4,
                entity_pool: 10,
                dependency_prob: dep,
            },
            21,
        )
        .unwrap();
        let vocab = Vocab::build(&corpus, 1);
        let params = init_params(
            Dims {
                vocab_size: vocab.len(),
                embed_dim: 6,
                hidden_dim: 5,
                max_span_len: 4,
            },
            13,
        )
        .unwrap();
        (params, vocab, corpus)
    }

    #[test]
    fn sm_mode_reads_gold_answers_and_mp_reads_none() {
        let (params, vocab, corpus) = setup(1.0);
        let conv = &corpus[0];

        let sm_log = GoldAccessLog::new();
        answer_conversation_logged(&params, &vocab, conv, InferenceMode::Sm, 2, 4, &sm_log)
            .unwrap();
        // Window 2 over 4 turns: turns 2, 3, 4 read 1, 2, 2 gold answers.
        assert_eq!(sm_log.reads(), 5);

        let mp_log = GoldAccessLog::new();
        answer_conversation_logged(&params, &vocab, conv, InferenceMode::Mp, 2, 4, &mp_log)
            .unwrap();
        assert_eq!(mp_log.reads(), 0, "predicted-history mode must not touch gold answers");
    }

    #[test]
    fn mp_inputs_carry_the_models_own_answers() {
        let (params, vocab, corpus) = setup(1.0);
        let conv = &corpus[0];
        let (result, inputs) =
            answer_conversation_traced(&params, &vocab, conv, InferenceMode::Mp, 2, 4).unwrap();
        // The turn-2 input must contain the turn-1 prediction verbatim.
        let first_answer = tokenize(&result.predictions[0].answer_text);
        let window: Vec<String> = inputs[1].clone();
        let joined = window.join(" ");
        assert!(
            joined.contains(&first_answer.join(" ")),
            "turn-2 input {joined:?} lacks the turn-1 prediction {first_answer:?}"
        );

        let (_, sm_inputs) =
            answer_conversation_traced(&params, &vocab, conv, InferenceMode::Sm, 2, 4).unwrap();
        let gold = tokenize(&conv.turns[0].gold.text).join(" ");
        assert!(sm_inputs[1].join(" ").contains(&gold));
    }

    #[test]
    fn modes_coincide_when_the_history_window_is_empty() {
        let (params, vocab, corpus) = setup(1.0);
        for conv in &corpus {
            let sm = answer_conversation(&params, &vocab, conv, InferenceMode::Sm, 0, 4).unwrap();
            let mp = answer_conversation(&params, &vocab, conv, InferenceMode::Mp, 0, 4).unwrap();
            assert_eq!(sm, mp);
        }
    }

    #[test]
    fn mp_predictions_depend_only_on_the_prefix() {
        let (params, vocab, corpus) = setup(1.0);
        let conv = &corpus[0];
        let full = answer_conversation(&params, &vocab, conv, InferenceMode::Mp, 2, 4).unwrap();
        for cut in 1..=conv.turns.len() {
            let mut truncated = conv.clone();
            truncated.turns.truncate(cut);
            let partial =
                answer_conversation(&params, &vocab, &truncated, InferenceMode::Mp, 2, 4).unwrap();
            for (i, p) in partial.predictions.iter().enumerate() {
                assert_eq!(p, &full.predictions[i], "prefix of length {cut}, turn {}", i + 1);
            }
        }
    }

    #[test]
    fn parallel_and_sequential_evaluation_agree_exactly() {
        let (params, vocab, corpus) = setup(0.5);
        for mode in [InferenceMode::Sm, InferenceMode::Mp] {
            let par = evaluate_corpus(&params, &vocab, &corpus, mode, 2, 4).unwrap();
            let seq = evaluate_corpus_seq(&params, &vocab, &corpus, mode, 2, 4).unwrap();
            assert_eq!(par, seq);
        }
    }

    #[test]
    fn prediction_records_are_sorted_and_stable() {
        let (params, vocab, mut corpus) = setup(0.0);
        // Reverse corpus order; records must come out sorted anyway.
        corpus.reverse();
        let results =
            evaluate_corpus(&params, &vocab, &corpus, InferenceMode::Sm, 2, 4).unwrap();
        let records = prediction_records(&results);
        for w in records.windows(2) {
            assert!((&w[0].id, w[0].turn_id) < (&w[1].id, w[1].turn_id));
        }
        let a = serialize_predictions(&records);
        let b = serialize_predictions(&prediction_records(&results));
        assert_eq!(a, b, "serialization must be deterministic");
    }

    #[test]
    fn empty_results_serialize_to_an_empty_array() {
        assert_eq!(serialize_predictions(&[]), "[]");
    }

    #[test]
    fn written_predictions_parse_back(){
        let (params, vocab, corpus) = setup(0.5);
        let results =
            evaluate_corpus(&params, &vocab, &corpus, InferenceMode::Mp, 2, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.json");
        write_predictions(&results, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: Vec<PredictionRecord> = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, prediction_records(&results));
    }
}
