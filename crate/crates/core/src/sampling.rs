//! Scheduled sampling: mixing probabilities, the per-turn coin flip, and
//! the cache of model predictions that feeds sampled histories.
//!
//! During training, each previous turn in a question's history window is
//! filled with either the gold answer or the model's cached prediction
//! for that turn. The choice is an independent draw per slot: gold with
//! probability epsilon, where epsilon follows one of the schedules below.
//! Predictions are cached at the epoch that produced them and consumed
//! one epoch later, so the sampled "model answers" always come from the
//! previous epoch's model.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::{Error, Result};

/// Shape of the epsilon-vs-epoch curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Uniform: a constant gold probability `c` at every epoch.
    Usr,
    /// Exponential decay of the *model-sample* probability: the gold
    /// probability is `1 - exp(-t / 2N)`, rising over training.
    Ed,
    /// The mirror image, `exp(-t / 2N)`: starts fully gold and decays,
    /// which matches the usual reading of "decay" curricula. Kept behind
    /// this explicit variant so both interpretations stay available.
    EdComplement,
}

/// A sampling schedule: maps a 1-based epoch to the probability of
/// choosing the gold answer for each history slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    /// Constant gold probability; only read by [`ScheduleKind::Usr`].
    #[serde(default = "default_c")]
    pub c: f64,
    /// Total number of training epochs `N` the curve is scaled to.
    pub n_epochs: u32,
}

fn default_c() -> f64 {
    0.5
}

impl Schedule {
    pub fn usr(c: f64, n_epochs: u32) -> Result<Schedule> {
        let s = Schedule {
            kind: ScheduleKind::Usr,
            c,
            n_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn ed(n_epochs: u32) -> Result<Schedule> {
        let s = Schedule {
            kind: ScheduleKind::Ed,
            c: default_c(),
            n_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn ed_complement(n_epochs: u32) -> Result<Schedule> {
        let s = Schedule {
            kind: ScheduleKind::EdComplement,
            c: default_c(),
            n_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_epochs == 0 {
            return Err(Error::Schedule("schedule needs at least one epoch".into()));
        }
        if self.kind == ScheduleKind::Usr && !(0.0..=1.0).contains(&self.c) {
            return Err(Error::Schedule(format!(
                "uniform schedule constant must lie in [0, 1], got {}",
                self.c
            )));
        }
        Ok(())
    }

    /// Gold probability at epoch `t` (1-based, `1 <= t <= n_epochs`).
    pub fn epsilon(&self, t: u32) -> Result<f64> {
        if t == 0 || t > self.n_epochs {
            return Err(Error::Schedule(format!(
                "epoch {t} outside schedule range 1..={}",
                self.n_epochs
            )));
        }
        self.validate()?;
        let decay = (-(t as f64) / (2.0 * self.n_epochs as f64)).exp();
        Ok(match self.kind {
            ScheduleKind::Usr => self.c,
            ScheduleKind::Ed => 1.0 - decay,
            ScheduleKind::EdComplement => decay,
        })
    }
}

/// Where a history answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Gold,
    Predicted,
}

/// The answer text chosen for one history slot, tagged with its origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryChoice {
    pub answer_text: String,
    pub provenance: Provenance,
}

/// Draws the answer for one history slot: gold with probability
/// `epsilon`, the cached prediction otherwise. A slot whose prediction is
/// absent from the cache falls back to gold. Exactly one uniform draw is
/// consumed per call, so seeded runs stay aligned regardless of cache
/// contents.
pub fn choose_history_answer(
    rng: &mut impl Rng,
    epsilon: f64,
    gold: &str,
    cached: Option<&str>,
) -> HistoryChoice {
    assert!(
        (0.0..=1.0).contains(&epsilon),
        "epsilon out of range: {epsilon}"
    );
    let u: f64 = rng.random();
    let take_gold = u < epsilon;
    match (take_gold, cached) {
        (false, Some(pred)) => HistoryChoice {
            answer_text: pred.to_string(),
            provenance: Provenance::Predicted,
        },
        _ => HistoryChoice {
            answer_text: gold.to_string(),
            provenance: Provenance::Gold,
        },
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    conversation_id: String,
    turn_id: u32,
    answer_text: String,
    epoch_stamp: u32,
}

/// Answer texts predicted by the model, keyed by conversation and turn.
///
/// A cache is stamped with the epoch whose model produced it; training at
/// epoch `t` reads the cache stamped `t - 1` and writes a fresh one
/// stamped `t`. Re-inserting a key overwrites (last write wins).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCache {
    entries: HashMap<(String, u32), String>,
    epoch_stamp: u32,
}

impl PredictionCache {
    pub fn new(epoch_stamp: u32) -> PredictionCache {
        PredictionCache {
            entries: HashMap::new(),
            epoch_stamp,
        }
    }

    pub fn epoch_stamp(&self) -> u32 {
        self.epoch_stamp
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn put(&mut self, conversation_id: &str, turn_id: u32, answer_text: String) {
        self.entries
            .insert((conversation_id.to_string(), turn_id), answer_text);
    }

    pub fn get(&self, conversation_id: &str, turn_id: u32) -> Option<&str> {
        self.entries
            .get(&(conversation_id.to_string(), turn_id))
            .map(String::as_str)
    }

    /// Verifies the cache holds a prediction for every turn of `corpus`;
    /// returns the sorted list of missing keys otherwise.
    pub fn assert_complete(
        &self,
        corpus: &[Conversation],
    ) -> std::result::Result<(), Vec<(String, u32)>> {
        let mut missing = Vec::new();
        for conv in corpus {
            for turn in &conv.turns {
                if self.get(&conv.id, turn.turn_id).is_none() {
                    missing.push((conv.id.clone(), turn.turn_id));
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            missing.sort();
            Err(missing)
        }
    }

    /// Writes the cache as line-delimited JSON, sorted by key so equal
    /// caches serialize to equal bytes.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut keys: Vec<&(String, u32)> = self.entries.keys().collect();
        keys.sort();
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for key in keys {
            let line = CacheLine {
                conversation_id: key.0.clone(),
                turn_id: key.1,
                answer_text: self.entries[key].clone(),
                epoch_stamp: self.epoch_stamp,
            };
            serde_json::to_writer(&mut file, &line)
                .map_err(|e| Error::Numeric(format!("cache serialization failed: {e}")))?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PredictionCache> {
        let file = BufReader::new(std::fs::File::open(&path)?);
        let mut cache = PredictionCache::new(0);
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Format {
                offset: i,
                message: format!("cache line {}: {e}", i + 1),
            })?;
            cache.epoch_stamp = cache.epoch_stamp.max(parsed.epoch_stamp);
            cache.put(&parsed.conversation_id, parsed.turn_id, parsed.answer_text);
        }
        Ok(cache)
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn epsilon_always_lands_in_unit_interval(
            kind in prop_oneof![
                Just(ScheduleKind::Usr),
                Just(ScheduleKind::Ed),
                Just(ScheduleKind::EdComplement),
            ],
            c in 0.0..=1.0f64,
            n in 1u32..200,
        ) {
            let s = Schedule { kind, c, n_epochs: n };
            for t in 1..=n {
                let eps = s.epsilon(t).unwrap();
                prop_assert!((0.0..=1.0).contains(&eps),
                    "FALSIFIED: epsilon({t}) = {eps} outside [0, 1]");
            }
        }

        #[test]
        fn empirical_gold_fraction_tracks_epsilon(eps in 0.05..=0.95f64, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2000;
            let gold = (0..n)
                .filter(|_| {
                    choose_history_answer(&mut rng, eps, "g", Some("p")).provenance
                        == Provenance::Gold
                })
                .count();
            let sigma = (eps * (1.0 - eps) / n as f64).sqrt();
            let frac = gold as f64 / n as f64;
            prop_assert!((frac - eps).abs() < 5.0 * sigma + 1e-9,
                "FALSIFIED: fraction {frac} too far from epsilon {eps}");
        }
    }
}
