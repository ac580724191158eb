//! Throwaway calibration probe (not shipped): teacher-forced training on a
//! small synthetic corpus, printing loss and train EM trajectories.

use convqa::corpus::{gen_synthetic, SynthConfig, Vocab};
use convqa::infer::{evaluate_corpus, prediction_records, InferenceMode};
use convqa::metrics::{aggregate_report, ScoringScheme};
use convqa::model::{init_params, AdamState, Dims, Hyper};
use convqa::trainer::{train_epoch, SeedPack, TrainRngs, TrainerConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let conversations: usize = args.get(1).map_or(8, |s| s.parse().unwrap());
    let rounds: usize = args.get(2).map_or(5, |s| s.parse().unwrap());
    let pool: usize = args.get(3).map_or(10, |s| s.parse().unwrap());
    let dep: f64 = args.get(4).map_or(0.5, |s| s.parse().unwrap());
    let dim: usize = args.get(5).map_or(24, |s| s.parse().unwrap());
    let lr: f64 = args.get(6).map_or(0.02, |s| s.parse().unwrap());
    let epochs: u32 = args.get(7).map_or(200, |s| s.parse().unwrap());

    let corpus_seed: u64 = std::env::var("CORPUS_SEED").map_or(77, |s| s.parse().unwrap());
    let corpus = gen_synthetic(
        &SynthConfig { conversations, rounds, entity_pool: pool, dependency_prob: dep },
        corpus_seed,
    )
    .unwrap();
    let cfg = TrainerConfig {
        history_window: 2,
        max_span_len: 4,
        embed_dim: dim,
        hidden_dim: dim,
        min_count: 1,
        hyper: Hyper { learning_rate: lr, ..Hyper::default() },
    };
    let vocab = Vocab::build(&corpus, cfg.min_count);
    eprintln!("vocab {} tokens", vocab.len());
    let dims = Dims {
        vocab_size: vocab.len(),
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
        max_span_len: cfg.max_span_len,
    };
    let seeds = SeedPack::from_base(5);
    let mut params = init_params(dims, seeds.init).unwrap();
    if let Ok(scale) = std::env::var("SCORER_SCALE") {
        let scale: f64 = scale.parse().unwrap();
        for v in params.start_scorer.iter_mut().chain(params.end_scorer.iter_mut()) {
            *v *= scale;
        }
    }
    let mut opt = AdamState::new(&params);
    let mut rngs = TrainRngs::new(&seeds);

    let t0 = std::time::Instant::now();
    for epoch in 1..=epochs {
        let out = train_epoch(&mut params, &mut opt, &vocab, &corpus, 1.0, None, epoch, &cfg, &mut rngs)
            .unwrap();
        if epoch % 10 == 0 || epoch == 1 {
            let results = evaluate_corpus(&params, &vocab, &corpus, InferenceMode::Sm, cfg.history_window, cfg.max_span_len).unwrap();
            let report = aggregate_report(&prediction_records(&results), &corpus, ScoringScheme::Max).unwrap();
            eprintln!(
                "epoch {epoch:3}  loss {:7.4}  train EM {:5.1}  F1 {:5.1}  ({:.1?})",
                out.mean_loss, report.overall.em, report.overall.f1, t0.elapsed()
            );
            if report.overall.em >= 100.0 { break; }
        }
    }
}
