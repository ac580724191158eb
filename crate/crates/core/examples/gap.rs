//! Throwaway calibration probe (not shipped): trains a gold-history model
//! and a scheduled-sampling continuation, printing the dev-set gap between
//! gold-history and predicted-history evaluation.

use convqa::corpus::{gen_synthetic, SynthConfig};
use convqa::infer::{evaluate_corpus, prediction_records, InferenceMode};
use convqa::metrics::{aggregate_report, ScoringScheme};
use convqa::model::Hyper;
use convqa::sampling::Schedule;
use convqa::trainer::{run_regime, RegimeRun, RegimeSpec, SeedPack, TrainerConfig};

fn dev_f1(run: &RegimeRun, dev: &[convqa::corpus::Conversation], cfg: &TrainerConfig, mode: InferenceMode) -> f64 {
    let results = evaluate_corpus(&run.best.params, &run.best.vocab, dev, mode, cfg.history_window, cfg.max_span_len).unwrap();
    aggregate_report(&prediction_records(&results), dev, ScoringScheme::Max).unwrap().overall.f1
}

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let n_train: usize = a.get(1).map_or(200, |s| s.parse().unwrap());
    let n_dev: usize = a.get(2).map_or(50, |s| s.parse().unwrap());
    let rounds: usize = a.get(3).map_or(10, |s| s.parse().unwrap());
    let pool: usize = a.get(4).map_or(14, |s| s.parse().unwrap());
    let dep: f64 = a.get(5).map_or(0.9, |s| s.parse().unwrap());
    let dim: usize = a.get(6).map_or(24, |s| s.parse().unwrap());
    let tf_epochs: u32 = a.get(7).map_or(15, |s| s.parse().unwrap());
    let ss_epochs: u32 = a.get(8).map_or(10, |s| s.parse().unwrap());
    let seed: u64 = a.get(9).map_or(1, |s| s.parse().unwrap());
    let lr: f64 = a.get(10).map_or(2e-3, |s| s.parse().unwrap());
    let window: usize = a.get(11).map_or(2, |s| s.parse().unwrap());

    let corpus = gen_synthetic(
        &SynthConfig { conversations: n_train + n_dev, rounds, entity_pool: pool, dependency_prob: dep },
        41,
    ).unwrap();
    let (train, dev) = corpus.split_at(n_train);
    let cfg = TrainerConfig {
        history_window: window,
        max_span_len: 4,
        embed_dim: dim,
        hidden_dim: dim,
        min_count: 1,
        hyper: Hyper { learning_rate: lr, ..Hyper::default() },
    };

    let t0 = std::time::Instant::now();
    let tf = RegimeSpec {
        name: "tf".into(),
        total_epochs: tf_epochs,
        warmup_epochs: tf_epochs - 1,
        from_best_model: false,
        schedule: Schedule::usr(1.0, tf_epochs).unwrap(),
    };
    let tf_run = run_regime(&tf, train, dev, &cfg, SeedPack::from_base(seed), None).unwrap();
    for s in &tf_run.stats {
        eprintln!("tf epoch {:2} loss {:6.3} dev-mp-f1 {:5.1}", s.epoch, s.mean_loss, s.dev_f1);
    }
    let sm = dev_f1(&tf_run, dev, &cfg, InferenceMode::Sm);
    let mp = dev_f1(&tf_run, dev, &cfg, InferenceMode::Mp);
    eprintln!("tf: dev SM {sm:.2}  MP {mp:.2}  gap {:.2}  ({:.1?})", sm - mp, t0.elapsed());

    let ss = RegimeSpec {
        name: "ss-bm".into(),
        total_epochs: ss_epochs,
        warmup_epochs: 0,
        from_best_model: true,
        schedule: Schedule::usr(0.5, ss_epochs).unwrap(),
    };
    let ss_run = run_regime(&ss, train, dev, &cfg, SeedPack::from_base(seed + 100), Some(tf_run.best.clone())).unwrap();
    for s in &ss_run.stats {
        eprintln!("ss epoch {:2} loss {:6.3} dev-mp-f1 {:5.1} gold-frac {:.2}", s.epoch, s.mean_loss, s.dev_f1, s.gold_fraction);
    }
    let ss_mp = dev_f1(&ss_run, dev, &cfg, InferenceMode::Mp);
    let closed = (ss_mp - mp) / (sm - mp) * 100.0;
    eprintln!("ss-bm: dev MP {ss_mp:.2}  (tf MP {mp:.2})  gap closed {closed:.0}%  total {:.1?}", t0.elapsed());
}
