//! Trains the desk model on the synthetic corpus and prints the loss history.
//!
//! `cargo run --release -p llm-codec --example desk_train -- [steps] [lr] [batch]`

use std::time::Instant;

use llm_codec::codebook::{build_subword_codebook, build_word_codebook, synthetic_words, EmbeddingTable};
use llm_codec::losses::LossWeights;
use llm_codec::nn::{synthetic_guidance, train_step, AdamHyper, ModelConfig, ToyCodecModel, TrainConfig, TrainState};
use llm_codec::synth::synthetic_corpus;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map_or(300, |s| s.parse().unwrap());
    let lr: f64 = args.get(2).map_or(1e-3, |s| s.parse().unwrap());
    let batch: usize = args.get(3).map_or(4, |s| s.parse().unwrap());
    let table = EmbeddingTable::synthetic(256, 64, 7);
    let (words, tok) = synthetic_words(&table, 200, 7);
    let (word_book, _) = build_word_codebook(&words, &tok, &table).unwrap();
    let sub = build_subword_codebook(&table).unwrap();
    let mut books = vec![word_book, sub.clone(), sub];
    let cfg = ModelConfig::desk();
    let model = ToyCodecModel::init(cfg.clone(), &books, 1).unwrap();
    let mut state = TrainState::new(model, 1);
    let corpus = synthetic_corpus(32, 16000, 16000, 1);
    let guidance: Vec<_> = corpus.iter().map(|c| synthetic_guidance(c, 64, 480, 3).unwrap()).collect();
    let tc = TrainConfig { adam: AdamHyper { lr, ..Default::default() }, ..Default::default() };
    let weights = LossWeights::default();
    let start = Instant::now();
    for s in 0..steps {
        let idx: Vec<usize> = (0..batch).map(|b| (s * batch + b) % corpus.len()).collect();
        let clips: Vec<_> = idx.iter().map(|&i| corpus[i].clone()).collect();
        let gs: Vec<_> = idx.iter().map(|&i| guidance[i].clone()).collect();
        let r = train_step(&clips, &mut state, &mut books, &tc, &weights, Some(&gs)).unwrap();
        if s % 10 == 0 || s + 1 == steps {
            println!(
                "{:4} time {:.4} freq {:.4} adv {:.3} feat {:.4} sem {:.4} cons {:.4} commit {:.4} disc {:.3} [{:.1}s]",
                r.step,
                r.time,
                r.freq,
                r.adv,
                r.feat,
                r.sem,
                r.cons,
                r.commit,
                r.disc,
                start.elapsed().as_secs_f64()
            );
        }
    }
}
