//! End-to-end training on the synthetic keyword corpus: a 2-layer encoder
//! with 2 attention heads feeding the BiLSTM head. The task is solvable from
//! vocabulary alone, so this is the smoke test that the whole stack trains.
//!
//! Run with `cargo run --release --example train_keyword`.

use toxseq::encoder::EncoderConfig;
use toxseq::head::{CellMode, HeadConfig, Merge, Pooling};
use toxseq::model::Model;
use toxseq::synth::{encode_labeled, keyword_corpus};
use toxseq::text::Vocab;
use toxseq::train::{evaluate_model, fit, ClassWeighting, OptimizerKind, TrainConfig};

const SEED: u64 = 17;
const MAX_LEN: usize = 12;

fn main() -> toxseq::Result<()> {
    let corpus = keyword_corpus(1000, SEED);
    // labels alternate, so contiguous even-length slices stay balanced
    let (train_items, rest) = corpus.split_at(800);
    let (val_items, test_items) = rest.split_at(100);

    let vocab = Vocab::build(train_items.iter().map(|(t, _)| t.as_str()), 200, 1)?;
    let train = encode_labeled(train_items, &vocab, MAX_LEN)?;
    let val = encode_labeled(val_items, &vocab, MAX_LEN)?;
    let test = encode_labeled(test_items, &vocab, MAX_LEN)?;

    let encoder_config = EncoderConfig {
        num_layers: 2,
        num_heads: 2,
        model_dim: 16,
        ff_dim: 32,
        max_len: MAX_LEN,
        vocab_size: vocab.size(),
        dropout_rate: 0.0,
    };
    let head_config = HeadConfig {
        d_a: 16,
        d_h: 16,
        d_fc: 16,
        cell_mode: CellMode::Lstm,
        pooling: Pooling::FinalStates,
        merge: Merge::Concat,
    };
    let train_config = TrainConfig {
        learning_rate: 0.005,
        encoder_learning_rate: 0.005,
        batch_size: 16,
        max_epochs: 20,
        optimizer: OptimizerKind::adam_default(),
        class_weighting: ClassWeighting::None,
        early_stop_patience: 4,
        seed: SEED,
        encoder_frozen: false,
        gradient_clip_norm: None,
    };

    let mut model = Model::init(encoder_config, head_config, SEED)?;
    let report = fit(&mut model, &train, &val, &train_config)?;
    println!("{}", report.log_lines());
    eprintln!(
        "trained in {:.1}s, best epoch {:?}",
        report.wall_seconds, report.best_epoch
    );

    let (nll, m) = evaluate_model(&model, &test)?;
    println!(
        "test: nll={nll:.4} precision={} recall={} accuracy={:.4}",
        m.precision.map_or("n/a".into(), |v| format!("{v:.4}")),
        m.recall.map_or("n/a".into(), |v| format!("{v:.4}")),
        m.accuracy
    );
    Ok(())
}
