//! Train a small classifier, write it to the versioned binary checkpoint
//! format, read the raw header back, reload the model, and show that the
//! round trip reproduces every prediction bit for bit.
//!
//! Run with `cargo run --release --example checkpoint_roundtrip`.

use std::fs;

use toxseq::checkpoint::{load_checkpoint, save_checkpoint, MAGIC};
use toxseq::encoder::EncoderConfig;
use toxseq::head::HeadConfig;
use toxseq::model::Model;
use toxseq::synth::{encode_labeled, keyword_corpus};
use toxseq::text::Vocab;
use toxseq::train::{fit, TrainConfig};

const SEED: u64 = 29;
const MAX_LEN: usize = 12;

fn main() -> toxseq::Result<()> {
    let corpus = keyword_corpus(200, SEED);
    let (train_items, val_items) = corpus.split_at(160);
    let vocab = Vocab::build(train_items.iter().map(|(t, _)| t.as_str()), 200, 1)?;
    let train = encode_labeled(train_items, &vocab, MAX_LEN)?;
    let val = encode_labeled(val_items, &vocab, MAX_LEN)?;

    let encoder_config = EncoderConfig {
        num_layers: 1,
        num_heads: 2,
        model_dim: 16,
        ff_dim: 32,
        max_len: MAX_LEN,
        vocab_size: vocab.size(),
        ..EncoderConfig::default()
    };
    let mut model = Model::init(encoder_config, HeadConfig::default(), SEED)?;
    let config = TrainConfig {
        learning_rate: 5e-3,
        encoder_learning_rate: 5e-3,
        batch_size: 16,
        max_epochs: 8,
        seed: SEED,
        ..TrainConfig::default()
    };
    let report = fit(&mut model, &train, &val, &config)?;
    println!(
        "trained {} epochs, val accuracy {:.3}",
        report.epochs.len(),
        report.epochs.last().unwrap().val_metrics.accuracy
    );

    let dir = std::env::temp_dir().join("toxseq_roundtrip_example");
    fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("model.ckpt");
    save_checkpoint(&model, &path)?;
    let bytes = fs::read(&path).expect("read checkpoint");
    println!("\nwrote {} bytes to {}", bytes.len(), path.display());

    // the first 12 bytes are the magic and the header length
    assert_eq!(&bytes[..8], MAGIC);
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[12..12 + header_len]).unwrap();
    println!(
        "magic {:?}, header ({header_len} bytes):",
        std::str::from_utf8(MAGIC).unwrap()
    );
    for line in header.lines().take(6) {
        println!("  {line}");
    }
    println!("  ...");

    let restored = load_checkpoint(&path)?;
    println!(
        "\nreloaded: {} named tensors, seed {}",
        restored.named().len(),
        restored.seed
    );

    let mut max_gap = 0.0f64;
    let mut exact = true;
    for ex in &val {
        let a = model.predict_proba(ex)?;
        let b = restored.predict_proba(ex)?;
        exact &= a.to_bits() == b.to_bits();
        max_gap = max_gap.max((a - b).abs());
    }
    println!(
        "predictions on {} held-out examples: bit-identical {exact}, max gap {max_gap:e}",
        val.len()
    );

    // saving the restored model reproduces the file byte for byte
    let path2 = dir.join("model2.ckpt");
    save_checkpoint(&restored, &path2)?;
    println!(
        "re-saved file identical: {}",
        bytes == fs::read(&path2).expect("read second checkpoint")
    );
    let _ = fs::remove_dir_all(&dir);
    Ok(())
}
