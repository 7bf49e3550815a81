//! Masked-token pretraining on a 50-sentence corpus, small enough to
//! memorize. Starting from near-uniform predictions (loss about ln V), 200
//! Adam steps should cut the loss well below that and recover most masked
//! tokens at top-1.
//!
//! Run with `cargo run --release --example mlm_pretrain`.

use toxseq::encoder::{mlm_top1_accuracy, EncoderConfig, EncoderParams};
use toxseq::synth::keyword_corpus;
use toxseq::text::{encode, mask_for_mlm, Vocab};
use toxseq::train::{pretrain_mlm, PretrainConfig};
use toxseq::Rng;

const SEED: u64 = 11;
const MAX_LEN: usize = 12;

fn main() -> toxseq::Result<()> {
    let corpus: Vec<String> = keyword_corpus(50, SEED)
        .into_iter()
        .map(|(text, _)| text)
        .collect();
    let vocab = Vocab::build(corpus.iter().map(|s| s.as_str()), 200, 1)?;
    let encoded: Vec<_> = corpus
        .iter()
        .map(|t| encode(t, &vocab, MAX_LEN))
        .collect::<toxseq::Result<_>>()?;

    let config = EncoderConfig {
        num_layers: 1,
        num_heads: 2,
        model_dim: 32,
        ff_dim: 64,
        max_len: MAX_LEN,
        vocab_size: vocab.size(),
        dropout_rate: 0.0,
    };
    let mut rng = Rng::new(SEED);
    let mut params = EncoderParams::init(&config, &mut rng)?;

    let pretrain = PretrainConfig {
        steps: 200,
        batch_size: 16,
        learning_rate: 0.01,
        seed: SEED,
    };
    let losses = pretrain_mlm(&mut params, &config, &encoded, &vocab, &pretrain)?;

    let uniform = (vocab.size() as f64).ln();
    println!("vocab={} ln(V)={uniform:.4}", vocab.size());
    println!("step,mlm_loss");
    for (i, loss) in losses.iter().enumerate() {
        if i % 20 == 0 || i + 1 == losses.len() {
            println!("{i},{loss:.4}");
        }
    }

    // fresh masking pass over the whole corpus for the recovery score
    let mut mask_rng = Rng::new(SEED ^ 0x5eed);
    let batch: Vec<_> = encoded
        .iter()
        .map(|ex| mask_for_mlm(ex, &vocab, &mut mask_rng))
        .collect::<toxseq::Result<_>>()?;
    let top1 = mlm_top1_accuracy(&params, &batch, &config)?;
    println!("masked top-1 recovery: {top1:.3}");
    Ok(())
}
