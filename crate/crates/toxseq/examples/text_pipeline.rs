//! Walk a handful of raw comments through the text stack: normalization,
//! tokenization, vocabulary construction, fixed-length encoding, masked-token
//! sampling, and the stratified train/val/test split.
//!
//! Run with `cargo run --example text_pipeline`.

use toxseq::rng::Rng;
use toxseq::text::{
    decode_content, encode, mask_for_mlm, normalize, split, tokenize, DatasetRecord, Vocab,
};

const MAX_LEN: usize = 12;

fn main() -> toxseq::Result<()> {
    let raw = "  You're SO wrong!!  Don't  post again...  ";
    println!("raw        {raw:?}");
    println!("normalized {:?}", normalize(raw));
    println!("tokens     {:?}", tokenize(raw));

    let corpus = [
        "you're so wrong about this",
        "thanks, that's a fair point",
        "wrong wrong wrong, don't bother",
        "fair enough, thanks for explaining",
    ];
    // min_freq 2 drops the one-off words to [UNK]
    let vocab = Vocab::build(corpus, 64, 2)?;
    println!("\nvocabulary of {} tokens (min_freq 2):", vocab.size());
    let listed: Vec<&str> = (0..vocab.size()).filter_map(|i| vocab.token(i)).collect();
    println!("  {listed:?}");

    let ex = encode("thanks, you're wrong", &vocab, MAX_LEN)?;
    println!("\nencoded    {:?}", ex.token_ids);
    println!("mask       {:?}", ex.attention_mask);
    println!("real len   {} of {}", ex.real_len(), ex.max_len());
    println!("decoded    {:?}", decode_content(&ex, &vocab));

    // the MLM sampler hides content positions only, never [CLS]/[SEP]/[PAD]
    let mut rng = Rng::new(3);
    let long = encode(
        "wrong wrong thanks fair point don't bother explaining",
        &vocab,
        MAX_LEN,
    )?;
    let (masked, targets) = mask_for_mlm(&long, &vocab, &mut rng)?;
    println!("\nbefore mlm {:?}", long.token_ids);
    println!("after mlm  {:?}", masked.token_ids);
    for t in &targets {
        println!(
            "  position {} held {:?}",
            t.position,
            vocab.token(t.original_id).unwrap_or("?")
        );
    }

    // stratified split keeps the class ratio in every part
    let records: Vec<DatasetRecord> = (0..100)
        .map(|i| {
            let toxic = i % 5 == 0; // 20 percent positive
            DatasetRecord::new(
                i.to_string(),
                if toxic {
                    "wrong wrong wrong"
                } else {
                    "thanks, fair point"
                },
                if toxic { 1.0 } else { 0.0 },
            )
        })
        .collect();
    let (train, val, test) = split(records, (0.8, 0.1, 0.1), 42)?;
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        let toxic = part.iter().filter(|r| r.label == 1).count();
        println!(
            "{name:<5} {:>3} records, {toxic} toxic ({:.0}%)",
            part.len(),
            100.0 * toxic as f64 / part.len() as f64
        );
    }
    Ok(())
}
