//! Fit the TF-IDF + logistic-regression baseline on a synthetic keyword
//! corpus, inspect what it learned, and score it with the shared metrics.
//!
//! Run with `cargo run --release --example tfidf_baseline`.

use toxseq::synth::keyword_corpus;
use toxseq::tfidf::{baseline_evaluate, baseline_fit, BaselineConfig};
use toxseq::train::ClassWeighting;

fn main() -> toxseq::Result<()> {
    let corpus = keyword_corpus(600, 21);
    let (train_items, test_items) = corpus.split_at(480);
    let texts: Vec<&str> = train_items.iter().map(|(t, _)| t.as_str()).collect();
    let labels: Vec<u8> = train_items.iter().map(|(_, l)| *l).collect();

    let config = BaselineConfig {
        epochs: 60,
        batch_size: 32,
        learning_rate: 0.5,
        class_weighting: ClassWeighting::InverseFrequency,
        max_features: Some(500),
        seed: 21,
    };
    let model = baseline_fit(&texts, &labels, &config)?;
    println!(
        "fitted on {} documents, {} features",
        texts.len(),
        model.vocab_size()
    );

    // strongest signed weights should be the planted keywords
    let mut ranked: Vec<usize> = (0..model.vocab_size()).collect();
    ranked.sort_by(|&a, &b| model.weights[b].partial_cmp(&model.weights[a]).unwrap());
    let show = |i: usize| format!("{} ({:+.2})", model.term(i), model.weights[i]);
    println!(
        "most toxic terms   {}",
        ranked[..3]
            .iter()
            .map(|&i| show(i))
            .collect::<Vec<_>>()
            .join(", ")
    );
    let tail = &ranked[ranked.len() - 3..];
    println!(
        "most benign terms  {}",
        tail.iter().map(|&i| show(i)).collect::<Vec<_>>().join(", ")
    );

    let sample = "honestly this idiot post is garbage";
    let sparse = model.transform(sample);
    println!("\n{sample:?}");
    for (i, v) in &sparse {
        println!(
            "  {:<10} tfidf {v:.3}  weight {:+.2}",
            model.term(*i),
            model.weights[*i]
        );
    }
    let (label, p) = model.predict(sample);
    println!("  label {label} p(toxic)={p:.4}");

    let test_texts: Vec<&str> = test_items.iter().map(|(t, _)| t.as_str()).collect();
    let test_labels: Vec<u8> = test_items.iter().map(|(_, l)| *l).collect();
    let report = baseline_evaluate(&model, &test_texts, &test_labels)?;
    println!(
        "\ntest: precision={} recall={} accuracy={:.4}",
        report
            .precision
            .map(|v| format!("{v:.4}"))
            .unwrap_or_default(),
        report.recall.map(|v| format!("{v:.4}")).unwrap_or_default(),
        report.accuracy
    );
    Ok(())
}
