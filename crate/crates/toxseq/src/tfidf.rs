//! TF-IDF features plus a logistic-regression classifier: the bag-of-words
//! baseline the sequence model is compared against.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};
use crate::text::tokenize;
use crate::train::{class_weights, ClassWeighting};

/// Sorted `(term index, value)` pairs; absent indices are zero.
pub type SparseVector = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    pub df: Vec<usize>,
    pub idf: Vec<f64>,
    pub num_docs: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl TfidfModel {
    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// tf·idf vector for one text, L2-normalized. Out-of-vocabulary tokens are
    /// ignored; a text with no in-vocabulary tokens maps to the zero vector.
    /// (The raw-count / document-length tf scale cancels under normalization,
    /// so OOV tokens affect nothing.)
    pub fn transform(&self, text: &str) -> SparseVector {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Vec::new();
        }
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for t in &tokens {
            if let Some(&i) = self.index.get(t.as_str()) {
                *counts.entry(i).or_insert(0) += 1;
            }
        }
        let len = tokens.len() as f64;
        let mut v: SparseVector = counts
            .into_iter()
            .map(|(i, c)| (i, c as f64 / len * self.idf[i]))
            .collect();
        v.sort_unstable_by_key(|&(i, _)| i);
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, x) in &mut v {
                *x /= norm;
            }
        }
        v
    }

    /// σ(w·x + b) for the toxic class.
    pub fn predict_proba(&self, text: &str) -> f64 {
        let x = self.transform(text);
        let z: f64 = self.bias + x.iter().map(|&(i, v)| self.weights[i] * v).sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    }

    /// (label, p_toxic); label is 1 iff p ≥ 0.5.
    pub fn predict(&self, text: &str) -> (u8, f64) {
        let p = self.predict_proba(text);
        (u8::from(p >= 0.5), p)
    }
}

/// Builds the vocabulary (rank by corpus frequency, lexicographic tie-break,
/// optionally capped) and returns the model skeleton plus one vector per
/// document. Classifier weights start at zero.
pub fn tfidf_fit_transform<I, S>(
    corpus: I,
    max_features: Option<usize>,
) -> Result<(TfidfModel, Vec<SparseVector>)>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let docs: Vec<Vec<String>> = corpus.into_iter().map(|d| tokenize(d.as_ref())).collect();
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    let mut df_map: HashMap<&str, usize> = HashMap::new();
    for doc in &docs {
        for t in doc {
            *freq.entry(t).or_insert(0) += 1;
        }
        let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df_map.entry(t).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if let Some(cap) = max_features {
        ranked.truncate(cap);
    }

    let terms: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
    let index: HashMap<String, usize> = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    let df: Vec<usize> = ranked.iter().map(|(t, _)| df_map[t]).collect();
    let n = docs.len();
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| ((1 + n) as f64 / (1 + d) as f64).ln() + 1.0)
        .collect();

    let model = TfidfModel {
        weights: vec![0.0; terms.len()],
        bias: 0.0,
        terms,
        index,
        df,
        idf,
        num_docs: n,
    };
    let vectors = docs
        .iter()
        .map(|doc| {
            // re-joining keeps a single transform code path
            model.transform(&doc.join(" "))
        })
        .collect();
    Ok((model, vectors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub class_weighting: ClassWeighting,
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.5,
            class_weighting: ClassWeighting::InverseFrequency,
            max_features: None,
            seed: 42,
        }
    }
}

/// Fits the logistic layer by mini-batch gradient descent on (optionally
/// class-weighted) cross-entropy, reusing the tape for gradients.
pub fn baseline_fit<S: AsRef<str>>(
    texts: &[S],
    labels: &[u8],
    config: &BaselineConfig,
) -> Result<TfidfModel> {
    if texts.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} texts but {} labels",
            texts.len(),
            labels.len()
        )));
    }
    if config.learning_rate <= 0.0 || config.batch_size == 0 {
        return Err(Error::Config("bad baseline settings".into()));
    }
    for &l in labels {
        if l > 1 {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                classes: 2,
            });
        }
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::SingleClass(labels.first().copied().unwrap_or(0)));
    }
    let (mut model, vectors) = tfidf_fit_transform(texts, config.max_features)?;
    let cw = class_weights(labels, config.class_weighting)?;
    let dim = model.vocab_size();

    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let mut dense = vec![0.0; chunk.len() * dim];
            let mut batch_labels = Vec::with_capacity(chunk.len());
            for (row, &i) in chunk.iter().enumerate() {
                for &(j, v) in &vectors[i] {
                    dense[row * dim + j] = v;
                }
                batch_labels.push(labels[i] as usize);
            }
            let mut tape = Tape::new();
            let x = tape.constant(vec![chunk.len(), dim], dense);
            let w = tape.leaf(&Tensor::new(vec![dim, 1], model.weights.clone()).with_grad());
            let b = tape.leaf(&Tensor::new(vec![1], vec![model.bias]).with_grad());
            let z = tape.matmul(x, w)?;
            let z = tape.add_bias(z, b)?;
            let p = tape.sigmoid(z);
            let ones = tape.constant(vec![chunk.len(), 1], vec![1.0; chunk.len()]);
            let neg_p = tape.scale(p, -1.0);
            let q = tape.add(ones, neg_p)?;
            let probs = tape.concat(&[q, p], 1)?;
            let loss = tape.cross_entropy_weighted(probs, &batch_labels, Some(&cw))?;
            tape.backward(loss)?;
            let gw = tape.grad(w).expect("weight gradient");
            let gb = tape.grad(b).expect("bias gradient");
            for (wi, gi) in model.weights.iter_mut().zip(gw) {
                *wi -= config.learning_rate * gi;
            }
            model.bias -= config.learning_rate * gb[0];
        }
    }
    Ok(model)
}

/// Threshold-0.5 metrics of a fitted baseline over a labeled set.
pub fn baseline_evaluate<S: AsRef<str>>(
    model: &TfidfModel,
    texts: &[S],
    labels: &[u8],
) -> Result<MetricsReport> {
    let preds: Vec<u8> = texts.iter().map(|t| model.predict(t.as_ref()).0).collect();
    evaluate(&preds, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ubiquitous_term_has_idf_one() {
        let (m, _) = tfidf_fit_transform(["a b", "a c", "a d"], None).unwrap();
        let i = m.term_index("a").unwrap();
        assert_eq!(m.idf[i], 1.0);
        assert_eq!(m.df[i], 3);
    }

    #[test]
    fn two_document_idf_formula() {
        let (m, _) = tfidf_fit_transform(["a b", "a"], None).unwrap();
        let b = m.term_index("b").unwrap();
        assert!((m.idf[b] - 1.4054651081081644).abs() < 1e-15);
        assert_eq!(m.df[b], 1);
        assert_eq!(m.num_docs, 2);
    }

    #[test]
    fn vocabulary_rank_and_cap() {
        // freqs: c=3, a=2, b=2 -> ties a<b
        let (m, _) = tfidf_fit_transform(["c c a b", "c a b"], None).unwrap();
        assert_eq!(m.term(0), "c");
        assert_eq!(m.term(1), "a");
        assert_eq!(m.term(2), "b");

        let (capped, _) = tfidf_fit_transform(["c c a b", "c a b"], Some(2)).unwrap();
        assert_eq!(capped.vocab_size(), 2);
        assert_eq!(capped.term_index("b"), None);
    }

    #[test]
    fn vectors_are_unit_norm_or_zero() {
        let (m, vecs) = tfidf_fit_transform(["a b c", "b c d", "d e"], None).unwrap();
        for v in &vecs {
            let norm: f64 = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert!(m.transform("zzz qqq").is_empty());
        assert!(m.transform("").is_empty());
    }

    #[test]
    fn oov_tokens_change_nothing() {
        let (m, _) = tfidf_fit_transform(["a b", "a c"], None).unwrap();
        let clean = m.transform("a b");
        let noisy = m.transform("a zzz b qqq");
        assert_eq!(clean.len(), noisy.len());
        for ((i1, v1), (i2, v2)) in clean.iter().zip(&noisy) {
            assert_eq!(i1, i2);
            assert!((v1 - v2).abs() < 1e-12);
        }
    }

    #[test]
    fn corpus_order_invariance() {
        let docs = ["a b c", "c d", "a a e", "b d e"];
        let mut reversed = docs;
        reversed.reverse();
        let (m1, _) = tfidf_fit_transform(docs, None).unwrap();
        let (m2, _) = tfidf_fit_transform(reversed, None).unwrap();
        assert_eq!(m1, m2);
        for d in docs {
            assert_eq!(m1.transform(d), m2.transform(d));
        }
    }

    #[test]
    fn empty_corpus_errors() {
        let none: [&str; 0] = [];
        assert!(matches!(
            tfidf_fit_transform(none, None),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn zero_weights_follow_bias_sign() {
        let (mut m, _) = tfidf_fit_transform(["a", "b"], None).unwrap();
        m.bias = 1.0;
        assert_eq!(m.predict("a").0, 1);
        assert_eq!(m.predict("b").0, 1);
        m.bias = -1.0;
        assert_eq!(m.predict("a").0, 0);
        // ≥ rule at the exact boundary
        m.bias = 0.0;
        assert_eq!(m.predict("a"), (1, 0.5));
    }

    fn keyword_corpus() -> (Vec<String>, Vec<u8>) {
        let mut texts = Vec::new();
        let mut labels = Vec::new();
        let fillers = [
            "nice day today",
            "what a game",
            "see you soon",
            "thanks a lot",
        ];
        for i in 0..40 {
            let f = fillers[i % fillers.len()];
            if i % 2 == 0 {
                texts.push(format!("{f} friend"));
                labels.push(0);
            } else {
                texts.push(format!("{f} bad"));
                labels.push(1);
            }
        }
        (texts, labels)
    }

    #[test]
    fn separable_keyword_reaches_full_accuracy() {
        let (texts, labels) = keyword_corpus();
        let model = baseline_fit(&texts, &labels, &BaselineConfig::default()).unwrap();
        let report = baseline_evaluate(&model, &texts, &labels).unwrap();
        assert_eq!(report.accuracy, 1.0);
        let bad = model.term_index("bad").unwrap();
        let friend = model.term_index("friend").unwrap();
        assert!(model.weights[bad] > model.weights[friend]);
    }

    #[test]
    fn same_seed_same_weights() {
        let (texts, labels) = keyword_corpus();
        let m1 = baseline_fit(&texts, &labels, &BaselineConfig::default()).unwrap();
        let m2 = baseline_fit(&texts, &labels, &BaselineConfig::default()).unwrap();
        let bits = |m: &TfidfModel| -> Vec<u64> {
            m.weights
                .iter()
                .chain(std::iter::once(&m.bias))
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(&m1), bits(&m2));
        let m3 = baseline_fit(
            &texts,
            &labels,
            &BaselineConfig {
                seed: 7,
                ..BaselineConfig::default()
            },
        )
        .unwrap();
        assert_ne!(bits(&m1), bits(&m3));
    }

    #[test]
    fn single_class_fit_is_rejected() {
        let texts = ["a", "b", "c"];
        assert!(matches!(
            baseline_fit(&texts, &[1, 1, 1], &BaselineConfig::default()),
            Err(Error::SingleClass(1))
        ));
        assert!(matches!(
            baseline_fit(&texts, &[0, 0, 0], &BaselineConfig::default()),
            Err(Error::SingleClass(0))
        ));
    }

    #[test]
    fn label_and_length_validation() {
        let texts = ["a", "b"];
        assert!(baseline_fit(&texts, &[0], &BaselineConfig::default()).is_err());
        assert!(matches!(
            baseline_fit(&texts, &[0, 2], &BaselineConfig::default()),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
    }
}
