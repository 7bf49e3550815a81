//! Text pipeline: normalization, vocabulary, encoding, corpus loading,
//! stratified splitting, and masked-language-model masking.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Reserved vocabulary ids, fixed for the life of any [`Vocab`].
pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;

/// Number of reserved ids; content tokens start here.
pub const RESERVED: usize = 5;

const RESERVED_TOKENS: [&str; RESERVED] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Lowercases, strips control characters, collapses Unicode whitespace, and
/// splits punctuation into standalone tokens. Output tokens are joined by
/// single spaces; empty output is permitted.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_word = false;
    let push_sep = |out: &mut String| {
        if !out.is_empty() && !out.ends_with(' ') {
            out.push(' ');
        }
    };
    for ch in text.chars() {
        if ch.is_control() && !ch.is_whitespace() {
            continue; // removed outright, no boundary introduced
        }
        if ch.is_whitespace() {
            in_word = false;
            continue;
        }
        if ch.is_alphanumeric() {
            if !in_word {
                push_sep(&mut out);
            }
            for lc in ch.to_lowercase() {
                out.push(lc);
            }
            in_word = true;
        } else {
            // punctuation and symbols become standalone tokens
            push_sep(&mut out);
            out.push(ch);
            in_word = false;
        }
    }
    out
}

/// [`normalize`] then split on spaces.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

// ───────────────────────────────────────────────────────────────────────────
// Vocab
// ───────────────────────────────────────────────────────────────────────────

/// Token table with five reserved ids at the front.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from an iterator of raw documents. Tokens are
    /// ranked by descending frequency with lexicographic tie-break; tokens
    /// seen fewer than `min_freq` times are dropped; at most `max_size`
    /// entries total (reserved ids included).
    pub fn build<I, S>(corpus: I, max_size: usize, min_freq: usize) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if max_size <= RESERVED {
            return Err(Error::Vocab(format!(
                "max_size must exceed {RESERVED} to leave room for reserved tokens"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any_doc = false;
        for doc in corpus {
            any_doc = true;
            for tok in tokenize(doc.as_ref()) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if !any_doc {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - RESERVED);

        let mut vocab = Vocab::reserved_only();
        for (tok, _) in ranked {
            let id = vocab.id_to_token.len();
            vocab.token_to_id.insert(tok.clone(), id);
            vocab.id_to_token.push(tok);
        }
        Ok(vocab)
    }

    fn reserved_only() -> Vocab {
        let id_to_token: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            token_to_id,
            id_to_token,
        }
    }

    /// Total number of ids, reserved included.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id for a token, falling back to `[UNK]`.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED
    }

    /// One token per line, line number = id; reserved tokens first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = String::new();
        for tok in &self.id_to_token {
            buf.push_str(tok);
            buf.push('\n');
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
        f.write_all(buf.as_bytes())
            .map_err(|e| Error::file(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| Error::file(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let f = fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let mut id_to_token = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::file(path, e))?;
            id_to_token.push(line);
        }
        if id_to_token.len() < RESERVED
            || RESERVED_TOKENS
                .iter()
                .zip(&id_to_token)
                .any(|(want, got)| want != got)
        {
            return Err(Error::Vocab(format!(
                "{} does not start with the reserved tokens",
                path.display()
            )));
        }
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token '{t}'")));
            }
        }
        Ok(Vocab {
            token_to_id,
            id_to_token,
        })
    }
}

// ───────────────────────────────────────────────────────────────────────────
// Encoding
// ───────────────────────────────────────────────────────────────────────────

/// Fixed-length model input. All four index sequences share length `max_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub token_ids: Vec<usize>,
    /// All zeros for single-comment input.
    pub segment_ids: Vec<usize>,
    /// Always `0..max_len`.
    pub position_ids: Vec<usize>,
    /// Prefix of ones over real tokens, zeros over padding.
    pub attention_mask: Vec<u8>,
    pub label: Option<u8>,
}

impl EncodedExample {
    pub fn max_len(&self) -> usize {
        self.token_ids.len()
    }

    /// Count of real (unpadded) tokens, `[CLS]`/`[SEP]` included.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Positions eligible for masking: real tokens that are not `[CLS]` or
    /// `[SEP]`.
    pub fn content_positions(&self) -> Vec<usize> {
        (0..self.max_len())
            .filter(|&p| {
                self.attention_mask[p] == 1 && self.token_ids[p] != CLS && self.token_ids[p] != SEP
            })
            .collect()
    }
}

/// `[CLS]` + up to `max_len - 2` content tokens + `[SEP]`, padded with
/// `[PAD]`. Unknown tokens map to `[UNK]`; over-length text keeps its head.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> Result<EncodedExample> {
    if max_len < 3 {
        return Err(Error::Config(format!(
            "encode requires max_len >= 3, got {max_len}"
        )));
    }
    let mut token_ids = Vec::with_capacity(max_len);
    token_ids.push(CLS);
    for tok in tokenize(text).into_iter().take(max_len - 2) {
        token_ids.push(vocab.id(&tok));
    }
    token_ids.push(SEP);
    let real = token_ids.len();
    token_ids.resize(max_len, PAD);

    let mut attention_mask = vec![0u8; max_len];
    attention_mask[..real].fill(1);

    Ok(EncodedExample {
        token_ids,
        segment_ids: vec![0; max_len],
        position_ids: (0..max_len).collect(),
        attention_mask,
        label: None,
    })
}

/// Content tokens mapped back to strings, space-joined. Inverse of
/// [`encode`] up to `[UNK]` substitution and truncation.
pub fn decode_content(example: &EncodedExample, vocab: &Vocab) -> String {
    example
        .content_positions()
        .iter()
        .filter_map(|&p| vocab.token(example.token_ids[p]))
        .collect::<Vec<_>>()
        .join(" ")
}

// ───────────────────────────────────────────────────────────────────────────
// Corpus loading
// ───────────────────────────────────────────────────────────────────────────

/// One labeled comment. `label == 1` iff `target >= 0.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub comment_text: String,
    pub target: f64,
    pub label: u8,
}

impl DatasetRecord {
    pub fn new(id: impl Into<String>, comment_text: impl Into<String>, target: f64) -> Self {
        DatasetRecord {
            id: id.into(),
            comment_text: comment_text.into(),
            target,
            label: u8::from(target >= 0.5),
        }
    }
}

/// Reads a Jigsaw-style CSV: header row with at least `id`, `comment_text`
/// and `target` columns (extras ignored), RFC-4180 quoting.
pub fn load_jigsaw_csv(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));

    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = col("id")?;
    let text_col = col("comment_text")?;
    let target_col = col("target")?;

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let raw = row.get(target_col).unwrap_or("");
        let target: f64 = raw.trim().parse().map_err(|_| Error::BadTarget {
            line,
            value: raw.to_string(),
        })?;
        if !target.is_finite() || !(0.0..=1.0).contains(&target) {
            return Err(Error::BadTarget {
                line,
                value: raw.to_string(),
            });
        }
        out.push(DatasetRecord::new(
            row.get(id_col).unwrap_or(""),
            row.get(text_col).unwrap_or(""),
            target,
        ));
    }
    Ok(out)
}

// ───────────────────────────────────────────────────────────────────────────
// Splitting
// ───────────────────────────────────────────────────────────────────────────

/// Deterministic stratified split. Shuffles by `seed`, then assigns each
/// class to parts by the given ratios, preserving the class balance of the
/// input within one record per class. The three parts partition the input.
pub fn split(
    records: Vec<DatasetRecord>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<DatasetRecord>, Vec<DatasetRecord>, Vec<DatasetRecord>)> {
    let (r_train, r_val, r_test) = ratios;
    let sum = r_train + r_val + r_test;
    if r_train <= 0.0 || r_val <= 0.0 || r_test <= 0.0 || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadSplitRatios([r_train, r_val, r_test]));
    }

    let mut rng = Rng::new(seed);
    let mut shuffled = records;
    rng.shuffle(&mut shuffled);

    let mut by_class: [Vec<DatasetRecord>; 2] = [Vec::new(), Vec::new()];
    for rec in shuffled {
        by_class[usize::from(rec.label.min(1))].push(rec);
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let classes_present: Vec<u8> = (0..2u8)
        .filter(|&c| !by_class[c as usize].is_empty())
        .collect();
    for &c in &classes_present {
        let class = std::mem::take(&mut by_class[c as usize]);
        let n = class.len();
        let cut1 = ((n as f64 * r_train).round() as usize).min(n);
        let cut2 = ((n as f64 * (r_train + r_val)).round() as usize).clamp(cut1, n);
        let mut iter = class.into_iter();
        train.extend(iter.by_ref().take(cut1));
        val.extend(iter.by_ref().take(cut2 - cut1));
        test.extend(iter);
    }

    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        for &c in &classes_present {
            if !part.iter().any(|r| r.label == c) {
                return Err(Error::EmptySplitClass {
                    part: name,
                    class: c,
                });
            }
        }
    }

    // interleave classes rather than leaving parts sorted by label
    let mut train_rng = rng.split();
    let mut val_rng = rng.split();
    let mut test_rng = rng.split();
    train_rng.shuffle(&mut train);
    val_rng.shuffle(&mut val);
    test_rng.shuffle(&mut test);
    Ok((train, val, test))
}

// ───────────────────────────────────────────────────────────────────────────
// MLM masking
// ───────────────────────────────────────────────────────────────────────────

/// Fraction of content tokens selected for prediction.
pub const MLM_RATE: f64 = 0.15;

/// Target position with the id the model must recover there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlmTarget {
    pub position: usize,
    pub original_id: usize,
}

/// Applies BERT-style masking: each content token is independently selected
/// with probability [`MLM_RATE`]; of the selected, 80% become `[MASK]`, 10%
/// a random vocabulary token, 10% stay unchanged. If the independent pass
/// selects nothing, one content position is picked uniformly so every
/// example carries at least one target.
pub fn mask_for_mlm(
    example: &EncodedExample,
    vocab: &Vocab,
    rng: &mut Rng,
) -> Result<(EncodedExample, Vec<MlmTarget>)> {
    mask_for_mlm_with_rate(example, vocab, MLM_RATE, rng)
}

/// [`mask_for_mlm`] with an explicit selection rate.
pub fn mask_for_mlm_with_rate(
    example: &EncodedExample,
    vocab: &Vocab,
    rate: f64,
    rng: &mut Rng,
) -> Result<(EncodedExample, Vec<MlmTarget>)> {
    let content = example.content_positions();
    if content.is_empty() {
        return Err(Error::NoContentTokens);
    }
    let mut masked = example.clone();
    let mut targets = Vec::new();
    for &pos in &content {
        if rng.uniform() < rate {
            apply_mask(&mut masked, pos, vocab, rng, &mut targets);
        }
    }
    if targets.is_empty() {
        let pos = content[rng.below(content.len())];
        apply_mask(&mut masked, pos, vocab, rng, &mut targets);
    }
    Ok((masked, targets))
}

fn apply_mask(
    example: &mut EncodedExample,
    pos: usize,
    vocab: &Vocab,
    rng: &mut Rng,
    targets: &mut Vec<MlmTarget>,
) {
    let original_id = example.token_ids[pos];
    let roll = rng.uniform();
    if roll < 0.8 {
        example.token_ids[pos] = MASK;
    } else if roll < 0.9 && vocab.size() > RESERVED {
        example.token_ids[pos] = RESERVED + rng.below(vocab.size() - RESERVED);
    }
    // else: keep the original token; the model still predicts it
    targets.push(MlmTarget {
        position: pos,
        original_id,
    });
}
