//! Command-line front end.
//!
//! Results go to stdout, diagnostics to stderr, and the exit code reports the
//! failure class: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric divergence.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{comparison_report, MetricsReport};
use crate::model::Model;
use crate::text::{encode, load_jigsaw_csv, split, DatasetRecord, EncodedExample, Vocab};
use crate::tfidf::{baseline_evaluate, baseline_fit};
use crate::train::{evaluate_model, fit, pretrain_mlm};

#[derive(Parser)]
#[command(
    name = "toxseq",
    version,
    about = "Toxic-comment classifier: mini-BERT encoder + BiLSTM head, trained from scratch"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Config file of key=value lines (dotted keys, e.g. train.batch_size=16)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single config keys, e.g. --set encoder.num_layers=1
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed for every stochastic step
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from a corpus
    BuildVocab {
        #[command(flatten)]
        common: Common,
        /// Jigsaw-style CSV corpus (id, comment_text, target)
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Plain-text corpus, one document per line
        #[arg(long)]
        text: Option<PathBuf>,
        /// Output vocabulary file, one token per line
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the encoder with masked-token prediction
    PretrainMlm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        text: Option<PathBuf>,
        /// Vocabulary file from build-vocab
        #[arg(long)]
        vocab: PathBuf,
        /// Output checkpoint
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the classifier on a labeled CSV
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Start from an existing checkpoint (e.g. MLM-pretrained)
        #[arg(long)]
        init: Option<PathBuf>,
        /// Output checkpoint
        #[arg(long)]
        out: PathBuf,
        /// Also write the epoch log to this file
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on labeled data
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Which stratified part of the CSV to score
        #[arg(long, value_enum, default_value_t = Part::All)]
        split: Part,
    },
    /// Classify comments, one per input line
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Input file; omit to read standard input
        #[arg(long)]
        input: Option<PathBuf>,
        /// Decision threshold on p(toxic)
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score the neural model against the TF-IDF baseline on one split
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Write the machine-readable report here as CSV
        #[arg(long)]
        report_csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Part {
    All,
    Train,
    Val,
    Test,
}

/// Parses and dispatches. All streams are injected so tests can capture them.
pub fn run<I, T>(
    args: I,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{rendered}");
                    0
                }
                _ => {
                    let _ = write!(stderr, "{rendered}");
                    1
                }
            };
        }
    };
    match dispatch(cli.command, stdin, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(
    command: Command,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    match command {
        Command::BuildVocab {
            common,
            csv,
            text,
            out,
        } => build_vocab(&common, csv.as_deref(), text.as_deref(), &out, stderr),
        Command::PretrainMlm {
            common,
            csv,
            text,
            vocab,
            out,
        } => pretrain(
            &common,
            csv.as_deref(),
            text.as_deref(),
            &vocab,
            &out,
            stdout,
            stderr,
        ),
        Command::Train {
            common,
            csv,
            vocab,
            init,
            out,
            log,
        } => train(
            &common,
            &csv,
            &vocab,
            init.as_deref(),
            &out,
            log.as_deref(),
            stdout,
            stderr,
        ),
        Command::Eval {
            common,
            checkpoint,
            csv,
            vocab,
            split,
        } => eval(&common, &checkpoint, &csv, &vocab, split, stdout, stderr),
        Command::Predict {
            common,
            checkpoint,
            vocab,
            input,
            threshold,
        } => predict(
            &common,
            &checkpoint,
            &vocab,
            input.as_deref(),
            threshold,
            stdin,
            stdout,
        ),
        Command::Compare {
            common,
            checkpoint,
            csv,
            vocab,
            report_csv,
        } => compare(
            &common,
            &checkpoint,
            &csv,
            &vocab,
            report_csv.as_deref(),
            stdout,
            stderr,
        ),
    }
}

/// file config → --set overrides → --seed, later layers winning.
fn assemble(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for pair in &common.sets {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set needs KEY=VALUE, got '{pair}'")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        config.set("seed", &seed.to_string())?;
    }
    config.validate()?;
    Ok(config)
}

fn corpus_texts(csv: Option<&Path>, text: Option<&Path>) -> Result<Vec<String>> {
    match (csv, text) {
        (Some(path), None) => Ok(load_jigsaw_csv(path)?
            .into_iter()
            .map(|r| r.comment_text)
            .collect()),
        (None, Some(path)) => {
            let content = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
            Ok(content
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect())
        }
        _ => Err(Error::Usage(
            "exactly one of --csv or --text is required".into(),
        )),
    }
}

fn encode_records(
    records: &[DatasetRecord],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<EncodedExample>> {
    records
        .iter()
        .map(|r| {
            let mut ex = encode(&r.comment_text, vocab, max_len)?;
            ex.label = Some(r.label);
            Ok(ex)
        })
        .collect()
}

fn check_vocab_fit(model: &Model, vocab: &Vocab) -> Result<()> {
    if model.encoder_config.vocab_size != vocab.size() {
        return Err(Error::Vocab(format!(
            "checkpoint expects a vocabulary of {} tokens, file has {}",
            model.encoder_config.vocab_size,
            vocab.size()
        )));
    }
    Ok(())
}

fn atomic_write(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content).map_err(|e| Error::file(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::file(path, e))?;
    Ok(())
}

fn write_metrics(out: &mut dyn Write, m: &MetricsReport) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let c = &m.confusion;
    writeln!(out, "n={}", c.n())?;
    writeln!(out, "tp={}", c.true_pos)?;
    writeln!(out, "fp={}", c.false_pos)?;
    writeln!(out, "fn={}", c.false_neg)?;
    writeln!(out, "tn={}", c.true_neg)?;
    writeln!(out, "precision={}", opt(m.precision))?;
    writeln!(out, "recall={}", opt(m.recall))?;
    writeln!(out, "accuracy={:.6}", m.accuracy)?;
    Ok(())
}

fn build_vocab(
    common: &Common,
    csv: Option<&Path>,
    text: Option<&Path>,
    out: &Path,
    stderr: &mut dyn Write,
) -> Result<()> {
    let config = assemble(common)?;
    let texts = corpus_texts(csv, text)?;
    let vocab = Vocab::build(
        texts.iter().map(String::as_str),
        config.vocab_max_size,
        config.vocab_min_freq,
    )?;
    vocab.save(out)?;
    writeln!(
        stderr,
        "vocabulary of {} tokens ({} documents) written to {}",
        vocab.size(),
        texts.len(),
        out.display()
    )?;
    Ok(())
}

fn pretrain(
    common: &Common,
    csv: Option<&Path>,
    text: Option<&Path>,
    vocab_path: &Path,
    out: &Path,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    let config = assemble(common)?;
    let vocab = Vocab::load(vocab_path)?;
    let texts = corpus_texts(csv, text)?;
    if texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut encoder_config = config.encoder;
    encoder_config.vocab_size = vocab.size();
    let max_len = encoder_config.max_len;
    let corpus: Vec<EncodedExample> = texts
        .iter()
        .map(|t| encode(t, &vocab, max_len))
        .collect::<Result<_>>()?;

    let mut model = Model::init(encoder_config.clone(), config.head.clone(), config.seed)?;
    writeln!(
        stderr,
        "pretraining on {} documents for {} steps",
        corpus.len(),
        config.pretrain.steps
    )?;
    let losses = pretrain_mlm(
        &mut model.encoder,
        &encoder_config,
        &corpus,
        &vocab,
        &config.pretrain,
    )?;
    writeln!(stdout, "step,mlm_loss")?;
    for (i, loss) in losses.iter().enumerate() {
        writeln!(stdout, "{i},{loss:.6}")?;
    }
    save_checkpoint(&model, out)?;
    writeln!(stderr, "checkpoint written to {}", out.display())?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    common: &Common,
    csv: &Path,
    vocab_path: &Path,
    init: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    let config = assemble(common)?;
    let vocab = Vocab::load(vocab_path)?;
    let records = load_jigsaw_csv(csv)?;
    let (train_recs, val_recs, test_recs) = split(records, config.split, config.seed)?;
    writeln!(
        stderr,
        "split sizes: train {}, val {}, test {}",
        train_recs.len(),
        val_recs.len(),
        test_recs.len()
    )?;

    let mut model = match init {
        Some(path) => {
            let model = load_checkpoint(path)?;
            check_vocab_fit(&model, &vocab)?;
            writeln!(stderr, "starting from {}", path.display())?;
            model
        }
        None => {
            let mut encoder_config = config.encoder.clone();
            encoder_config.vocab_size = vocab.size();
            Model::init(encoder_config, config.head.clone(), config.seed)?
        }
    };
    let max_len = model.encoder_config.max_len;
    let train_ex = encode_records(&train_recs, &vocab, max_len)?;
    let val_ex = encode_records(&val_recs, &vocab, max_len)?;

    let report = fit(&mut model, &train_ex, &val_ex, &config.train)?;
    let log_text = report.log_lines();
    write!(stdout, "{log_text}")?;
    if let Some(path) = log {
        atomic_write(path, &log_text)?;
    }
    match report.best_epoch {
        Some(best) => writeln!(
            stderr,
            "best epoch {best} (val_loss {:.6}) after {:.1}s",
            report.epochs[best].val_loss, report.wall_seconds
        )?,
        None => writeln!(stderr, "no epochs ran")?,
    }
    save_checkpoint(&model, out)?;
    writeln!(stderr, "checkpoint written to {}", out.display())?;
    Ok(())
}

fn select_part(
    records: Vec<DatasetRecord>,
    part: Part,
    config: &RunConfig,
) -> Result<Vec<DatasetRecord>> {
    if part == Part::All {
        return Ok(records);
    }
    let (train_recs, val_recs, test_recs) = split(records, config.split, config.seed)?;
    Ok(match part {
        Part::Train => train_recs,
        Part::Val => val_recs,
        Part::Test => test_recs,
        Part::All => unreachable!(),
    })
}

fn eval(
    common: &Common,
    checkpoint: &Path,
    csv: &Path,
    vocab_path: &Path,
    part: Part,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    let config = assemble(common)?;
    let model = load_checkpoint(checkpoint)?;
    let vocab = Vocab::load(vocab_path)?;
    check_vocab_fit(&model, &vocab)?;
    let records = select_part(load_jigsaw_csv(csv)?, part, &config)?;
    writeln!(stderr, "scoring {} records", records.len())?;
    let examples = encode_records(&records, &vocab, model.encoder_config.max_len)?;
    let (nll, metrics) = evaluate_model(&model, &examples)?;
    writeln!(stdout, "nll={nll:.6}")?;
    write_metrics(stdout, &metrics)?;
    Ok(())
}

fn predict(
    common: &Common,
    checkpoint: &Path,
    vocab_path: &Path,
    input: Option<&Path>,
    threshold: Option<f64>,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut config = assemble(common)?;
    if let Some(t) = threshold {
        config.set("threshold", &t.to_string())?;
        config.validate()?;
    }
    let model = load_checkpoint(checkpoint)?;
    let vocab = Vocab::load(vocab_path)?;
    check_vocab_fit(&model, &vocab)?;
    let max_len = model.encoder_config.max_len;

    let classify = |line: &str, out: &mut dyn Write| -> Result<()> {
        let ex = encode(line, &vocab, max_len)?;
        let (label, p) = model.predict(&ex, config.threshold)?;
        writeln!(out, "{label}\t{p:.6}")?;
        Ok(())
    };
    match input {
        Some(path) => {
            let content = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
            for line in content.lines() {
                classify(line, stdout)?;
            }
        }
        None => {
            for line in stdin.lines() {
                let line = line?;
                classify(&line, stdout)?;
            }
        }
    }
    Ok(())
}

fn compare(
    common: &Common,
    checkpoint: &Path,
    csv: &Path,
    vocab_path: &Path,
    report_csv: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    let config = assemble(common)?;
    let model = load_checkpoint(checkpoint)?;
    let vocab = Vocab::load(vocab_path)?;
    check_vocab_fit(&model, &vocab)?;
    let records = load_jigsaw_csv(csv)?;
    let (train_recs, _, test_recs) = split(records, config.split, config.seed)?;
    writeln!(
        stderr,
        "baseline trains on {} records, both models score {}",
        train_recs.len(),
        test_recs.len()
    )?;

    let train_texts: Vec<&str> = train_recs.iter().map(|r| r.comment_text.as_str()).collect();
    let train_labels: Vec<u8> = train_recs.iter().map(|r| r.label).collect();
    let baseline = baseline_fit(&train_texts, &train_labels, &config.baseline)?;
    let test_texts: Vec<&str> = test_recs.iter().map(|r| r.comment_text.as_str()).collect();
    let test_labels: Vec<u8> = test_recs.iter().map(|r| r.label).collect();
    let baseline_metrics = baseline_evaluate(&baseline, &test_texts, &test_labels)?;

    let examples = encode_records(&test_recs, &vocab, model.encoder_config.max_len)?;
    let (_, neural_metrics) = evaluate_model(&model, &examples)?;

    let rows = vec![
        ("tfidf+logistic".to_string(), baseline_metrics),
        ("bert+bilstm".to_string(), neural_metrics),
    ];
    let (table, csv_text) = comparison_report(&rows);
    write!(stdout, "{table}")?;
    if let Some(path) = report_csv {
        atomic_write(path, &csv_text)?;
        writeln!(stderr, "report written to {}", path.display())?;
    }
    Ok(())
}
