//! `mixlm`: file-mediated pipelines for training component models, fitting
//! interpolation weights, merging, pruning and scoring.

mod io;

use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mixlm_core::counts::count_ngrams;
use mixlm_core::evaluate::{perplexity_encoded, EncodedText};
use mixlm_core::interp::{write_weights, DynamicInterpolation, Strategy};
use mixlm_core::lm::{estimate_good_turing, write_arpa, GoodTuringConfig};
use mixlm_core::optimize::{fit_weights, FitOptions, Init};
use mixlm_core::prune::entropy_prune;
use mixlm_core::static_merge::{gap_with_merged, merge_static};
use mixlm_core::vocab::{build_vocab, Vocabulary};

use crate::io::{load_components, load_weights, open, read_model, read_vocab, write_atomic};

#[derive(Parser)]
#[command(
    name = "mixlm",
    version,
    about = "Interpolated backoff n-gram language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from one or more corpora.
    Vocab(VocabArgs),
    /// Train a Good-Turing backoff model on one corpus.
    Train(TrainArgs),
    /// Fit interpolation weights on validation text.
    Fit(FitArgs),
    /// Collapse interpolated components into one backoff model.
    Merge(MergeArgs),
    /// Entropy-prune a backoff model.
    Prune(PruneArgs),
    /// Perplexity of a model or a dynamic mixture, optionally against a merged model.
    Ppl(PplArgs),
}

#[derive(Args)]
struct VocabArgs {
    /// Whitespace-tokenized corpora, one sentence per line.
    #[arg(required = true)]
    corpora: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_count: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    corpus: PathBuf,
    #[arg(long)]
    order: usize,
    /// Minimum counts per order, e.g. 1,2,3,5; the unigram threshold must be 1.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<u64>>,
    /// Shared vocabulary; without it the corpus's own word list is used.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Component name stored in the model; defaults to the corpus file stem.
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the n-gram count table, needed for count merging.
    #[arg(long)]
    counts_out: Option<PathBuf>,
}

#[derive(Args)]
struct ComponentArgs {
    /// Component model in ARPA format; repeat once per component.
    #[arg(long = "lm", required = true)]
    models: Vec<PathBuf>,
    /// Count table per component, in the same order as --lm.
    #[arg(long = "counts")]
    counts: Vec<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    components: ComponentArgs,
    #[arg(long)]
    validation: PathBuf,
    /// li, cm or bi.
    #[arg(long, default_value = "li")]
    strategy: Strategy,
    /// Starting weights: a weights file or `uniform`.
    #[arg(long, default_value = "uniform")]
    init: String,
    #[arg(long, default_value_t = FitOptions::default().restarts)]
    restarts: usize,
    #[arg(long, default_value_t = FitOptions::default().seed)]
    seed: u64,
    #[arg(long, default_value_t = FitOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = FitOptions::default().max_iterations)]
    max_iterations: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration objective trace of the best restart.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    #[command(flatten)]
    components: ComponentArgs,
    #[arg(long, default_value = "li")]
    strategy: Strategy,
    /// A weights file or `uniform`.
    #[arg(long)]
    weights: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    model: PathBuf,
    /// Relative-entropy threshold in nats; `inf` keeps only unigrams.
    #[arg(long)]
    prune_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PplArgs {
    #[command(flatten)]
    components: ComponentArgs,
    #[arg(long)]
    text: PathBuf,
    /// Score the dynamic mixture of the --lm models with this strategy.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long, default_value = "uniform")]
    weights: String,
    /// Merged model to compare the dynamic mixture against.
    #[arg(long, conflicts_with = "gap")]
    merged: Option<PathBuf>,
    /// Merge in memory and report the dynamic/static gap.
    #[arg(long)]
    gap: bool,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Vocab(a) => cmd_vocab(a),
        Command::Train(a) => cmd_train(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Merge(a) => cmd_merge(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Ppl(a) => cmd_ppl(a),
    }
}

/// Concatenates corpora, guarding against a missing final newline.
fn concatenated(paths: &[PathBuf]) -> Result<std::io::BufReader<Box<dyn Read>>> {
    let mut reader: Box<dyn Read> = Box::new(std::io::empty());
    for path in paths {
        reader = Box::new(reader.chain(open(path)?).chain(Cursor::new(b"\n")));
    }
    Ok(std::io::BufReader::new(reader))
}

fn cmd_vocab(a: VocabArgs) -> Result<()> {
    let vocab = build_vocab(concatenated(&a.corpora)?, a.min_count)?;
    write_atomic(&a.out, |w| Ok(vocab.write(w)?))?;
    println!("words\t{}", vocab.len() - 3);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let vocab = match &a.vocab {
        Some(path) => read_vocab(path)?,
        None => build_vocab(open(&a.corpus)?, 1)
            .with_context(|| format!("reading corpus {}", a.corpus.display()))?,
    };
    let vocab = Arc::new(vocab);
    let domain = match &a.domain {
        Some(d) => d.clone(),
        None => stem(&a.corpus),
    };
    let table = count_ngrams(open(&a.corpus)?, &vocab, a.order, &domain)
        .with_context(|| format!("counting {}", a.corpus.display()))?;
    let config = match a.thresholds {
        Some(t) => GoodTuringConfig::with_thresholds(t),
        None => GoodTuringConfig::unthresholded(a.order),
    };
    let lm = estimate_good_turing(&table, vocab.clone(), &config)?;
    write_atomic(&a.out, |w| Ok(write_arpa(&lm, w)?))?;
    if let Some(path) = &a.counts_out {
        write_atomic(path, |w| Ok(table.write(&vocab, w)?))?;
    }
    println!("domain\t{domain}");
    println!("total_words\t{}", table.total_words());
    for k in 1..=lm.order() {
        println!("ngram {k}\t{}", lm.num_ngrams(k));
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}

fn require_counts(strategy: Strategy, args: &ComponentArgs) -> Result<()> {
    if strategy.needs_counts() && args.counts.is_empty() {
        bail!("strategy {strategy} needs --counts for every --lm");
    }
    Ok(())
}

fn read_text(path: &Path, vocab: &Vocabulary) -> Result<EncodedText> {
    EncodedText::read(open(path)?, vocab).with_context(|| format!("reading {}", path.display()))
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    require_counts(a.strategy, &a.components)?;
    let comps = load_components(&a.components.models, &a.components.counts)?;
    let validation = read_text(&a.validation, comps.vocab())?;
    let init = match a.init.as_str() {
        "uniform" => Init::Uniform,
        spec => Init::Weights(load_weights(spec, &comps)?),
    };
    let opts = FitOptions {
        restarts: a.restarts,
        tol: a.tol,
        max_iterations: a.max_iterations,
        seed: a.seed,
    };
    let fit = fit_weights(a.strategy, &comps, &validation, &init, &opts)?;
    if !fit.converged {
        log::warn!("optimizer stopped at the iteration limit");
    }
    let names = comps.names();
    write_atomic(&a.out, |w| Ok(write_weights(&names, &fit.lambda, w)?))?;
    if let Some(path) = &a.trace {
        write_atomic(path, |w| Ok(fit.write_trace(w)?))?;
    }
    println!("strategy\t{}", a.strategy);
    for (name, l) in names.iter().zip(fit.lambda.as_slice()) {
        println!("lambda\t{name}\t{l:.6}");
    }
    println!("validation_ppl\t{:.1}", fit.validation_ppl());
    println!("validation_nll\t{:.9}", fit.validation_nll);
    println!("iterations\t{}", fit.iterations);
    println!("converged\t{}", fit.converged);
    Ok(())
}

fn cmd_merge(a: MergeArgs) -> Result<()> {
    require_counts(a.strategy, &a.components)?;
    let comps = load_components(&a.components.models, &a.components.counts)?;
    let lambda = load_weights(&a.weights, &comps)?;
    let merged = merge_static(a.strategy, &lambda, &comps)?;
    write_atomic(&a.out, |w| Ok(write_arpa(&merged.lm, w)?))?;
    for k in 1..=merged.lm.order() {
        println!("ngram {k}\t{}", merged.lm.num_ngrams(k));
    }
    println!("degenerate_backoffs\t{}", merged.degenerate_backoffs);
    Ok(())
}

fn cmd_prune(a: PruneArgs) -> Result<()> {
    let lm = read_model(&a.model, None)?;
    let (pruned, report) = entropy_prune(&lm, a.prune_threshold)?;
    write_atomic(&a.out, |w| Ok(write_arpa(&pruned, w)?))?;
    print!("{report}");
    Ok(())
}

fn cmd_ppl(a: PplArgs) -> Result<()> {
    let c = &a.components;
    let report = match (a.strategy, c.models.len()) {
        (None, 1) => {
            if a.gap || a.merged.is_some() {
                bail!("--gap and --merged need --strategy");
            }
            let lm = read_model(&c.models[0], None)?;
            let text = read_text(&a.text, lm.vocab())?;
            perplexity_encoded(&lm, &text)?.to_string()
        }
        (None, _) => bail!("scoring several models needs --strategy"),
        (Some(strategy), _) => {
            require_counts(strategy, c)?;
            let comps = load_components(&c.models, &c.counts)?;
            let lambda = load_weights(&a.weights, &comps)?;
            let text = read_text(&a.text, comps.vocab())?;
            let merged = if a.gap {
                Some(merge_static(strategy, &lambda, &comps)?.lm)
            } else {
                match &a.merged {
                    Some(path) => Some(read_model(path, Some(comps.vocab()))?),
                    None => None,
                }
            };
            match merged {
                Some(m) => gap_with_merged(strategy, &lambda, &comps, &m, &text)?.to_string(),
                None => {
                    let dynamic = DynamicInterpolation {
                        strategy,
                        lambda: &lambda,
                        comps: &comps,
                    };
                    perplexity_encoded(&dynamic, &text)?.to_string()
                }
            }
        }
    };
    print!("{report}");
    if let Some(path) = &a.out {
        write_atomic(path, |w| Ok(w.write_all(report.as_bytes())?))?;
    }
    Ok(())
}
