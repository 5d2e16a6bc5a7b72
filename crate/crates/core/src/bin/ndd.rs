//! Command-line front end: corpus generation, training, querying, evaluation.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ndd_core::corpus::{
    load_corpus_with, save_corpus, split_queries, synth_corpus, Corpus, CorpusFormat, SynthConfig,
    TransformSpec, DEFAULT_DIM,
};
use ndd_core::decision::{bayes_search, write_trace_csv, SearchConfig};
use ndd_core::distributions::{compare_fits, fit, make_histogram, Family, DEFAULT_BINS};
use ndd_core::harness::{
    emit_plots, evaluate, evaluate_votes, report_to_csv, write_report_csv, CachedNeighbors,
    EvalConfig, EvalReport, PlotPanel, DEFAULT_THRESHOLDS,
};
use ndd_core::index::{FeatureIndex, NearestNeighbor};
use ndd_core::training::{
    collect_matches, load_model, population_histograms, save_model, train, Population, TrainConfig,
    TrainedDecisionModel,
};
use ndd_core::Error;

#[derive(Parser)]
#[command(
    name = "ndd",
    version,
    about = "Near-duplicate image detection by sequential Bayesian matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a corpus of reference, noise and query images.
    Gen(GenArgs),
    /// Validate a corpus file and optionally convert it.
    Ingest(IngestArgs),
    /// Build the exact nearest-neighbour index and save it.
    BuildIndex(BuildIndexArgs),
    /// Train a decision model on the training half of the queries.
    Train(TrainArgs),
    /// Fit and rank distribution families on a file of distances.
    Fit(FitArgs),
    /// Identify a single query image.
    Query(QueryArgs),
    /// Evaluate one or more models on the test half of the queries.
    Eval(EvalArgs),
    /// Plot training-match histograms with fitted curves.
    Plot(PlotArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus file.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: CorpusFormat,
    /// L2-normalize features on load.
    #[arg(long)]
    normalize: bool,
    /// Saved index; built from the corpus when absent.
    #[arg(long)]
    index: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 200)]
    refs: usize,
    #[arg(long, default_value_t = 2000)]
    noise: usize,
    #[arg(long, default_value_t = 50)]
    feats: usize,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 0.15)]
    sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the query transformation; defaults to --seed.
    #[arg(long)]
    transform_seed: Option<u64>,
    /// Keep raw descriptors and skip clamping and normalization.
    #[arg(long)]
    diagnostic: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: CorpusFormat,
}

#[derive(Args)]
struct IngestArgs {
    input: PathBuf,
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: CorpusFormat,
    #[arg(long)]
    normalize: bool,
    /// Write the validated corpus here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "binary", value_parser = parse_format)]
    out_format: CorpusFormat,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: CorpusFormat,
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value = "chi", value_parser = parse_family)]
    family_correct: Family,
    #[arg(long, default_value = "chi", value_parser = parse_family)]
    family_incorrect: Family,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Model file (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Whitespace-separated distances; `#` starts a comment.
    distances: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_family)]
    families: Vec<Family>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    model: PathBuf,
    /// Query image id.
    #[arg(long)]
    query: String,
    #[arg(long, default_value_t = 0.999)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_samples: Option<usize>,
    #[arg(long)]
    trace_csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Model files; repeat or separate with commas.
    #[arg(long, required = true, value_delimiter = ',')]
    model: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
    thresholds: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_samples: Option<usize>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for training-histogram plots of the first model.
    #[arg(long)]
    plots: Option<PathBuf>,
    /// Also run the vote baseline over all query features.
    #[arg(long)]
    votes: bool,
}

#[derive(Args)]
struct PlotArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_family, default_value = "chi,normal")]
    families: Vec<Family>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn open_corpus(args: &CorpusArgs) -> ndd_core::Result<(Corpus, FeatureIndex)> {
    let corpus = load_corpus_with(&args.corpus, args.format, args.normalize)?;
    let index = match &args.index {
        Some(path) => FeatureIndex::load(path)?,
        None => FeatureIndex::build(&corpus)?,
    };
    if index.dim() != corpus.dim() {
        return Err(Error::Validation(format!(
            "index dimension {} does not match corpus dimension {}",
            index.dim(),
            corpus.dim()
        )));
    }
    Ok((corpus, index))
}

fn run_gen(a: GenArgs) -> ndd_core::Result<()> {
    let config = SynthConfig {
        n_reference: a.refs,
        n_noise: a.noise,
        features_per_image: a.feats,
        dim: a.dim,
        transform: TransformSpec {
            diagnostic: a.diagnostic,
            ..TransformSpec::new(a.sigma, a.dropout, a.transform_seed.unwrap_or(a.seed))
        },
        seed: a.seed,
    };
    let corpus = synth_corpus(&config)?;
    save_corpus(&corpus, &a.out, a.format)?;
    println!(
        "wrote {} images ({} queries) to {}",
        corpus.images().len(),
        corpus.ground_truth().len(),
        a.out.display()
    );
    Ok(())
}

fn run_ingest(a: IngestArgs) -> ndd_core::Result<()> {
    let corpus = load_corpus_with(&a.input, a.format, a.normalize)?;
    let count = |role| corpus.images_with_role(role).count();
    println!(
        "dim {}: {} reference, {} noise, {} query images; {} indexed features",
        corpus.dim(),
        count(ndd_core::corpus::Role::Reference),
        count(ndd_core::corpus::Role::Noise),
        count(ndd_core::corpus::Role::Query),
        corpus.indexed_feature_count()
    );
    if let Some(out) = a.out {
        save_corpus(&corpus, &out, a.out_format)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run_build_index(a: BuildIndexArgs) -> ndd_core::Result<()> {
    let corpus = load_corpus_with(&a.corpus, a.format, a.normalize)?;
    let index = FeatureIndex::build(&corpus)?;
    index.save(&a.out)?;
    println!("indexed {} features to {}", index.len(), a.out.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> ndd_core::Result<()> {
    let (corpus, index) = open_corpus(&a.corpus)?;
    let (train_ids, _) = split_queries(&corpus);
    let config = TrainConfig {
        family_correct: a.family_correct,
        family_incorrect: a.family_incorrect,
        nbins: a.bins,
        epsilon: a.epsilon,
    };
    let model = train(&corpus, &train_ids, &index, &config)?;
    save_model(&model, &a.out)?;
    println!(
        "trained {} on {} queries: {} correct, {} incorrect matches, prior {:.6}",
        model.label(),
        train_ids.len(),
        model.train_stats.n_correct,
        model.train_stats.n_incorrect,
        model.prior
    );
    println!("population,family,sse");
    for entry in &model.fit_report {
        println!(
            "{},{},{:.6e}",
            entry.population.name(),
            entry.family,
            entry.sse
        );
    }
    Ok(())
}

fn read_distances(path: &Path) -> ndd_core::Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let v = tok.parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad distance '{tok}'"),
            })?;
            out.push(v);
        }
    }
    Ok(out)
}

fn run_fit(a: FitArgs) -> ndd_core::Result<()> {
    let samples = read_distances(&a.distances)?;
    let hist = make_histogram(&samples, a.bins, None)?;
    let families = if a.families.is_empty() {
        Family::ALL.to_vec()
    } else {
        a.families
    };
    println!("rank,family,param1,param2,sse");
    for (rank, m) in compare_fits(&hist, &families)?.iter().enumerate() {
        println!(
            "{},{},{:.9e},{:.9e},{:.9e}",
            rank + 1,
            m.family,
            m.params[0],
            m.params[1],
            m.sse
        );
    }
    Ok(())
}

fn run_query(a: QueryArgs) -> ndd_core::Result<()> {
    let (corpus, index) = open_corpus(&a.corpus)?;
    let model = load_model(&a.model)?;
    let query = corpus
        .image(&a.query)
        .ok_or_else(|| Error::Argument(format!("unknown image '{}'", a.query)))?;
    let config = SearchConfig {
        threshold: a.threshold,
        max_samples: a.max_samples,
        seed: a.seed,
    };
    let decision = bayes_search(query, &index, &model, &config)?;
    let answer = decision.matched_image.as_deref().unwrap_or("-");
    println!(
        "{} {} posterior {:.9} after {} samples",
        if decision.decided {
            "decided"
        } else {
            "undecided"
        },
        answer,
        decision.posterior,
        decision.samples_used
    );
    if let Some(truth) = corpus.truth_of(&a.query) {
        println!(
            "ground truth {truth}: {}",
            if truth == answer { "correct" } else { "wrong" }
        );
    }
    let stdout = io::stdout();
    write_trace_csv(&decision, &mut stdout.lock())?;
    if let Some(path) = a.trace_csv {
        let mut file = io::BufWriter::new(fs::File::create(path)?);
        write_trace_csv(&decision, &mut file)?;
        file.flush()?;
    }
    Ok(())
}

/// Histogram panels of the model's training matches, one per population and family.
fn training_panels(
    corpus: &Corpus,
    model: &TrainedDecisionModel,
    nn: &dyn NearestNeighbor,
    families: &[Family],
    bins: usize,
) -> ndd_core::Result<Vec<PlotPanel>> {
    let samples = collect_matches(corpus, &model.train_stats.train_queries, nn)?;
    let (correct, incorrect) = population_histograms(&samples, bins)?;
    let mut panels = Vec::new();
    for (population, hist) in [
        (Population::Correct, correct),
        (Population::Incorrect, incorrect),
    ] {
        for &family in families {
            panels.push(PlotPanel {
                population: population.name().to_string(),
                model: fit(&hist, family)?,
                histogram: hist.clone(),
            });
        }
    }
    Ok(panels)
}

fn run_eval(a: EvalArgs) -> ndd_core::Result<()> {
    let (corpus, index) = open_corpus(&a.corpus)?;
    let models = a
        .model
        .iter()
        .map(|p| load_model(p))
        .collect::<ndd_core::Result<Vec<_>>>()?;
    let (_, test_ids) = split_queries(&corpus);
    let cached = CachedNeighbors::new(&index);
    let config = EvalConfig {
        test_queries: test_ids.clone(),
        thresholds: a.thresholds,
        seed: a.seed,
        max_samples: a.max_samples,
    };
    let mut report = EvalReport::default();
    for model in &models {
        report.extend(evaluate(&corpus, model, &cached, &config)?);
    }
    match &a.csv {
        Some(path) => {
            write_report_csv(&report, path)?;
            println!("wrote {} rows to {}", report.rows.len(), path.display());
        }
        None => print!("{}", report_to_csv(&report)),
    }
    if a.votes {
        let v = evaluate_votes(&corpus, &cached, &test_ids, None)?;
        println!(
            "vote baseline: accuracy {:.6}, mean_n {:.6}",
            v.accuracy, v.mean_n
        );
    }
    if let Some(dir) = &a.plots {
        let panels = training_panels(
            &corpus,
            &models[0],
            &cached,
            &[Family::Chi, Family::Normal],
            models[0].train_stats.nbins,
        )?;
        for path in emit_plots(&panels, dir)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn run_plot(a: PlotArgs) -> ndd_core::Result<()> {
    let (corpus, index) = open_corpus(&a.corpus)?;
    let model = load_model(&a.model)?;
    let bins = a.bins.unwrap_or(model.train_stats.nbins);
    let panels = training_panels(&corpus, &model, &index, &a.families, bins)?;
    for path in emit_plots(&panels, &a.out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 3,
        Error::Argument(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Ingest(a) => run_ingest(a),
        Command::BuildIndex(a) => run_build_index(a),
        Command::Train(a) => run_train(a),
        Command::Fit(a) => run_fit(a),
        Command::Query(a) => run_query(a),
        Command::Eval(a) => run_eval(a),
        Command::Plot(a) => run_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
