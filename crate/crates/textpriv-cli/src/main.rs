use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use textpriv::index::{build_index, IndexParams, NeighborSearch};
use textpriv::mechanism::{OovPolicy, PrivacyBudget};
use textpriv_cli::benchrun::{attach_report, render_markdown, BenchInputs, BenchRun};
use textpriv_cli::calibrate::{calibrate_budget, par_estimate_deniability, CalibrationDoc};
use textpriv_cli::datasets::{load_crows_pairs, load_stereoset, load_token_corpus};
use textpriv_cli::glove::load_embeddings;
use textpriv_cli::pipeline::{
    file_sha256, privatize_corpus, read_corpus, write_corpus, CorpusFormat, EmbeddingInfo,
    PrivatizationConfig, RunManifest,
};
use textpriv_cli::serve::serve;
use textpriv_cli::synth::{synthetic_store, write_embedding_file, SynthParams};
use textpriv_cli::transport::{build_scorer, parse_mock_spec, InflightLimited};

/// Metric-DP text privatization and masked-LM stereotype benchmarking.
#[derive(Debug, Parser)]
#[command(name = "textpriv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Rewrite a corpus word by word under a privacy budget.
    Privatize(PrivatizeArgs),
    /// Estimate plausible-deniability statistics for candidate budgets.
    Calibrate(CalibrateArgs),
    /// Score stereotype benchmarks against a masked-LM scorer.
    Bench(BenchArgs),
    /// Serve a deterministic mock scorer over stdin/stdout.
    MockScorer(MockScorerArgs),
    /// Generate a synthetic embedding file for tests and dry runs.
    SynthEmbeddings(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Txt,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => CorpusFormat::Jsonl,
            FormatArg::Txt => CorpusFormat::Txt,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OovArg {
    Passthrough,
    Drop,
    Marker,
}

#[derive(Debug, Args)]
struct PrivatizeArgs {
    /// Embedding file (text format: `word c1 ... cd` per line).
    #[arg(long)]
    embeddings: PathBuf,
    /// Expected embedding dimension; loading fails if the file disagrees.
    #[arg(long)]
    dim: Option<usize>,
    /// Privacy budget: a positive number, or `inf` for no privatization.
    #[arg(long)]
    epsilon: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
    format: FormatArg,
    #[arg(long, value_enum, default_value_t = OovArg::Passthrough)]
    oov: OovArg,
    /// Replacement used with `--oov marker`.
    #[arg(long, default_value = "<unk>")]
    oov_marker: String,
    /// Worker threads; 0 means one per CPU.
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
    /// Brute-force nearest-neighbor search instead of the pruned index.
    #[arg(long)]
    exact_nn: bool,
    /// Lowercase tokens before lookup (the common embedding distributions
    /// are lowercase).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    lowercase: bool,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated budgets, e.g. `1,5,10,50` (`inf` allowed).
    #[arg(long)]
    epsilons: String,
    #[arg(long, default_value_t = 1000)]
    sample_size: usize,
    #[arg(long, default_value_t = 100)]
    queries: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write one `<stat>_eps<label>.csv` per histogram here.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
    #[arg(long)]
    exact_nn: bool,
    #[arg(long, default_value_t = 0)]
    parallelism: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportArg {
    Json,
    Md,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Context-association dataset (published JSON dev schema).
    #[arg(long)]
    stereoset: Option<PathBuf>,
    /// Sentence-pair dataset (published CSV schema).
    #[arg(long)]
    crows: Option<PathBuf>,
    /// Plain-text corpus for pseudo-perplexity, one sentence per line.
    #[arg(long)]
    wikitext: Option<PathBuf>,
    /// Scorer endpoint: `mock:uniform:N`, `mock:overlap`, `mock:table:FILE`,
    /// `cmd:PROGRAM ARGS...`, or `http://HOST:PORT`.
    #[arg(long)]
    scorer: String,
    /// A previous run's JSON output to compute effect sizes against.
    #[arg(long)]
    baseline_run: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportArg::Json)]
    report: ReportArg,
    /// Label recorded as this run's epsilon (e.g. `inf`, `10`, `5`).
    #[arg(long, default_value = "unlabeled")]
    epsilon_label: String,
    /// Maximum outstanding scorer requests.
    #[arg(long, default_value_t = 8)]
    in_flight: usize,
}

#[derive(Debug, Args)]
struct MockScorerArgs {
    /// Mock spec without the `mock:` prefix, e.g. `uniform:1000`.
    #[arg(long, default_value = "uniform:1000")]
    spec: String,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    words: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 64)]
    clusters: usize,
    #[arg(long, default_value_t = 4.0)]
    center_scale: f64,
    #[arg(long, default_value_t = 0.35)]
    cluster_spread: f64,
    #[arg(long, default_value_t = 0.03)]
    isolated_fraction: f64,
    #[arg(long, default_value_t = 14.0)]
    isolated_scale: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Cmd::Privatize(args) => privatize(args),
        Cmd::Calibrate(args) => calibrate(args),
        Cmd::Bench(args) => bench(args),
        Cmd::MockScorer(args) => {
            let mock = parse_mock_spec(&args.spec)?;
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve(&mock, stdin.lock(), stdout.lock())
        }
        Cmd::SynthEmbeddings(args) => {
            let store = synthetic_store(SynthParams {
                words: args.words,
                dim: args.dim,
                clusters: args.clusters,
                center_scale: args.center_scale,
                cluster_spread: args.cluster_spread,
                isolated_fraction: args.isolated_fraction,
                isolated_scale: args.isolated_scale,
                seed: args.seed,
            });
            write_embedding_file(&store, &args.out)
                .with_context(|| format!("writing {}", args.out.display()))?;
            eprintln!(
                "wrote {} words x {} dims to {}",
                store.len(),
                store.dimension(),
                args.out.display()
            );
            Ok(())
        }
    }
}

fn privatize(args: PrivatizeArgs) -> Result<()> {
    let budget: PrivacyBudget = args.epsilon.parse()?;
    let store = load_embeddings(&args.embeddings, args.dim)?;
    let format: CorpusFormat = args.format.into();
    let docs = read_corpus(&args.input, format)?;

    let mut cfg = PrivatizationConfig::new(budget, args.seed);
    cfg.lowercase = args.lowercase;
    cfg.oov_policy = match args.oov {
        OovArg::Passthrough => OovPolicy::Passthrough,
        OovArg::Drop => OovPolicy::Drop,
        OovArg::Marker => OovPolicy::Marker(args.oov_marker.clone()),
    };

    let index;
    let search: &dyn NeighborSearch = if args.exact_nn {
        &store
    } else {
        index = build_index(&store, IndexParams::default());
        &index
    };
    let (out_docs, counts) = privatize_corpus(search, &docs, &cfg, args.parallelism)?;
    write_corpus(&args.output, &out_docs, format)?;

    let manifest = RunManifest {
        config: cfg,
        embeddings: EmbeddingInfo {
            path: args.embeddings.display().to_string(),
            sha256: file_sha256(&args.embeddings)?,
            words: store.len() as u64,
            dimension: store.dimension() as u64,
        },
        documents: out_docs.len() as u64,
        counts,
        parallelism: args.parallelism,
        exact_nn: args.exact_nn,
        format,
    };
    let manifest_path = manifest_path_for(&args.output);
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    eprintln!(
        "privatized {} documents ({} tokens, {} perturbed, {} oov) -> {}",
        manifest.documents, counts.total, counts.perturbed, counts.oov,
        args.output.display()
    );
    Ok(())
}

fn manifest_path_for(output: &std::path::Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let store = load_embeddings(&args.embeddings, args.dim)?;
    let budgets: Vec<(String, PrivacyBudget)> = args
        .epsilons
        .split(',')
        .map(|s| {
            let label = s.trim().to_string();
            let budget: PrivacyBudget = label.parse()?;
            Ok((budget.to_string(), budget))
        })
        .collect::<Result<_>>()?;
    if budgets.is_empty() {
        bail!("--epsilons is empty");
    }

    let index;
    let search: &dyn NeighborSearch = if args.exact_nn {
        &store
    } else {
        index = build_index(&store, IndexParams::default());
        &index
    };

    let run = |search: &dyn NeighborSearch| -> Result<CalibrationDoc> {
        let mut doc: CalibrationDoc = BTreeMap::new();
        for (label, budget) in &budgets {
            let stats = par_estimate_deniability(
                search,
                *budget,
                args.sample_size,
                args.queries,
                args.seed,
            )?;
            let cal = calibrate_budget(&stats, args.bins)?;
            eprintln!(
                "epsilon {label}: mean n_w {:.3}, mean s_w {:.3}, skew criterion {}",
                mean_u32(&cal.n_w),
                mean_u32(&cal.s_w),
                cal.skew_criterion
            );
            doc.insert(label.clone(), cal);
        }
        Ok(doc)
    };
    let doc = if args.parallelism == 0 {
        run(search)?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.parallelism)
            .build()?;
        pool.install(|| run(search))?
    };

    if let Some(csv_dir) = &args.csv_dir {
        std::fs::create_dir_all(csv_dir)?;
        for (label, cal) in &doc {
            for (stat, hist) in &cal.histograms {
                let path = csv_dir.join(format!("{stat}_eps{label}.csv"));
                textpriv_cli::calibrate::write_histogram_csv(hist, &path)?;
            }
        }
    }
    std::fs::write(&args.out, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn mean_u32(values: &[u32]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|&v| f64::from(v)).sum::<f64>() / values.len() as f64
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut inputs = BenchInputs::default();
    if let Some(path) = &args.stereoset {
        inputs.stereoset = Some(load_stereoset(path)?);
    }
    if let Some(path) = &args.crows {
        inputs.crows = Some(load_crows_pairs(path)?);
    }
    if let Some(path) = &args.wikitext {
        inputs.wikitext = Some(load_token_corpus(path)?);
    }

    let scorer = build_scorer(&args.scorer)?;
    let scorer = InflightLimited::new(scorer, args.in_flight);
    let run = textpriv_cli::benchrun::run_bench(&scorer, &inputs, &args.epsilon_label)?;

    let report = match &args.baseline_run {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let baseline: BenchRun = serde_json::from_str(&text)
                .with_context(|| format!("parsing baseline run {}", path.display()))?;
            Some(attach_report(&run, &baseline)?)
        }
        None => None,
    };

    let rendered = match args.report {
        ReportArg::Json => {
            let mut doc = serde_json::to_value(&run)?;
            if let Some(report) = &report {
                doc.as_object_mut()
                    .expect("run serializes to an object")
                    .insert("report".into(), serde_json::to_value(report)?);
            }
            serde_json::to_string_pretty(&doc)?
        }
        ReportArg::Md => render_markdown(&run, report.as_ref()),
    };
    std::fs::write(&args.out, rendered)
        .with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("bench written to {}", args.out.display());
    Ok(())
}
