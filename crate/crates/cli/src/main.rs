//! `btm`: ingest reviews, train the brand-topic model, evaluate and synthesize.

mod manifest;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use btm::corpus::{self, Bundle, Corpus, IngestOptions, ParsedReviews, Polarity};
use btm::evaluation::{self, DEFAULT_SWEEP, DEFAULT_TOP_M, DEFAULT_WINDOW};
use btm::io::write_atomic;
use btm::synthetic::{self, PLANTED_FILE};
use btm::trainer::{self, Checkpoint, TrainConfig};
use btm::Real;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use manifest::{hash_tree, RunManifest};

/// Largest fraction of unparseable input lines `ingest` tolerates.
const MAX_MALFORMED: f64 = 0.01;

pub const RANKING_FILE: &str = "ranking.tsv";
pub const TOPICS_FILE: &str = "topics.txt";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
    Core(btm::Error),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error on {}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<btm::Error> for CliError {
    fn from(e: btm::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "btm", version, about = "Brand-topic model: joint topics and brand sentiment from reviews")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true, env = "BTM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn a review file (.jsonl or .tsv) into a corpus bundle.
    Ingest(IngestArgs),
    /// Pretrain and train the model on a bundle.
    Train(TrainArgs),
    /// Rank brands, extract topic lists and score them.
    Eval(EvalArgs),
    /// Write a synthetic bundle with its planted parameters.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Review records: JSON lines with text, rating and brand, or TSV text<TAB>rating<TAB>brand.
    input: PathBuf,
    /// Output bundle directory.
    out: PathBuf,
    #[arg(long, default_value_t = IngestOptions::default().max_vocab)]
    max_vocab: usize,
    #[arg(long, default_value_t = IngestOptions::default().min_count)]
    min_count: usize,
    #[arg(long, default_value_t = IngestOptions::default().test_fraction)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Bundle directory.
    #[arg(required_unless_present = "print_config")]
    bundle: Option<PathBuf>,
    /// Run directory for config, log and checkpoints.
    #[arg(required_unless_present = "print_config")]
    out: Option<PathBuf>,
    /// TOML config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long, conflicts_with = "config")]
    resume: Option<PathBuf>,
    /// Print the effective config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    bundle: PathBuf,
    /// Report directory.
    out: PathBuf,
    /// Polarity values of the topic sweep, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = DEFAULT_SWEEP.to_vec())]
    sweep: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_TOP_M)]
    top_m: usize,
    /// Sliding window length for coherence.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output bundle directory.
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct EvalOptions<'a> {
    sweep: &'a [f64],
    top_m: usize,
    window: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    let start = Instant::now();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut m = match cli.command {
        Command::Ingest(a) => ingest(a)?,
        Command::Train(a) => match train(a)? {
            Some(m) => m,
            None => return Ok(()),
        },
        Command::Eval(a) => eval(a)?,
        Command::Synth(a) => synth(a)?,
    };
    m.args = args;
    m.threads = rayon::current_num_threads();
    m.wall_seconds = start.elapsed().as_secs_f64();
    let out = m.outputs_root.clone();
    let path = m.into_manifest()?.write(&out)?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}

/// Manifest fields known once a command has run.
struct Pending {
    command: &'static str,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs_root: PathBuf,
    args: Vec<String>,
    threads: usize,
    wall_seconds: f64,
}

impl Pending {
    fn new(command: &'static str, seed: u64, config: impl Serialize, inputs: Vec<PathBuf>, out: &Path) -> Self {
        Self {
            command,
            seed,
            config: serde_json::to_value(config).expect("options serialize"),
            inputs,
            outputs_root: out.to_path_buf(),
            args: Vec::new(),
            threads: 0,
            wall_seconds: 0.0,
        }
    }

    fn into_manifest(self) -> Result<RunManifest, CliError> {
        let mut inputs = Vec::new();
        for i in &self.inputs {
            inputs.extend(hash_tree(i)?);
        }
        Ok(RunManifest {
            command: self.command.to_string(),
            args: self.args,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: self.threads,
            seed: self.seed,
            config: self.config,
            inputs,
            outputs: hash_tree(&self.outputs_root)?,
            wall_seconds: self.wall_seconds,
        })
    }
}

fn ingest(a: IngestArgs) -> Result<Pending, CliError> {
    let opts = IngestOptions {
        max_vocab: a.max_vocab,
        min_count: a.min_count,
        test_fraction: a.test_fraction,
        seed: a.seed,
    };
    let parsed = corpus::read_reviews(&a.input)?;
    check_malformed(&parsed, &a.input)?;
    let bundle = corpus::ingest(&parsed.reviews, &opts)?;
    corpus::write_bundle(&a.out, &bundle)?;
    print!("{}", stats_table(&bundle));
    Ok(Pending::new("ingest", a.seed, opts, vec![a.input], &a.out))
}

fn check_malformed(parsed: &ParsedReviews, input: &Path) -> Result<(), CliError> {
    if parsed.total() == 0 {
        return Err(CliError::Validation(format!("{}: no records", input.display())));
    }
    let fraction = parsed.malformed_fraction();
    let fatal = fraction > MAX_MALFORMED;
    for e in &parsed.errors {
        if fatal {
            eprintln!("{}:{}: {}", input.display(), e.line, e.message);
        } else {
            log::warn!("{}:{}: {} (skipped)", input.display(), e.line, e.message);
        }
    }
    if fatal {
        return Err(CliError::Validation(format!(
            "{} of {} records malformed ({:.2}%), limit {:.0}%",
            parsed.errors.len(),
            parsed.total(),
            100.0 * fraction,
            100.0 * MAX_MALFORMED
        )));
    }
    Ok(())
}

/// Groups digits in threes: 63199 becomes "63,199".
fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn stats_table(bundle: &Bundle) -> String {
    let c = &bundle.corpus;
    let counts = c.class_counts();
    let total_len: u64 = (0..c.num_docs()).map(|d| c.doc_length(d)).sum();
    let avg = if c.num_docs() == 0 { 0.0 } else { total_len as f64 / c.num_docs() as f64 };
    let train = c.docs_in(corpus::Split::Train).count();
    let classes = Polarity::ALL
        .iter()
        .map(|p| thousands(counts[p.index()]))
        .collect::<Vec<_>>()
        .join("/");
    let mut s = String::new();
    s.push_str(&format!("{:<18}{}\n", "Neg/Neu/Pos", classes));
    s.push_str(&format!("{:<18}{}\n", "documents", thousands(c.num_docs())));
    s.push_str(&format!("{:<18}{}/{}\n", "train/test", thousands(train), thousands(c.num_docs() - train)));
    s.push_str(&format!("{:<18}{}\n", "brands (B)", thousands(c.num_brands())));
    s.push_str(&format!("{:<18}{}\n", "vocabulary (V)", thousands(bundle.vocab.len())));
    s.push_str(&format!("{:<18}{:.2}\n", "avg length", avg));
    s
}

fn train(a: TrainArgs) -> Result<Option<Pending>, CliError> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(n) = a.max_steps {
        cfg.max_steps = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(None);
    }
    let (Some(bundle_dir), Some(out)) = (a.bundle, a.out) else {
        unreachable!("clap requires both paths without --print-config");
    };
    let bundle = corpus::read_bundle(&bundle_dir)?;
    let mut inputs = vec![bundle_dir];
    let fit = match &a.resume {
        Some(ckpt) => {
            if a.seed.is_some() {
                return Err(CliError::Validation("--seed cannot change a resumed run".into()));
            }
            inputs.push(ckpt.clone());
            if let Some(saved) = Checkpoint::<Real>::read(ckpt)?.config {
                cfg = saved;
                if let Some(n) = a.max_steps {
                    cfg.max_steps = n;
                }
            }
            trainer::resume::<Real>(&bundle.corpus, ckpt, Some(&out), a.max_steps)?
        }
        None => {
            if let Some(p) = &a.config {
                inputs.push(p.clone());
            }
            trainer::fit::<Real>(&bundle.corpus, &cfg, Some(&out))?
        }
    };
    match fit.log.last() {
        Some(r) => println!(
            "step {}  elbo {:.6e}  L_s {:.6}  L_a {:.6}  total {:.6e}",
            r.step, r.elbo, r.supervised, r.adversarial, r.total
        ),
        None => println!("step {}  (no training steps run)", fit.state.step),
    }
    println!("final checkpoint: {}", out.join(trainer::FINAL_CHECKPOINT).display());
    Ok(Some(Pending::new("train", cfg.seed, &cfg, inputs, &out)))
}

fn eval(a: EvalArgs) -> Result<Pending, CliError> {
    let ckpt = Checkpoint::<Real>::read(&a.checkpoint)?;
    let bundle = corpus::read_bundle(&a.bundle)?;
    check_compatible(&ckpt, &bundle.corpus, bundle.vocab.len())?;
    let result = evaluation::evaluate(&ckpt.params, &bundle.corpus, &bundle.vocab, &a.sweep, a.top_m, a.window)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let topics = result.topics.render(&bundle.vocab);
    write_atomic(&a.out.join(TOPICS_FILE), topics.as_bytes())?;
    let line = result.summary.line();
    write_atomic(&a.out.join(SUMMARY_FILE), format!("{line}\n").as_bytes())?;
    if let Some(r) = &result.summary.ranking {
        write_atomic(&a.out.join(RANKING_FILE), r.to_tsv().as_bytes())?;
        print!("{}", r.to_tsv());
    }
    print!("{topics}");
    println!("{line}");
    let seed = ckpt.config.as_ref().map_or(0, |c| c.seed);
    let opts = EvalOptions {
        sweep: &a.sweep,
        top_m: a.top_m,
        window: a.window,
    };
    Ok(Pending::new("eval", seed, opts, vec![a.checkpoint, a.bundle], &a.out))
}

fn check_compatible(ckpt: &Checkpoint<Real>, corpus: &Corpus, vocab_len: usize) -> Result<(), CliError> {
    let dims = ckpt.params.dims();
    let axes = [
        ("term", dims.terms, vocab_len),
        ("brand", dims.brands, corpus.num_brands()),
    ];
    for (axis, expected, found) in axes {
        if expected != found {
            return Err(btm::Error::DimensionMismatch { axis, expected, found }.into());
        }
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<Pending, CliError> {
    let (planted, bundle) = synthetic::default_testbed(a.seed)?;
    corpus::write_bundle(&a.out, &bundle)?;
    planted.write(&a.out.join(PLANTED_FILE))?;
    print!("{}", stats_table(&bundle));
    #[derive(Serialize)]
    struct SynthOptions {
        seed: u64,
        testbed: synthetic::TestbedSpec,
    }
    let opts = SynthOptions {
        seed: a.seed,
        testbed: synthetic::TestbedSpec::default(),
    };
    Ok(Pending::new("synth", a.seed, opts, Vec::new(), &a.out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn thousands_grouping() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(9545), "9,545");
        assert_eq!(thousands(63199), "63,199");
        assert_eq!(thousands(1234567), "1,234,567");
    }

    #[test]
    fn negative_sweep_values_parse() {
        let cli = Cli::try_parse_from(["btm", "eval", "c", "b", "o", "--sweep", "-1,-0.5,1"]).unwrap();
        let Command::Eval(a) = cli.command else { panic!("not eval") };
        assert_eq!(a.sweep, vec![-1.0, -0.5, 1.0]);
        assert_eq!(a.top_m, 10);
    }

    #[test]
    fn default_sweep_has_three_values() {
        let cli = Cli::try_parse_from(["btm", "eval", "c", "b", "o"]).unwrap();
        let Command::Eval(a) = cli.command else { panic!("not eval") };
        assert_eq!(a.sweep, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(CliError::Validation("x".into()).exit_code(), 1);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 2);
        let dim = btm::Error::DimensionMismatch { axis: "term", expected: 1, found: 2 };
        assert_eq!(CliError::from(dim).exit_code(), 1);
        let nan = btm::Error::NonFiniteLoss { step: 1, elbo: f64::NAN, supervised: 0.0, adversarial: 0.0 };
        assert_eq!(CliError::from(nan).exit_code(), 2);
    }
}
