use std::fmt::Display;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use flowcomplete::decoding::{DecodeConfig, DecodeError, Strategy};
use flowcomplete::evaluation::{self, curve_csv, read_corpus, report, split_dataset, write_corpus, EvalError, Split, Splits};
use flowcomplete::interface::{complete, CompletionRequest, InterfaceError};
use flowcomplete::service::{serve, CHECKPOINT_ENV};
use flowcomplete::sfiles::{self, parse_with_warnings, serialize, serialize_partial, to_json, Mode, SfilesError};
use flowcomplete::syngen::{generate_dataset, stats, GeneratorConfig, SyngenError};
use flowcomplete::transformer::{self, Checkpoint, LossPoint, ModelConfig, Positional, Precision, TrainConfig, TransformerError};

#[derive(Parser)]
#[command(name = "flowcomplete", version, about = "Flowsheet autocompletion with SFILES 2.0 and a small transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, one SFILES string per line.
    Generate {
        #[arg(long, default_value_t = 8000)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Generator configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dataset statistics of a corpus file or a split directory.
    Stats {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Shuffle a corpus and write train/val/test files.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
        fractions: Vec<f64>,
    },
    /// Train a model from scratch on a split directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory to write.
        #[arg(long)]
        out: PathBuf,
        /// Model configuration JSON (vocab_size is ignored).
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Preset::Desk)]
        preset: Preset,
        #[arg(long)]
        positional: Option<PositionalArg>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Continue training a checkpoint on another split directory.
    Finetune {
        #[arg(long, env = CHECKPOINT_ENV)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add tokens missing from the checkpoint vocabulary.
        #[arg(long)]
        extend_vocab: bool,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Perplexity table of checkpoints on corpora.
    Eval {
        /// `name=dir` or `dir`; repeatable.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<String>,
        /// Corpus file or split directory, `name=path` or `path`; repeatable.
        #[arg(long = "corpus", required = true)]
        corpora: Vec<String>,
        /// Splits to evaluate for split directories.
        #[arg(long, value_delimiter = ',', default_value = "test")]
        splits: Vec<SplitArg>,
        #[arg(long)]
        json: bool,
    },
    /// Complete a (possibly empty) SFILES prefix.
    Complete {
        #[arg(long, env = CHECKPOINT_ENV)]
        checkpoint: PathBuf,
        #[arg(default_value = "")]
        prefix: String,
        #[arg(long, value_enum, default_value_t = StrategyArg::Beam)]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 5)]
        beam_width: usize,
        #[arg(long, default_value_t = 0.9)]
        p: f64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 200)]
        max_new_tokens: usize,
        #[arg(long, default_value_t = 3)]
        num_return: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lenient: bool,
        /// Print the full JSON response.
        #[arg(long)]
        json: bool,
    },
    /// Parse an SFILES string and print its graph JSON.
    Parse {
        sfiles: String,
        #[arg(long, conflicts_with = "lenient")]
        strict: bool,
        #[arg(long)]
        lenient: bool,
    },
    /// Serialize graph JSON (file or `-` for stdin) to SFILES.
    Serialize {
        #[arg(default_value = "-")]
        graph: PathBuf,
        /// Skip graph validation.
        #[arg(long)]
        partial: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = CHECKPOINT_ENV)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration JSON; flags below override it.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    f64: bool,
    /// Process sequences of a batch in parallel.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
    Tiny,
}

#[derive(Clone, Copy, ValueEnum)]
enum PositionalArg {
    Learned,
    Sinusoidal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Greedy,
    Beam,
    TopK,
    TopP,
}

/// Exit code 2 for bad input, 1 for everything else.
enum Failure {
    Invalid(String),
    Other(String),
}

fn invalid(e: impl Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn other(e: impl Display) -> Failure {
    Failure::Other(e.to_string())
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        other(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        invalid(e)
    }
}

impl From<SfilesError> for Failure {
    fn from(e: SfilesError) -> Self {
        invalid(e)
    }
}

impl From<SyngenError> for Failure {
    fn from(e: SyngenError) -> Self {
        match e {
            SyngenError::Io(e) => other(e),
            e => invalid(e),
        }
    }
}

impl From<TransformerError> for Failure {
    fn from(e: TransformerError) -> Self {
        match e {
            TransformerError::InvalidConfig(_)
            | TransformerError::VocabMismatch(_)
            | TransformerError::Corpus(_)
            | TransformerError::CheckpointFormat(_)
            | TransformerError::Json(_) => invalid(e),
            e => other(e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Io(e) => other(e),
            e => invalid(e),
        }
    }
}

impl From<InterfaceError> for Failure {
    fn from(e: InterfaceError) -> Self {
        match e {
            InterfaceError::Decode(DecodeError::Model(m)) => m.into(),
            e => invalid(e),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| other(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn named(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) => (name.to_string(), PathBuf::from(path)),
        None => {
            let p = PathBuf::from(arg);
            let name = p.file_name().map_or(arg.to_string(), |n| n.to_string_lossy().into_owned());
            (name, p)
        }
    }
}

/// A split directory as is; a single file becomes a test-only split.
fn load_corpus(path: &Path) -> Result<Splits, Failure> {
    if path.is_dir() {
        Ok(Splits::load(path)?)
    } else {
        Ok(Splits { test: read_corpus(path)?, ..Splits::default() })
    }
}

fn train_config(base: TrainConfig, a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut tc = match &a.train_config {
        Some(p) => read_json(p)?,
        None => base,
    };
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.eval_interval_steps = a.eval_interval.unwrap_or(tc.eval_interval_steps);
    tc.patience = a.patience.unwrap_or(tc.patience);
    tc.max_epochs = a.max_epochs.unwrap_or(tc.max_epochs);
    tc.max_steps = a.max_steps.or(tc.max_steps);
    tc.learning_rate = a.learning_rate.unwrap_or(tc.learning_rate);
    tc.seed = a.seed.unwrap_or(tc.seed);
    if a.f64 {
        tc.precision = Precision::F64;
    }
    if a.parallel {
        tc.deterministic = false;
    }
    tc.validate()?;
    Ok(tc)
}

fn progress(quiet: bool) -> impl FnMut(&LossPoint) {
    move |p| {
        if !quiet {
            eprintln!("step {:>7}  epoch {:>3}  train {:.4}  val {:.4}", p.step, p.epoch, p.train_loss, p.val_loss);
        }
    }
}

fn finish_training(ckpt: &Checkpoint, report: &transformer::TrainReport, splits: &Splits, out: &Path) -> Result<(), Failure> {
    ckpt.save(out)?;
    std::fs::write(out.join("curve.csv"), curve_csv(&report.curve))?;
    println!("checkpoint   {}", out.display());
    println!("steps        {} ({} epochs, early stop: {})", report.steps, report.epochs, report.stopped_early);
    println!("best step    {}  val loss {:.4}", report.best_step, report.best_val_loss);
    if report.skipped > 0 {
        println!("skipped      {} over-length training sequences", report.skipped);
    }
    if !splits.test.is_empty() {
        let pp = evaluation::checkpoint_perplexity(ckpt, &splits.test)?;
        println!("test PP      {:.3}", pp.perplexity);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { n, seed, config, out } => {
            let mut cfg = match config {
                Some(p) => GeneratorConfig::load(&p)?,
                None => GeneratorConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let corpus = generate_dataset(&cfg, n)?;
            write_corpus(&out, &corpus)?;
            eprintln!("wrote {} flowsheets to {}", corpus.len(), out.display());
        }
        Command::Stats { path, json } => {
            let st = if path.is_dir() { Splits::load(&path)?.stats()? } else { stats(&read_corpus(&path)?)? };
            if json {
                println!("{}", serde_json::to_string_pretty(&st)?);
            } else {
                println!("samples_tr   {}", st.samples_tr);
                println!("samples_val  {}", st.samples_val);
                println!("samples_te   {}", st.samples_te);
                println!("mean_nodes   {:.2}", st.mean_nodes);
                println!("std_nodes    {:.2}", st.std_nodes);
                println!("vocab_size   {}", st.vocab_size);
            }
        }
        Command::Split { corpus, out_dir, seed, fractions } => {
            let corpus = read_corpus(&corpus)?;
            let s = split_dataset(&corpus, (fractions[0], fractions[1], fractions[2]), seed)?;
            s.save(&out_dir)?;
            println!("train {}  val {}  test {}", s.train.len(), s.val.len(), s.test.len());
        }
        Command::Train { data, out, model_config, preset, positional, train } => {
            let splits = Splits::load(&data)?;
            let mut mc = match model_config {
                Some(p) => read_json(&p)?,
                None => match preset {
                    Preset::Desk => ModelConfig::desk(1),
                    Preset::Paper => ModelConfig::paper(1),
                    Preset::Tiny => ModelConfig::tiny(1),
                },
            };
            if let Some(pos) = positional {
                mc.positional = match pos {
                    PositionalArg::Learned => Positional::Learned,
                    PositionalArg::Sinusoidal => Positional::Sinusoidal,
                };
            }
            let tc = train_config(TrainConfig::pretrain(), &train)?;
            let (ckpt, report) = transformer::train(&splits, &mc, &tc, progress(train.quiet))?;
            finish_training(&ckpt, &report, &splits, &out)?;
        }
        Command::Finetune { checkpoint, data, out, extend_vocab, train } => {
            let base = Checkpoint::load(&checkpoint)?;
            let splits = Splits::load(&data)?;
            let mut tc = train_config(TrainConfig::finetune(), &train)?;
            tc.extend_vocab |= extend_vocab;
            let (ckpt, report) = transformer::finetune(&base, &splits, &tc, progress(train.quiet))?;
            finish_training(&ckpt, &report, &splits, &out)?;
        }
        Command::Eval { checkpoints, corpora, splits, json } => {
            let models: Vec<(String, Checkpoint)> = checkpoints
                .iter()
                .map(|a| {
                    let (name, path) = named(a);
                    Ok((name, Checkpoint::load(&path)?))
                })
                .collect::<Result<_, Failure>>()?;
            let datasets: Vec<(String, Splits, bool)> = corpora
                .iter()
                .map(|a| {
                    let (name, path) = named(a);
                    Ok((name, load_corpus(&path)?, path.is_dir()))
                })
                .collect::<Result<_, Failure>>()?;
            let wanted: Vec<Split> = splits
                .iter()
                .map(|s| match s {
                    SplitArg::Train => Split::Train,
                    SplitArg::Val => Split::Val,
                    SplitArg::Test => Split::Test,
                })
                .collect();
            let mut full = evaluation::PerplexityReport::default();
            for (dname, data, is_dir) in &datasets {
                let sp: &[Split] = if *is_dir { &wanted } else { &[Split::Test] };
                let refs: Vec<(&str, &Checkpoint)> = models.iter().map(|(n, c)| (n.as_str(), c)).collect();
                full.cells.extend(report(&refs, &[(dname.as_str(), data)], sp)?.cells);
            }
            if json {
                println!("{}", full.to_json());
            } else {
                print!("{}", full.to_table());
                for c in full.cells.iter().filter(|c| c.result.skipped > 0) {
                    eprintln!("{}/{}/{}: skipped {} over-length sequences", c.model, c.dataset, c.split.name(), c.result.skipped);
                }
            }
        }
        Command::Complete {
            checkpoint,
            prefix,
            strategy,
            beam_width,
            p,
            k,
            temperature,
            max_new_tokens,
            num_return,
            seed,
            lenient,
            json,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let strategy = match strategy {
                StrategyArg::Greedy => Strategy::Greedy,
                StrategyArg::Beam => Strategy::Beam,
                StrategyArg::TopK => Strategy::TopK,
                StrategyArg::TopP => Strategy::TopP,
            };
            let decode = DecodeConfig { strategy, beam_width, p, k, temperature, max_new_tokens, num_return, seed, length_normalize: false };
            let req = CompletionRequest {
                mode: if lenient { Mode::Lenient } else { Mode::Strict },
                return_graphs: json,
                ..CompletionRequest::new(&prefix, decode)
            };
            let resp = complete(&ckpt, &req)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&resp)?);
            } else {
                for c in &resp.completions {
                    let flag = if c.valid { "valid  " } else { "INVALID" };
                    println!("{flag} {:>9.4}  {}", c.log_prob, c.sfiles);
                }
            }
        }
        Command::Parse { sfiles, strict: _, lenient } => {
            let mode = if lenient { Mode::Lenient } else { Mode::Strict };
            let (g, warnings) = parse_with_warnings(&sfiles, mode)?;
            for w in &warnings {
                eprintln!("warning at byte {}: {}", w.position, w.message);
            }
            println!("{}", String::from_utf8(to_json(&g)).expect("JSON is UTF-8"));
        }
        Command::Serialize { graph, partial } => {
            let bytes = if graph.as_os_str() == "-" {
                let mut buf = Vec::new();
                std::io::stdin().read_to_end(&mut buf)?;
                buf
            } else {
                std::fs::read(&graph)?
            };
            let g = sfiles::from_json(&bytes)?;
            println!("{}", if partial { serialize_partial(&g)? } else { serialize(&g)? });
        }
        Command::Serve { checkpoint, addr } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(addr, checkpoint))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
