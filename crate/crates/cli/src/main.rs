//! `gamelm`: corpus generation, tokenizer and model training, and evaluation
//! of masked language models on Nim and chess.

mod config_file;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use gamelm::arena::report::{self, Series};
use gamelm::arena::{
    chess_heldout_validity, match_size_sweep, overall, play_chess_vs_engine, roster_tournament,
    AgentSpec, ChessEvalConfig, ChessMatchReport, MatchReport, RosterAgent, RosterLevel,
    SweepConfig, SweepPoint,
};
use gamelm::chess::Color;
use gamelm::corpus::{
    aux_seed, gen_chess_corpus, generate_nim_games, parse_pairings, read_games, read_records,
    render_games, split_corpus, train_generation_qtable, CorpusStats, GenConfig, NimTagVariant,
};
use gamelm::mlm::{
    init_params, load_checkpoint, save_checkpoint, steps_for_epochs, train, ModelConfig,
    TrainConfig,
};
use gamelm::nim::{q_train, QParams, RandomAgent, MAX_PILE};
use gamelm::seed::rng_from_seed;
use gamelm::tokenizer::{tokenize, train_wordpiece, TrainerConfig, Vocab};
use gamelm::uci::{engine_connect, EngineConfig, MoveOracle, UciError};

use manifest::RunManifest;

/// Environment variable naming the default UCI engine executable.
const ENGINE_ENV: &str = "GAMELM_ENGINE";

#[derive(Debug, Parser)]
#[command(
    name = "gamelm",
    version,
    about = "Masked language models that learn to play Nim and chess"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a Nim corpus from agent self-play
    NimGen(NimGenArgs),
    /// Generate a chess corpus from engine self-play
    ChessGen(ChessGenArgs),
    /// Train a WordPiece vocabulary on corpus files
    TokTrain(TokTrainArgs),
    /// Train a masked language model on a corpus
    MlmTrain(MlmTrainArgs),
    /// Play a round-robin Nim tournament including trained models
    NimArena(NimArenaArgs),
    /// Measure win rate against the random agent as a function of match size
    NimSweep(NimSweepArgs),
    /// Evaluate a chess model against an engine
    ChessEval(ChessEvalArgs),
    /// Print corpus statistics
    Stats(StatsArgs),
    /// Render CSV tables and SVG charts from result files
    Report(ReportArgs),
}

/// Options shared by every subcommand.
#[derive(Debug, Args, Serialize)]
struct Common {
    /// Key-value file of default flag values (`key = value` per line);
    /// flags on the command line take precedence
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to the main output)
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct NimGenArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus output file
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30_000)]
    games: u64,
    /// Tag alphabet: player-id (G/Q/R) or win-state (W/X)
    #[arg(long, default_value_t = NimTagVariant::PlayerId)]
    variant: NimTagVariant,
    /// Probability that a scheduled move is replaced by a random legal move
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Agent pairings; each plays both seat orders equally often
    #[arg(long, default_value = "G-Q,G-R,Q-R")]
    pairings: String,
    #[arg(long, default_value_t = MAX_PILE, value_parser = clap::value_parser!(u8).range(1..=MAX_PILE as i64))]
    max_pile: u8,
    /// Training games for the Q-learner (only when a pairing uses Q)
    #[arg(long, default_value_t = 300_000)]
    q_episodes: u64,
    /// Randomly permute the pile labels of every record
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    shuffle_labels: bool,
    /// Start games from random states instead of 10/10/10
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    randomized_start: bool,
    /// Fraction of games written to the test split (0 disables the split)
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (output does not depend on it)
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args, Serialize)]
struct EngineArgs {
    /// UCI engine executable (default: $GAMELM_ENGINE, else the bundled gamelm-engine)
    #[arg(long)]
    engine: Option<PathBuf>,
    /// Search depth in plies
    #[arg(long, default_value_t = 1)]
    depth: u32,
    /// Requested engine strength
    #[arg(long)]
    elo: Option<u32>,
    /// Per-move time limit when no depth is wanted (used with --depth 0)
    #[arg(long)]
    movetime: Option<u64>,
    /// Seconds to wait for a single engine reply
    #[arg(long, default_value_t = 60)]
    move_timeout: u64,
}

#[derive(Debug, Args, Serialize)]
struct ChessGenArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    games: u64,
    /// Records kept per game
    #[arg(long, default_value_t = 6)]
    plies: u32,
    /// Probability of playing a random legal move instead of the engine's
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 200)]
    ply_limit: u32,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    Nim,
    Chess,
}

#[derive(Debug, Args, Serialize)]
struct TokTrainArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus files (repeat or comma-separate)
    #[arg(long, required = true, value_delimiter = ',')]
    corpus: Vec<PathBuf>,
    /// Vocabulary output (JSON)
    #[arg(long)]
    out: PathBuf,
    /// Size presets: nim (200 tokens) or chess (16000 tokens)
    #[arg(long, value_enum, default_value_t = Preset::Nim)]
    preset: Preset,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    min_frequency: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ModelPreset {
    Tiny,
    Desk,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    /// Architecture preset: tiny (2x64) or desk (4x128)
    #[arg(long = "arch", value_enum, default_value_t = ModelPreset::Tiny)]
    arch: ModelPreset,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    feed_forward: Option<usize>,
    /// Longest sequence in tokens (default: longest training line)
    #[arg(long)]
    max_seq: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
}

impl ModelArgs {
    fn config(&self, vocab: usize, max_seq: usize) -> ModelConfig {
        let base = match self.arch {
            ModelPreset::Tiny => ModelConfig::tiny(vocab, max_seq),
            ModelPreset::Desk => ModelConfig::desk(vocab, max_seq),
        };
        ModelConfig {
            layers: self.layers.unwrap_or(base.layers),
            heads: self.heads.unwrap_or(base.heads),
            hidden: self.hidden.unwrap_or(base.hidden),
            feed_forward: self.feed_forward.unwrap_or(base.feed_forward),
            max_seq: self.max_seq.unwrap_or(max_seq),
            dropout: self.dropout,
            ..base
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct OptimArgs {
    #[arg(long, default_value_t = 0.15)]
    mask_p: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Peak learning rate
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    /// Fraction of steps spent warming up
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Global gradient-norm clip (0 disables)
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
}

impl OptimArgs {
    fn config(&self, steps: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            mask_p: self.mask_p,
            batch_size: self.batch_size,
            steps,
            lr: self.lr,
            warmup_frac: self.warmup,
            weight_decay: self.weight_decay,
            clip_norm: (self.clip > 0.0).then_some(self.clip),
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct MlmTrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training corpus
    #[arg(long)]
    corpus: PathBuf,
    /// Vocabulary from tok-train
    #[arg(long)]
    vocab: PathBuf,
    /// Checkpoint output
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Optimizer steps (default: derived from --epochs)
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 40.0)]
    epochs: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct NimArenaArgs {
    #[command(flatten)]
    common: Common,
    /// Trained model for a noise level as NOISE:CHECKPOINT:VOCAB (repeatable)
    #[arg(long = "model")]
    models: Vec<String>,
    /// Tag placed in model queries (G for player-id models, W for win-state)
    #[arg(long, default_value_t = 'G')]
    tag: char,
    /// Rule-based agents taking part
    #[arg(long, default_value = "G,Q,R", value_delimiter = ',')]
    agents: Vec<char>,
    /// Noise levels to play when no model is given
    #[arg(long, value_delimiter = ',', default_value = "0.0")]
    noise_levels: Vec<f64>,
    /// Games per agent pairing (even; seats alternate)
    #[arg(long, default_value_t = 1000)]
    games: u64,
    #[arg(long, default_value_t = 300_000)]
    q_episodes: u64,
    #[arg(long, default_value_t = MAX_PILE, value_parser = clap::value_parser!(u8).range(1..=MAX_PILE as i64))]
    max_pile: u8,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args, Serialize)]
struct NimSweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,300")]
    match_sizes: Vec<u64>,
    /// Evaluation games against the random agent per match size
    #[arg(long, default_value_t = 1000)]
    eval_games: u64,
    #[arg(long, default_value_t = 250.0)]
    epochs: f64,
    #[arg(long, default_value_t = 300)]
    min_steps: usize,
    #[arg(long, default_value_t = 40000)]
    max_steps: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    shuffle_labels: bool,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Side {
    White,
    Black,
}

#[derive(Debug, Args, Serialize)]
struct ChessEvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    engine: EngineArgs,
    /// Checkpoint from mlm-train
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 20)]
    games: u64,
    #[arg(long, default_value_t = 200)]
    ply_limit: u32,
    /// Colour played by the model
    #[arg(long, value_enum, default_value_t = Side::White)]
    color: Side,
    /// Held-out chess corpus for offline top-1 validity
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct StatsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: PathBuf,
    /// Also write the statistics JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Result files written by nim-arena, nim-sweep or chess-eval
    #[arg(long, required = true, value_delimiter = ',')]
    input: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

/// An error caused by bad user input rather than a failed run.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(message.into()))
}

/// Result file shared by the experiment subcommands and `report`.
#[derive(Debug, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Results {
    Roster {
        reports: Vec<MatchReport>,
    },
    Sweep {
        points: Vec<SweepPoint>,
    },
    Chess {
        engine: ChessMatchReport,
        #[serde(default)]
        heldout: Option<Vec<gamelm::arena::ValidityRow>>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    ExitCode::from(run(std::env::args_os().collect()))
}

fn run(argv: Vec<OsString>) -> u8 {
    let argv = match config_file::expand(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("error: {e:#}");
            1
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::NimGen(a) => nim_gen(a),
        Command::ChessGen(a) => chess_gen(a),
        Command::TokTrain(a) => tok_train(a),
        Command::MlmTrain(a) => mlm_train(a),
        Command::NimArena(a) => nim_arena(a),
        Command::NimSweep(a) => nim_sweep(a),
        Command::ChessEval(a) => chess_eval(a),
        Command::Stats(a) => stats(a),
        Command::Report(a) => report_cmd(a),
    }
}

/// `dir/file.ext` -> `dir/file.ext<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `dir/corpus.txt` -> `dir/corpus.<part>.txt`.
fn split_path(path: &Path, part: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{part}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{part}"),
    };
    path.with_file_name(name)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn check_fraction(name: &str, value: f64) -> Result<()> {
    if !(0.0..1.0).contains(&value) {
        return Err(usage(format!("--{name} must lie in [0, 1), got {value}")));
    }
    Ok(())
}

/// Writes the full corpus plus optional game-level train/test files.
fn write_corpus(
    out: &Path,
    games: Vec<Vec<String>>,
    test_fraction: f64,
    seed: u64,
    manifest: &mut RunManifest,
) -> Result<CorpusStats> {
    let text = render_games(&games);
    write_file(out, &text)?;
    manifest.output(out)?;
    if test_fraction > 0.0 && games.len() >= 2 {
        let (train_games, test_games) =
            split_corpus(&games, test_fraction, &mut rng_from_seed(aux_seed(seed, 1)))?;
        for (part, block) in [("train", train_games), ("test", test_games)] {
            let path = split_path(out, part);
            write_file(&path, render_games(&block))?;
            manifest.output(&path)?;
        }
    }
    Ok(CorpusStats::from_text(&text))
}

fn nim_gen(a: NimGenArgs) -> Result<()> {
    check_fraction("test-fraction", a.test_fraction)?;
    let config = GenConfig {
        games: a.games,
        pairings: parse_pairings(&a.pairings).map_err(usage)?,
        variant: a.variant,
        noise: a.noise,
        seed: a.seed,
        randomized_start: a.randomized_start,
        shuffle_labels: a.shuffle_labels,
        max_pile: a.max_pile,
        q_episodes: a.q_episodes,
        jobs: a.jobs.max(1),
        ..GenConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut manifest = RunManifest::new("nim-gen", &a, Some(a.seed))?;
    let qtable = train_generation_qtable(&config)?;
    let games: Vec<Vec<String>> = generate_nim_games(&config, qtable.as_ref())?
        .into_iter()
        .map(|g| g.lines)
        .collect();
    let stats = write_corpus(&a.out, games, a.test_fraction, a.seed, &mut manifest)?;
    let stats_path = sibling(&a.out, ".stats.json");
    write_file(&stats_path, stats.to_json())?;
    manifest.output(&stats_path)?;
    info!(
        "{} games, {} records written to {}",
        stats.number_of_games,
        stats.dataset_length,
        a.out.display()
    );
    manifest.write(
        a.common.manifest.as_deref(),
        &sibling(&a.out, ".manifest.json"),
    )
}

fn resolve_engine(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    if let Some(p) = std::env::var_os(ENGINE_ENV).filter(|p| !p.is_empty()) {
        return Ok(PathBuf::from(p));
    }
    let exe = std::env::current_exe().context("locating the gamelm executable")?;
    let bundled = exe.with_file_name(format!("gamelm-engine{}", std::env::consts::EXE_SUFFIX));
    if bundled.exists() {
        return Ok(bundled);
    }
    Err(usage(format!(
        "no chess engine: pass --engine or set {ENGINE_ENV}"
    )))
}

fn engine_config(e: &EngineArgs) -> Result<EngineConfig> {
    let mut config = EngineConfig::new(resolve_engine(e.engine.as_deref())?);
    config.depth = (e.depth > 0).then_some(e.depth);
    config.movetime_ms = e.movetime;
    config.target_elo = e.elo;
    config.move_timeout_ms = e.move_timeout.saturating_mul(1000);
    if config.depth.is_none() && config.movetime_ms.is_none() {
        return Err(usage("--depth 0 needs --movetime"));
    }
    Ok(config)
}

fn connect(config: &EngineConfig) -> Result<Box<dyn MoveOracle + Send>, UciError> {
    let session = engine_connect(config.clone())?;
    Ok(Box::new(session))
}

fn chess_gen(a: ChessGenArgs) -> Result<()> {
    check_fraction("test-fraction", a.test_fraction)?;
    let engine = engine_config(&a.engine)?;
    let config = GenConfig {
        games: a.games,
        noise: a.noise,
        chess_plies: a.plies,
        ply_limit: a.ply_limit,
        seed: a.seed,
        jobs: a.jobs.max(1),
        ..GenConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut manifest = RunManifest::new("chess-gen", &a, Some(a.seed))?;
    manifest.input(&engine.path)?;
    // Probe once so a missing engine is reported up front.
    connect(&engine).with_context(|| format!("starting engine {}", engine.path.display()))?;
    let factory = || connect(&engine);
    let mut buffer = Vec::new();
    gen_chess_corpus(&config, &factory, &mut buffer)?;
    let games = read_games(&String::from_utf8(buffer).expect("corpus is UTF-8"));
    if (games.len() as u64) < a.games {
        warn!(
            "{} of {} games produced no records",
            a.games - games.len() as u64,
            a.games
        );
    }
    let stats = write_corpus(&a.out, games, a.test_fraction, a.seed, &mut manifest)?;
    let stats_path = sibling(&a.out, ".stats.json");
    write_file(&stats_path, stats.to_json())?;
    manifest.output(&stats_path)?;
    info!(
        "{} games, {} records written to {}",
        stats.number_of_games,
        stats.dataset_length,
        a.out.display()
    );
    manifest.write(
        a.common.manifest.as_deref(),
        &sibling(&a.out, ".manifest.json"),
    )
}

fn tok_train(a: TokTrainArgs) -> Result<()> {
    let mut manifest = RunManifest::new("tok-train", &a, None)?;
    let mut lines = Vec::new();
    for path in &a.corpus {
        lines.extend(read_records(&read_text(path)?));
        manifest.input(path)?;
    }
    let preset = match a.preset {
        Preset::Nim => TrainerConfig::NIM,
        Preset::Chess => TrainerConfig::CHESS,
    };
    let config = TrainerConfig {
        max_vocab: a.max_vocab.unwrap_or(preset.max_vocab),
        min_frequency: a.min_frequency.unwrap_or(preset.min_frequency),
    };
    let vocab = train_wordpiece(&lines, config)?;
    vocab.save(&a.out)?;
    manifest.output(&a.out)?;
    info!(
        "vocabulary of {} tokens written to {}",
        vocab.len(),
        a.out.display()
    );
    manifest.write(
        a.common.manifest.as_deref(),
        &sibling(&a.out, ".manifest.json"),
    )
}

fn loss_chart(losses: &[f64]) -> String {
    let stride = (losses.len() / 500).max(1);
    let points = losses
        .chunks(stride)
        .enumerate()
        .map(|(i, c)| {
            (
                (i * stride + c.len()) as f64,
                c.iter().sum::<f64>() / c.len() as f64,
            )
        })
        .collect();
    report::line_chart(
        "Training loss",
        "step",
        "masked-token cross-entropy",
        &[Series {
            name: "loss".into(),
            points,
        }],
        None,
    )
}

fn mlm_train(a: MlmTrainArgs) -> Result<()> {
    let mut manifest = RunManifest::new("mlm-train", &a, Some(a.seed))?;
    let lines = read_records(&read_text(&a.corpus)?);
    manifest.input(&a.corpus)?;
    let vocab = Vocab::load(&a.vocab)?;
    manifest.input(&a.vocab)?;
    if lines.is_empty() {
        return Err(usage(format!("{} has no records", a.corpus.display())));
    }
    let longest = lines
        .iter()
        .map(|l| tokenize(&vocab, l).len())
        .max()
        .unwrap_or(0);
    let model = a.model.config(vocab.len(), longest);
    let steps = a
        .steps
        .unwrap_or_else(|| steps_for_epochs(lines.len(), a.epochs, a.optim.batch_size).max(1));
    let train_config = a.optim.config(steps, aux_seed(a.seed, 2));
    train_config.validate().map_err(|e| usage(e.to_string()))?;
    model.validate().map_err(|e| usage(e.to_string()))?;
    info!(
        "training {} layers x {} wide on {} records for {steps} steps",
        model.layers,
        model.hidden,
        lines.len()
    );
    let mut params = init_params::<f32>(model, &mut rng_from_seed(aux_seed(a.seed, 3)))?;
    let result = train(&mut params, &lines, &vocab, &train_config)?;
    save_checkpoint(&params, &a.out)?;
    manifest.output(&a.out)?;
    let loss_csv = sibling(&a.out, ".loss.csv");
    write_file(&loss_csv, report::loss_csv(&result.losses))?;
    manifest.output(&loss_csv)?;
    let loss_svg = sibling(&a.out, ".loss.svg");
    write_file(&loss_svg, loss_chart(&result.losses))?;
    manifest.output(&loss_svg)?;
    info!(
        "final loss {:.4}; checkpoint written to {}",
        result.losses.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    manifest.write(
        a.common.manifest.as_deref(),
        &sibling(&a.out, ".manifest.json"),
    )
}

/// Parses `NOISE:CHECKPOINT:VOCAB`.
fn parse_model_spec(text: &str) -> Result<(f64, PathBuf, PathBuf)> {
    let parts: Vec<&str> = text.splitn(3, ':').collect();
    let [noise, ckpt, vocab] = parts[..] else {
        return Err(usage(format!(
            "--model {text:?} must look like NOISE:CHECKPOINT:VOCAB"
        )));
    };
    let noise: f64 = noise
        .parse()
        .map_err(|_| usage(format!("bad noise level {noise:?} in --model")))?;
    Ok((noise, PathBuf::from(ckpt), PathBuf::from(vocab)))
}

fn nim_arena(a: NimArenaArgs) -> Result<()> {
    if a.games == 0 || a.games % 2 == 1 {
        return Err(usage("--games must be a positive even number"));
    }
    let mut manifest = RunManifest::new("nim-arena", &a, Some(a.seed))?;
    let needs_q = a.agents.contains(&'Q');
    let qtable = if needs_q {
        info!("training the Q-learner for {} episodes", a.q_episodes);
        Some(Arc::new(q_train(
            a.q_episodes,
            &mut RandomAgent,
            QParams::default(),
            a.max_pile,
            &mut rng_from_seed(aux_seed(a.seed, 1)),
        )?))
    } else {
        None
    };
    let mut base = Vec::new();
    for &tag in &a.agents {
        let spec = match tag {
            'G' => AgentSpec::Guru,
            'R' => AgentSpec::Random,
            'Q' => AgentSpec::QLearner(qtable.clone().expect("trained above")),
            other => return Err(usage(format!("unknown agent {other:?}; use G, Q or R"))),
        };
        base.push(RosterAgent {
            label: tag.to_string(),
            spec,
        });
    }
    let mut levels = Vec::new();
    if a.models.is_empty() {
        for &noise in &a.noise_levels {
            levels.push(RosterLevel {
                noise,
                agents: base.clone(),
            });
        }
    } else {
        for text in &a.models {
            let (noise, ckpt, vocab_path) = parse_model_spec(text)?;
            let params = load_checkpoint(&ckpt)?;
            let vocab = Vocab::load(&vocab_path)?;
            manifest.input(&ckpt)?;
            manifest.input(&vocab_path)?;
            let mut agents = base.clone();
            agents.push(RosterAgent {
                label: format!("model-{}", a.tag),
                spec: AgentSpec::Model {
                    params: Arc::new(params),
                    vocab: Arc::new(vocab),
                    tag: a.tag,
                },
            });
            levels.push(RosterLevel { noise, agents });
        }
    }
    let reports = roster_tournament(&levels, a.games, a.max_pile, a.seed, a.jobs.max(1))?;
    let results = sibling(&a.out_dir.join("roster"), ".json");
    write_file(
        &results,
        serde_json::to_string_pretty(&Results::Roster {
            reports: reports.clone(),
        })?,
    )?;
    manifest.output(&results)?;
    for path in report::write_roster_report(&a.out_dir, "roster", &reports)? {
        manifest.output(&path)?;
    }
    for r in &reports {
        info!(
            "noise {:.2}: {} {:.3} / {} {:.3}",
            r.noise.unwrap_or(0.0),
            r.a.label,
            r.a.win_rate(),
            r.b.label,
            r.b.win_rate()
        );
    }
    manifest.write(
        a.common.manifest.as_deref(),
        &a.out_dir.join("manifest.json"),
    )
}

fn nim_sweep(a: NimSweepArgs) -> Result<()> {
    if a.eval_games == 0 || a.eval_games % 2 == 1 {
        return Err(usage("--eval-games must be a positive even number"));
    }
    if a.match_sizes.contains(&0) {
        return Err(usage("match sizes must be at least 1"));
    }
    let mut manifest = RunManifest::new("nim-sweep", &a, Some(a.seed))?;
    let config = SweepConfig {
        match_sizes: a.match_sizes.clone(),
        eval_games: a.eval_games,
        seed: a.seed,
        model: a.model.config(0, a.model.max_seq.unwrap_or(32)),
        train: a.optim.config(0, 0),
        epochs: a.epochs,
        min_steps: a.min_steps,
        max_steps: a.max_steps,
        shuffle_labels: a.shuffle_labels,
        ..SweepConfig::default()
    };
    let points = match_size_sweep(&config)?;
    let results = a.out_dir.join("sweep.json");
    write_file(
        &results,
        serde_json::to_string_pretty(&Results::Sweep {
            points: points.clone(),
        })?,
    )?;
    manifest.output(&results)?;
    for path in report::write_sweep_report(&a.out_dir, &points)? {
        manifest.output(&path)?;
    }
    manifest.write(
        a.common.manifest.as_deref(),
        &a.out_dir.join("manifest.json"),
    )
}

fn chess_eval(a: ChessEvalArgs) -> Result<()> {
    let engine = engine_config(&a.engine)?;
    let mut manifest = RunManifest::new("chess-eval", &a, None)?;
    let params = load_checkpoint(&a.model)?;
    manifest.input(&a.model)?;
    let vocab = Vocab::load(&a.vocab)?;
    manifest.input(&a.vocab)?;
    manifest.input(&engine.path)?;
    let config = ChessEvalConfig {
        games: a.games,
        ply_limit: a.ply_limit,
        model_color: match a.color {
            Side::White => Color::White,
            Side::Black => Color::Black,
        },
    };
    let factory = || connect(&engine);
    let match_report = play_chess_vs_engine(&params, &vocab, &factory, &config)?;
    let (valid, total) = overall(&match_report.validity);
    info!(
        "{valid} of {total} model moves valid over {} games",
        match_report.games.len()
    );
    let heldout = match &a.heldout {
        Some(path) => {
            manifest.input(path)?;
            let rows = chess_heldout_validity(&params, &vocab, &read_records(&read_text(path)?))?;
            let (v, t) = overall(&rows);
            info!("held-out top-1 validity {v}/{t}");
            Some(rows)
        }
        None => None,
    };
    let results = Results::Chess {
        engine: match_report,
        heldout,
    };
    let json = a.out_dir.join("chess.json");
    write_file(&json, serde_json::to_string_pretty(&results)?)?;
    manifest.output(&json)?;
    for path in render_results(&results, &a.out_dir)? {
        manifest.output(&path)?;
    }
    manifest.write(
        a.common.manifest.as_deref(),
        &a.out_dir.join("manifest.json"),
    )
}

fn render_results(results: &Results, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(match results {
        Results::Roster { reports } => report::write_roster_report(dir, "roster", reports)?,
        Results::Sweep { points } => report::write_sweep_report(dir, points)?,
        Results::Chess { engine, heldout } => {
            let mut paths = report::write_chess_report(dir, &engine.validity, &engine.games)?;
            if let Some(rows) = heldout {
                let csv = dir.join("heldout_validity.csv");
                write_file(&csv, report::validity_csv(rows))?;
                paths.push(csv);
            }
            paths
        }
    })
}

fn stats(a: StatsArgs) -> Result<()> {
    let mut manifest = RunManifest::new("stats", &a, None)?;
    let text = read_text(&a.corpus)?;
    manifest.input(&a.corpus)?;
    let stats = CorpusStats::from_text(&text);
    if stats.malformed_lines > 0 {
        warn!(
            "{} lines do not follow the record grammar",
            stats.malformed_lines
        );
    }
    let json = stats.to_json();
    println!("{json}");
    let default_manifest = match &a.out {
        Some(out) => {
            write_file(out, &json)?;
            manifest.output(out)?;
            sibling(out, ".manifest.json")
        }
        None => sibling(&a.corpus, ".stats.manifest.json"),
    };
    manifest.write(a.common.manifest.as_deref(), &default_manifest)
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let mut manifest = RunManifest::new("report", &a, None)?;
    for path in &a.input {
        let results: Results = serde_json::from_str(&read_text(path)?)
            .map_err(|e| anyhow!("{} is not a result file: {e}", path.display()))?;
        manifest.input(path)?;
        for out in render_results(&results, &a.out_dir)? {
            manifest.output(&out)?;
        }
    }
    if manifest.outputs_is_empty() {
        bail!("nothing to report");
    }
    manifest.write(
        a.common.manifest.as_deref(),
        &a.out_dir.join("manifest.json"),
    )
}
