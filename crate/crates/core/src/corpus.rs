//! Text corpora of played games.
//!
//! Nim records look like `a10/b3/c0 G - a4` (state, tag, ASCII hyphen, move).
//! Chess records look like `<FEN> [MOVESEP] e2e4`. Corpus files hold one
//! record per line with a blank line between games.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chess::{
    apply_chess_move, format_fen, format_move, game_status, legal_moves, parse_fen, parse_move,
    ChessError, ChessMove, ChessPosition, DEFAULT_PLY_LIMIT,
};
use crate::nim::{
    play_nim_game, q_train, AgentKind, GuruAgent, NimAgent, NimError, NimGameRecord, NimMove,
    NimState, QAgent, QParams, QTable, RandomAgent, MAX_PILE, PILE_LABELS,
};
use crate::seed::{derive_seed, derived_rng, GameRng};
use crate::uci::{MoveOracle, UciError};

/// Separator between FEN and move in chess records.
pub const MOVE_SEPARATOR: &str = "[MOVESEP]";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record {line:?}: {reason}")]
    Malformed { line: String, reason: String },
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error(transparent)]
    Nim(#[from] NimError),
    #[error(transparent)]
    Chess(#[from] ChessError),
    #[error(transparent)]
    Engine(#[from] UciError),
    #[error("corpus I/O: {0}")]
    Io(#[from] std::io::Error),
}

fn malformed(line: &str, reason: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        line: line.to_string(),
        reason: reason.into(),
    }
}

/// How Nim records are tagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NimTagVariant {
    /// `G`, `Q` or `R`: the agent scheduled to move.
    PlayerId,
    /// `W` or `X`: the move was made by the game's eventual winner or loser.
    WinState,
}

impl NimTagVariant {
    pub fn alphabet(self) -> &'static [char] {
        match self {
            NimTagVariant::PlayerId => &['G', 'Q', 'R'],
            NimTagVariant::WinState => &['W', 'X'],
        }
    }
}

impl fmt::Display for NimTagVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NimTagVariant::PlayerId => "player-id",
            NimTagVariant::WinState => "win-state",
        })
    }
}

impl std::str::FromStr for NimTagVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "player-id" => Ok(NimTagVariant::PlayerId),
            "win-state" => Ok(NimTagVariant::WinState),
            other => Err(format!("unknown variant {other:?} (player-id | win-state)")),
        }
    }
}

/// A decoded Nim line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NimRecord {
    pub state: NimState,
    pub tag: char,
    pub mv: NimMove,
}

pub fn encode_nim_record(state: &NimState, tag: char, mv: NimMove) -> String {
    format!("{state} {tag} - {mv}")
}

/// Query line with the move slot masked.
pub fn nim_query(state: &NimState, tag: char) -> String {
    format!("{state} {tag} - {}", crate::tokenizer::MASK)
}

fn parse_count(text: &str) -> Option<u8> {
    if text.is_empty() || text.len() > 2 || (text.len() == 2 && text.starts_with('0')) {
        return None;
    }
    text.parse::<u8>().ok().filter(|&n| n <= MAX_PILE)
}

/// Parses a pile-labelled count such as `a10` or `c0`.
fn parse_labelled(text: &str, label: char) -> Option<u8> {
    parse_count(text.strip_prefix(label)?)
}

pub fn parse_nim_move(text: &str) -> Option<NimMove> {
    let mut chars = text.chars();
    let label = chars.next()?;
    let pile = PILE_LABELS.iter().position(|&l| l == label)?;
    let take = parse_count(chars.as_str())?;
    (take >= 1).then_some(NimMove {
        pile: pile as u8,
        take,
    })
}

pub fn decode_nim_record(line: &str) -> Result<NimRecord, CorpusError> {
    let parts: Vec<&str> = line.split(' ').collect();
    if parts.len() != 4 {
        return Err(malformed(line, "expected `<state> <tag> - <move>`"));
    }
    let piles: Vec<&str> = parts[0].split('/').collect();
    if piles.len() != 3 {
        return Err(malformed(line, "state needs three piles"));
    }
    let mut counts = [0u8; 3];
    for (i, (text, label)) in piles.iter().zip(PILE_LABELS).enumerate() {
        counts[i] = parse_labelled(text, label)
            .ok_or_else(|| malformed(line, format!("bad pile {text:?}")))?;
    }
    let mut tag_chars = parts[1].chars();
    let tag = match (tag_chars.next(), tag_chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() => c,
        _ => return Err(malformed(line, "tag must be one uppercase letter")),
    };
    if parts[2] != "-" {
        return Err(malformed(line, "missing ` - ` separator"));
    }
    let mv = parse_nim_move(parts[3]).ok_or_else(|| malformed(line, "bad move"))?;
    Ok(NimRecord {
        state: NimState::new(counts)?,
        tag,
        mv,
    })
}

/// A decoded chess line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChessRecord {
    pub position: ChessPosition,
    pub mv: ChessMove,
}

pub fn encode_chess_record(position: &ChessPosition, mv: &ChessMove) -> String {
    format!(
        "{} {MOVE_SEPARATOR} {}",
        format_fen(position),
        format_move(mv)
    )
}

/// Query line with the move slot masked.
pub fn chess_query(position: &ChessPosition) -> String {
    format!(
        "{} {MOVE_SEPARATOR} {}",
        format_fen(position),
        crate::tokenizer::MASK
    )
}

pub fn decode_chess_record(line: &str) -> Result<ChessRecord, CorpusError> {
    let sep = format!(" {MOVE_SEPARATOR} ");
    let (fen, mv) = line
        .split_once(&sep)
        .ok_or_else(|| malformed(line, "missing ` [MOVESEP] `"))?;
    let position = parse_fen(fen)?;
    if format_fen(&position) != fen {
        return Err(malformed(line, "FEN is not in canonical form"));
    }
    let mv = parse_move(mv)?;
    Ok(ChessRecord { position, mv })
}

/// The six corpus measurements.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub number_of_games: u64,
    pub total_unique_game_states: u64,
    pub total_unique_moves: u64,
    /// Record lines.
    pub dataset_length: u64,
    /// Mean characters per record line.
    pub average_sequence_length: f64,
    /// Bytes.
    pub dataset_size: u64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub malformed_lines: u64,
}

fn is_zero(n: &u64) -> bool {
    *n == 0
}

/// Splits a record line into (state-text, move-text).
fn state_and_move(line: &str) -> Option<(&str, &str)> {
    if let Some((state, mv)) = line.split_once(&format!(" {MOVE_SEPARATOR} ")) {
        if parse_fen(state).is_ok() && parse_move(mv).is_ok() {
            return Some((state, mv));
        }
        return None;
    }
    decode_nim_record(line).ok()?;
    let (state, _) = line.split_once(' ')?;
    let (_, mv) = line.rsplit_once(' ')?;
    Some((state, mv))
}

impl CorpusStats {
    /// Measures corpus text. Malformed lines are counted, not fatal.
    pub fn from_text(text: &str) -> CorpusStats {
        let mut stats = CorpusStats {
            dataset_size: text.len() as u64,
            ..CorpusStats::default()
        };
        let mut states = HashSet::new();
        let mut moves = HashSet::new();
        let mut chars = 0u64;
        let mut in_game = false;
        for line in text.lines() {
            if line.trim().is_empty() {
                in_game = false;
                continue;
            }
            if !in_game {
                stats.number_of_games += 1;
                in_game = true;
            }
            stats.dataset_length += 1;
            chars += line.chars().count() as u64;
            match state_and_move(line) {
                Some((s, m)) => {
                    states.insert(s);
                    moves.insert(m);
                }
                None => stats.malformed_lines += 1,
            }
        }
        stats.total_unique_game_states = states.len() as u64;
        stats.total_unique_moves = moves.len() as u64;
        if stats.dataset_length > 0 {
            stats.average_sequence_length = chars as f64 / stats.dataset_length as f64;
        }
        stats
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

pub fn dataset_stats(path: &Path) -> Result<CorpusStats, CorpusError> {
    Ok(CorpusStats::from_text(&std::fs::read_to_string(path)?))
}

/// Record lines of a corpus (blank separators dropped).
pub fn read_records(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

/// Games of a corpus as blocks of record lines.
pub fn read_games(text: &str) -> Vec<Vec<String>> {
    let mut games = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                games.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line.to_string());
        }
    }
    if !current.is_empty() {
        games.push(current);
    }
    games
}

/// Joins game blocks into corpus text (LF endings, blank line between games).
pub fn render_games<S: AsRef<str>>(games: &[Vec<S>]) -> String {
    let mut out = String::new();
    for (i, game) in games.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for line in game {
            out.push_str(line.as_ref());
            out.push('\n');
        }
    }
    out
}

/// Record-level shuffle and split; the test part holds
/// `round(len * test_fraction)` records.
pub fn split_corpus<S: Clone>(
    records: &[S],
    test_fraction: f64,
    rng: &mut GameRng,
) -> Result<(Vec<S>, Vec<S>), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(rng);
    let n_test = (records.len() as f64 * test_fraction).round() as usize;
    let test = order[..n_test]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    let train = order[n_test..]
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    Ok((train, test))
}

/// Generation settings shared by both games.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub games: u64,
    /// Agent pairings; each is played with both seat orders equally often.
    pub pairings: Vec<(char, char)>,
    pub variant: NimTagVariant,
    /// Probability that a scheduled move is replaced by a uniform legal move.
    pub noise: f64,
    /// Chess records kept per game.
    pub chess_plies: u32,
    pub ply_limit: u32,
    pub seed: u64,
    pub randomized_start: bool,
    /// Randomly relabel the piles of each Nim record (move letter follows).
    pub shuffle_labels: bool,
    pub max_pile: u8,
    /// Training games for the Q-learner used in pairings.
    pub q_episodes: u64,
    pub q_params: QParams,
    /// Worker threads; output is identical for any value.
    pub jobs: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            games: 30_000,
            pairings: vec![('G', 'Q'), ('G', 'R'), ('Q', 'R')],
            variant: NimTagVariant::PlayerId,
            noise: 0.0,
            chess_plies: 6,
            ply_limit: DEFAULT_PLY_LIMIT,
            seed: 0,
            randomized_start: true,
            shuffle_labels: true,
            max_pile: MAX_PILE,
            q_episodes: 300_000,
            q_params: QParams::default(),
            jobs: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(CorpusError::Config(format!(
                "noise must lie in [0, 1], got {}",
                self.noise
            )));
        }
        if self.chess_plies < 1 {
            return Err(CorpusError::Config("chess plies cap must be >= 1".into()));
        }
        if self.max_pile < 1 || self.max_pile > MAX_PILE {
            return Err(CorpusError::Config(format!(
                "max pile must lie in 1..={MAX_PILE}"
            )));
        }
        for &(a, b) in &self.pairings {
            for t in [a, b] {
                if AgentKind::from_tag(t).is_none() {
                    return Err(CorpusError::Config(format!("unknown agent tag {t:?}")));
                }
            }
        }
        Ok(())
    }

    fn nim_pairings(&self) -> Result<Vec<(AgentKind, AgentKind)>, CorpusError> {
        if self.pairings.is_empty() {
            return Err(CorpusError::Config("no agent pairings".into()));
        }
        Ok(self
            .pairings
            .iter()
            .map(|&(a, b)| {
                (
                    AgentKind::from_tag(a).expect("validated"),
                    AgentKind::from_tag(b).expect("validated"),
                )
            })
            .collect())
    }

    /// Agents (first seat, second seat) of game `index`.
    pub fn seats_for_game(&self, index: u64) -> Option<(char, char)> {
        if self.pairings.is_empty() {
            return None;
        }
        let (a, b) = self.pairings[((index / 2) % self.pairings.len() as u64) as usize];
        Some(if index.is_multiple_of(2) {
            (a, b)
        } else {
            (b, a)
        })
    }
}

/// Parses `G-R,Q-R` style pairing lists.
pub fn parse_pairings(text: &str) -> Result<Vec<(char, char)>, String> {
    text.split(',')
        .map(|p| {
            let p = p.trim();
            let (a, b) = p
                .split_once('-')
                .ok_or_else(|| format!("pairing {p:?} must look like G-R"))?;
            let one = |s: &str| {
                let mut cs = s.chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) if AgentKind::from_tag(c).is_some() => Ok(c),
                    _ => Err(format!("unknown agent {s:?} in pairing {p:?}")),
                }
            };
            Ok((one(a)?, one(b)?))
        })
        .collect()
}

/// One generated Nim game: the played record and its corpus lines.
#[derive(Debug, Clone)]
pub struct NimGame {
    pub record: NimGameRecord,
    pub lines: Vec<String>,
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

fn nim_lines(
    record: &NimGameRecord,
    variant: NimTagVariant,
    shuffle: bool,
    rng: &mut GameRng,
) -> Vec<String> {
    record
        .plies
        .iter()
        .map(|ply| {
            let tag = match variant {
                NimTagVariant::PlayerId => ply.tag,
                NimTagVariant::WinState if ply.seat == record.winner => 'W',
                NimTagVariant::WinState => 'X',
            };
            let (state, mv) = if shuffle {
                let perm = *PERMUTATIONS.choose(rng).expect("non-empty");
                let new_pile = perm
                    .iter()
                    .position(|&old| old == ply.mv.pile as usize)
                    .expect("permutation covers every pile");
                (
                    ply.state.permuted(perm),
                    NimMove {
                        pile: new_pile as u8,
                        take: ply.mv.take,
                    },
                )
            } else {
                (ply.state, ply.mv)
            };
            encode_nim_record(&state, tag, mv)
        })
        .collect()
}

fn run_nim_game(
    config: &GenConfig,
    qtable: Option<&QTable>,
    index: u64,
) -> Result<NimGame, CorpusError> {
    let (a, b) = config.seats_for_game(index).expect("pairings checked");
    let mut rng = derived_rng(config.seed, index);
    let make = |tag: char| -> Box<dyn NimAgent + '_> {
        match AgentKind::from_tag(tag).expect("validated") {
            AgentKind::Guru => Box::new(GuruAgent),
            AgentKind::Random => Box::new(RandomAgent),
            AgentKind::QLearner => Box::new(QAgent {
                table: qtable.expect("q-table trained when scheduled"),
            }),
        }
    };
    let mut first = make(a);
    let mut second = make(b);
    let start = if config.randomized_start {
        NimState::random_start(config.max_pile, &mut rng)
    } else {
        NimState::with_max([config.max_pile; 3], config.max_pile)?
    };
    let record = play_nim_game(
        first.as_mut(),
        second.as_mut(),
        start,
        config.noise,
        &mut rng,
    )?;
    let lines = nim_lines(&record, config.variant, config.shuffle_labels, &mut rng);
    Ok(NimGame { record, lines })
}

/// Trains the Q-learner used by generation, when any pairing needs it.
pub fn train_generation_qtable(config: &GenConfig) -> Result<Option<QTable>, CorpusError> {
    let pairings = config.nim_pairings()?;
    if !pairings
        .iter()
        .any(|&(a, b)| a == AgentKind::QLearner || b == AgentKind::QLearner)
    {
        return Ok(None);
    }
    info!("training Q-learner for {} episodes", config.q_episodes);
    let mut rng = derived_rng(config.seed, u64::MAX);
    let table = q_train(
        config.q_episodes,
        &mut RandomAgent,
        config.q_params,
        config.max_pile,
        &mut rng,
    )?;
    Ok(Some(table))
}

/// Runs `count` independent jobs over `jobs` threads, results in index order.
pub(crate) fn parallel_indexed<T, E, F>(count: u64, jobs: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync,
{
    let jobs = jobs.max(1).min(count.max(1) as usize);
    if jobs == 1 {
        return (0..count).map(&f).collect();
    }
    let chunk = count.div_ceil(jobs as u64);
    let parts: Vec<Result<Vec<T>, E>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs as u64)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(count);
                    (lo..hi).map(f).collect::<Result<Vec<T>, E>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(count as usize);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Plays the scheduled Nim games. Game `i` uses pairing `(i / 2) % P` with
/// seats swapped on odd `i`, and its own stream derived from the seed.
pub fn generate_nim_games(
    config: &GenConfig,
    qtable: Option<&QTable>,
) -> Result<Vec<NimGame>, CorpusError> {
    config.validate()?;
    config.nim_pairings()?;
    let trained;
    let qtable = match qtable {
        Some(t) => Some(t),
        None => {
            trained = train_generation_qtable(config)?;
            trained.as_ref()
        }
    };
    parallel_indexed(config.games, config.jobs, |i| {
        run_nim_game(config, qtable, i)
    })
}

/// Generates a Nim corpus into `out` and returns its statistics.
pub fn gen_nim_corpus(
    config: &GenConfig,
    qtable: Option<&QTable>,
    out: &mut dyn Write,
) -> Result<CorpusStats, CorpusError> {
    let games = generate_nim_games(config, qtable)?;
    let blocks: Vec<Vec<String>> = games.into_iter().map(|g| g.lines).collect();
    let text = render_games(&blocks);
    out.write_all(text.as_bytes())?;
    Ok(CorpusStats::from_text(&text))
}

/// Outcome of one generated chess game.
#[derive(Debug, Clone)]
pub struct ChessGame {
    pub lines: Vec<String>,
    /// Set when the oracle failed and the game was cut short.
    pub aborted: Option<String>,
}

type OracleFactory<'a> = dyn Fn() -> Result<Box<dyn MoveOracle + Send>, UciError> + Sync + 'a;

fn play_chess_game(
    config: &GenConfig,
    oracle: &mut dyn MoveOracle,
    index: u64,
) -> Result<ChessGame, ChessError> {
    let mut rng = derived_rng(config.seed, index);
    let mut position = ChessPosition::initial();
    let mut lines = Vec::new();
    if let Err(e) = oracle.new_game() {
        return Ok(ChessGame {
            lines,
            aborted: Some(e.to_string()),
        });
    }
    for ply in 0..config.chess_plies {
        if game_status(&position, ply, config.ply_limit).is_over() {
            break;
        }
        let mv = if config.noise > 0.0 && rng.gen_bool(config.noise) {
            *legal_moves(&position)
                .choose(&mut rng)
                .expect("ongoing position has moves")
        } else {
            match oracle.choose(&position) {
                Ok(mv) => mv,
                Err(e) => {
                    return Ok(ChessGame {
                        lines,
                        aborted: Some(e.to_string()),
                    })
                }
            }
        };
        lines.push(encode_chess_record(&position, &mv));
        position = apply_chess_move(&position, mv)?;
    }
    Ok(ChessGame {
        lines,
        aborted: None,
    })
}

/// Plays engine self-play games from the initial position, recording
/// `(FEN before the move, move)` for the first `chess_plies` plies.
///
/// A failing oracle aborts only the current game; a fresh oracle is created
/// from `factory` for the next one. Each worker owns one oracle.
pub fn generate_chess_games(
    config: &GenConfig,
    factory: &OracleFactory<'_>,
) -> Result<Vec<ChessGame>, CorpusError> {
    config.validate()?;
    let jobs = config.jobs.max(1).min(config.games.max(1) as usize);
    let chunk = config.games.div_ceil(jobs as u64);
    let worker = |w: u64| -> Result<Vec<ChessGame>, CorpusError> {
        let lo = w * chunk;
        let hi = ((w + 1) * chunk).min(config.games);
        let mut games = Vec::new();
        let mut oracle: Option<Box<dyn MoveOracle + Send>> = None;
        for i in lo..hi {
            if oracle.is_none() {
                oracle = Some(factory()?);
            }
            let game = play_chess_game(config, oracle.as_mut().expect("set").as_mut(), i)?;
            if let Some(reason) = &game.aborted {
                warn!("chess game {i} aborted: {reason}");
                oracle = None;
            }
            games.push(game);
        }
        Ok(games)
    };
    let parts = parallel_indexed(jobs as u64, jobs, worker)?;
    Ok(parts.into_iter().flatten().collect())
}

/// Generates a chess corpus into `out` and returns its statistics.
pub fn gen_chess_corpus(
    config: &GenConfig,
    factory: &OracleFactory<'_>,
    out: &mut dyn Write,
) -> Result<CorpusStats, CorpusError> {
    let games = generate_chess_games(config, factory)?;
    let blocks: Vec<Vec<String>> = games
        .into_iter()
        .map(|g| g.lines)
        .filter(|l| !l.is_empty())
        .collect();
    let text = render_games(&blocks);
    out.write_all(text.as_bytes())?;
    Ok(CorpusStats::from_text(&text))
}

/// Seed for auxiliary streams of a run (splits, training) distinct from the
/// per-game streams.
pub fn aux_seed(master: u64, purpose: u64) -> u64 {
    derive_seed(master ^ 0xA5A5_5A5A_DEAD_BEEF, purpose)
}
