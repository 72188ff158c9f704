//! Matches, tournaments and experiments between agents and trained models.

mod chess_eval;
pub mod report;

use std::collections::HashMap;
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    generate_nim_games, nim_query, parallel_indexed, parse_nim_move, CorpusError, GenConfig,
};
use crate::mlm::{
    init_params, masked_distributions, rank, train, MlmError, ModelConfig, TrainConfig,
    TransformerParams,
};
use crate::nim::{
    play_nim_game, uniform_legal_move, GuruAgent, NimAgent, NimError, NimMove, NimState, QAgent,
    QTable, RandomAgent, Seat,
};
use crate::seed::{derive_seed, rng_from_seed, GameRng};
use crate::tokenizer::{tokenize, train_wordpiece, TokenizerError, TrainerConfig, Vocab};
use crate::uci::UciError;

pub use chess_eval::{
    chess_heldout_validity, overall, play_chess_vs_engine, ChessEvalConfig, ChessGameSummary,
    ChessMatchReport, ValidityRow, HISTOGRAM_PLIES,
};

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("invalid arena config: {0}")]
    Config(String),
    #[error(transparent)]
    Nim(#[from] NimError),
    #[error(transparent)]
    Mlm(#[from] MlmError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Engine(#[from] UciError),
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Nim player backed by a trained model.
///
/// It asks the model to fill the move slot of `state tag - [MASK]` and plays
/// the highest-ranked token that is a legal move. A top-1 token that is not a
/// legal move counts as an invalid prediction; if no token is legal a uniform
/// legal move is played and counted as a fallback.
pub struct ModelNimAgent<'a> {
    params: &'a TransformerParams<f32>,
    vocab: &'a Vocab,
    query_tag: char,
    cache: HashMap<NimState, (Option<NimMove>, bool)>,
    invalid: u64,
    fallbacks: u64,
    moves: u64,
}

impl<'a> ModelNimAgent<'a> {
    pub fn new(
        params: &'a TransformerParams<f32>,
        vocab: &'a Vocab,
        tag: char,
    ) -> Result<Self, ArenaError> {
        if !vocab.contains(&tag.to_string()) {
            return Err(ArenaError::Config(format!(
                "tag {tag:?} is not in the model's vocabulary"
            )));
        }
        if vocab.len() != params.config().vocab {
            return Err(ArenaError::Config("vocab and model sizes differ".into()));
        }
        Ok(Self {
            params,
            vocab,
            query_tag: tag,
            cache: HashMap::new(),
            invalid: 0,
            fallbacks: 0,
            moves: 0,
        })
    }

    pub fn fallbacks(&self) -> u64 {
        self.fallbacks
    }

    pub fn moves(&self) -> u64 {
        self.moves
    }

    /// First legal move in the model's ranking, and whether the top-1 token
    /// was itself legal.
    fn ranked_choice(&self, state: &NimState) -> Result<(Option<NimMove>, bool), MlmError> {
        let ids = tokenize(self.vocab, &nim_query(state, self.query_tag));
        let probs = masked_distributions(self.params, &[ids])?.remove(0);
        let legal = |id: u32| {
            self.vocab
                .token(id)
                .and_then(parse_nim_move)
                .filter(|mv| state.is_legal(*mv))
        };
        let ranked = rank(&probs);
        let top_valid = legal(ranked[0].0).is_some();
        Ok((ranked.iter().find_map(|&(id, _)| legal(id)), top_valid))
    }
}

impl NimAgent for ModelNimAgent<'_> {
    fn tag(&self) -> char {
        self.query_tag
    }

    fn choose_move(&mut self, state: &NimState, rng: &mut GameRng) -> Result<NimMove, NimError> {
        let (choice, top_valid) = match self.cache.get(state) {
            Some(&hit) => hit,
            None => {
                let fresh = self
                    .ranked_choice(state)
                    .map_err(|e| NimError::Agent(e.to_string()))?;
                self.cache.insert(*state, fresh);
                fresh
            }
        };
        self.moves += 1;
        if !top_valid {
            self.invalid += 1;
        }
        match choice {
            Some(mv) => Ok(mv),
            None => {
                self.fallbacks += 1;
                uniform_legal_move(state, rng)
            }
        }
    }

    fn invalid_predictions(&self) -> u64 {
        self.invalid
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeatStats {
    pub games: u64,
    pub wins: u64,
    pub invalid_preds: u64,
}

/// One side of a match, split by the seat it occupied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub label: String,
    pub first: SeatStats,
    pub second: SeatStats,
}

impl AgentRecord {
    fn new(label: &str) -> Self {
        Self {
            label: label.to_string(),
            first: SeatStats::default(),
            second: SeatStats::default(),
        }
    }

    pub fn wins(&self) -> u64 {
        self.first.wins + self.second.wins
    }

    pub fn games(&self) -> u64 {
        self.first.games + self.second.games
    }

    pub fn invalid_preds(&self) -> u64 {
        self.first.invalid_preds + self.second.invalid_preds
    }

    pub fn win_rate(&self) -> f64 {
        if self.games() == 0 {
            0.0
        } else {
            self.wins() as f64 / self.games() as f64
        }
    }

    fn seat_mut(&mut self, seat: Seat) -> &mut SeatStats {
        match seat {
            Seat::First => &mut self.first,
            Seat::Second => &mut self.second,
        }
    }
}

/// Outcome of a Nim match between two agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Noise level of the corpus behind the level's models, when part of a
    /// tournament.
    pub noise: Option<f64>,
    pub games: u64,
    pub seed: u64,
    pub a: AgentRecord,
    pub b: AgentRecord,
}

impl MatchReport {
    /// Every game has exactly one winner and the seat split is even.
    pub fn is_consistent(&self) -> bool {
        self.a.wins() + self.b.wins() == self.games
            && self.a.first.games == self.b.second.games
            && self.a.second.games == self.b.first.games
            && self.a.first.wins + self.b.second.wins == self.a.first.games
            && self.a.second.wins + self.b.first.wins == self.a.second.games
    }
}

/// Plays `games` games (even), half with `a` moving first, alternating, each
/// from a uniform random start in `[1, max_pile]³`.
pub fn play_nim_match(
    a: (&str, &mut dyn NimAgent),
    b: (&str, &mut dyn NimAgent),
    games: u64,
    max_pile: u8,
    seed: u64,
) -> Result<MatchReport, ArenaError> {
    if !games.is_multiple_of(2) {
        return Err(ArenaError::Config(format!(
            "match needs an even game count, got {games}"
        )));
    }
    let (a_label, agent_a) = a;
    let (b_label, agent_b) = b;
    let mut report = MatchReport {
        noise: None,
        games,
        seed,
        a: AgentRecord::new(a_label),
        b: AgentRecord::new(b_label),
    };
    let mut rng = rng_from_seed(seed);
    for i in 0..games {
        let start = NimState::random_start(max_pile, &mut rng);
        let a_first = i % 2 == 0;
        let (inv_a, inv_b) = (agent_a.invalid_predictions(), agent_b.invalid_predictions());
        let record = if a_first {
            play_nim_game(&mut *agent_a, &mut *agent_b, start, 0.0, &mut rng)?
        } else {
            play_nim_game(&mut *agent_b, &mut *agent_a, start, 0.0, &mut rng)?
        };
        let (seat_a, seat_b) = if a_first {
            (Seat::First, Seat::Second)
        } else {
            (Seat::Second, Seat::First)
        };
        let sa = report.a.seat_mut(seat_a);
        sa.games += 1;
        sa.invalid_preds += agent_a.invalid_predictions() - inv_a;
        sa.wins += u64::from(record.winner == seat_a);
        let sb = report.b.seat_mut(seat_b);
        sb.games += 1;
        sb.invalid_preds += agent_b.invalid_predictions() - inv_b;
        sb.wins += u64::from(record.winner == seat_b);
    }
    Ok(report)
}

/// How to build an agent for a tournament.
#[derive(Clone)]
pub enum AgentSpec {
    Guru,
    Random,
    QLearner(Arc<QTable>),
    Model {
        params: Arc<TransformerParams<f32>>,
        vocab: Arc<Vocab>,
        tag: char,
    },
}

#[derive(Clone)]
pub struct RosterAgent {
    pub label: String,
    pub spec: AgentSpec,
}

/// The agents that meet at one noise level.
#[derive(Clone)]
pub struct RosterLevel {
    pub noise: f64,
    pub agents: Vec<RosterAgent>,
}

fn with_agent<R>(
    spec: &AgentSpec,
    f: impl FnOnce(&mut dyn NimAgent) -> Result<R, ArenaError>,
) -> Result<R, ArenaError> {
    match spec {
        AgentSpec::Guru => f(&mut GuruAgent),
        AgentSpec::Random => f(&mut RandomAgent),
        AgentSpec::QLearner(table) => f(&mut QAgent { table }),
        AgentSpec::Model { params, vocab, tag } => f(&mut ModelNimAgent::new(params, vocab, *tag)?),
    }
}

/// Plays every unordered pair of agents at every level for
/// `games_per_pairing` games (seats split evenly). Matches are independent
/// with derived seeds, so `jobs` changes only the wall time.
pub fn roster_tournament(
    levels: &[RosterLevel],
    games_per_pairing: u64,
    max_pile: u8,
    seed: u64,
    jobs: usize,
) -> Result<Vec<MatchReport>, ArenaError> {
    let mut fixtures = Vec::new();
    for (li, level) in levels.iter().enumerate() {
        if level.agents.len() < 2 {
            return Err(ArenaError::Config(format!(
                "noise level {} has fewer than two agents",
                level.noise
            )));
        }
        for i in 0..level.agents.len() {
            for j in i + 1..level.agents.len() {
                fixtures.push((li, i, j));
            }
        }
    }
    parallel_indexed(fixtures.len() as u64, jobs, |k| {
        let (li, i, j) = fixtures[k as usize];
        let level = &levels[li];
        let (a, b) = (&level.agents[i], &level.agents[j]);
        let match_seed = derive_seed(seed, k);
        let mut report = with_agent(&a.spec, |agent_a| {
            with_agent(&b.spec, |agent_b| {
                play_nim_match(
                    (&a.label, agent_a),
                    (&b.label, agent_b),
                    games_per_pairing,
                    max_pile,
                    match_seed,
                )
            })
        })?;
        report.noise = Some(level.noise);
        info!(
            "noise {}: {} {:.3} vs {} {:.3}",
            level.noise,
            a.label,
            report.a.win_rate(),
            b.label,
            report.b.win_rate()
        );
        Ok(report)
    })
}

/// Trains a WordPiece vocabulary and a fresh model on corpus lines.
pub fn train_model_on_lines(
    lines: &[String],
    tokenizer: TrainerConfig,
    model: ModelConfig,
    train_config: &TrainConfig,
    init_seed: u64,
) -> Result<(Vocab, TransformerParams<f32>, Vec<f64>), ArenaError> {
    let vocab = train_wordpiece(lines, tokenizer)?;
    let longest = lines
        .iter()
        .map(|l| tokenize(&vocab, l).len())
        .max()
        .unwrap_or(0);
    let config = ModelConfig {
        vocab: vocab.len(),
        max_seq: model.max_seq.max(longest),
        ..model
    };
    let mut params = init_params::<f32>(config, &mut rng_from_seed(init_seed))?;
    let report = train(&mut params, lines, &vocab, train_config)?;
    Ok((vocab, params, report.losses))
}

/// Settings of the match-size experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub match_sizes: Vec<u64>,
    /// Evaluation games against the random agent per point (even).
    pub eval_games: u64,
    pub seed: u64,
    /// Architecture; the vocabulary size is filled in per run.
    pub model: ModelConfig,
    /// Optimizer settings; the step count is derived from `epochs`.
    pub train: TrainConfig,
    pub epochs: f64,
    pub min_steps: usize,
    pub max_steps: usize,
    pub tokenizer: TrainerConfig,
    pub shuffle_labels: bool,
    pub max_pile: u8,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            match_sizes: vec![10, 50, 100, 300],
            eval_games: 1000,
            seed: 0,
            model: ModelConfig::tiny(0, 32),
            train: TrainConfig::default(),
            epochs: 250.0,
            min_steps: 300,
            max_steps: 40000,
            tokenizer: TrainerConfig::NIM,
            shuffle_labels: true,
            max_pile: crate::nim::MAX_PILE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub match_size: u64,
    pub training_games: u64,
    pub records: u64,
    pub vocab_size: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub win_rate: f64,
    pub games: u64,
    pub invalid_rate: f64,
    pub seed: u64,
}

/// For each match size `m`: plays `m` Guru-first and `m` random-first games,
/// trains a tokenizer and model from scratch on them, and measures the model
/// (queried with tag `G`) against the random agent.
pub fn match_size_sweep(config: &SweepConfig) -> Result<Vec<SweepPoint>, ArenaError> {
    let mut points = Vec::new();
    for &m in &config.match_sizes {
        if m == 0 {
            return Err(ArenaError::Config("match sizes must be at least 1".into()));
        }
        let point_seed = derive_seed(config.seed, m);
        let gen = GenConfig {
            games: 2 * m,
            pairings: vec![('G', 'R')],
            noise: 0.0,
            seed: derive_seed(point_seed, 0),
            shuffle_labels: config.shuffle_labels,
            max_pile: config.max_pile,
            ..GenConfig::default()
        };
        let lines: Vec<String> = generate_nim_games(&gen, None)?
            .into_iter()
            .flat_map(|g| g.lines)
            .collect();
        let steps =
            crate::mlm::steps_for_epochs(lines.len(), config.epochs, config.train.batch_size)
                .clamp(config.min_steps, config.max_steps.max(config.min_steps));
        let train_config = TrainConfig {
            steps,
            seed: derive_seed(point_seed, 1),
            ..config.train.clone()
        };
        let (vocab, params, losses) = train_model_on_lines(
            &lines,
            config.tokenizer,
            config.model,
            &train_config,
            derive_seed(point_seed, 2),
        )?;
        let mut model = ModelNimAgent::new(&params, &vocab, 'G')?;
        let report = play_nim_match(
            ("model-G", &mut model),
            ("R", &mut RandomAgent),
            config.eval_games,
            config.max_pile,
            derive_seed(point_seed, 3),
        )?;
        let point = SweepPoint {
            match_size: m,
            training_games: 2 * m,
            records: lines.len() as u64,
            vocab_size: vocab.len(),
            steps,
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
            win_rate: report.a.win_rate(),
            games: report.games,
            invalid_rate: report.a.invalid_preds() as f64 / model.moves().max(1) as f64,
            seed: point_seed,
        };
        info!(
            "sweep m={m}: win rate {:.3} over {} games",
            point.win_rate, point.games
        );
        points.push(point);
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nim::{nim_sum, q_train, QParams, MAX_PILE};

    #[test]
    fn guru_beats_random() {
        let r = play_nim_match(
            ("G", &mut GuruAgent),
            ("R", &mut RandomAgent),
            1000,
            MAX_PILE,
            1,
        )
        .unwrap();
        assert!(r.is_consistent());
        assert!(r.a.win_rate() >= 0.9, "{r:?}");
        assert_eq!((r.a.first.games, r.a.second.games), (500, 500));
    }

    #[test]
    fn random_vs_random_is_symmetric() {
        let r = play_nim_match(
            ("R1", &mut RandomAgent),
            ("R2", &mut RandomAgent),
            10_000,
            MAX_PILE,
            2,
        )
        .unwrap();
        assert!(r.is_consistent());
        assert!((r.a.win_rate() - 0.5).abs() <= 0.03, "{}", r.a.win_rate());
    }

    #[test]
    fn guru_vs_guru_matches_enumeration() {
        let winning = NimState::all(MAX_PILE)
            .filter(|s| (1..=3).all(|i| s.pile(i - 1) >= 1))
            .filter(|s| nim_sum(s) != 0)
            .count() as f64
            / 1000.0;
        let r = play_nim_match(
            ("G1", &mut GuruAgent),
            ("G2", &mut GuruAgent),
            10_000,
            MAX_PILE,
            3,
        )
        .unwrap();
        let first_seat = (r.a.first.wins + r.b.first.wins) as f64 / 10_000.0;
        assert!(
            (first_seat - winning).abs() <= 0.02,
            "{first_seat} vs {winning}"
        );
    }

    #[test]
    fn odd_game_counts_are_rejected() {
        assert!(play_nim_match(
            ("G", &mut GuruAgent),
            ("R", &mut RandomAgent),
            3,
            MAX_PILE,
            1
        )
        .is_err());
    }

    #[test]
    fn roster_plays_every_pair_and_ignores_jobs() {
        let table = Arc::new(
            q_train(
                2000,
                &mut RandomAgent,
                QParams::default(),
                MAX_PILE,
                &mut rng_from_seed(1),
            )
            .unwrap(),
        );
        let level = RosterLevel {
            noise: 0.3,
            agents: vec![
                RosterAgent {
                    label: "G".into(),
                    spec: AgentSpec::Guru,
                },
                RosterAgent {
                    label: "Q".into(),
                    spec: AgentSpec::QLearner(table),
                },
                RosterAgent {
                    label: "R".into(),
                    spec: AgentSpec::Random,
                },
            ],
        };
        let one = roster_tournament(std::slice::from_ref(&level), 100, MAX_PILE, 9, 1).unwrap();
        let two = roster_tournament(&[level], 100, MAX_PILE, 9, 2).unwrap();
        assert_eq!(one, two);
        assert_eq!(one.len(), 3);
        assert!(one
            .iter()
            .all(|r| r.is_consistent() && r.noise == Some(0.3)));
    }
}
