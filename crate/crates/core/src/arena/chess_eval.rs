//! Chess model evaluation: move validity and endurance against an engine.

use log::warn;
use serde::{Deserialize, Serialize};

use super::ArenaError;
use crate::chess::{
    apply_chess_move, game_status, is_legal, parse_move, ChessMove, ChessPosition, Color,
    GameStatus, DEFAULT_PLY_LIMIT,
};
use crate::corpus::{chess_query, decode_chess_record};
use crate::mlm::{masked_distributions, rank, TransformerParams};
use crate::tokenizer::{tokenize, Vocab};
use crate::uci::{MoveOracle, UciError};

/// Rows always emitted in validity histograms.
pub const HISTOGRAM_PLIES: u32 = 70;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityRow {
    pub ply: u32,
    pub valid: u64,
    pub total: u64,
}

impl ValidityRow {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.valid as f64 / self.total as f64)
    }
}

fn empty_rows(n: u32) -> Vec<ValidityRow> {
    (1..=n)
        .map(|ply| ValidityRow {
            ply,
            valid: 0,
            total: 0,
        })
        .collect()
}

fn bump(rows: &mut Vec<ValidityRow>, ply: u32, valid: bool) {
    if rows.len() < ply as usize {
        let have = rows.len() as u32;
        rows.extend(empty_rows(ply).into_iter().skip(have as usize));
    }
    let row = &mut rows[ply as usize - 1];
    row.total += 1;
    row.valid += u64::from(valid);
}

/// Sum of a histogram.
pub fn overall(rows: &[ValidityRow]) -> (u64, u64) {
    rows.iter()
        .fold((0, 0), |(v, t), r| (v + r.valid, t + r.total))
}

/// The model's top-1 move for a position, when it is well formed and legal.
fn model_move(
    params: &TransformerParams<f32>,
    vocab: &Vocab,
    position: &ChessPosition,
) -> Option<ChessMove> {
    let ids = tokenize(vocab, &chess_query(position));
    let probs = masked_distributions(params, &[ids]).ok()?.remove(0);
    let top = rank(&probs)[0].0;
    let mv = parse_move(vocab.token(top)?).ok()?;
    is_legal(position, mv).then_some(mv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChessEvalConfig {
    pub games: u64,
    pub ply_limit: u32,
    pub model_color: Color,
}

impl Default for ChessEvalConfig {
    fn default() -> Self {
        Self {
            games: 20,
            ply_limit: DEFAULT_PLY_LIMIT,
            model_color: Color::White,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChessGameSummary {
    /// Plies played.
    pub plies: u32,
    pub status: GameStatus,
    pub model_moves: u32,
    pub invalid_preds: u32,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChessMatchReport {
    pub model_color: Color,
    /// Validity of the model's predictions by its own move number (1-based).
    pub validity: Vec<ValidityRow>,
    pub games: Vec<ChessGameSummary>,
}

impl ChessMatchReport {
    pub fn invalid_preds(&self) -> u64 {
        self.games.iter().map(|g| u64::from(g.invalid_preds)).sum()
    }
}

type OracleFactory<'a> = dyn Fn() -> Result<Box<dyn MoveOracle + Send>, UciError> + 'a;

/// Model plays one colour by filling `FEN [MOVESEP] [MASK]`; an invalid
/// top-1 prediction is replaced by the engine's move and the game goes on
/// until it ends or hits the ply limit.
pub fn play_chess_vs_engine(
    params: &TransformerParams<f32>,
    vocab: &Vocab,
    factory: &OracleFactory<'_>,
    config: &ChessEvalConfig,
) -> Result<ChessMatchReport, ArenaError> {
    let mut report = ChessMatchReport {
        model_color: config.model_color,
        validity: Vec::new(),
        games: Vec::new(),
    };
    report.validity = empty_rows(HISTOGRAM_PLIES);
    let mut oracle: Option<Box<dyn MoveOracle + Send>> = None;
    for game in 0..config.games {
        if oracle.is_none() {
            oracle = Some(factory()?);
        }
        let engine = oracle.as_mut().expect("connected");
        let mut summary = ChessGameSummary {
            plies: 0,
            status: GameStatus::Ongoing,
            model_moves: 0,
            invalid_preds: 0,
            aborted: None,
        };
        let mut position = ChessPosition::initial();
        let outcome: Result<(), UciError> = (|| {
            engine.new_game()?;
            loop {
                summary.status = game_status(&position, summary.plies, config.ply_limit);
                if summary.status.is_over() {
                    return Ok(());
                }
                let mv = if position.side_to_move() == config.model_color {
                    summary.model_moves += 1;
                    let predicted = model_move(params, vocab, &position);
                    bump(
                        &mut report.validity,
                        summary.model_moves,
                        predicted.is_some(),
                    );
                    match predicted {
                        Some(mv) => mv,
                        None => {
                            summary.invalid_preds += 1;
                            engine.choose(&position)?
                        }
                    }
                } else {
                    engine.choose(&position)?
                };
                position = apply_chess_move(&position, mv)
                    .map_err(|e| UciError::Protocol(e.to_string()))?;
                summary.plies += 1;
            }
        })();
        if let Err(e) = outcome {
            warn!("chess game {game} aborted: {e}");
            summary.aborted = Some(e.to_string());
            oracle = None;
        }
        report.games.push(summary);
    }
    Ok(report)
}

/// Top-1 validity of the model on held-out chess records, by ply number
/// (1-based, from the record's FEN).
pub fn chess_heldout_validity(
    params: &TransformerParams<f32>,
    vocab: &Vocab,
    lines: &[String],
) -> Result<Vec<ValidityRow>, ArenaError> {
    let max_seq = params.config().max_seq;
    let mut rows = Vec::new();
    let mut pending: Vec<(u32, ChessPosition, Vec<u32>)> = Vec::new();
    let flush = |pending: &mut Vec<(u32, ChessPosition, Vec<u32>)>,
                 rows: &mut Vec<ValidityRow>|
     -> Result<(), ArenaError> {
        if pending.is_empty() {
            return Ok(());
        }
        let seqs: Vec<Vec<u32>> = pending.iter().map(|p| p.2.clone()).collect();
        let dists = masked_distributions(params, &seqs)?;
        for ((ply, position, _), probs) in pending.drain(..).zip(dists) {
            let top = rank(&probs)[0].0;
            let valid = vocab
                .token(top)
                .and_then(|t| parse_move(t).ok())
                .is_some_and(|mv| is_legal(&position, mv));
            bump(rows, ply, valid);
        }
        Ok(())
    };
    for line in lines {
        let record = decode_chess_record(line)?;
        let ply = record.position.ply_index() + 1;
        let ids = tokenize(vocab, &chess_query(&record.position));
        if ids.len() > max_seq {
            bump(&mut rows, ply, false);
            continue;
        }
        pending.push((ply, record.position, ids));
        if pending.len() == 64 {
            flush(&mut pending, &mut rows)?;
        }
    }
    flush(&mut pending, &mut rows)?;
    Ok(rows)
}
