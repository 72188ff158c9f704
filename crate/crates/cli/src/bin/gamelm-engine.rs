//! Small UCI chess engine used when no external engine is configured.
//!
//! Fixed-depth alpha-beta over material and piece-square tables with a
//! capture-only quiescence search. Move ordering and evaluation are fully
//! deterministic, so equal positions always yield equal replies.

use std::io::{self, BufRead, Write};
use std::time::{Duration, Instant};

use gamelm::chess::{
    apply_chess_move, legal_moves, parse_fen, parse_move, ChessMove, ChessPosition, Color,
    PieceKind, Square, INITIAL_FEN,
};

const MATE: i32 = 100_000;
const ELO_MIN: u32 = 1320;
const ELO_MAX: u32 = 2850;
const QUIESCENCE_DEPTH: u32 = 4;

fn value(kind: PieceKind) -> i32 {
    match kind {
        PieceKind::Pawn => 100,
        PieceKind::Knight => 320,
        PieceKind::Bishop => 330,
        PieceKind::Rook => 500,
        PieceKind::Queen => 900,
        PieceKind::King => 0,
    }
}

/// Positional bonus from white's point of view; `rank` 0 is white's back rank.
fn placement(kind: PieceKind, file: i32, rank: i32) -> i32 {
    let centre = 6 - ((2 * file - 7).abs() + (2 * rank - 7).abs()) / 2;
    match kind {
        PieceKind::Pawn => rank * 6 + if (3..=4).contains(&file) { rank * 3 } else { 0 },
        PieceKind::Knight => centre * 6 - 10,
        PieceKind::Bishop => centre * 3,
        PieceKind::Rook => {
            if rank == 6 {
                15
            } else {
                0
            }
        }
        PieceKind::Queen => centre,
        PieceKind::King => {
            if rank == 0 {
                10 - centre * 2
            } else {
                -20
            }
        }
    }
}

/// Static score from the side to move's point of view.
fn evaluate(position: &ChessPosition) -> i32 {
    let mut score = 0;
    for index in 0..64u8 {
        let square = Square::from_index(index).expect("board index");
        let Some(piece) = position.piece_at(square) else {
            continue;
        };
        let (file, rank) = (i32::from(square.file()), i32::from(square.rank()));
        let rank = if piece.color == Color::White {
            rank
        } else {
            7 - rank
        };
        let v = value(piece.kind) + placement(piece.kind, file, rank);
        score += if piece.color == Color::White { v } else { -v };
    }
    if position.side_to_move() == Color::White {
        score
    } else {
        -score
    }
}

fn is_capture(position: &ChessPosition, mv: &ChessMove) -> bool {
    position.piece_at(mv.to).is_some() || mv.promotion.is_some()
}

fn ordered_moves(position: &ChessPosition) -> Vec<ChessMove> {
    let mut moves = legal_moves(position);
    moves.sort_by_key(|mv| {
        let gain = position.piece_at(mv.to).map_or(0, |p| value(p.kind) * 10);
        let mover = position.piece_at(mv.from).map_or(0, |p| value(p.kind));
        let promo = mv.promotion.map_or(0, value);
        (-(gain - mover + promo * 10), mv.to_string())
    });
    moves
}

struct Search {
    deadline: Option<Instant>,
    nodes: u64,
    out_of_time: bool,
    /// Deterministic per-move jitter in centipawns when strength is limited.
    jitter: i32,
    salt: u64,
}

impl Search {
    fn timed_out(&mut self) -> bool {
        if self.nodes.is_multiple_of(1024) {
            if let Some(d) = self.deadline {
                self.out_of_time |= Instant::now() >= d;
            }
        }
        self.out_of_time
    }

    fn quiesce(&mut self, position: &ChessPosition, mut alpha: i32, beta: i32, depth: u32) -> i32 {
        self.nodes += 1;
        let stand = evaluate(position);
        if stand >= beta || depth == 0 {
            return stand;
        }
        alpha = alpha.max(stand);
        for mv in ordered_moves(position) {
            if !is_capture(position, &mv) {
                continue;
            }
            let next = apply_chess_move(position, mv).expect("generated move is legal");
            let score = -self.quiesce(&next, -beta, -alpha, depth - 1);
            if score >= beta {
                return score;
            }
            alpha = alpha.max(score);
        }
        alpha
    }

    fn negamax(
        &mut self,
        position: &ChessPosition,
        depth: u32,
        ply: i32,
        mut alpha: i32,
        beta: i32,
    ) -> i32 {
        self.nodes += 1;
        let moves = ordered_moves(position);
        if moves.is_empty() {
            return if position.in_check(position.side_to_move()) {
                -MATE + ply
            } else {
                0
            };
        }
        if position.halfmove_clock() >= 100 {
            return 0;
        }
        if depth == 0 {
            return self.quiesce(position, alpha, beta, QUIESCENCE_DEPTH);
        }
        let mut best = -MATE - 1;
        for mv in moves {
            if self.timed_out() {
                break;
            }
            let next = apply_chess_move(position, mv).expect("generated move is legal");
            let score = -self.negamax(&next, depth - 1, ply + 1, -beta, -alpha);
            best = best.max(score);
            alpha = alpha.max(score);
            if alpha >= beta {
                break;
            }
        }
        best
    }

    fn noise(&self, mv: &ChessMove) -> i32 {
        if self.jitter == 0 {
            return 0;
        }
        let mut h = self.salt ^ 0x9e37_79b9_7f4a_7c15;
        for b in mv.to_string().bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
        (h % (2 * self.jitter as u64 + 1)) as i32 - self.jitter
    }

    fn root(&mut self, position: &ChessPosition, depth: u32) -> Option<(ChessMove, i32)> {
        let mut best: Option<(ChessMove, i32)> = None;
        let mut alpha = -MATE - 1;
        for mv in ordered_moves(position) {
            let next = apply_chess_move(position, mv).expect("generated move is legal");
            let score = -self.negamax(&next, depth - 1, 1, -MATE - 1, -alpha + self.jitter)
                + self.noise(&mv);
            if self.out_of_time && best.is_some() {
                return None;
            }
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((mv, score));
                alpha = alpha.max(score - self.jitter);
            }
        }
        best
    }
}

struct Engine {
    position: ChessPosition,
    limit_strength: bool,
    elo: u32,
    searches: u64,
}

impl Engine {
    fn go(&mut self, args: &[&str], out: &mut impl Write) -> io::Result<()> {
        let mut depth = None;
        let mut movetime = None;
        let mut it = args.iter();
        while let Some(&word) = it.next() {
            match word {
                "depth" => depth = it.next().and_then(|v| v.parse::<u32>().ok()),
                "movetime" => movetime = it.next().and_then(|v| v.parse::<u64>().ok()),
                _ => {}
            }
        }
        if legal_moves(&self.position).is_empty() {
            writeln!(out, "bestmove (none)")?;
            return out.flush();
        }
        let max_depth = depth
            .unwrap_or(if movetime.is_some() { 64 } else { 3 })
            .max(1);
        self.searches += 1;
        let mut search = Search {
            deadline: movetime.map(|ms| Instant::now() + Duration::from_millis(ms)),
            nodes: 0,
            out_of_time: false,
            jitter: if self.limit_strength {
                ((ELO_MAX - self.elo) / 6) as i32
            } else {
                0
            },
            salt: self.searches,
        };
        let mut best = None;
        for d in 1..=max_depth {
            match search.root(&self.position, d) {
                Some(found) => {
                    writeln!(
                        out,
                        "info depth {d} score cp {} nodes {}",
                        found.1, search.nodes
                    )?;
                    best = Some(found.0);
                }
                None => break,
            }
            if search.out_of_time {
                break;
            }
        }
        let mv = best.expect("a legal move exists");
        writeln!(out, "bestmove {mv}")?;
        out.flush()
    }

    fn set_position(&mut self, args: &[&str]) -> Result<(), String> {
        let (mut position, rest) = match args.first() {
            Some(&"startpos") => (
                parse_fen(INITIAL_FEN).map_err(|e| e.to_string())?,
                &args[1..],
            ),
            Some(&"fen") => {
                let end = args
                    .iter()
                    .position(|&w| w == "moves")
                    .unwrap_or(args.len());
                (
                    parse_fen(&args[1..end].join(" ")).map_err(|e| e.to_string())?,
                    &args[end..],
                )
            }
            _ => return Err("expected startpos or fen".into()),
        };
        if rest.first() == Some(&"moves") {
            for text in &rest[1..] {
                let mv = parse_move(text).map_err(|e| e.to_string())?;
                position = apply_chess_move(&position, mv).map_err(|e| e.to_string())?;
            }
        }
        self.position = position;
        Ok(())
    }

    fn set_option(&mut self, args: &[&str]) {
        let Some(value_at) = args.iter().position(|&w| w == "value") else {
            return;
        };
        let name = args
            .get(1..value_at)
            .map(|w| w.join(" "))
            .unwrap_or_default();
        let value = args.get(value_at + 1).copied().unwrap_or("");
        match name.as_str() {
            "UCI_LimitStrength" => self.limit_strength = value == "true",
            "UCI_Elo" => {
                if let Ok(elo) = value.parse::<u32>() {
                    self.elo = elo.clamp(ELO_MIN, ELO_MAX);
                }
            }
            _ => {}
        }
    }
}

fn main() -> io::Result<()> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut engine = Engine {
        position: ChessPosition::initial(),
        limit_strength: false,
        elo: ELO_MAX,
        searches: 0,
    };
    for line in stdin.lock().lines() {
        let line = line?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.first().copied() {
            Some("uci") => {
                writeln!(out, "id name gamelm-engine {}", env!("CARGO_PKG_VERSION"))?;
                writeln!(out, "id author gamelm")?;
                writeln!(out, "option name Threads type spin default 1 min 1 max 1")?;
                writeln!(out, "option name MultiPV type spin default 1 min 1 max 1")?;
                writeln!(
                    out,
                    "option name UCI_LimitStrength type check default false"
                )?;
                writeln!(
                    out,
                    "option name UCI_Elo type spin default {ELO_MAX} min {ELO_MIN} max {ELO_MAX}"
                )?;
                writeln!(out, "uciok")?;
                out.flush()?;
            }
            Some("isready") => {
                writeln!(out, "readyok")?;
                out.flush()?;
            }
            Some("ucinewgame") => {
                engine.position = ChessPosition::initial();
                engine.searches = 0;
            }
            Some("setoption") => engine.set_option(&words[1..]),
            Some("position") => {
                if let Err(e) = engine.set_position(&words[1..]) {
                    writeln!(out, "info string bad position: {e}")?;
                    out.flush()?;
                }
            }
            Some("go") => engine.go(&words[1..], &mut out)?,
            Some("quit") => break,
            _ => {}
        }
    }
    Ok(())
}
