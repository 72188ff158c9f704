//! Chess rules on a plain 64-square mailbox.
//!
//! Squares are numbered `a1 = 0 .. h8 = 63` (rank-major). Moves are generated
//! pseudo-legally and filtered by making them on a copy and testing whether
//! the mover's king is attacked; perft is the correctness contract.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const INITIAL_FEN: &str = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1";

/// Default ply cap for games (runaway-game guard).
pub const DEFAULT_PLY_LIMIT: u32 = 200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChessError {
    #[error("invalid FEN: {0}")]
    Fen(String),
    #[error("invalid move text {text:?}: {reason}")]
    MoveSyntax { text: String, reason: &'static str },
    #[error("move {mv} is not legal in {fen}")]
    IllegalMove { mv: ChessMove, fen: String },
}

fn fen_err(msg: impl Into<String>) -> ChessError {
    ChessError::Fen(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    White,
    Black,
}

impl Color {
    pub fn opposite(self) -> Color {
        match self {
            Color::White => Color::Black,
            Color::Black => Color::White,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PieceKind {
    Pawn,
    Knight,
    Bishop,
    Rook,
    Queen,
    King,
}

impl PieceKind {
    fn letter(self) -> char {
        match self {
            PieceKind::Pawn => 'p',
            PieceKind::Knight => 'n',
            PieceKind::Bishop => 'b',
            PieceKind::Rook => 'r',
            PieceKind::Queen => 'q',
            PieceKind::King => 'k',
        }
    }

    fn from_letter(c: char) -> Option<PieceKind> {
        Some(match c.to_ascii_lowercase() {
            'p' => PieceKind::Pawn,
            'n' => PieceKind::Knight,
            'b' => PieceKind::Bishop,
            'r' => PieceKind::Rook,
            'q' => PieceKind::Queen,
            'k' => PieceKind::King,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Piece {
    pub kind: PieceKind,
    pub color: Color,
}

impl Piece {
    pub fn new(kind: PieceKind, color: Color) -> Self {
        Self { kind, color }
    }

    fn fen_char(self) -> char {
        let c = self.kind.letter();
        match self.color {
            Color::White => c.to_ascii_uppercase(),
            Color::Black => c,
        }
    }

    fn from_fen_char(c: char) -> Option<Piece> {
        let kind = PieceKind::from_letter(c)?;
        let color = if c.is_ascii_uppercase() {
            Color::White
        } else {
            Color::Black
        };
        Some(Piece { kind, color })
    }
}

/// Board square, `a1 = 0`, `h8 = 63`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Square(u8);

impl Square {
    pub fn new(file: u8, rank: u8) -> Option<Square> {
        (file < 8 && rank < 8).then_some(Square(rank * 8 + file))
    }

    pub fn from_index(index: u8) -> Option<Square> {
        (index < 64).then_some(Square(index))
    }

    /// Zero-based file (`a = 0`).
    pub fn file(self) -> u8 {
        self.0 % 8
    }

    /// Zero-based rank (`1 = 0`).
    pub fn rank(self) -> u8 {
        self.0 / 8
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    fn offset(self, df: i8, dr: i8) -> Option<Square> {
        let f = self.file() as i8 + df;
        let r = self.rank() as i8 + dr;
        ((0..8).contains(&f) && (0..8).contains(&r)).then(|| Square((r * 8 + f) as u8))
    }
}

impl fmt::Display for Square {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", (b'a' + self.file()) as char, self.rank() + 1)
    }
}

impl FromStr for Square {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let b = s.as_bytes();
        if b.len() != 2 || !(b'a'..=b'h').contains(&b[0]) || !(b'1'..=b'8').contains(&b[1]) {
            return Err(());
        }
        Ok(Square((b[1] - b'1') * 8 + (b[0] - b'a')))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct CastlingRights {
    pub white_king: bool,
    pub white_queen: bool,
    pub black_king: bool,
    pub black_queen: bool,
}

impl CastlingRights {
    pub const ALL: CastlingRights = CastlingRights {
        white_king: true,
        white_queen: true,
        black_king: true,
        black_queen: true,
    };
}

impl fmt::Display for CastlingRights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        for (on, c) in [
            (self.white_king, 'K'),
            (self.white_queen, 'Q'),
            (self.black_king, 'k'),
            (self.black_queen, 'q'),
        ] {
            if on {
                s.push(c);
            }
        }
        if s.is_empty() {
            s.push('-');
        }
        f.write_str(&s)
    }
}

/// Coordinate-algebraic move: origin, destination, optional promotion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChessMove {
    pub from: Square,
    pub to: Square,
    pub promotion: Option<PieceKind>,
}

impl ChessMove {
    pub fn new(from: Square, to: Square, promotion: Option<PieceKind>) -> Self {
        Self {
            from,
            to,
            promotion,
        }
    }
}

impl fmt::Display for ChessMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.from, self.to)?;
        if let Some(p) = self.promotion {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

/// Parses `e2e4` / `e7e8q`.
pub fn parse_move(text: &str) -> Result<ChessMove, ChessError> {
    let err = |reason| ChessError::MoveSyntax {
        text: text.to_string(),
        reason,
    };
    if !text.is_ascii() || !(text.len() == 4 || text.len() == 5) {
        return Err(err("expected 4 or 5 ASCII characters"));
    }
    let from: Square = text[0..2].parse().map_err(|_| err("bad origin square"))?;
    let to: Square = text[2..4]
        .parse()
        .map_err(|_| err("bad destination square"))?;
    if from == to {
        return Err(err("origin equals destination"));
    }
    let promotion = match text.as_bytes().get(4) {
        None => None,
        Some(b'q') => Some(PieceKind::Queen),
        Some(b'r') => Some(PieceKind::Rook),
        Some(b'b') => Some(PieceKind::Bishop),
        Some(b'n') => Some(PieceKind::Knight),
        Some(_) => return Err(err("promotion must be one of q, r, b, n")),
    };
    if promotion.is_some() && !matches!((from.rank(), to.rank()), (6, 7) | (1, 0)) {
        return Err(err("promotion only onto the last rank"));
    }
    Ok(ChessMove {
        from,
        to,
        promotion,
    })
}

pub fn format_move(mv: &ChessMove) -> String {
    mv.to_string()
}

impl FromStr for ChessMove {
    type Err = ChessError;

    fn from_str(s: &str) -> Result<Self, ChessError> {
        parse_move(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameStatus {
    Ongoing,
    Checkmate,
    Stalemate,
    DrawFiftyMove,
    DrawInsufficientMaterial,
    AbortedPlyLimit,
}

impl GameStatus {
    pub fn is_over(self) -> bool {
        self != GameStatus::Ongoing
    }
}

/// A complete FEN-equivalent game state.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ChessPosition {
    board: [Option<Piece>; 64],
    side: Color,
    castling: CastlingRights,
    en_passant: Option<Square>,
    halfmove_clock: u32,
    fullmove_number: u32,
}

impl fmt::Debug for ChessPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChessPosition({})", format_fen(self))
    }
}

impl Default for ChessPosition {
    fn default() -> Self {
        Self::initial()
    }
}

const KNIGHT_STEPS: [(i8, i8); 8] = [
    (1, 2),
    (2, 1),
    (2, -1),
    (1, -2),
    (-1, -2),
    (-2, -1),
    (-2, 1),
    (-1, 2),
];
const KING_STEPS: [(i8, i8); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];
const ROOK_DIRS: [(i8, i8); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const BISHOP_DIRS: [(i8, i8); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];
const PROMOTIONS: [PieceKind; 4] = [
    PieceKind::Queen,
    PieceKind::Rook,
    PieceKind::Bishop,
    PieceKind::Knight,
];

impl ChessPosition {
    pub fn initial() -> Self {
        parse_fen(INITIAL_FEN).expect("initial FEN is valid")
    }

    pub fn piece_at(&self, square: Square) -> Option<Piece> {
        self.board[square.index()]
    }

    pub fn side_to_move(&self) -> Color {
        self.side
    }

    pub fn castling(&self) -> CastlingRights {
        self.castling
    }

    pub fn en_passant(&self) -> Option<Square> {
        self.en_passant
    }

    pub fn halfmove_clock(&self) -> u32 {
        self.halfmove_clock
    }

    pub fn fullmove_number(&self) -> u32 {
        self.fullmove_number
    }

    /// Zero-based ply index implied by the move counters.
    pub fn ply_index(&self) -> u32 {
        2 * (self.fullmove_number - 1) + u32::from(self.side == Color::Black)
    }

    pub fn piece_count(&self) -> usize {
        self.board.iter().filter(|p| p.is_some()).count()
    }

    pub fn king_square(&self, color: Color) -> Option<Square> {
        self.board
            .iter()
            .position(|p| *p == Some(Piece::new(PieceKind::King, color)))
            .map(|i| Square(i as u8))
    }

    /// Is `target` attacked by any piece of `by`?
    pub fn is_attacked(&self, target: Square, by: Color) -> bool {
        // pawns attack diagonally forward, so look backward from the target
        let dr = match by {
            Color::White => -1,
            Color::Black => 1,
        };
        for df in [-1, 1] {
            if let Some(s) = target.offset(df, dr) {
                if self.board[s.index()] == Some(Piece::new(PieceKind::Pawn, by)) {
                    return true;
                }
            }
        }
        for (df, dr) in KNIGHT_STEPS {
            if let Some(s) = target.offset(df, dr) {
                if self.board[s.index()] == Some(Piece::new(PieceKind::Knight, by)) {
                    return true;
                }
            }
        }
        for (df, dr) in KING_STEPS {
            if let Some(s) = target.offset(df, dr) {
                if self.board[s.index()] == Some(Piece::new(PieceKind::King, by)) {
                    return true;
                }
            }
        }
        for (dirs, slider) in [
            (ROOK_DIRS, PieceKind::Rook),
            (BISHOP_DIRS, PieceKind::Bishop),
        ] {
            for (df, dr) in dirs {
                let mut cur = target;
                while let Some(s) = cur.offset(df, dr) {
                    if let Some(p) = self.board[s.index()] {
                        if p.color == by && (p.kind == slider || p.kind == PieceKind::Queen) {
                            return true;
                        }
                        break;
                    }
                    cur = s;
                }
            }
        }
        false
    }

    pub fn in_check(&self, color: Color) -> bool {
        match self.king_square(color) {
            Some(k) => self.is_attacked(k, color.opposite()),
            None => false,
        }
    }

    fn push_pawn_moves(&self, from: Square, moves: &mut Vec<ChessMove>) {
        let color = self.side;
        let (dr, start_rank, last_rank) = match color {
            Color::White => (1, 1, 7),
            Color::Black => (-1, 6, 0),
        };
        let mut push = |to: Square| {
            if to.rank() == last_rank {
                for p in PROMOTIONS {
                    moves.push(ChessMove::new(from, to, Some(p)));
                }
            } else {
                moves.push(ChessMove::new(from, to, None));
            }
        };
        if let Some(one) = from.offset(0, dr) {
            if self.board[one.index()].is_none() {
                push(one);
                if from.rank() == start_rank {
                    if let Some(two) = from.offset(0, 2 * dr) {
                        if self.board[two.index()].is_none() {
                            push(two);
                        }
                    }
                }
            }
        }
        for df in [-1, 1] {
            if let Some(to) = from.offset(df, dr) {
                let capture = matches!(self.board[to.index()], Some(p) if p.color != color);
                if capture || self.en_passant == Some(to) {
                    push(to);
                }
            }
        }
    }

    fn push_castles(&self, moves: &mut Vec<ChessMove>) {
        let color = self.side;
        let enemy = color.opposite();
        let (king_side, queen_side, rank) = match color {
            Color::White => (self.castling.white_king, self.castling.white_queen, 0),
            Color::Black => (self.castling.black_king, self.castling.black_queen, 7),
        };
        let at = |f: u8| Square::new(f, rank).expect("on board");
        let king = Some(Piece::new(PieceKind::King, color));
        let rook = Some(Piece::new(PieceKind::Rook, color));
        if self.board[at(4).index()] != king || self.is_attacked(at(4), enemy) {
            return;
        }
        let empty = |files: &[u8]| files.iter().all(|&f| self.board[at(f).index()].is_none());
        let safe = |files: &[u8]| files.iter().all(|&f| !self.is_attacked(at(f), enemy));
        if king_side && self.board[at(7).index()] == rook && empty(&[5, 6]) && safe(&[5, 6]) {
            moves.push(ChessMove::new(at(4), at(6), None));
        }
        if queen_side && self.board[at(0).index()] == rook && empty(&[1, 2, 3]) && safe(&[2, 3]) {
            moves.push(ChessMove::new(at(4), at(2), None));
        }
    }

    fn pseudo_legal_moves(&self) -> Vec<ChessMove> {
        let mut moves = Vec::with_capacity(48);
        let color = self.side;
        for i in 0..64u8 {
            let Some(piece) = self.board[i as usize] else {
                continue;
            };
            if piece.color != color {
                continue;
            }
            let from = Square(i);
            let mut step = |steps: &[(i8, i8)]| {
                for &(df, dr) in steps {
                    if let Some(to) = from.offset(df, dr) {
                        if self.board[to.index()].is_none_or(|p| p.color != color) {
                            moves.push(ChessMove::new(from, to, None));
                        }
                    }
                }
            };
            match piece.kind {
                PieceKind::Pawn => self.push_pawn_moves(from, &mut moves),
                PieceKind::Knight => step(&KNIGHT_STEPS),
                PieceKind::King => step(&KING_STEPS),
                PieceKind::Bishop | PieceKind::Rook | PieceKind::Queen => {
                    let dirs: &[(i8, i8)] = match piece.kind {
                        PieceKind::Bishop => &BISHOP_DIRS,
                        PieceKind::Rook => &ROOK_DIRS,
                        _ => &[
                            (1, 0),
                            (-1, 0),
                            (0, 1),
                            (0, -1),
                            (1, 1),
                            (1, -1),
                            (-1, 1),
                            (-1, -1),
                        ],
                    };
                    for &(df, dr) in dirs {
                        let mut cur = from;
                        while let Some(to) = cur.offset(df, dr) {
                            match self.board[to.index()] {
                                None => moves.push(ChessMove::new(from, to, None)),
                                Some(p) => {
                                    if p.color != color {
                                        moves.push(ChessMove::new(from, to, None));
                                    }
                                    break;
                                }
                            }
                            cur = to;
                        }
                    }
                }
            }
        }
        self.push_castles(&mut moves);
        moves
    }

    /// Applies a move assumed to be pseudo-legal.
    fn make(&self, mv: ChessMove) -> ChessPosition {
        let mut next = self.clone();
        let color = self.side;
        let piece = self.board[mv.from.index()].expect("move starts on a piece");
        let mut captured = self.board[mv.to.index()];

        next.board[mv.from.index()] = None;
        if piece.kind == PieceKind::Pawn && Some(mv.to) == self.en_passant && captured.is_none() {
            let victim = Square::new(mv.to.file(), mv.from.rank()).expect("on board");
            captured = next.board[victim.index()].take();
        }
        next.board[mv.to.index()] = Some(match mv.promotion {
            Some(kind) => Piece::new(kind, color),
            None => piece,
        });
        if piece.kind == PieceKind::King && mv.from.file() == 4 {
            let rank = mv.from.rank();
            let rook_hop = match mv.to.file() {
                6 => Some((7, 5)),
                2 => Some((0, 3)),
                _ => None,
            };
            if let Some((rf, rt)) = rook_hop {
                let rf = Square::new(rf, rank).expect("on board");
                let rt = Square::new(rt, rank).expect("on board");
                next.board[rt.index()] = next.board[rf.index()].take();
            }
        }

        let rights = &mut next.castling;
        if piece.kind == PieceKind::King {
            match color {
                Color::White => {
                    rights.white_king = false;
                    rights.white_queen = false;
                }
                Color::Black => {
                    rights.black_king = false;
                    rights.black_queen = false;
                }
            }
        }
        for s in [mv.from, mv.to] {
            match s.index() {
                0 => rights.white_queen = false,
                7 => rights.white_king = false,
                56 => rights.black_queen = false,
                63 => rights.black_king = false,
                _ => {}
            }
        }

        next.en_passant = None;
        if piece.kind == PieceKind::Pawn && (mv.to.rank() as i8 - mv.from.rank() as i8).abs() == 2 {
            next.en_passant = Square::new(mv.from.file(), (mv.from.rank() + mv.to.rank()) / 2);
        }
        if piece.kind == PieceKind::Pawn || captured.is_some() {
            next.halfmove_clock = 0;
        } else {
            next.halfmove_clock += 1;
        }
        if color == Color::Black {
            next.fullmove_number += 1;
        }
        next.side = color.opposite();
        next
    }

    fn has_insufficient_material(&self) -> bool {
        let mut minors = 0;
        let mut bishop_colors = [false; 2];
        let mut knights = 0;
        for (i, p) in self.board.iter().enumerate() {
            let Some(p) = p else { continue };
            match p.kind {
                PieceKind::King => {}
                PieceKind::Pawn | PieceKind::Rook | PieceKind::Queen => return false,
                PieceKind::Knight => {
                    minors += 1;
                    knights += 1;
                }
                PieceKind::Bishop => {
                    minors += 1;
                    let s = Square(i as u8);
                    bishop_colors[((s.file() + s.rank()) % 2) as usize] = true;
                }
            }
        }
        minors <= 1 || (knights == 0 && !(bishop_colors[0] && bishop_colors[1]))
    }
}

/// Parses a six-field FEN string.
pub fn parse_fen(text: &str) -> Result<ChessPosition, ChessError> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(fen_err(format!(
            "expected 6 fields, found {}",
            fields.len()
        )));
    }
    let ranks: Vec<&str> = fields[0].split('/').collect();
    if ranks.len() != 8 {
        return Err(fen_err(format!(
            "piece placement needs 8 ranks, found {}",
            ranks.len()
        )));
    }
    let mut board = [None; 64];
    for (row, rank_text) in ranks.iter().enumerate() {
        let rank = 7 - row as u8;
        let mut file = 0u8;
        for c in rank_text.chars() {
            if let Some(d) = c.to_digit(10) {
                if !(1..=8).contains(&d) {
                    return Err(fen_err(format!("bad empty-square count {c:?}")));
                }
                file += d as u8;
            } else {
                let piece = Piece::from_fen_char(c)
                    .ok_or_else(|| fen_err(format!("invalid piece character {c:?}")))?;
                if file >= 8 {
                    return Err(fen_err(format!("rank {} is too long", rank + 1)));
                }
                board[(rank * 8 + file) as usize] = Some(piece);
                file += 1;
            }
            if file > 8 {
                return Err(fen_err(format!("rank {} is too long", rank + 1)));
            }
        }
        if file != 8 {
            return Err(fen_err(format!(
                "rank {} covers {} files, expected 8",
                rank + 1,
                file
            )));
        }
    }
    for color in [Color::White, Color::Black] {
        let kings = board
            .iter()
            .filter(|p| **p == Some(Piece::new(PieceKind::King, color)))
            .count();
        if kings != 1 {
            return Err(fen_err(format!(
                "expected exactly one {color:?} king, found {kings}"
            )));
        }
    }
    let side = match fields[1] {
        "w" => Color::White,
        "b" => Color::Black,
        other => {
            return Err(fen_err(format!(
                "active color must be w or b, got {other:?}"
            )))
        }
    };
    let mut castling = CastlingRights::default();
    if fields[2] != "-" {
        for c in fields[2].chars() {
            let slot = match c {
                'K' => &mut castling.white_king,
                'Q' => &mut castling.white_queen,
                'k' => &mut castling.black_king,
                'q' => &mut castling.black_queen,
                _ => return Err(fen_err(format!("invalid castling character {c:?}"))),
            };
            if *slot {
                return Err(fen_err(format!("duplicate castling character {c:?}")));
            }
            *slot = true;
        }
    }
    let en_passant = match fields[3] {
        "-" => None,
        s => {
            let square: Square = s
                .parse()
                .map_err(|_| fen_err(format!("invalid en-passant square {s:?}")))?;
            let expected = if side == Color::White { 5 } else { 2 };
            if square.rank() != expected {
                return Err(fen_err(format!(
                    "en-passant square {s} must be on rank {} with {:?} to move",
                    expected + 1,
                    side
                )));
            }
            Some(square)
        }
    };
    let halfmove_clock: u32 = fields[4]
        .parse()
        .map_err(|_| fen_err(format!("invalid half-move clock {:?}", fields[4])))?;
    let fullmove_number: u32 = fields[5]
        .parse()
        .map_err(|_| fen_err(format!("invalid full-move number {:?}", fields[5])))?;
    if fullmove_number == 0 {
        return Err(fen_err("full-move number must be at least 1"));
    }
    Ok(ChessPosition {
        board,
        side,
        castling,
        en_passant,
        halfmove_clock,
        fullmove_number,
    })
}

/// Canonical FEN for a position.
pub fn format_fen(position: &ChessPosition) -> String {
    let mut out = String::with_capacity(90);
    for rank in (0..8).rev() {
        let mut empty = 0;
        for file in 0..8 {
            match position.board[rank * 8 + file] {
                None => empty += 1,
                Some(p) => {
                    if empty > 0 {
                        out.push(char::from(b'0' + empty));
                        empty = 0;
                    }
                    out.push(p.fen_char());
                }
            }
        }
        if empty > 0 {
            out.push(char::from(b'0' + empty));
        }
        if rank > 0 {
            out.push('/');
        }
    }
    let side = match position.side {
        Color::White => 'w',
        Color::Black => 'b',
    };
    let ep = position
        .en_passant
        .map_or_else(|| "-".to_string(), |s| s.to_string());
    out.push_str(&format!(
        " {side} {} {ep} {} {}",
        position.castling, position.halfmove_clock, position.fullmove_number
    ));
    out
}

impl FromStr for ChessPosition {
    type Err = ChessError;

    fn from_str(s: &str) -> Result<Self, ChessError> {
        parse_fen(s)
    }
}

impl fmt::Display for ChessPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_fen(self))
    }
}

/// Every legal move; promotions appear once per promotion piece.
pub fn legal_moves(position: &ChessPosition) -> Vec<ChessMove> {
    let color = position.side;
    position
        .pseudo_legal_moves()
        .into_iter()
        .filter(|&mv| !position.make(mv).in_check(color))
        .collect()
}

pub fn is_legal(position: &ChessPosition, mv: ChessMove) -> bool {
    legal_moves(position).contains(&mv)
}

pub fn apply_chess_move(
    position: &ChessPosition,
    mv: ChessMove,
) -> Result<ChessPosition, ChessError> {
    if !is_legal(position, mv) {
        return Err(ChessError::IllegalMove {
            mv,
            fen: format_fen(position),
        });
    }
    Ok(position.make(mv))
}

/// Status of a position after `ply_count` plies of a game capped at `ply_limit`.
pub fn game_status(position: &ChessPosition, ply_count: u32, ply_limit: u32) -> GameStatus {
    if legal_moves(position).is_empty() {
        return if position.in_check(position.side) {
            GameStatus::Checkmate
        } else {
            GameStatus::Stalemate
        };
    }
    if position.halfmove_clock >= 100 {
        GameStatus::DrawFiftyMove
    } else if position.has_insufficient_material() {
        GameStatus::DrawInsufficientMaterial
    } else if ply_count >= ply_limit {
        GameStatus::AbortedPlyLimit
    } else {
        GameStatus::Ongoing
    }
}

/// Leaf count of the legal move tree.
pub fn perft(position: &ChessPosition, depth: u32) -> u64 {
    if depth == 0 {
        return 1;
    }
    let moves = legal_moves(position);
    if depth == 1 {
        return moves.len() as u64;
    }
    moves
        .into_iter()
        .map(|mv| perft(&position.make(mv), depth - 1))
        .sum()
}
