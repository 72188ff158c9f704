//! Three-pile Nim under normal play (taking the last item wins).
//!
//! Besides the rules this module holds the three reference agents used for
//! corpus generation and tournaments: the nim-sum [`GuruAgent`], the uniform
//! [`RandomAgent`] and a tabular Q-learner ([`QTable`], [`QAgent`]).

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::seed::GameRng;

/// Largest pile count used by the default game.
pub const MAX_PILE: u8 = 10;

/// Labels of the three piles, in index order.
pub const PILE_LABELS: [char; 3] = ['a', 'b', 'c'];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NimError {
    #[error("pile count {count} exceeds the maximum of {max}")]
    PileTooLarge { count: u8, max: u8 },
    #[error("pile index {0} is out of range (expected 0..3)")]
    BadPile(u8),
    #[error("no legal move: every pile is empty")]
    Terminal,
    #[error("illegal move {mv} in state {state}")]
    IllegalMove { state: NimState, mv: NimMove },
    #[error("agent failure: {0}")]
    Agent(String),
}

/// A three-pile position. Piles are ordered `a`, `b`, `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NimState {
    piles: [u8; 3],
}

impl NimState {
    /// Validates every pile against [`MAX_PILE`].
    pub fn new(piles: [u8; 3]) -> Result<Self, NimError> {
        Self::with_max(piles, MAX_PILE)
    }

    pub fn with_max(piles: [u8; 3], max: u8) -> Result<Self, NimError> {
        if let Some(&count) = piles.iter().find(|&&p| p > max) {
            return Err(NimError::PileTooLarge { count, max });
        }
        Ok(Self { piles })
    }

    pub fn piles(&self) -> [u8; 3] {
        self.piles
    }

    pub fn pile(&self, index: usize) -> u8 {
        self.piles[index]
    }

    pub fn is_terminal(&self) -> bool {
        self.piles == [0, 0, 0]
    }

    pub fn total(&self) -> u32 {
        self.piles.iter().map(|&p| u32::from(p)).sum()
    }

    /// Every legal move, ordered by pile index then by take.
    pub fn legal_moves(&self) -> Vec<NimMove> {
        let mut moves = Vec::with_capacity(self.total() as usize);
        for (pile, &count) in self.piles.iter().enumerate() {
            for take in 1..=count {
                moves.push(NimMove {
                    pile: pile as u8,
                    take,
                });
            }
        }
        moves
    }

    pub fn is_legal(&self, mv: NimMove) -> bool {
        mv.pile < 3 && mv.take >= 1 && mv.take <= self.piles[mv.pile as usize]
    }

    /// Dense index of this state among all states with piles `<= max`.
    pub fn index(&self, max: u8) -> usize {
        let side = usize::from(max) + 1;
        self.piles
            .iter()
            .fold(0, |acc, &p| acc * side + usize::from(p))
    }

    /// Every state with piles in `0..=max`, in [`NimState::index`] order.
    pub fn all(max: u8) -> impl Iterator<Item = NimState> {
        let side = u16::from(max) + 1;
        (0..side * side * side).map(move |i| {
            let c = (i % side) as u8;
            let b = ((i / side) % side) as u8;
            let a = (i / (side * side)) as u8;
            NimState { piles: [a, b, c] }
        })
    }

    /// A start position with each pile independently uniform in `1..=max`.
    pub fn random_start(max: u8, rng: &mut GameRng) -> NimState {
        NimState {
            piles: [
                rng.gen_range(1..=max),
                rng.gen_range(1..=max),
                rng.gen_range(1..=max),
            ],
        }
    }

    /// Returns the state with piles reordered so that new pile `i` is old
    /// pile `perm[i]`.
    pub fn permuted(&self, perm: [usize; 3]) -> NimState {
        NimState {
            piles: [
                self.piles[perm[0]],
                self.piles[perm[1]],
                self.piles[perm[2]],
            ],
        }
    }
}

impl fmt::Display for NimState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "a{}/b{}/c{}",
            self.piles[0], self.piles[1], self.piles[2]
        )
    }
}

/// Removal of `take >= 1` items from pile `pile`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NimMove {
    pub pile: u8,
    pub take: u8,
}

impl NimMove {
    pub fn new(pile: u8, take: u8) -> Result<Self, NimError> {
        if pile >= 3 {
            return Err(NimError::BadPile(pile));
        }
        Ok(Self { pile, take })
    }
}

impl fmt::Display for NimMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = PILE_LABELS.get(self.pile as usize).copied().unwrap_or('?');
        write!(f, "{}{}", label, self.take)
    }
}

/// Bitwise XOR of the three pile counts.
pub fn nim_sum(state: &NimState) -> u8 {
    state.piles[0] ^ state.piles[1] ^ state.piles[2]
}

pub fn apply_nim_move(state: &NimState, mv: NimMove) -> Result<NimState, NimError> {
    if mv.pile >= 3 {
        return Err(NimError::BadPile(mv.pile));
    }
    if !state.is_legal(mv) {
        return Err(NimError::IllegalMove { state: *state, mv });
    }
    let mut piles = state.piles;
    piles[mv.pile as usize] -= mv.take;
    Ok(NimState { piles })
}

/// The optimal move: restore a zero nim-sum when possible, otherwise take a
/// single item from the lowest-index non-empty pile.
pub fn guru_move(state: &NimState) -> Result<NimMove, NimError> {
    if state.is_terminal() {
        return Err(NimError::Terminal);
    }
    let sum = nim_sum(state);
    if sum != 0 {
        for (pile, &count) in state.piles.iter().enumerate() {
            let target = count ^ sum;
            if target < count {
                return Ok(NimMove {
                    pile: pile as u8,
                    take: count - target,
                });
            }
        }
    }
    let pile = state
        .piles
        .iter()
        .position(|&p| p > 0)
        .expect("non-terminal state has a non-empty pile");
    Ok(NimMove {
        pile: pile as u8,
        take: 1,
    })
}

/// Picks a non-empty pile uniformly, then a take uniformly in `1..=count`.
pub fn random_move(state: &NimState, rng: &mut GameRng) -> Result<NimMove, NimError> {
    let nonempty: Vec<usize> = (0..3).filter(|&i| state.piles[i] > 0).collect();
    let &pile = nonempty.choose(rng).ok_or(NimError::Terminal)?;
    let take = rng.gen_range(1..=state.piles[pile]);
    Ok(NimMove {
        pile: pile as u8,
        take,
    })
}

/// Uniform choice over the full legal move list (used for noise substitution).
pub fn uniform_legal_move(state: &NimState, rng: &mut GameRng) -> Result<NimMove, NimError> {
    state
        .legal_moves()
        .choose(rng)
        .copied()
        .ok_or(NimError::Terminal)
}

/// Seat in a two-player game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seat {
    First,
    Second,
}

impl Seat {
    pub fn other(self) -> Seat {
        match self {
            Seat::First => Seat::Second,
            Seat::Second => Seat::First,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Seat::First => 0,
            Seat::Second => 1,
        }
    }
}

/// Anything that can pick a Nim move.
pub trait NimAgent {
    /// One-character identity written into player-id corpora.
    fn tag(&self) -> char;

    fn choose_move(&mut self, state: &NimState, rng: &mut GameRng) -> Result<NimMove, NimError>;

    /// Moves so far whose first choice was not legal (model agents only).
    fn invalid_predictions(&self) -> u64 {
        0
    }
}

/// The three reference agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Guru,
    QLearner,
    Random,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Guru, AgentKind::QLearner, AgentKind::Random];

    pub fn tag(self) -> char {
        match self {
            AgentKind::Guru => 'G',
            AgentKind::QLearner => 'Q',
            AgentKind::Random => 'R',
        }
    }

    pub fn from_tag(tag: char) -> Option<AgentKind> {
        match tag {
            'G' => Some(AgentKind::Guru),
            'Q' => Some(AgentKind::QLearner),
            'R' => Some(AgentKind::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GuruAgent;

impl NimAgent for GuruAgent {
    fn tag(&self) -> char {
        'G'
    }

    fn choose_move(&mut self, state: &NimState, _rng: &mut GameRng) -> Result<NimMove, NimError> {
        guru_move(state)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomAgent;

impl NimAgent for RandomAgent {
    fn tag(&self) -> char {
        'R'
    }

    fn choose_move(&mut self, state: &NimState, rng: &mut GameRng) -> Result<NimMove, NimError> {
        random_move(state, rng)
    }
}

/// Q-learning hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QParams {
    /// Step size.
    pub alpha: f64,
    /// Discount.
    pub gamma: f64,
    /// Exploration rate of the epsilon-greedy training policy.
    pub epsilon: f64,
}

impl Default for QParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 1.0,
            epsilon: 0.1,
        }
    }
}

/// Action values for every legal `(state, move)` pair with piles `<= max_pile`.
///
/// `values[state.index(max_pile)][i]` is the value of `state.legal_moves()[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    max_pile: u8,
    params: QParams,
    values: Vec<Vec<f64>>,
}

impl QTable {
    /// All-zero table.
    pub fn new(max_pile: u8, params: QParams) -> Self {
        let values = NimState::all(max_pile)
            .map(|s| vec![0.0; s.total() as usize])
            .collect();
        Self {
            max_pile,
            params,
            values,
        }
    }

    pub fn max_pile(&self) -> u8 {
        self.max_pile
    }

    pub fn params(&self) -> QParams {
        self.params
    }

    /// Position of `mv` in `state.legal_moves()`.
    fn slot(state: &NimState, mv: NimMove) -> usize {
        let before: usize = state.piles[..mv.pile as usize]
            .iter()
            .map(|&p| usize::from(p))
            .sum();
        before + usize::from(mv.take) - 1
    }

    fn row(&self, state: &NimState) -> &[f64] {
        &self.values[state.index(self.max_pile)]
    }

    pub fn value(&self, state: &NimState, mv: NimMove) -> Option<f64> {
        if !state.is_legal(mv) || state.piles.iter().any(|&p| p > self.max_pile) {
            return None;
        }
        Some(self.row(state)[Self::slot(state, mv)])
    }

    fn max_value(&self, state: &NimState) -> f64 {
        self.row(state)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy move; ties go to the lowest pile index, then the smallest take.
    pub fn best_move(&self, state: &NimState) -> Result<NimMove, NimError> {
        if state.is_terminal() {
            return Err(NimError::Terminal);
        }
        if let Some(&count) = state.piles.iter().find(|&&p| p > self.max_pile) {
            return Err(NimError::PileTooLarge {
                count,
                max: self.max_pile,
            });
        }
        let row = self.row(state);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        Ok(state.legal_moves()[best])
    }

    fn update(&mut self, state: &NimState, mv: NimMove, target: f64) {
        let alpha = self.params.alpha;
        let slot = Self::slot(state, mv);
        let idx = state.index(self.max_pile);
        let q = &mut self.values[idx][slot];
        *q += alpha * (target - *q);
    }
}

/// Greedy policy extraction from a Q-table.
pub fn q_move(table: &QTable, state: &NimState) -> Result<NimMove, NimError> {
    table.best_move(state)
}

/// Trains a Q-table against `opponent`.
///
/// Each episode starts from a random position with piles in `1..=max_pile`;
/// the learner alternates between moving first and second. Rewards are `+1`
/// for taking the last item, `-1` when the opponent does, `0` otherwise. The
/// successor of a learner move is the next position the learner faces.
pub fn q_train(
    episodes: u64,
    opponent: &mut dyn NimAgent,
    params: QParams,
    max_pile: u8,
    rng: &mut GameRng,
) -> Result<QTable, NimError> {
    let mut table = QTable::new(max_pile, params);
    for episode in 0..episodes {
        let mut state = NimState::random_start(max_pile, rng);
        if episode % 2 == 1 {
            let mv = opponent.choose_move(&state, rng)?;
            state = apply_nim_move(&state, mv)?;
            if state.is_terminal() {
                continue;
            }
        }
        loop {
            let mv = if rng.gen_bool(params.epsilon) {
                uniform_legal_move(&state, rng)?
            } else {
                table.best_move(&state)?
            };
            let after = apply_nim_move(&state, mv)?;
            if after.is_terminal() {
                table.update(&state, mv, 1.0);
                break;
            }
            let reply = opponent.choose_move(&after, rng)?;
            let next = apply_nim_move(&after, reply)?;
            if next.is_terminal() {
                table.update(&state, mv, -1.0);
                break;
            }
            let target = params.gamma * table.max_value(&next);
            table.update(&state, mv, target);
            state = next;
        }
    }
    Ok(table)
}

/// Greedy player backed by a trained table.
#[derive(Debug, Clone, Copy)]
pub struct QAgent<'a> {
    pub table: &'a QTable,
}

impl NimAgent for QAgent<'_> {
    fn tag(&self) -> char {
        'Q'
    }

    fn choose_move(&mut self, state: &NimState, _rng: &mut GameRng) -> Result<NimMove, NimError> {
        self.table.best_move(state)
    }
}

/// One recorded move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NimPly {
    /// Position before the move.
    pub state: NimState,
    pub seat: Seat,
    /// Tag of the agent scheduled to move, even when its move was replaced.
    pub tag: char,
    pub mv: NimMove,
    /// The move was replaced by a uniformly random legal move.
    pub noise: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NimGameRecord {
    pub plies: Vec<NimPly>,
    pub winner: Seat,
}

impl NimGameRecord {
    pub fn start(&self) -> NimState {
        self.plies[0].state
    }

    /// Replays the recorded moves and checks every intermediate state and the
    /// winner.
    pub fn replay_is_consistent(&self) -> bool {
        let Some(first) = self.plies.first() else {
            return false;
        };
        let mut state = first.state;
        let mut seat = Seat::First;
        for ply in &self.plies {
            if ply.state != state || ply.seat != seat {
                return false;
            }
            match apply_nim_move(&state, ply.mv) {
                Ok(next) => state = next,
                Err(_) => return false,
            }
            seat = seat.other();
        }
        state.is_terminal() && self.plies.last().map(|p| p.seat) == Some(self.winner)
    }
}

/// Plays one game from `start`, `first` moving first.
///
/// Before every move, with probability `noise_p` the scheduled agent's move is
/// replaced by a uniform legal move; the ply keeps the scheduled agent's tag.
pub fn play_nim_game(
    first: &mut dyn NimAgent,
    second: &mut dyn NimAgent,
    start: NimState,
    noise_p: f64,
    rng: &mut GameRng,
) -> Result<NimGameRecord, NimError> {
    if start.is_terminal() {
        return Err(NimError::Terminal);
    }
    let noise_p = noise_p.clamp(0.0, 1.0);
    let mut plies = Vec::new();
    let mut state = start;
    let mut seat = Seat::First;
    loop {
        let agent: &mut dyn NimAgent = match seat {
            Seat::First => &mut *first,
            Seat::Second => &mut *second,
        };
        let noise = rng.gen_bool(noise_p);
        let mv = if noise {
            uniform_legal_move(&state, rng)?
        } else {
            agent.choose_move(&state, rng)?
        };
        let next = apply_nim_move(&state, mv)?;
        plies.push(NimPly {
            state,
            seat,
            tag: agent.tag(),
            mv,
            noise,
        });
        if next.is_terminal() {
            return Ok(NimGameRecord {
                plies,
                winner: seat,
            });
        }
        state = next;
        seat = seat.other();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn st(p: [u8; 3]) -> NimState {
        NimState::new(p).unwrap()
    }

    #[test]
    fn nim_sum_examples() {
        assert_eq!(nim_sum(&st([10, 10, 10])), 10);
        assert_eq!(nim_sum(&st([1, 2, 3])), 0);
        assert_eq!(nim_sum(&st([0, 0, 0])), 0);
    }

    #[test]
    fn guru_examples() {
        let mv = guru_move(&st([10, 10, 10])).unwrap();
        assert_eq!(mv, NimMove { pile: 0, take: 10 });
        assert_eq!(
            apply_nim_move(&st([10, 10, 10]), mv).unwrap(),
            st([0, 10, 10])
        );
        assert_eq!(
            guru_move(&st([1, 2, 3])).unwrap(),
            NimMove { pile: 0, take: 1 }
        );
        assert_eq!(
            guru_move(&st([0, 0, 4])).unwrap(),
            NimMove { pile: 2, take: 4 }
        );
        assert_eq!(guru_move(&st([0, 0, 0])), Err(NimError::Terminal));
    }

    #[test]
    fn apply_examples() {
        assert_eq!(
            apply_nim_move(&st([10, 10, 10]), NimMove { pile: 0, take: 10 }).unwrap(),
            st([0, 10, 10])
        );
        assert_eq!(
            apply_nim_move(&st([3, 2, 1]), NimMove { pile: 1, take: 2 }).unwrap(),
            st([3, 0, 1])
        );
        assert!(apply_nim_move(&st([1, 1, 1]), NimMove { pile: 0, take: 2 }).is_err());
        assert!(apply_nim_move(&st([1, 1, 1]), NimMove { pile: 0, take: 0 }).is_err());
        assert_eq!(
            apply_nim_move(&st([1, 1, 1]), NimMove { pile: 3, take: 1 }),
            Err(NimError::BadPile(3))
        );
    }

    #[test]
    fn state_validation_and_display() {
        assert!(NimState::new([11, 0, 0]).is_err());
        assert_eq!(st([10, 0, 3]).to_string(), "a10/b0/c3");
        assert_eq!(NimMove { pile: 2, take: 7 }.to_string(), "c7");
        assert_eq!(NimState::all(10).count(), 1331);
        for (i, s) in NimState::all(4).enumerate() {
            assert_eq!(s.index(4), i);
        }
    }

    #[test]
    fn random_move_forced_and_terminal() {
        let mut rng = rng_from_seed(1);
        assert_eq!(
            random_move(&st([1, 0, 0]), &mut rng).unwrap(),
            NimMove { pile: 0, take: 1 }
        );
        assert_eq!(
            random_move(&st([0, 0, 0]), &mut rng),
            Err(NimError::Terminal)
        );
    }

    #[test]
    fn random_move_is_uniform_over_take() {
        let mut rng = rng_from_seed(11);
        let n = 10_000;
        let ones = (0..n)
            .filter(|_| random_move(&st([2, 0, 0]), &mut rng).unwrap().take == 1)
            .count();
        let frac = ones as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.05, "frac = {frac}");
    }

    #[test]
    fn random_move_replays_under_seed() {
        let run = |seed| {
            let mut rng = rng_from_seed(seed);
            (0..50)
                .map(|_| random_move(&st([7, 3, 9]), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn untrained_table_tie_breaks() {
        let table = QTable::new(10, QParams::default());
        assert_eq!(
            q_move(&table, &st([1, 0, 0])).unwrap(),
            NimMove { pile: 0, take: 1 }
        );
        assert_eq!(
            q_move(&table, &st([2, 1, 0])).unwrap(),
            NimMove { pile: 0, take: 1 }
        );
        assert_eq!(q_move(&table, &st([0, 0, 0])), Err(NimError::Terminal));
    }

    #[test]
    fn zero_episodes_gives_zero_table() {
        let mut rng = rng_from_seed(3);
        let table = q_train(0, &mut RandomAgent, QParams::default(), 10, &mut rng).unwrap();
        assert_eq!(table, QTable::new(10, QParams::default()));
    }

    #[test]
    fn q_table_slots_follow_legal_move_order() {
        let s = st([2, 0, 3]);
        for (i, mv) in s.legal_moves().into_iter().enumerate() {
            assert_eq!(QTable::slot(&s, mv), i);
        }
    }

    #[test]
    fn guru_vs_guru_from_full_piles() {
        let mut rng = rng_from_seed(0);
        let rec = play_nim_game(
            &mut GuruAgent,
            &mut GuruAgent,
            st([10, 10, 10]),
            0.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(rec.winner, Seat::First);
        assert!(rec.replay_is_consistent());
    }

    #[test]
    fn full_noise_flags_every_move() {
        let mut rng = rng_from_seed(9);
        for _ in 0..50 {
            let start = NimState::random_start(10, &mut rng);
            let rec =
                play_nim_game(&mut GuruAgent, &mut RandomAgent, start, 1.0, &mut rng).unwrap();
            assert!(rec.plies.iter().all(|p| p.noise));
            assert!(rec.replay_is_consistent());
            assert!(rec
                .plies
                .iter()
                .all(|p| p.tag == if p.seat == Seat::First { 'G' } else { 'R' }));
        }
    }

    #[test]
    fn noise_rate_matches_probability() {
        let mut rng = rng_from_seed(21);
        let (mut noisy, mut total) = (0usize, 0usize);
        while total < 20_000 {
            let start = NimState::random_start(10, &mut rng);
            let rec = play_nim_game(&mut GuruAgent, &mut GuruAgent, start, 0.9, &mut rng).unwrap();
            total += rec.plies.len();
            noisy += rec.plies.iter().filter(|p| p.noise).count();
        }
        let frac = noisy as f64 / total as f64;
        assert!((frac - 0.9).abs() < 0.02, "frac = {frac}");
    }

    #[test]
    fn terminal_start_is_rejected() {
        let mut rng = rng_from_seed(0);
        assert!(
            play_nim_game(&mut GuruAgent, &mut GuruAgent, st([0, 0, 0]), 0.0, &mut rng).is_err()
        );
    }
}
