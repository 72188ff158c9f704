//! Property tests over randomly generated games, records and models.

use proptest::prelude::*;
use rand::seq::SliceRandom;

use gamelm::chess::{
    apply_chess_move, format_fen, format_move, legal_moves, parse_fen, parse_move, ChessPosition,
    Color, PieceKind, Square,
};
use gamelm::corpus::{
    decode_chess_record, decode_nim_record, encode_chess_record, encode_nim_record,
    generate_nim_games, GenConfig, NimTagVariant,
};
use gamelm::mlm::{init_params, masked_distributions, mlm_loss, MaskedLabel, ModelConfig};
use gamelm::nim::{
    play_nim_game, q_move, q_train, GuruAgent, NimAgent, NimMove, NimState, QParams, RandomAgent,
    Seat,
};
use gamelm::seed::rng_from_seed;
use gamelm::tokenizer::{detokenize, tokenize, train_wordpiece, TrainerConfig, MASK_ID};

/// Positions met along a seeded random playout.
fn playout(seed: u64, plies: usize) -> Vec<ChessPosition> {
    let mut rng = rng_from_seed(seed);
    let mut position = ChessPosition::initial();
    let mut seen = vec![position.clone()];
    for _ in 0..plies {
        let moves = legal_moves(&position);
        let Some(&mv) = moves.choose(&mut rng) else {
            break;
        };
        position = apply_chess_move(&position, mv).unwrap();
        seen.push(position.clone());
    }
    seen
}

fn kings(position: &ChessPosition, color: Color) -> usize {
    (0..64u8)
        .filter_map(Square::from_index)
        .filter(|&s| {
            position
                .piece_at(s)
                .is_some_and(|p| p.kind == PieceKind::King && p.color == color)
        })
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fen_round_trip_and_king_safety(seed in any::<u64>()) {
        for position in playout(seed, 120) {
            let fen = format_fen(&position);
            let back = parse_fen(&fen).unwrap();
            prop_assert_eq!(&back, &position);
            prop_assert_eq!(format_fen(&back), fen);
            prop_assert_eq!(kings(&position, Color::White), 1);
            prop_assert_eq!(kings(&position, Color::Black), 1);
            // the side that just moved never stands in check
            prop_assert!(!position.in_check(position.side_to_move().opposite()));
        }
    }

    #[test]
    fn chess_records_round_trip(seed in any::<u64>()) {
        let positions = playout(seed, 40);
        for position in &positions {
            for mv in legal_moves(position).into_iter().take(5) {
                let line = encode_chess_record(position, &mv);
                let record = decode_chess_record(&line).unwrap();
                prop_assert_eq!(&record.position, position);
                prop_assert_eq!(record.mv, mv);
                prop_assert_eq!(encode_chess_record(&record.position, &record.mv), line);
            }
        }
    }

    #[test]
    fn move_codec_round_trip(from in 0u8..64, to in 0u8..64, promo in 0usize..5) {
        let from = Square::from_index(from).unwrap();
        let to = Square::from_index(to).unwrap();
        let suffix = ["", "q", "r", "b", "n"][promo];
        let text = format!("{from}{to}{suffix}");
        let promotes = matches!((from.rank(), to.rank()), (6, 7) | (1, 0));
        let valid = from != to && (suffix.is_empty() || promotes);
        match parse_move(&text) {
            Ok(mv) => {
                prop_assert!(valid);
                prop_assert_eq!(format_move(&mv), text);
            }
            Err(_) => prop_assert!(!valid),
        }
    }

    #[test]
    fn nim_records_round_trip(piles in prop::array::uniform3(0u8..=10), tag in prop::sample::select(vec!['G', 'Q', 'R', 'W', 'X'])) {
        let state = NimState::new(piles).unwrap();
        prop_assume!(!state.is_terminal());
        for mv in state.legal_moves() {
            let line = encode_nim_record(&state, tag, mv);
            let record = decode_nim_record(&line).unwrap();
            prop_assert_eq!(record.state, state);
            prop_assert_eq!(record.tag, tag);
            prop_assert_eq!(record.mv, mv);
            prop_assert_eq!(encode_nim_record(&record.state, record.tag, record.mv), line);
        }
    }

    #[test]
    fn nim_games_replay_and_terminate(seed in any::<u64>(), noise in 0.0f64..=1.0) {
        let mut rng = rng_from_seed(seed);
        let start = NimState::random_start(10, &mut rng);
        let record = play_nim_game(&mut GuruAgent, &mut RandomAgent, start, noise, &mut rng).unwrap();
        prop_assert!(record.replay_is_consistent());
        let totals: Vec<u32> = record.plies.iter().map(|p| p.state.total()).collect();
        prop_assert!(totals.windows(2).all(|w| w[1] < w[0]));
    }
}

#[test]
fn noise_rate_matches_setting() {
    for p in [0.1, 0.3, 0.9] {
        let config = GenConfig {
            games: 4000,
            pairings: vec![('G', 'R')],
            noise: p,
            seed: 11,
            ..GenConfig::default()
        };
        let games = generate_nim_games(&config, None).unwrap();
        let plies: Vec<_> = games.iter().flat_map(|g| &g.record.plies).collect();
        assert!(plies.len() >= 10_000, "only {} moves", plies.len());
        let rate = plies.iter().filter(|p| p.noise).count() as f64 / plies.len() as f64;
        assert!((rate - p).abs() <= 0.02, "noise {p}: observed {rate}");
    }
}

#[test]
fn win_state_tags_follow_the_winner() {
    let config = GenConfig {
        games: 500,
        pairings: vec![('G', 'R')],
        variant: NimTagVariant::WinState,
        noise: 0.3,
        seed: 5,
        ..GenConfig::default()
    };
    for game in generate_nim_games(&config, None).unwrap() {
        for (ply, line) in game.record.plies.iter().zip(&game.lines) {
            let tag = decode_nim_record(line).unwrap().tag;
            let expected = if ply.seat == game.record.winner {
                'W'
            } else {
                'X'
            };
            assert_eq!(tag, expected);
        }
    }
}

#[test]
fn q_move_is_deterministic() {
    let table = q_train(
        5_000,
        &mut RandomAgent,
        QParams::default(),
        10,
        &mut rng_from_seed(3),
    )
    .unwrap();
    for state in NimState::all(10).filter(|s| !s.is_terminal()) {
        assert_eq!(
            q_move(&table, &state).unwrap(),
            q_move(&table, &state).unwrap()
        );
    }
}

fn nim_corpus() -> Vec<String> {
    let config = GenConfig {
        games: 300,
        pairings: vec![('G', 'R'), ('G', 'G'), ('R', 'R')],
        noise: 0.2,
        seed: 9,
        ..GenConfig::default()
    };
    generate_nim_games(&config, None)
        .unwrap()
        .into_iter()
        .flat_map(|g| g.lines)
        .collect()
}

#[test]
fn tokenizer_round_trip_and_bounds() {
    let lines = nim_corpus();
    let vocab = train_wordpiece(&lines, TrainerConfig::NIM).unwrap();
    for line in &lines {
        let ids = tokenize(&vocab, line);
        assert_eq!(ids, tokenize(&vocab, line));
        assert!(ids.iter().all(|&id| (id as usize) < vocab.len()));
        let back = detokenize(&vocab, &ids).unwrap();
        assert!(!back.lossy);
        assert_eq!(&back.text, line);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn masked_distributions_normalize(seed in any::<u64>(), lens in prop::collection::vec(2usize..12, 1..5)) {
        let config = ModelConfig::tiny(30, 12);
        let params = init_params::<f32>(config, &mut rng_from_seed(seed)).unwrap();
        let mut rng = rng_from_seed(seed ^ 1);
        let seqs: Vec<Vec<u32>> = lens
            .iter()
            .map(|&n| {
                let mut s: Vec<u32> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 5..30)).collect();
                let at = rand::Rng::gen_range(&mut rng, 0..n);
                s[at] = MASK_ID;
                s
            })
            .collect();
        for row in masked_distributions(&params, &seqs).unwrap() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6, "sum {}", sum);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn loss_is_invariant_to_batch_order(seed in any::<u64>()) {
        let config = ModelConfig::tiny(20, 10);
        let params = init_params::<f64>(config, &mut rng_from_seed(seed)).unwrap();
        let seqs = vec![vec![2, 5, 6, 7, 3], vec![2, 8, 4, 9, 10, 3], vec![2, 11, 12, 3]];
        let labels = vec![
            MaskedLabel { seq: 0, pos: 2, target: 6 },
            MaskedLabel { seq: 1, pos: 2, target: 13 },
            MaskedLabel { seq: 2, pos: 1, target: 11 },
        ];
        let order = [2usize, 0, 1];
        let permuted: Vec<Vec<u32>> = order.iter().map(|&i| seqs[i].clone()).collect();
        let relabelled: Vec<MaskedLabel> = labels
            .iter()
            .map(|l| MaskedLabel { seq: order.iter().position(|&i| i == l.seq).unwrap(), ..*l })
            .rev()
            .collect();
        let a = mlm_loss(&params, &seqs, &labels).unwrap();
        let b = mlm_loss(&params, &permuted, &relabelled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
    }
}

/// An agent that always proposes the same move, legal or not, to check that
/// the game core refuses it.
struct Stubborn(NimMove);

impl NimAgent for Stubborn {
    fn tag(&self) -> char {
        'Z'
    }

    fn choose_move(
        &mut self,
        _: &NimState,
        _: &mut gamelm::GameRng,
    ) -> Result<NimMove, gamelm::nim::NimError> {
        Ok(self.0)
    }
}

#[test]
fn game_core_rejects_illegal_agent_moves() {
    let start = NimState::new([1, 1, 1]).unwrap();
    let mut bad = Stubborn(NimMove::new(0, 5).unwrap());
    assert!(play_nim_game(
        &mut bad,
        &mut RandomAgent,
        start,
        0.0,
        &mut rng_from_seed(0)
    )
    .is_err());
    let _ = Seat::First;
}
