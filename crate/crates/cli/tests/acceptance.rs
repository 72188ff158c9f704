//! Acceptance suite: one sequential run over the twelve release criteria.
//!
//! Every criterion prints a `PASS`/`FAIL` line to stderr (visible without
//! `--nocapture`), and the test fails at the end if any criterion failed.
//! The full run trains several small models and takes roughly 45 minutes on
//! a single core.

use std::collections::HashMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gamelm::arena::{
    match_size_sweep, play_nim_match, roster_tournament, train_model_on_lines, AgentSpec,
    MatchReport, RosterAgent, RosterLevel, SweepConfig,
};
use gamelm::chess::{apply_chess_move, format_fen, legal_moves, parse_fen, perft, ChessPosition};
use gamelm::corpus::{
    decode_chess_record, encode_chess_record, generate_nim_games, read_games, read_records,
    GenConfig, NimTagVariant,
};
use gamelm::mlm::{
    gradient_check, init_params, masked_distributions, train, ModelConfig, TrainConfig,
};
use gamelm::nim::{
    apply_nim_move, guru_move, nim_sum, play_nim_game, q_move, q_train, GuruAgent, NimState,
    QAgent, QParams, RandomAgent, Seat, MAX_PILE,
};
use gamelm::seed::rng_from_seed;
use gamelm::tokenizer::{
    detokenize, tokenize, train_wordpiece, TrainerConfig, CLS_ID, MASK_ID, SEP_ID, SPECIAL_TOKENS,
};
use rand::Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("{what} took {elapsed:.1?}, limit {limit:?}"))
    }
}

fn gamelm(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gamelm"))
        .args(args)
        .env("GAMELM_ENGINE", env!("CARGO_BIN_EXE_gamelm-engine"))
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("cannot run gamelm: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "gamelm {} failed: {}",
            args.first().unwrap_or(&""),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Plain recursive game-tree search: the player to move wins iff some move
/// reaches a position where the opponent loses. Taking the last item wins,
/// so the empty position is a loss for the player to move.
fn minimax_wins(piles: [u8; 3], memo: &mut HashMap<[u8; 3], bool>) -> bool {
    if let Some(&v) = memo.get(&piles) {
        return v;
    }
    let mut win = false;
    'search: for pile in 0..3 {
        for take in 1..=piles[pile] {
            let mut next = piles;
            next[pile] -= take;
            if !minimax_wins(next, memo) {
                win = true;
                break 'search;
            }
        }
    }
    memo.insert(piles, win);
    win
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut states = 0;
    let mut zero_reachable = 0;
    for s in NimState::all(MAX_PILE) {
        states += 1;
        if s.is_terminal() {
            continue;
        }
        let can_zero = s
            .legal_moves()
            .into_iter()
            .any(|m| nim_sum(&apply_nim_move(&s, m).unwrap()) == 0);
        if can_zero {
            zero_reachable += 1;
            let after = apply_nim_move(&s, guru_move(&s).map_err(|e| e.to_string())?).unwrap();
            if nim_sum(&after) != 0 {
                return Err(format!(
                    "guru misses the zero nim-sum move in {:?}",
                    s.piles()
                ));
            }
        }
    }
    within(t.elapsed(), Duration::from_secs(1), "exhaustive check")?;
    check(
        states == 1331,
        format!(
            "{states} states, {zero_reachable} with a zero-sum reply, in {:.1?}",
            t.elapsed()
        ),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut memo = HashMap::new();
    let (mut winning, mut preserved) = (0, 0);
    for s in NimState::all(5) {
        let wins = minimax_wins(s.piles(), &mut memo);
        if wins != (nim_sum(&s) != 0) {
            return Err(format!("minimax and nim-sum disagree on {:?}", s.piles()));
        }
        if wins {
            winning += 1;
            let after = apply_nim_move(&s, guru_move(&s).unwrap()).unwrap();
            preserved += u32::from(!minimax_wins(after.piles(), &mut memo));
        }
    }
    within(t.elapsed(), Duration::from_secs(10), "minimax check")?;
    check(
        preserved == winning,
        format!("216 states agree; guru keeps the win in {preserved}/{winning} winning states"),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let starts: Vec<NimState> = NimState::all(MAX_PILE)
        .filter(|s| s.piles().iter().all(|&p| p >= 1))
        .collect();
    let enumerated = starts.iter().filter(|s| nim_sum(s) != 0).count() as f64 / starts.len() as f64;
    let mut rng = rng_from_seed(31);
    let games = 10_000;
    let mut first_wins = 0;
    for _ in 0..games {
        let start = NimState::random_start(MAX_PILE, &mut rng);
        let record = play_nim_game(&mut GuruAgent, &mut GuruAgent, start, 0.0, &mut rng)
            .map_err(|e| e.to_string())?;
        first_wins += u32::from(record.winner == Seat::First);
    }
    let observed = f64::from(first_wins) / games as f64;
    within(t.elapsed(), Duration::from_secs(10), "guru self-play")?;
    check(
        (observed - enumerated).abs() <= 0.02 && (enumerated - 0.95).abs() <= 0.02,
        format!("first seat wins {observed:.4}, enumerated {enumerated:.4} (target about 0.95)"),
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let table = q_train(
        300_000,
        &mut RandomAgent,
        QParams::default(),
        MAX_PILE,
        &mut rng_from_seed(41),
    )
    .map_err(|e| e.to_string())?;
    let games = 10_000;
    let q = play_nim_match(
        ("Q", &mut QAgent { table: &table }),
        ("R", &mut RandomAgent),
        games,
        MAX_PILE,
        42,
    )
    .map_err(|e| e.to_string())?;
    let g = play_nim_match(
        ("G", &mut GuruAgent),
        ("R", &mut RandomAgent),
        games,
        MAX_PILE,
        42,
    )
    .map_err(|e| e.to_string())?;
    let (qw, gw) = (q.a.win_rate(), g.a.win_rate());

    // The default step size 0.1 is too slow to separate close action values
    // within 50k episodes (44-47 of 48 winning states across seeds); 0.3
    // converges. Both are reported.
    let fast = QParams {
        alpha: 0.3,
        ..QParams::default()
    };
    let (agree, winning) = minimax_agreement(fast, 43)?;
    let (agree_default, _) = minimax_agreement(QParams::default(), 43)?;
    let agreement = f64::from(agree) / f64::from(winning);
    check(
        (qw - gw).abs() <= 0.05 && agreement >= 0.95,
        format!(
            "Q vs R {qw:.3}, G vs R {gw:.3}; max pile 3, 50k episodes: alpha 0.3 agrees with \
             minimax on {agree}/{winning} winning states ({agreement:.3}), alpha 0.1 on \
             {agree_default}/{winning}; {:.1?}",
            t.elapsed()
        ),
    )
}

/// Trains 50k episodes against random on piles up to 3 and counts winning
/// states where the greedy move keeps the win.
fn minimax_agreement(params: QParams, seed: u64) -> Result<(u32, u32), String> {
    let table = q_train(
        50_000,
        &mut RandomAgent,
        params,
        3,
        &mut rng_from_seed(seed),
    )
    .map_err(|e| e.to_string())?;
    let mut memo = HashMap::new();
    let (mut winning, mut agree) = (0, 0);
    for s in NimState::all(3).filter(|s| !s.is_terminal()) {
        if !minimax_wins(s.piles(), &mut memo) {
            // every move loses against best play, so every move is optimal
            continue;
        }
        winning += 1;
        let after = apply_nim_move(&s, q_move(&table, &s).unwrap()).unwrap();
        agree += u32::from(!minimax_wins(after.piles(), &mut memo));
    }
    Ok((agree, winning))
}

fn criterion_5(corpus: &Path) -> Outcome {
    let text = std::fs::read_to_string(corpus).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let lines = read_records(&text);
    let vocab = train_wordpiece(&lines, TrainerConfig::NIM).map_err(|e| e.to_string())?;
    let specials_ok = SPECIAL_TOKENS
        .iter()
        .enumerate()
        .all(|(i, tok)| vocab.id(tok) == Some(i as u32));
    let mut failures = 0;
    for line in &lines {
        let ids = tokenize(&vocab, line);
        let back = detokenize(&vocab, &ids).map_err(|e| e.to_string())?;
        failures += usize::from(back.lossy || back.text != *line);
    }
    within(
        t.elapsed(),
        Duration::from_secs(60),
        "tokenizer training and round trip",
    )?;
    check(
        (55..=70).contains(&vocab.len()) && specials_ok && failures == 0,
        format!(
            "vocab {} tokens, specials at 0-4: {specials_ok}, round trip failures {failures}/{} \
             in {:.1?}",
            vocab.len(),
            lines.len(),
            t.elapsed()
        ),
    )
}

fn random_ids(rng: &mut impl Rng, vocab: usize, len: usize) -> Vec<u32> {
    let mut seq = vec![CLS_ID];
    seq.extend((0..len).map(|_| rng.gen_range(SPECIAL_TOKENS.len() as u32..vocab as u32)));
    seq.push(SEP_ID);
    seq
}

fn criterion_6() -> Outcome {
    let report = gradient_check(ModelConfig::grad_check(), &mut rng_from_seed(61))
        .map_err(|e| e.to_string())?;

    let config = ModelConfig::tiny(40, 16);
    let params = init_params::<f32>(config, &mut rng_from_seed(62)).map_err(|e| e.to_string())?;
    let mut rng = rng_from_seed(63);
    let seqs: Vec<Vec<u32>> = (0..50)
        .map(|_| {
            let mut s = random_ids(&mut rng, 40, 8);
            let at = rng.gen_range(1..s.len() - 1);
            s[at] = MASK_ID;
            s
        })
        .collect();
    let dists = masked_distributions(&params, &seqs).map_err(|e| e.to_string())?;
    let worst_sum = dists
        .iter()
        .map(|d| (d.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    let lines: Vec<String> = generate_nim_games(
        &GenConfig {
            games: 60,
            pairings: vec![('G', 'R')],
            seed: 64,
            ..GenConfig::default()
        },
        None,
    )
    .map_err(|e| e.to_string())?
    .into_iter()
    .flat_map(|g| g.lines)
    .collect();
    let vocab = train_wordpiece(&lines, TrainerConfig::NIM).map_err(|e| e.to_string())?;
    let run = || {
        let config = ModelConfig::tiny(vocab.len(), 32);
        let mut params = init_params::<f32>(config, &mut rng_from_seed(65)).unwrap();
        let tc = TrainConfig {
            steps: 40,
            seed: 66,
            ..TrainConfig::default()
        };
        let report = train(&mut params, &lines, &vocab, &tc).unwrap();
        (
            params
                .data()
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<u32>>(),
            report.losses,
        )
    };
    let (a, b) = (run(), run());
    let identical = a.0 == b.0
        && a.1
            .iter()
            .map(|x| x.to_bits())
            .eq(b.1.iter().map(|x| x.to_bits()));
    check(
        report.max_rel_error <= 1e-4 && worst_sum <= 1e-6 && identical,
        format!(
            "gradient check max rel error {:.2e} over {} parameters; softmax max |sum-1| {worst_sum:.1e}; \
             repeated training bit-identical: {identical}",
            report.max_rel_error, report.parameters_checked
        ),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let points = match_size_sweep(&SweepConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let rates: Vec<f64> = points.iter().map(|pt| pt.win_rate).collect();
    let summary = points
        .iter()
        .map(|pt| format!("m={}: {:.3}", pt.match_size, pt.win_rate))
        .collect::<Vec<_>>()
        .join(", ");
    within(elapsed, Duration::from_secs(3600), "sweep")?;
    let monotone = rates.windows(2).all(|w| w[1] >= w[0] - 0.03);
    check(
        monotone && rates.last().is_some_and(|&r| r >= 0.85),
        format!("{summary}; non-decreasing within 0.03: {monotone}; {elapsed:.0?}"),
    )
}

fn win_rate_vs(reports: &[MatchReport], noise: f64, agent: &str, opponent: &str) -> Option<f64> {
    reports.iter().find_map(|r| {
        if r.noise != Some(noise) {
            return None;
        }
        if r.a.label == agent && r.b.label == opponent {
            Some(r.a.win_rate())
        } else if r.b.label == agent && r.a.label == opponent {
            Some(r.b.win_rate())
        } else {
            None
        }
    })
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let noises = [0.0, 0.3, 0.9];
    let mut levels = Vec::new();
    for (k, &noise) in noises.iter().enumerate() {
        let mut agents = vec![
            RosterAgent {
                label: "R".into(),
                spec: AgentSpec::Random,
            },
            RosterAgent {
                label: "R'".into(),
                spec: AgentSpec::Random,
            },
        ];
        for (v, variant, tag) in [
            (0, NimTagVariant::PlayerId, 'G'),
            (1, NimTagVariant::WinState, 'W'),
        ] {
            let gen = GenConfig {
                games: 10_000,
                pairings: vec![('G', 'R')],
                variant,
                noise,
                seed: 800 + 10 * k as u64 + v,
                ..GenConfig::default()
            };
            let lines: Vec<String> = generate_nim_games(&gen, None)
                .map_err(|e| e.to_string())?
                .into_iter()
                .flat_map(|g| g.lines)
                .collect();
            let tc = TrainConfig {
                steps: 15_000,
                lr: 1e-3,
                seed: 81,
                ..TrainConfig::default()
            };
            let (vocab, params, _) = train_model_on_lines(
                &lines,
                TrainerConfig::NIM,
                ModelConfig::tiny(0, 32),
                &tc,
                82,
            )
            .map_err(|e| e.to_string())?;
            agents.push(RosterAgent {
                label: format!("model-{tag}"),
                spec: AgentSpec::Model {
                    params: Arc::new(params),
                    vocab: Arc::new(vocab),
                    tag,
                },
            });
        }
        levels.push(RosterLevel { noise, agents });
    }
    let reports = roster_tournament(&levels, 2000, MAX_PILE, 83, 1).map_err(|e| e.to_string())?;
    let get = |noise, agent, opp| {
        win_rate_vs(&reports, noise, agent, opp).ok_or_else(|| format!("missing {agent} vs {opp}"))
    };
    let mut parts = Vec::new();
    let mut g_ahead = true;
    let mut wx_high = None;
    for &noise in &noises {
        let baseline = get(noise, "R", "R'")?;
        let gp = get(noise, "model-G", "R")?;
        let wp = get(noise, "model-W", "R")?;
        g_ahead &= gp > baseline;
        parts.push(format!(
            "p={noise}: G {gp:.3}, W/X {wp:.3}, R vs R' {baseline:.3}"
        ));
        wx_high = Some((wp, baseline));
    }
    // "no advantage" at p = 0.9: within three standard errors of the
    // random-vs-random baseline (about 0.011 each at 2000 games)
    let (wp, baseline) = wx_high.expect("three noise levels");
    let wx_flat = wp <= baseline + 0.03;
    check(
        g_ahead && wx_flat,
        format!(
            "{}; G above baseline at every p: {g_ahead}; W/X at 0.9 within 0.03 of baseline: \
             {wx_flat}; {:.0?}",
            parts.join("; "),
            t.elapsed()
        ),
    )
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let start = ChessPosition::initial();
    let counts: Vec<u64> = (1..=4).map(|d| perft(&start, d)).collect();
    let mut rng = rng_from_seed(91);
    let mut checked = 0;
    while checked < 10_000 {
        let mut pos = ChessPosition::initial();
        for _ in 0..200 {
            let fen = format_fen(&pos);
            let back = parse_fen(&fen).map_err(|e| format!("{fen}: {e}"))?;
            if back != pos || format_fen(&back) != fen {
                return Err(format!("FEN round trip changed {fen}"));
            }
            checked += 1;
            let moves = legal_moves(&pos);
            if moves.is_empty() {
                break;
            }
            pos = apply_chess_move(&pos, moves[rng.gen_range(0..moves.len())]).unwrap();
        }
    }
    within(
        t.elapsed(),
        Duration::from_secs(60),
        "perft and FEN round trip",
    )?;
    check(
        counts == [20, 400, 8902, 197_281],
        format!(
            "perft 1-4 = {counts:?}; {checked} self-play FENs round-trip; {:.1?}",
            t.elapsed()
        ),
    )
}

fn chess_corpus_errors(text: &str) -> (usize, usize, Vec<String>) {
    let games = read_games(text);
    let mut problems = Vec::new();
    let mut records = 0;
    for (i, game) in games.iter().enumerate() {
        if game.is_empty() || game.len() > 6 {
            problems.push(format!("game {i} has {} records", game.len()));
        }
        for line in game {
            records += 1;
            match decode_chess_record(line) {
                Ok(r) if !legal_moves(&r.position).contains(&r.mv) => {
                    problems.push(format!("illegal move in {line}"))
                }
                Ok(r) if encode_chess_record(&r.position, &r.mv) != *line => {
                    problems.push(format!("non-canonical line {line}"))
                }
                Ok(_) => {}
                Err(e) => problems.push(e.to_string()),
            }
        }
    }
    (games.len(), records, problems)
}

fn criterion_10(dir: &Path) -> Outcome {
    let corpus = dir.join("chess100.txt");
    let t = Instant::now();
    gamelm(&[
        "chess-gen",
        "--games",
        "100",
        "--depth",
        "1",
        "--seed",
        "10",
        "--out",
        p(&corpus),
    ])?;
    let elapsed = t.elapsed();
    within(elapsed, Duration::from_secs(300), "chess-gen")?;
    let text = std::fs::read_to_string(&corpus).map_err(|e| e.to_string())?;
    let (games, records, problems) = chess_corpus_errors(&text);
    check(
        games == 100 && problems.is_empty(),
        format!(
            "{games} games, {records} records, {} problems{}; {elapsed:.1?}",
            problems.len(),
            problems
                .first()
                .map(|p| format!(" (first: {p})"))
                .unwrap_or_default()
        ),
    )
}

fn criterion_11(dir: &Path) -> Outcome {
    let t = Instant::now();
    let corpus = dir.join("chess.txt");
    let train_split = dir.join("chess.train.txt");
    let test_split = dir.join("chess.test.txt");
    let vocab = dir.join("vocab.json");
    let model = dir.join("chess.ckpt");
    let eval = dir.join("eval");
    // 6250 games with a 20% held-out split leaves 5000 training games
    gamelm(&[
        "chess-gen",
        "--games",
        "6250",
        "--noise",
        "0.3",
        "--seed",
        "11",
        "--out",
        p(&corpus),
    ])?;
    let train_games =
        read_games(&std::fs::read_to_string(&train_split).map_err(|e| e.to_string())?).len();
    gamelm(&[
        "tok-train",
        "--corpus",
        p(&train_split),
        "--preset",
        "chess",
        "--out",
        p(&vocab),
    ])?;
    gamelm(&[
        "mlm-train",
        "--corpus",
        p(&train_split),
        "--vocab",
        p(&vocab),
        "--epochs",
        "3",
        "--seed",
        "11",
        "--out",
        p(&model),
    ])?;
    gamelm(&[
        "chess-eval",
        "--model",
        p(&model),
        "--vocab",
        p(&vocab),
        "--games",
        "5",
        "--heldout",
        p(&test_split),
        "--out-dir",
        p(&eval),
    ])?;
    let csv =
        std::fs::read_to_string(eval.join("heldout_validity.csv")).map_err(|e| e.to_string())?;
    let (mut valid, mut total) = (0u64, 0u64);
    for row in csv.lines().skip(1) {
        let f: Vec<u64> = row.split(',').map(|x| x.parse().unwrap_or(0)).collect();
        if f.len() == 3 && (1..=6).contains(&f[0]) {
            valid += f[1];
            total += f[2];
        }
    }
    let rate = valid as f64 / total.max(1) as f64;
    let missing: Vec<&str> = [
        "validity.csv",
        "validity.svg",
        "game_lengths.csv",
        "game_lengths.svg",
    ]
    .into_iter()
    .filter(|f| !eval.join(f).exists())
    .collect();
    check(
        train_games >= 5000 && rate >= 0.5 && missing.is_empty(),
        format!(
            "{train_games} training games; held-out top-1 validity on plies 1-6 {valid}/{total} = {rate:.3}; \
             missing outputs {missing:?}; {:.0?}",
            t.elapsed()
        ),
    )
}

fn criterion_12(dir: &Path) -> Outcome {
    let corpus = dir.join("nim.txt");
    gamelm(&["nim-gen", "--out", p(&corpus)])?;
    let stats: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("nim.txt.stats.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let games = stats["number_of_games"].as_u64().unwrap_or(0);
    let moves = stats["total_unique_moves"].as_u64().unwrap_or(0);
    let avg = stats["average_sequence_length"]
        .as_f64()
        .unwrap_or(f64::NAN);
    check(
        games == 30_000 && moves == 30 && (avg - 15.09).abs() <= 2.0,
        format!("{games} games, {moves} unique moves, average sequence length {avg:.2}"),
    )
}

fn report(results: &mut Vec<bool>, n: usize, run: impl FnOnce() -> Outcome) {
    let outcome =
        catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| Err(format!("panicked: {e:?}")));
    let mut err = std::io::stderr();
    match &outcome {
        Ok(detail) => writeln!(err, "PASS criterion {n}: {detail}"),
        Err(detail) => writeln!(err, "FAIL criterion {n}: {detail}"),
    }
    .unwrap();
    results.push(outcome.is_ok());
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let nim_dir = dir.path().join("nim");
    let chess_dir = dir.path().join("chess");
    std::fs::create_dir_all(&nim_dir).unwrap();
    std::fs::create_dir_all(&chess_dir).unwrap();

    let mut results = Vec::new();
    report(&mut results, 1, criterion_1);
    report(&mut results, 2, criterion_2);
    report(&mut results, 3, criterion_3);
    report(&mut results, 4, criterion_4);
    // criterion 12 writes the default corpus that criterion 5 tokenizes
    report(&mut results, 12, || criterion_12(&nim_dir));
    report(&mut results, 5, || criterion_5(&nim_dir.join("nim.txt")));
    report(&mut results, 6, criterion_6);
    report(&mut results, 9, criterion_9);
    report(&mut results, 10, || criterion_10(&chess_dir));
    report(&mut results, 11, || criterion_11(&chess_dir));
    report(&mut results, 8, criterion_8);
    report(&mut results, 7, criterion_7);

    let failed = results.iter().filter(|ok| !**ok).count();
    writeln!(
        std::io::stderr(),
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    )
    .unwrap();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
