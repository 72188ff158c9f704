//! UCI client behaviour against scripted engines.

#![cfg(unix)]

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gamelm::chess::{parse_fen, ChessPosition};
use gamelm::uci::{engine_connect, EngineConfig, MoveOracle, UciError};

const HANDSHAKE: &str = r#"echo "id name Fake"
      echo "option name Threads type spin default 1 min 1 max 512"
      echo "option name MultiPV type spin default 1 min 1 max 500"
      echo "option name UCI_LimitStrength type check default false"
      echo "option name UCI_Elo type spin default 1500 min 1320 max 3190"
      echo uciok"#;

/// Writes a bash engine whose reply to `go` is `on_go`, and whose reply to
/// `quit` is `on_quit`. Every `setoption` line is appended to `options.log`.
fn fake_engine(dir: &Path, on_go: &str, on_quit: &str) -> PathBuf {
    let log = dir.join("options.log");
    let script = format!(
        r#"#!/bin/bash
trap '' TERM
while read -r line; do
  case "$line" in
    uci)
      {HANDSHAKE};;
    isready) echo readyok;;
    setoption*) echo "$line" >> "{log}";;
    go*) {on_go};;
    quit) {on_quit};;
  esac
done
"#,
        log = log.display()
    );
    let path = dir.join("engine.sh");
    std::fs::write(&path, script).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

fn config(path: &Path) -> EngineConfig {
    let mut c = EngineConfig::new(path);
    c.handshake_timeout_ms = 5_000;
    c.move_timeout_ms = 1_000;
    c
}

#[test]
fn well_behaved_engine_plays_legal_move() {
    let dir = tempfile::tempdir().unwrap();
    let path = fake_engine(
        dir.path(),
        "echo 'info depth 1'; echo 'bestmove e2e4 ponder e7e5'",
        "exit 0",
    );
    let mut s = engine_connect(config(&path)).unwrap();
    assert_eq!(s.engine_name(), Some("Fake"));
    s.new_game().unwrap();
    let mv = s.best_move(&ChessPosition::initial(), Some(1)).unwrap();
    assert_eq!(mv.to_string(), "e2e4");
    assert_eq!(
        s.choose(&ChessPosition::initial()).unwrap().to_string(),
        "e2e4"
    );
    s.close();
    s.close();
    assert!(s.is_closed());
    assert!(matches!(
        s.best_move(&ChessPosition::initial(), Some(1)),
        Err(UciError::Closed)
    ));
}

#[test]
fn hung_search_times_out_and_process_is_killed() {
    let dir = tempfile::tempdir().unwrap();
    // never answers `go` and ignores `quit`
    let path = fake_engine(dir.path(), ":", ":");
    let mut s = engine_connect(config(&path)).unwrap();
    let t = Instant::now();
    let err = s.best_move(&ChessPosition::initial(), Some(1)).unwrap_err();
    assert!(
        matches!(
            err,
            UciError::Timeout {
                expected: "bestmove",
                ..
            }
        ),
        "{err}"
    );
    assert!(t.elapsed() < Duration::from_secs(3));
    assert!(!s.is_ready());
    let t = Instant::now();
    s.close();
    assert!(s.is_closed());
    assert!(
        t.elapsed() < Duration::from_secs(7),
        "close took {:?}",
        t.elapsed()
    );
}

#[test]
fn terminal_position_reply() {
    let dir = tempfile::tempdir().unwrap();
    let path = fake_engine(dir.path(), "echo 'bestmove (none)'", "exit 0");
    let mut s = engine_connect(config(&path)).unwrap();
    let mate = parse_fen("rnb1kbnr/pppp1ppp/8/4p3/6Pq/5P2/PPPPP2P/RNBQKBNR w KQkq - 1 3").unwrap();
    assert!(matches!(
        s.best_move(&mate, Some(1)),
        Err(UciError::Terminal)
    ));
}

#[test]
fn illegal_reply_is_a_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = fake_engine(dir.path(), "echo 'bestmove e2e5'", "exit 0");
    let mut s = engine_connect(config(&path)).unwrap();
    assert!(matches!(
        s.best_move(&ChessPosition::initial(), Some(1)),
        Err(UciError::Protocol(_))
    ));
}

#[test]
fn engine_dying_mid_search() {
    let dir = tempfile::tempdir().unwrap();
    let path = fake_engine(dir.path(), "exit 3", "exit 0");
    let mut s = engine_connect(config(&path)).unwrap();
    assert!(matches!(
        s.best_move(&ChessPosition::initial(), Some(1)),
        Err(UciError::EngineExited("bestmove"))
    ));
}

#[test]
fn silent_engine_fails_the_handshake() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mute.sh");
    std::fs::write(&path, "#!/bin/bash\nsleep 30\n").unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    let mut c = config(&path);
    c.handshake_timeout_ms = 300;
    let t = Instant::now();
    assert!(matches!(
        engine_connect(c),
        Err(UciError::Timeout {
            expected: "uciok",
            ..
        })
    ));
    assert!(t.elapsed() < Duration::from_secs(7));
}

#[test]
fn elo_in_range_limits_strength() {
    let dir = tempfile::tempdir().unwrap();
    let path = fake_engine(dir.path(), "echo 'bestmove e2e4'", "exit 0");
    let mut c = config(&path);
    c.target_elo = Some(1500);
    let mut s = engine_connect(c).unwrap();
    assert_eq!(s.effective_elo(), Some(1500));
    assert!(s.warnings().is_empty());
    s.close();
    let log = std::fs::read_to_string(dir.path().join("options.log")).unwrap();
    assert!(log.contains("setoption name UCI_LimitStrength value true"));
    assert!(log.contains("setoption name UCI_Elo value 1500"));
    assert!(log.contains("setoption name Threads value 1"));
    assert!(log.contains("setoption name MultiPV value 1"));
}

#[test]
fn elo_above_range_is_clamped_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let path = fake_engine(dir.path(), "echo 'bestmove e2e4'", "exit 0");
    let mut c = config(&path);
    c.target_elo = Some(3600);
    let mut s = engine_connect(c).unwrap();
    assert_eq!(s.effective_elo(), Some(3190));
    assert_eq!(s.warnings().len(), 1);
    assert!(s.warnings()[0].contains("3600"));
    s.close();
    let log = std::fs::read_to_string(dir.path().join("options.log")).unwrap();
    assert!(log.contains("UCI_LimitStrength value false"));
    assert!(!log.contains("UCI_Elo value"));
}

#[test]
fn elo_below_range_is_raised_to_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let path = fake_engine(dir.path(), "echo 'bestmove e2e4'", "exit 0");
    let mut c = config(&path);
    c.target_elo = Some(800);
    let s = engine_connect(c).unwrap();
    assert_eq!(s.effective_elo(), Some(1320));
    assert_eq!(s.warnings().len(), 1);
}
