//! Minimal UCI client for driving an external chess engine over pipes.
//!
//! The session is strictly request/response: one `go` is outstanding at a
//! time and every reply is awaited with a timeout. Engine stdout is drained
//! by a reader thread so a silent or dead engine never blocks the caller.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use thiserror::Error;

use crate::chess::{format_fen, is_legal, parse_move, ChessMove, ChessPosition};

/// Largest search depth accepted by the client.
pub const MAX_DEPTH: u32 = 20;

#[derive(Debug, Error)]
pub enum UciError {
    #[error("failed to spawn engine {path:?}: {source}")]
    Spawn {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("engine did not answer {expected:?} within {timeout:?}")]
    Timeout {
        expected: &'static str,
        timeout: Duration,
    },
    #[error("engine process exited while waiting for {0:?}")]
    EngineExited(&'static str),
    #[error("engine I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("engine reports no move: the position is terminal")]
    Terminal,
    #[error("session is closed or unusable")]
    Closed,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EngineConfig {
    pub path: PathBuf,
    pub threads: u32,
    pub multipv: u32,
    /// Fixed search depth in plies; `None` leaves it to the engine default
    /// (used together with `movetime_ms`).
    pub depth: Option<u32>,
    /// Requested playing strength. Ratings above the engine's advertised
    /// `UCI_Elo` range mean full strength.
    pub target_elo: Option<u32>,
    pub movetime_ms: Option<u64>,
    pub handshake_timeout_ms: u64,
    pub move_timeout_ms: u64,
}

impl EngineConfig {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            threads: 1,
            multipv: 1,
            depth: Some(1),
            target_elo: None,
            movetime_ms: None,
            handshake_timeout_ms: 10_000,
            move_timeout_ms: 60_000,
        }
    }

    fn validate(&self) -> Result<(), UciError> {
        if self.threads < 1 || self.multipv < 1 {
            return Err(UciError::Config("threads and multipv must be >= 1".into()));
        }
        if let Some(d) = self.depth {
            if !(1..=MAX_DEPTH).contains(&d) {
                return Err(UciError::Config(format!(
                    "depth must be in 1..={MAX_DEPTH}, got {d}"
                )));
            }
        }
        Ok(())
    }
}

/// One `option name ...` line advertised by the engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineOption {
    pub name: String,
    pub kind: String,
    pub default: Option<String>,
    pub min: Option<i64>,
    pub max: Option<i64>,
}

impl EngineOption {
    fn parse(line: &str) -> Option<EngineOption> {
        let rest = line.strip_prefix("option name ")?;
        let (name, rest) = rest.split_once(" type ")?;
        let mut words = rest.split_whitespace();
        let kind = words.next()?.to_string();
        let mut opt = EngineOption {
            name: name.trim().to_string(),
            kind,
            default: None,
            min: None,
            max: None,
        };
        while let Some(w) = words.next() {
            match w {
                "default" => opt.default = words.next().map(str::to_string),
                "min" => opt.min = words.next().and_then(|v| v.parse().ok()),
                "max" => opt.max = words.next().and_then(|v| v.parse().ok()),
                _ => {}
            }
        }
        Some(opt)
    }
}

/// Live engine process after a completed handshake.
pub struct EngineSession {
    config: EngineConfig,
    child: Option<Child>,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    name: Option<String>,
    options: Vec<EngineOption>,
    warnings: Vec<String>,
    effective_elo: Option<u32>,
    ready: bool,
}

impl std::fmt::Debug for EngineSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EngineSession")
            .field("path", &self.config.path)
            .field("name", &self.name)
            .field("ready", &self.ready)
            .finish()
    }
}

/// Spawns the engine and performs the `uci` / `isready` handshake.
pub fn engine_connect(config: EngineConfig) -> Result<EngineSession, UciError> {
    config.validate()?;
    let mut child = Command::new(&config.path)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|source| UciError::Spawn {
            path: config.path.clone(),
            source,
        })?;
    let stdout = child.stdout.take().expect("piped stdout");
    let stdin = child.stdin.take();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let mut session = EngineSession {
        config,
        child: Some(child),
        stdin,
        lines: rx,
        name: None,
        options: Vec::new(),
        warnings: Vec::new(),
        effective_elo: None,
        ready: false,
    };
    if let Err(e) = session.handshake() {
        session.close();
        return Err(e);
    }
    Ok(session)
}

impl EngineSession {
    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn engine_name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn options(&self) -> &[EngineOption] {
        &self.options
    }

    /// Non-fatal issues met while configuring the engine.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Elo actually requested from the engine after clamping.
    pub fn effective_elo(&self) -> Option<u32> {
        self.effective_elo
    }

    pub fn is_ready(&self) -> bool {
        self.ready
    }

    fn handshake_timeout(&self) -> Duration {
        Duration::from_millis(self.config.handshake_timeout_ms)
    }

    fn send(&mut self, command: &str) -> Result<(), UciError> {
        let stdin = self.stdin.as_mut().ok_or(UciError::Closed)?;
        debug!("uci> {command}");
        stdin.write_all(command.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()?;
        Ok(())
    }

    /// Reads lines until one whose first word is `keyword`.
    fn wait_for(
        &mut self,
        keyword: &'static str,
        timeout: Duration,
        mut on_line: impl FnMut(&str),
    ) -> Result<String, UciError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(line) => {
                    debug!("uci< {line}");
                    if line.split_whitespace().next() == Some(keyword) {
                        return Ok(line);
                    }
                    on_line(&line);
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(UciError::Timeout {
                        expected: keyword,
                        timeout,
                    })
                }
                Err(RecvTimeoutError::Disconnected) => return Err(UciError::EngineExited(keyword)),
            }
        }
    }

    fn handshake(&mut self) -> Result<(), UciError> {
        self.send("uci")?;
        let timeout = self.handshake_timeout();
        let mut name = None;
        let mut options = Vec::new();
        self.wait_for("uciok", timeout, |line| {
            if let Some(n) = line.strip_prefix("id name ") {
                name = Some(n.trim().to_string());
            } else if let Some(opt) = EngineOption::parse(line) {
                options.push(opt);
            }
        })?;
        self.name = name;
        self.options = options;

        let threads = self.config.threads.to_string();
        let multipv = self.config.multipv.to_string();
        self.set_option("Threads", &threads)?;
        self.set_option("MultiPV", &multipv)?;
        if let Some(target) = self.config.target_elo {
            self.configure_strength(target)?;
        }
        self.sync()?;
        self.ready = true;
        Ok(())
    }

    fn find_option(&self, name: &str) -> Option<&EngineOption> {
        self.options
            .iter()
            .find(|o| o.name.eq_ignore_ascii_case(name))
    }

    fn warn(&mut self, message: String) {
        warn!("{message}");
        self.warnings.push(message);
    }

    /// Sends `setoption` for an advertised option; unknown names only warn.
    fn set_option(&mut self, name: &str, value: &str) -> Result<(), UciError> {
        if self.find_option(name).is_none() {
            self.warn(format!(
                "engine does not advertise option {name:?}; not set"
            ));
            return Ok(());
        }
        self.send(&format!("setoption name {name} value {value}"))
    }

    fn configure_strength(&mut self, target: u32) -> Result<(), UciError> {
        let Some(opt) = self.find_option("UCI_Elo").cloned() else {
            self.warn(format!(
                "engine has no UCI_Elo option; requested rating {target} ignored"
            ));
            return Ok(());
        };
        let min = opt.min.unwrap_or(i64::MIN).max(0) as u64;
        let max = opt.max.unwrap_or(i64::MAX).max(0) as u64;
        let target = u64::from(target);
        if target > max {
            self.warn(format!(
                "requested Elo {target} exceeds engine maximum {max}; clamped to {max} and \
                 running at full strength"
            ));
            self.effective_elo = Some(max as u32);
            self.set_option("UCI_LimitStrength", "false")?;
            return Ok(());
        }
        let elo = if target < min {
            self.warn(format!(
                "requested Elo {target} is below engine minimum {min}; clamped to {min}"
            ));
            min
        } else {
            target
        };
        self.effective_elo = Some(elo as u32);
        self.set_option("UCI_LimitStrength", "true")?;
        self.set_option("UCI_Elo", &elo.to_string())
    }

    /// `isready` / `readyok` round trip.
    pub fn sync(&mut self) -> Result<(), UciError> {
        self.send("isready")?;
        let timeout = self.handshake_timeout();
        self.wait_for("readyok", timeout, |_| {})?;
        Ok(())
    }

    pub fn new_game(&mut self) -> Result<(), UciError> {
        if !self.ready {
            return Err(UciError::Closed);
        }
        self.send("ucinewgame")?;
        self.sync()
    }

    /// Asks for the engine's move in `position`, searching `depth` plies
    /// (or the configured movetime when `depth` is `None`).
    pub fn best_move(
        &mut self,
        position: &ChessPosition,
        depth: Option<u32>,
    ) -> Result<ChessMove, UciError> {
        if !self.ready {
            return Err(UciError::Closed);
        }
        self.send(&format!("position fen {}", format_fen(position)))?;
        let go = match (depth, self.config.movetime_ms) {
            (Some(d), _) => format!("go depth {}", d.clamp(1, MAX_DEPTH)),
            (None, Some(ms)) => format!("go movetime {ms}"),
            (None, None) => "go depth 1".to_string(),
        };
        self.send(&go)?;
        let timeout = Duration::from_millis(self.config.move_timeout_ms);
        let reply = match self.wait_for("bestmove", timeout, |_| {}) {
            Ok(line) => line,
            Err(e) => {
                // the engine state is unknown after a lost reply
                self.ready = false;
                return Err(e);
            }
        };
        let token = reply
            .split_whitespace()
            .nth(1)
            .ok_or_else(|| UciError::Protocol(format!("malformed reply {reply:?}")))?;
        if token == "(none)" || token == "0000" {
            return Err(UciError::Terminal);
        }
        let mv = parse_move(token)
            .map_err(|e| UciError::Protocol(format!("unparseable best move: {e}")))?;
        if !is_legal(position, mv) {
            return Err(UciError::Protocol(format!(
                "engine move {mv} is illegal in {}",
                format_fen(position)
            )));
        }
        Ok(mv)
    }

    /// Sends `quit` and reaps the process, killing it after 5 s. Idempotent.
    pub fn close(&mut self) {
        self.ready = false;
        let Some(mut child) = self.child.take() else {
            return;
        };
        if self.stdin.is_some() {
            let _ = self.send("stop");
            let _ = self.send("quit");
        }
        self.stdin = None;
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            match child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => break,
            }
        }
        warn!("engine did not exit after quit; killing it");
        let _ = child.kill();
        let _ = child.wait();
    }

    pub fn is_closed(&self) -> bool {
        self.child.is_none()
    }
}

impl Drop for EngineSession {
    fn drop(&mut self) {
        self.close();
    }
}

pub fn engine_best_move(
    session: &mut EngineSession,
    position: &ChessPosition,
    depth: u32,
) -> Result<ChessMove, UciError> {
    session.best_move(position, Some(depth))
}

pub fn engine_close(session: &mut EngineSession) {
    session.close();
}

/// Source of chess moves for corpus generation and substitution.
pub trait MoveOracle {
    fn new_game(&mut self) -> Result<(), UciError>;
    fn choose(&mut self, position: &ChessPosition) -> Result<ChessMove, UciError>;
}

impl MoveOracle for EngineSession {
    fn new_game(&mut self) -> Result<(), UciError> {
        EngineSession::new_game(self)
    }

    fn choose(&mut self, position: &ChessPosition) -> Result<ChessMove, UciError> {
        let depth = self.config.depth;
        self.best_move(position, depth)
    }
}
