//! Board games as text.
//!
//! Nim and chess positions are encoded as single lines of text, played out by
//! rule-based, random, tabular Q-learning and external-engine agents, and fed
//! to a WordPiece tokenizer and a small masked-language-model encoder. The
//! trained encoder is then queried through mask-fill to act as a player.
//!
//! Module map:
//! - [`nim`]: rules, the nim-sum Guru, random and Q-learning agents
//! - [`chess`]: FEN codec, coordinate moves, legal move generation
//! - [`uci`]: subprocess client for UCI engines
//! - [`corpus`]: corpus line grammars, generation, statistics, splitting
//! - [`tokenizer`]: WordPiece training and segmentation
//! - [`mlm`]: encoder-only transformer, MLM training, mask-fill
//! - [`arena`]: matches, tournaments, sweeps and reports

pub mod arena;
pub mod chess;
pub mod corpus;
pub mod mlm;
pub mod nim;
pub mod seed;
pub mod tokenizer;
pub mod uci;

pub use seed::GameRng;
