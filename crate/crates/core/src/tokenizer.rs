//! Case-sensitive WordPiece tokenizer.
//!
//! Pre-tokenization splits on whitespace and additionally cuts every word
//! around the joiner character `/`, which becomes a word of its own. Merges
//! never cross word boundaries. Within a word, pieces after the first carry
//! the `##` continuation prefix.
//!
//! Ids `0..=4` are always `[PAD] [UNK] [CLS] [SEP] [MASK]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const CONTINUATION: &str = "##";

/// Characters that form words of their own and attach to both neighbours
/// without whitespace.
pub const JOINERS: [char; 1] = ['/'];

/// Words longer than this (in chars) map straight to `[UNK]`.
const MAX_WORD_CHARS: usize = 200;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("training corpus contains no words")]
    EmptyCorpus,
    #[error("max_vocab {max_vocab} cannot hold the {required} special and alphabet tokens")]
    VocabTooSmall { max_vocab: usize, required: usize },
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(u32),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("vocabulary I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("vocabulary JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn is_joiner(c: char) -> bool {
    JOINERS.contains(&c)
}

/// Splits text into words: whitespace first, then around joiner characters.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        if SPECIAL_TOKENS.contains(&chunk) {
            words.push(chunk);
            continue;
        }
        let mut start = 0;
        for (i, c) in chunk.char_indices() {
            if is_joiner(c) {
                if start < i {
                    words.push(&chunk[start..i]);
                }
                words.push(&chunk[i..i + c.len_utf8()]);
                start = i + c.len_utf8();
            }
        }
        if start < chunk.len() {
            words.push(&chunk[start..]);
        }
    }
    words
}

/// Token inventory with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from an ordered token list. The first five entries
    /// must be the special tokens in canonical order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TokenizerError> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s)
        {
            return Err(TokenizerError::InvalidVocab(
                "ids 0..=4 must be [PAD] [UNK] [CLS] [SEP] [MASK]".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t == CONTINUATION {
                return Err(TokenizerError::InvalidVocab(format!(
                    "empty token at id {i}"
                )));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizerError::InvalidVocab(format!(
                    "duplicate token {t:?}"
                )));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    /// JSON object mapping token to id.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, u32> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
            .collect();
        serde_json::to_string_pretty(&map).expect("string map serializes")
    }

    /// Parses the token-to-id JSON map and validates density and specials.
    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let map: HashMap<String, u32> = serde_json::from_str(text)?;
        let mut tokens = vec![String::new(); map.len()];
        for (token, id) in map {
            let slot = tokens.get_mut(id as usize).ok_or_else(|| {
                TokenizerError::InvalidVocab(format!("id {id} of {token:?} is not dense"))
            })?;
            if !slot.is_empty() {
                return Err(TokenizerError::InvalidVocab(format!(
                    "id {id} assigned twice"
                )));
            }
            *slot = token;
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Greedy longest-match-first segmentation of one word, or `None` when
    /// some suffix cannot be matched.
    fn segment(&self, word: &str) -> Option<Vec<u32>> {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.len() > MAX_WORD_CHARS {
            return None;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut buf = String::new();
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let lo = chars[start].0;
                let hi = chars.get(end).map_or(word.len(), |c| c.0);
                buf.clear();
                if start > 0 {
                    buf.push_str(CONTINUATION);
                }
                buf.push_str(&word[lo..hi]);
                if let Some(id) = self.id(&buf) {
                    if !Vocab::is_special(id) {
                        found = Some((id, end));
                        break;
                    }
                }
            }
            let (id, end) = found?;
            pieces.push(id);
            start = end;
        }
        Some(pieces)
    }
}

/// Training knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TrainerConfig {
    pub max_vocab: usize,
    pub min_frequency: u64,
}

impl TrainerConfig {
    pub const NIM: TrainerConfig = TrainerConfig {
        max_vocab: 200,
        min_frequency: 2,
    };
    pub const CHESS: TrainerConfig = TrainerConfig {
        max_vocab: 16_000,
        min_frequency: 2,
    };
}

/// Trains a vocabulary on the given lines.
///
/// The alphabet (every observed character as a word-initial token, plus a
/// `##` token for every character seen inside a word) is added in sorted
/// order after the specials. Then the pair with the best
/// `count(ab) / (count(a) * count(b))` score is merged repeatedly; ties are
/// broken by the lexicographically smallest `(a, b)`. Training stops at
/// `max_vocab` tokens or when no pair occurs `min_frequency` times.
pub fn train_wordpiece<S: AsRef<str>>(
    lines: &[S],
    config: TrainerConfig,
) -> Result<Vocab, TokenizerError> {
    let mut word_counts: HashMap<&str, u64> = HashMap::new();
    for line in lines {
        for w in pre_tokenize(line.as_ref()) {
            if !SPECIAL_TOKENS.contains(&w) {
                *word_counts.entry(w).or_default() += 1;
            }
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut initial = BTreeSet::new();
    let mut inner = BTreeSet::new();
    for w in word_counts.keys() {
        for (i, c) in w.chars().enumerate() {
            initial.insert(c);
            if i > 0 {
                inner.insert(c);
            }
        }
    }
    let required = SPECIAL_TOKENS.len() + initial.len() + inner.len();
    if config.max_vocab < required {
        return Err(TokenizerError::VocabTooSmall {
            max_vocab: config.max_vocab,
            required,
        });
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(initial.iter().map(|c| c.to_string()));
    tokens.extend(inner.iter().map(|c| format!("{CONTINUATION}{c}")));
    let mut ids: HashMap<String, u32> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();

    // words sorted for deterministic iteration
    let mut sorted: Vec<(&str, u64)> = word_counts.into_iter().collect();
    sorted.sort_unstable();
    let mut words: Vec<(Vec<u32>, u64)> = sorted
        .iter()
        .map(|&(w, n)| {
            let syms = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    let t = if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION}{c}")
                    };
                    ids[&t]
                })
                .collect();
            (syms, n)
        })
        .collect();

    while tokens.len() < config.max_vocab {
        let mut sym_counts: HashMap<u32, u64> = HashMap::new();
        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (syms, n) in &words {
            for &s in syms {
                *sym_counts.entry(s).or_default() += n;
            }
            for pair in syms.windows(2) {
                *pair_counts.entry((pair[0], pair[1])).or_default() += n;
            }
        }
        let mut best: Option<((u32, u32), f64)> = None;
        for (&pair, &count) in &pair_counts {
            if count < config.min_frequency {
                continue;
            }
            let score = count as f64 / (sym_counts[&pair.0] as f64 * sym_counts[&pair.1] as f64);
            let better = match best {
                None => true,
                Some((bp, bs)) => {
                    score > bs
                        || (score == bs
                            && (
                                tokens[pair.0 as usize].as_str(),
                                tokens[pair.1 as usize].as_str(),
                            ) < (
                                tokens[bp.0 as usize].as_str(),
                                tokens[bp.1 as usize].as_str(),
                            ))
                }
            };
            if better {
                best = Some((pair, score));
            }
        }
        let Some(((a, b), _)) = best else { break };
        let merged = format!(
            "{}{}",
            tokens[a as usize],
            tokens[b as usize].trim_start_matches(CONTINUATION)
        );
        let new_id = match ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                ids.insert(merged.clone(), id);
                tokens.push(merged);
                id
            }
        };
        for (syms, _) in &mut words {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }
    Vocab::from_tokens(tokens)
}

/// Ids for `text` wrapped in `[CLS] ... [SEP]`. Special-token words map to
/// their ids; unsegmentable words become a single `[UNK]`.
pub fn tokenize(vocab: &Vocab, text: &str) -> Vec<u32> {
    let mut ids = vec![CLS_ID];
    ids.extend(tokenize_words(vocab, text));
    ids.push(SEP_ID);
    ids
}

/// Like [`tokenize`] without the `[CLS]`/`[SEP]` wrapper.
pub fn tokenize_words(vocab: &Vocab, text: &str) -> Vec<u32> {
    let mut ids = Vec::new();
    for word in pre_tokenize(text) {
        if let Some(i) = SPECIAL_TOKENS.iter().position(|s| *s == word) {
            ids.push(i as u32);
            continue;
        }
        match vocab.segment(word) {
            Some(pieces) => ids.extend(pieces),
            None => ids.push(UNK_ID),
        }
    }
    ids
}

/// Result of [`detokenize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detokenized {
    pub text: String,
    /// The input held `[UNK]`, so the text is not the original.
    pub lossy: bool,
}

/// Rebuilds text from ids: drops `[PAD]`, `[CLS]` and `[SEP]`, glues `##`
/// pieces to their word, puts single spaces between words except around
/// joiners. `[UNK]` and `[MASK]` are rendered literally.
pub fn detokenize(vocab: &Vocab, ids: &[u32]) -> Result<Detokenized, TokenizerError> {
    let mut words: Vec<String> = Vec::new();
    let mut lossy = false;
    for &id in ids {
        let token = vocab.token(id).ok_or(TokenizerError::UnknownId(id))?;
        match id {
            PAD_ID | CLS_ID | SEP_ID => continue,
            UNK_ID => lossy = true,
            _ => {}
        }
        match token.strip_prefix(CONTINUATION) {
            Some(rest) if !Vocab::is_special(id) && !words.is_empty() => {
                words.last_mut().expect("non-empty").push_str(rest)
            }
            _ => words.push(token.to_string()),
        }
    }
    let mut text = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            let glue = |s: &str| s.chars().count() == 1 && s.chars().all(is_joiner);
            if !glue(w) && !glue(&words[i - 1]) {
                text.push(' ');
            }
        }
        text.push_str(w);
    }
    Ok(Detokenized { text, lossy })
}
