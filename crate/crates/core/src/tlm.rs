//! Trajectory language model: next-token probabilities over trajectory
//! prefixes from counted contexts of up to `order` tokens.
//!
//! Every line is scored as `<bos> lenN ...`. Training records, for each
//! position and every context length `0..=order`, how often each token
//! followed that context. Counts are plain sums, so shards trained
//! separately can be merged and training does not depend on line order.
//!
//! Two ways to turn counts into probabilities:
//!
//! * `Backoff`: use the longest context that was seen in training, with
//!   additive smoothing `(c + alpha) / (C + alpha * V)`.
//! * `Linear`: Dirichlet interpolation from the empty context upwards,
//!   `p_k = (c_k + alpha * V * p_{k-1}) / (C_k + alpha * V)` with a uniform
//!   base distribution.
//!
//! # File layout
//!
//! All integers little-endian.
//!
//! ```text
//! "ALGOTLM1"                      8-byte magic
//! u32 order
//! f64 smoothing_alpha
//! u8  interpolation               0 = backoff, 1 = linear
//! u32 vocabulary size             always 36
//! u64 total scored tokens
//! u64 number of contexts
//! per context, ordered by (length, ids):
//!   u8  context length k
//!   k   token ids, oldest first
//!   u8  number of successor entries m
//!   m × (u8 token id, u64 count)  ordered by id
//! ```

use std::collections::hash_map::Entry;
use std::fs;
use std::io::{self, BufRead};
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::vocab::{Token, Trajectory, VocabError, Vocabulary, VOCAB_SIZE};

pub const MAGIC: &[u8; 8] = b"ALGOTLM1";
pub const MAX_ORDER: usize = 16;
const ID_BITS: u32 = 6;
const LEN_SHIFT: u32 = ID_BITS * MAX_ORDER as u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Backoff,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlmConfig {
    pub order: usize,
    pub smoothing_alpha: f64,
    pub interpolation: Interpolation,
}

impl Default for TlmConfig {
    fn default() -> Self {
        TlmConfig {
            order: 10,
            smoothing_alpha: 0.1,
            interpolation: Interpolation::Backoff,
        }
    }
}

impl TlmConfig {
    pub fn with_order(order: usize) -> Self {
        TlmConfig {
            order,
            ..TlmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TlmError> {
        if !(1..=MAX_ORDER).contains(&self.order) {
            return Err(TlmError::InvalidConfig(format!("order must be in 1..=16, got {}", self.order)));
        }
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha.is_finite()) {
            return Err(TlmError::InvalidConfig("smoothing_alpha must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TlmError {
    #[error("line {line}: {source}")]
    ParseFailure { line: usize, source: VocabError },
    #[error("models were trained with different configurations")]
    ConfigMismatch,
    #[error("not a model file of this version")]
    VersionMismatch,
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Successors {
    total: u64,
    /// (token id, count), ordered by id.
    next: SmallVec<[(u8, u64); 2]>,
}

impl Successors {
    fn add(&mut self, id: u8, count: u64) {
        self.total += count;
        match self.next.binary_search_by_key(&id, |&(t, _)| t) {
            Ok(pos) => self.next[pos].1 += count,
            Err(pos) => self.next.insert(pos, (id, count)),
        }
    }

    fn count(&self, id: u8) -> u64 {
        self.next
            .binary_search_by_key(&id, |&(t, _)| t)
            .map(|pos| self.next[pos].1)
            .unwrap_or(0)
    }
}

/// Packs a context (most recent token in the lowest bits) with its length.
#[derive(Debug, Clone, Copy)]
struct ContextKey {
    packed: u128,
    len: u32,
}

impl ContextKey {
    const EMPTY: ContextKey = ContextKey { packed: 0, len: 0 };

    /// Context one token longer: `older` precedes everything already in it.
    fn extend(self, older: u8) -> ContextKey {
        ContextKey {
            packed: self.packed | ((older as u128) << (ID_BITS * self.len)),
            len: self.len + 1,
        }
    }

    fn key(self) -> u128 {
        self.packed | ((self.len as u128) << LEN_SHIFT)
    }

    fn from_key(key: u128) -> (u32, Vec<u8>) {
        let len = (key >> LEN_SHIFT) as u32;
        // oldest first
        let ids = (0..len)
            .rev()
            .map(|k| ((key >> (ID_BITS * k)) & 0x3f) as u8)
            .collect();
        (len, ids)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TlmModel {
    config: TlmConfig,
    vocab: Vocabulary,
    tables: FxHashMap<u128, Successors>,
    total_tokens: u64,
}

impl TlmModel {
    pub fn new(config: TlmConfig) -> Result<Self, TlmError> {
        config.validate()?;
        Ok(TlmModel {
            config,
            vocab: Vocabulary::standard(),
            tables: FxHashMap::default(),
            total_tokens: 0,
        })
    }

    /// Trains on a stream of corpus lines. Blank lines are skipped; line
    /// numbers in errors are 1-based.
    pub fn train<I, S>(lines: I, config: TlmConfig) -> Result<Self, TlmError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut model = TlmModel::new(config)?;
        for (index, line) in lines.into_iter().enumerate() {
            let line = line.as_ref();
            if line.trim().is_empty() {
                continue;
            }
            let t = Trajectory::tokenize(line).map_err(|source| TlmError::ParseFailure {
                line: index + 1,
                source,
            })?;
            model.add_trajectory(&t);
        }
        Ok(model)
    }

    pub fn train_reader<R: BufRead>(reader: R, config: TlmConfig) -> Result<Self, TlmError> {
        let mut model = TlmModel::new(config)?;
        for (index, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t = Trajectory::tokenize(&line).map_err(|source| TlmError::ParseFailure {
                line: index + 1,
                source,
            })?;
            model.add_trajectory(&t);
        }
        Ok(model)
    }

    pub fn train_trajectories<'a, I>(trajectories: I, config: TlmConfig) -> Result<Self, TlmError>
    where
        I: IntoIterator<Item = &'a Trajectory>,
    {
        let mut model = TlmModel::new(config)?;
        for t in trajectories {
            model.add_trajectory(t);
        }
        Ok(model)
    }

    pub fn add_trajectory(&mut self, t: &Trajectory) {
        let ids = with_bos(&t.tokens());
        for pos in 1..ids.len() {
            let target = ids[pos];
            let mut ctx = ContextKey::EMPTY;
            let max_k = self.config.order.min(pos);
            for k in 0..=max_k {
                if k > 0 {
                    ctx = ctx.extend(ids[pos - k]);
                }
                self.tables.entry(ctx.key()).or_default().add(target, 1);
            }
            self.total_tokens += 1;
        }
    }

    pub fn merge(&self, other: &TlmModel) -> Result<TlmModel, TlmError> {
        let mut merged = self.clone();
        merged.absorb(other)?;
        Ok(merged)
    }

    /// Adds `other`'s counts into `self`.
    pub fn absorb(&mut self, other: &TlmModel) -> Result<(), TlmError> {
        if self.config != other.config || self.vocab != other.vocab {
            return Err(TlmError::ConfigMismatch);
        }
        for (&key, succ) in &other.tables {
            match self.tables.entry(key) {
                Entry::Occupied(mut e) => {
                    for &(id, count) in &succ.next {
                        e.get_mut().add(id, count);
                    }
                }
                Entry::Vacant(e) => {
                    e.insert(succ.clone());
                }
            }
        }
        self.total_tokens += other.total_tokens;
        Ok(())
    }

    pub fn config(&self) -> &TlmConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn num_contexts(&self) -> usize {
        self.tables.len()
    }

    /// Count of `token` directly after the empty context.
    pub fn unigram_count(&self, token: Token) -> u64 {
        self.tables
            .get(&ContextKey::EMPTY.key())
            .map(|s| s.count(token.id()))
            .unwrap_or(0)
    }

    /// Seen contexts of increasing length for the end of `ids`.
    fn context_chain<'a>(&'a self, ids: &[u8]) -> SmallVec<[&'a Successors; 17]> {
        let mut chain = SmallVec::new();
        let mut ctx = ContextKey::EMPTY;
        let max_k = self.config.order.min(ids.len());
        for k in 0..=max_k {
            if k > 0 {
                ctx = ctx.extend(ids[ids.len() - k]);
            }
            match self.tables.get(&ctx.key()) {
                Some(s) if s.total > 0 => chain.push(s),
                _ => break,
            }
        }
        chain
    }

    /// Probability of `next` after the id context `ids` (which includes BOS).
    pub(crate) fn probability_ids(&self, ids: &[u8], next: u8) -> f64 {
        let alpha = self.config.smoothing_alpha;
        let v = VOCAB_SIZE as f64;
        let chain = self.context_chain(ids);
        match self.config.interpolation {
            Interpolation::Backoff => match chain.last() {
                Some(s) => (s.count(next) as f64 + alpha) / (s.total as f64 + alpha * v),
                None => 1.0 / v,
            },
            Interpolation::Linear => chain.iter().fold(1.0 / v, |lower, s| {
                (s.count(next) as f64 + alpha * v * lower) / (s.total as f64 + alpha * v)
            }),
        }
    }

    fn distribution_ids(&self, ids: &[u8]) -> [f64; VOCAB_SIZE] {
        let alpha = self.config.smoothing_alpha;
        let v = VOCAB_SIZE as f64;
        let chain = self.context_chain(ids);
        let mut dist = [1.0 / v; VOCAB_SIZE];
        match self.config.interpolation {
            Interpolation::Backoff => {
                if let Some(s) = chain.last() {
                    let denom = s.total as f64 + alpha * v;
                    dist = [alpha / denom; VOCAB_SIZE];
                    for &(id, c) in &s.next {
                        dist[id as usize] = (c as f64 + alpha) / denom;
                    }
                }
            }
            Interpolation::Linear => {
                for s in &chain {
                    let denom = s.total as f64 + alpha * v;
                    for p in dist.iter_mut() {
                        *p = alpha * v * *p / denom;
                    }
                    for &(id, c) in &s.next {
                        dist[id as usize] += c as f64 / denom;
                    }
                }
            }
        }
        dist
    }

    /// Distribution of the token following `prefix` (BOS is implied and must
    /// not be included).
    pub fn next_token_distribution(&self, prefix: &[Token]) -> [f64; VOCAB_SIZE] {
        self.distribution_ids(&with_bos(prefix))
    }

    pub fn token_probability(&self, prefix: &[Token], next: Token) -> f64 {
        self.probability_ids(&with_bos(prefix), next.id())
    }

    /// Sum and count of `-ln p` over the scored tokens of `t`.
    pub fn sequence_nll(&self, t: &Trajectory, agent_tokens_only: bool) -> (f64, usize) {
        let tokens = t.tokens();
        let ids = with_bos(&tokens);
        let mut sum = 0.0;
        let mut scored = 0;
        for (pos, &token) in tokens.iter().enumerate() {
            if agent_tokens_only && !token.is_agent_choice() {
                continue;
            }
            sum -= self.probability_ids(&ids[..pos + 1], ids[pos + 1]).ln();
            scored += 1;
        }
        (sum, scored)
    }

    /// Mean negative log-probability of the scored tokens of `t`; 0 when no
    /// token is scored.
    pub fn sequence_loss(&self, t: &Trajectory, agent_tokens_only: bool) -> f64 {
        let (sum, scored) = self.sequence_nll(t, agent_tokens_only);
        if scored == 0 {
            0.0
        } else {
            sum / scored as f64
        }
    }

    /// Token-weighted mean loss over a set of trajectories.
    pub fn corpus_loss<'a, I>(&self, trajectories: I, agent_tokens_only: bool) -> f64
    where
        I: IntoIterator<Item = &'a Trajectory>,
    {
        let (sum, count) = trajectories.into_iter().fold((0.0, 0usize), |(s, c), t| {
            let (ts, tc) = self.sequence_nll(t, agent_tokens_only);
            (s + ts, c + tc)
        });
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut keys: Vec<(u32, Vec<u8>, u128)> = self
            .tables
            .keys()
            .map(|&key| {
                let (len, ids) = ContextKey::from_key(key);
                (len, ids, key)
            })
            .collect();
        keys.sort();
        let mut out = Vec::with_capacity(64 + keys.len() * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.config.order as u32).to_le_bytes());
        out.extend_from_slice(&self.config.smoothing_alpha.to_le_bytes());
        out.push(match self.config.interpolation {
            Interpolation::Backoff => 0,
            Interpolation::Linear => 1,
        });
        out.extend_from_slice(&(VOCAB_SIZE as u32).to_le_bytes());
        out.extend_from_slice(&self.total_tokens.to_le_bytes());
        out.extend_from_slice(&(keys.len() as u64).to_le_bytes());
        for (len, ids, key) in &keys {
            let succ = &self.tables[key];
            out.push(*len as u8);
            out.extend_from_slice(ids);
            out.push(succ.next.len() as u8);
            for &(id, count) in &succ.next {
                out.push(id);
                out.extend_from_slice(&count.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TlmError> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(TlmError::VersionMismatch);
        }
        let order = r.u32()? as usize;
        let smoothing_alpha = r.f64()?;
        let interpolation = match r.u8()? {
            0 => Interpolation::Backoff,
            1 => Interpolation::Linear,
            other => return Err(TlmError::CorruptFile(format!("unknown interpolation {other}"))),
        };
        if r.u32()? as usize != VOCAB_SIZE {
            return Err(TlmError::VersionMismatch);
        }
        let config = TlmConfig {
            order,
            smoothing_alpha,
            interpolation,
        };
        config
            .validate()
            .map_err(|e| TlmError::CorruptFile(e.to_string()))?;
        let mut model = TlmModel::new(config)?;
        model.total_tokens = r.u64()?;
        let contexts = r.u64()?;
        for _ in 0..contexts {
            let len = r.u8()? as usize;
            if len > order {
                return Err(TlmError::CorruptFile(format!("context of length {len} exceeds order {order}")));
            }
            let ids = r.take(len)?;
            let mut ctx = ContextKey::EMPTY;
            for &id in ids.iter().rev() {
                ctx = ctx.extend(checked_id(id)?);
            }
            let m = r.u8()? as usize;
            let mut succ = Successors::default();
            for _ in 0..m {
                let id = checked_id(r.u8()?)?;
                succ.add(id, r.u64()?);
            }
            if model.tables.insert(ctx.key(), succ).is_some() {
                return Err(TlmError::CorruptFile("duplicate context".into()));
            }
        }
        if r.pos != bytes.len() {
            return Err(TlmError::CorruptFile("trailing bytes".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TlmError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TlmError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub(crate) fn with_bos(tokens: &[Token]) -> Vec<u8> {
    let mut ids = Vec::with_capacity(tokens.len() + 1);
    ids.push(Token::BOS.id());
    ids.extend(tokens.iter().map(|t| t.id()));
    ids
}

fn checked_id(id: u8) -> Result<u8, TlmError> {
    if (id as usize) < VOCAB_SIZE {
        Ok(id)
    } else {
        Err(TlmError::CorruptFile(format!("token id {id} out of range")))
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8], TlmError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(TlmError::CorruptFile(format!("truncated at byte {}", self.pos))),
        }
    }

    pub fn u8(&mut self) -> Result<u8, TlmError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, TlmError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, TlmError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, TlmError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program_gen::generate_trajectories;

    fn lines(ts: &[Trajectory]) -> Vec<String> {
        ts.iter().map(|t| t.serialize()).collect()
    }

    #[test]
    fn untrained_model_is_uniform() {
        let m = TlmModel::train(Vec::<String>::new(), TlmConfig::default()).unwrap();
        let d = m.next_token_distribution(&[Token::Length(6), Token::Compare]);
        for p in d {
            assert!((p - 1.0 / 36.0).abs() < 1e-15);
        }
        let t = Trajectory::tokenize("len6 Compare 0 1 less").unwrap();
        assert!((m.sequence_loss(&t, false) - 36f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unigram_counts() {
        let m = TlmModel::train(["len3 Compare 0 1 less"], TlmConfig::default()).unwrap();
        assert_eq!(m.unigram_count(Token::Compare), 1);
        assert_eq!(m.unigram_count(Token::Swap), 0);
        assert_eq!(m.total_tokens(), 5);
    }

    #[test]
    fn parse_failure_reports_line() {
        let err = TlmModel::train(["len6 Compare 0 1 less", "", "len6 Swap"], TlmConfig::default()).unwrap_err();
        assert!(matches!(err, TlmError::ParseFailure { line: 3, .. }), "{err}");
    }

    #[test]
    fn distributions_normalize_for_both_schemes() {
        let corpus = generate_trajectories(300, &[6, 8], 3).unwrap();
        for interpolation in [Interpolation::Backoff, Interpolation::Linear] {
            let config = TlmConfig {
                interpolation,
                ..TlmConfig::default()
            };
            let m = TlmModel::train_trajectories(&corpus, config).unwrap();
            for t in corpus.iter().take(20) {
                let tokens = t.tokens();
                for cut in 0..tokens.len() {
                    let d = m.next_token_distribution(&tokens[..cut]);
                    let sum: f64 = d.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-9, "{sum}");
                    assert!(d.iter().all(|&p| p > 0.0));
                    let p = m.token_probability(&tokens[..cut], tokens[cut]);
                    assert!((p - d[tokens[cut].id() as usize]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn merge_identities() {
        let a = TlmModel::train(lines(&generate_trajectories(50, &[6], 1).unwrap()), TlmConfig::default()).unwrap();
        let b = TlmModel::train(lines(&generate_trajectories(50, &[8], 2).unwrap()), TlmConfig::default()).unwrap();
        let empty = TlmModel::new(TlmConfig::default()).unwrap();
        assert_eq!(a.merge(&empty).unwrap(), a);
        assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
        let other = TlmModel::new(TlmConfig::with_order(3)).unwrap();
        assert!(matches!(a.merge(&other), Err(TlmError::ConfigMismatch)));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let m = TlmModel::train(lines(&generate_trajectories(100, &[6], 5).unwrap()), TlmConfig::default()).unwrap();
        let bytes = m.to_bytes();
        let back = TlmModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert!(matches!(
            TlmModel::from_bytes(&bytes[..bytes.len() - 3]),
            Err(TlmError::CorruptFile(_))
        ));
        assert!(matches!(TlmModel::from_bytes(&bytes[..4]), Err(TlmError::CorruptFile(_))));
        let mut wrong = bytes.clone();
        wrong[7] = b'2';
        assert!(matches!(TlmModel::from_bytes(&wrong), Err(TlmError::VersionMismatch)));
    }

    #[test]
    fn config_bounds() {
        assert!(TlmModel::new(TlmConfig::with_order(0)).is_err());
        assert!(TlmModel::new(TlmConfig::with_order(17)).is_err());
        assert!(TlmModel::new(TlmConfig::with_order(16)).is_ok());
        let bad = TlmConfig {
            smoothing_alpha: 0.0,
            ..TlmConfig::default()
        };
        assert!(TlmModel::new(bad).is_err());
    }

    #[test]
    fn context_keys_round_trip() {
        let ctx = ContextKey::EMPTY.extend(5).extend(7).extend(35);
        let (len, ids) = ContextKey::from_key(ctx.key());
        assert_eq!(len, 3);
        assert_eq!(ids, vec![35, 7, 5]);
    }
}
