//! Token vocabulary, the trajectory data model and the grammar automaton that
//! decides which token may follow a given prefix.
//!
//! A trajectory line looks like `len6 Compare 0 4 more Swap Compare 2 3 less`:
//! a length marker followed by operations. `Compare i j` is always followed by
//! the environment's outcome token; `Swap` carries no indices and acts on the
//! most recently compared pair.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Number of entries in the fixed vocabulary.
pub const VOCAB_SIZE: usize = 36;
/// Largest supported array length (and number of index tokens).
pub const MAX_N: usize = 16;
/// Smallest array length that has its own length-marker token.
pub const MIN_MARKED_N: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Less,
    Equal,
    More,
}

impl Outcome {
    pub fn of<T: Ord>(a: &T, b: &T) -> Outcome {
        match a.cmp(b) {
            std::cmp::Ordering::Less => Outcome::Less,
            std::cmp::Ordering::Equal => Outcome::Equal,
            std::cmp::Ordering::Greater => Outcome::More,
        }
    }

    /// Three-way value: -1, 0 or 1.
    pub fn sign(self) -> i8 {
        match self {
            Outcome::Less => -1,
            Outcome::Equal => 0,
            Outcome::More => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Less => "less",
            Outcome::Equal => "equal",
            Outcome::More => "more",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Special {
    Pad,
    Bos,
    Eos,
    Unk,
}

impl Special {
    pub fn as_str(self) -> &'static str {
        match self {
            Special::Pad => "<pad>",
            Special::Bos => "<bos>",
            Special::Eos => "<eos>",
            Special::Unk => "<unk>",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    /// `lenN`. Markers for N below 6 parse but have no vocabulary id of their
    /// own; models see them as `<unk>`.
    Length(u8),
    Compare,
    Swap,
    Index(u8),
    Outcome(Outcome),
    Special(Special),
}

// Id layout: 4 specials, 2 actions, 3 outcomes, 16 indices, 11 length markers.
const ID_COMPARE: u8 = 4;
const ID_SWAP: u8 = 5;
const ID_OUTCOME: u8 = 6;
const ID_INDEX: u8 = 9;
const ID_LENGTH: u8 = ID_INDEX + MAX_N as u8;

impl Token {
    pub const BOS: Token = Token::Special(Special::Bos);
    pub const UNK: Token = Token::Special(Special::Unk);

    /// Vocabulary id. Length markers outside `len6..=len16` map to `<unk>`.
    pub fn id(self) -> u8 {
        match self {
            Token::Special(s) => s as u8,
            Token::Compare => ID_COMPARE,
            Token::Swap => ID_SWAP,
            Token::Outcome(o) => ID_OUTCOME + o as u8,
            Token::Index(k) => ID_INDEX + k,
            Token::Length(n) if (MIN_MARKED_N..=MAX_N).contains(&(n as usize)) => {
                ID_LENGTH + n - MIN_MARKED_N as u8
            }
            Token::Length(_) => Special::Unk as u8,
        }
    }

    pub fn from_id(id: u8) -> Option<Token> {
        Some(match id {
            0 => Token::Special(Special::Pad),
            1 => Token::Special(Special::Bos),
            2 => Token::Special(Special::Eos),
            3 => Token::Special(Special::Unk),
            ID_COMPARE => Token::Compare,
            ID_SWAP => Token::Swap,
            6 => Token::Outcome(Outcome::Less),
            7 => Token::Outcome(Outcome::Equal),
            8 => Token::Outcome(Outcome::More),
            id if (ID_INDEX..ID_LENGTH).contains(&id) => Token::Index(id - ID_INDEX),
            id if (id as usize) < VOCAB_SIZE => Token::Length(id - ID_LENGTH + MIN_MARKED_N as u8),
            _ => return None,
        })
    }

    pub fn is_agent_choice(self) -> bool {
        matches!(self, Token::Compare | Token::Swap | Token::Index(_))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Length(n) => write!(f, "len{n}"),
            Token::Compare => f.write_str("Compare"),
            Token::Swap => f.write_str("Swap"),
            Token::Index(k) => write!(f, "{k}"),
            Token::Outcome(o) => f.write_str(o.as_str()),
            Token::Special(s) => f.write_str(s.as_str()),
        }
    }
}

impl FromStr for Token {
    type Err = VocabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || VocabError::UnknownToken {
            token: s.to_string(),
        };
        Ok(match s {
            "Compare" => Token::Compare,
            "Swap" => Token::Swap,
            "less" => Token::Outcome(Outcome::Less),
            "equal" => Token::Outcome(Outcome::Equal),
            "more" => Token::Outcome(Outcome::More),
            "<pad>" => Token::Special(Special::Pad),
            "<bos>" => Token::Special(Special::Bos),
            "<eos>" => Token::Special(Special::Eos),
            "<unk>" => Token::Special(Special::Unk),
            _ => {
                if let Some(rest) = s.strip_prefix("len") {
                    let n = parse_decimal(rest).ok_or_else(unknown)?;
                    if !(1..=MAX_N).contains(&n) {
                        return Err(unknown());
                    }
                    Token::Length(n as u8)
                } else {
                    let k = parse_decimal(s).ok_or_else(unknown)?;
                    if k >= MAX_N {
                        return Err(unknown());
                    }
                    Token::Index(k as u8)
                }
            }
        })
    }
}

/// Canonical decimal only: no sign, no leading zeros.
fn parse_decimal(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok()
}

/// The fixed 36-token vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
}

impl Vocabulary {
    pub fn standard() -> Self {
        let tokens = (0..VOCAB_SIZE as u8)
            .map(|id| Token::from_id(id).expect("dense id range"))
            .collect();
        Vocabulary { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn id_of(&self, token: Token) -> u8 {
        token.id()
    }

    pub fn token_of(&self, id: u8) -> Option<Token> {
        self.tokens.get(id as usize).copied()
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operation {
    Compare { i: u8, j: u8, outcome: Outcome },
    Swap,
}

impl Operation {
    pub fn is_compare(&self) -> bool {
        matches!(self, Operation::Compare { .. })
    }

    /// Tokens in emission order.
    pub fn push_tokens(&self, out: &mut Vec<Token>) {
        match *self {
            Operation::Compare { i, j, outcome } => {
                out.extend([Token::Compare, Token::Index(i), Token::Index(j), Token::Outcome(outcome)])
            }
            Operation::Swap => out.push(Token::Swap),
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operation::Compare { i, j, outcome } => write!(f, "Compare {i} {j} {}", outcome.as_str()),
            Operation::Swap => f.write_str("Swap"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trajectory {
    pub n: usize,
    pub ops: Vec<Operation>,
}

impl Trajectory {
    pub fn new(n: usize) -> Self {
        Trajectory { n, ops: Vec::new() }
    }

    pub fn length_marker(&self) -> Token {
        Token::Length(self.n as u8)
    }

    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(1 + self.ops.len() * 4);
        out.push(self.length_marker());
        for op in &self.ops {
            op.push_tokens(&mut out);
        }
        out
    }

    pub fn compares(&self) -> usize {
        self.ops.iter().filter(|op| op.is_compare()).count()
    }

    pub fn swaps(&self) -> usize {
        self.ops.len() - self.compares()
    }

    pub fn serialize(&self) -> String {
        self.to_string()
    }

    /// Parses one trajectory line. Any run of whitespace separates tokens.
    pub fn tokenize(text: &str) -> Result<Trajectory, VocabError> {
        let tokens = text
            .split_whitespace()
            .map(Token::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Trajectory::from_tokens(&tokens)
    }

    pub fn from_tokens(tokens: &[Token]) -> Result<Trajectory, VocabError> {
        let n = match tokens.first() {
            Some(Token::Length(n)) => *n as usize,
            other => {
                return Err(VocabError::GrammarViolation {
                    position: 0,
                    token: other.map(|t| t.to_string()).unwrap_or_default(),
                })
            }
        };
        let mut grammar = GrammarState::new(n);
        let mut ops = Vec::new();
        let mut pending = (0u8, 0u8);
        for (position, &token) in tokens.iter().enumerate().skip(1) {
            let phase = grammar.phase;
            grammar.advance(token).map_err(|e| match e {
                VocabError::GrammarViolation { token, .. } => VocabError::GrammarViolation { position, token },
                other => other,
            })?;
            match (phase, token) {
                (Phase::AtOperationStart, Token::Swap) => ops.push(Operation::Swap),
                (Phase::AwaitFirstIndex, Token::Index(k)) => pending.0 = k,
                (Phase::AwaitSecondIndex, Token::Index(k)) => pending.1 = k,
                (Phase::AwaitOutcome, Token::Outcome(outcome)) => ops.push(Operation::Compare {
                    i: pending.0,
                    j: pending.1,
                    outcome,
                }),
                _ => {}
            }
        }
        if grammar.phase != Phase::AtOperationStart {
            return Err(VocabError::GrammarViolation {
                position: tokens.len(),
                token: String::new(),
            });
        }
        Ok(Trajectory { n, ops })
    }
}

impl FromStr for Operation {
    type Err = VocabError;

    /// One operation in trajectory notation, e.g. `Compare 0 1 less`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tokens = s
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<Token>, _>>()?;
        let bad = || VocabError::GrammarViolation {
            position: 0,
            token: s.to_string(),
        };
        match tokens.as_slice() {
            [Token::Swap] => Ok(Operation::Swap),
            [Token::Compare, Token::Index(i), Token::Index(j), Token::Outcome(outcome)] => Ok(Operation::Compare {
                i: *i,
                j: *j,
                outcome: *outcome,
            }),
            _ => Err(bad()),
        }
    }
}

impl serde::Serialize for Operation {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Operation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "len{}", self.n)?;
        for op in &self.ops {
            write!(f, " {op}")?;
        }
        Ok(())
    }
}

impl FromStr for Trajectory {
    type Err = VocabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Trajectory::tokenize(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    AtOperationStart,
    AwaitFirstIndex,
    AwaitSecondIndex,
    AwaitOutcome,
}

/// Position of the grammar automaton after the length marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GrammarState {
    pub phase: Phase,
    pub has_compared: bool,
    pub n: usize,
}

impl GrammarState {
    pub fn new(n: usize) -> Self {
        GrammarState {
            phase: Phase::AtOperationStart,
            has_compared: false,
            n,
        }
    }

    pub fn legal_next(&self) -> Vec<Token> {
        match self.phase {
            Phase::AtOperationStart if self.has_compared => vec![Token::Compare, Token::Swap],
            Phase::AtOperationStart => vec![Token::Compare],
            Phase::AwaitFirstIndex | Phase::AwaitSecondIndex => (0..self.n as u8).map(Token::Index).collect(),
            Phase::AwaitOutcome => [Outcome::Less, Outcome::Equal, Outcome::More]
                .into_iter()
                .map(Token::Outcome)
                .collect(),
        }
    }

    pub fn is_legal(&self, token: Token) -> bool {
        match (self.phase, token) {
            (Phase::AtOperationStart, Token::Compare) => true,
            (Phase::AtOperationStart, Token::Swap) => self.has_compared,
            (Phase::AwaitFirstIndex | Phase::AwaitSecondIndex, Token::Index(k)) => (k as usize) < self.n,
            (Phase::AwaitOutcome, Token::Outcome(_)) => true,
            _ => false,
        }
    }

    /// Consumes one token. Position fields in the returned error are zero;
    /// callers that know the position fill it in.
    pub fn advance(&mut self, token: Token) -> Result<(), VocabError> {
        if let (Phase::AwaitFirstIndex | Phase::AwaitSecondIndex, Token::Index(k)) = (self.phase, token) {
            if k as usize >= self.n {
                return Err(VocabError::IndexOutOfRange {
                    index: k as usize,
                    n: self.n,
                });
            }
        }
        if !self.is_legal(token) {
            return Err(VocabError::GrammarViolation {
                position: 0,
                token: token.to_string(),
            });
        }
        self.phase = match self.phase {
            Phase::AtOperationStart if token == Token::Compare => Phase::AwaitFirstIndex,
            Phase::AtOperationStart => Phase::AtOperationStart,
            Phase::AwaitFirstIndex => Phase::AwaitSecondIndex,
            Phase::AwaitSecondIndex => Phase::AwaitOutcome,
            Phase::AwaitOutcome => {
                self.has_compared = true;
                Phase::AtOperationStart
            }
        };
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("unknown token {token:?}")]
    UnknownToken { token: String },
    #[error("grammar violation at token {position} ({token:?})")]
    GrammarViolation { position: usize, token: String },
    #[error("index {index} out of range for array length {n}")]
    IndexOutOfRange { index: usize, n: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_has_36_unique_ids() {
        let vocab = Vocabulary::standard();
        assert_eq!(vocab.len(), VOCAB_SIZE);
        for (id, &token) in vocab.tokens().iter().enumerate() {
            assert_eq!(vocab.id_of(token) as usize, id);
            assert_eq!(vocab.token_of(id as u8), Some(token));
            assert_eq!(token.to_string().parse::<Token>().unwrap(), token);
        }
        let count = |f: fn(&Token) -> bool| vocab.tokens().iter().filter(|t| f(t)).count();
        assert_eq!(count(|t| matches!(t, Token::Index(_))), 16);
        assert_eq!(count(|t| matches!(t, Token::Length(_))), 11);
        assert_eq!(count(|t| matches!(t, Token::Special(_))), 4);
        assert_eq!(count(|t| matches!(t, Token::Outcome(_))), 3);
        assert_eq!(Token::from_id(36), None);
    }

    #[test]
    fn short_length_markers_are_unknown_to_models() {
        assert_eq!(Token::Length(3).id(), Token::UNK.id());
        assert_eq!(Token::Length(6).id(), ID_LENGTH);
        assert_eq!(Token::Length(16).id() as usize, VOCAB_SIZE - 1);
    }

    #[test]
    fn tokenize_simple_line() {
        let t = Trajectory::tokenize("len3 Compare 0 1 more Swap").unwrap();
        assert_eq!(t.n, 3);
        assert_eq!(
            t.ops,
            vec![
                Operation::Compare {
                    i: 0,
                    j: 1,
                    outcome: Outcome::More
                },
                Operation::Swap
            ]
        );
    }

    #[test]
    fn tokenize_errors() {
        assert!(matches!(
            Trajectory::tokenize("len3 Swap"),
            Err(VocabError::GrammarViolation { position: 1, .. })
        ));
        assert!(matches!(
            Trajectory::tokenize("len3 Compare 0 5 more"),
            Err(VocabError::IndexOutOfRange { index: 5, n: 3 })
        ));
        assert!(matches!(
            Trajectory::tokenize("len3 Compare 0 1 bigger"),
            Err(VocabError::UnknownToken { .. })
        ));
        assert!(matches!(
            Trajectory::tokenize("len6 Compare 0 16 more"),
            Err(VocabError::UnknownToken { .. })
        ));
        assert!(matches!(
            Trajectory::tokenize("len6 Compare 0 1"),
            Err(VocabError::GrammarViolation { .. })
        ));
        assert!(matches!(
            Trajectory::tokenize("Compare 0 1 less"),
            Err(VocabError::GrammarViolation { position: 0, .. })
        ));
        assert!(matches!(Trajectory::tokenize(""), Err(VocabError::GrammarViolation { .. })));
        assert!(matches!(
            Trajectory::tokenize("len6 Compare 01 1 less"),
            Err(VocabError::UnknownToken { .. })
        ));
    }

    #[test]
    fn serialize_examples() {
        assert_eq!(Trajectory::new(3).serialize(), "len3");
        let t = Trajectory {
            n: 3,
            ops: vec![Operation::Compare {
                i: 0,
                j: 1,
                outcome: Outcome::Less,
            }],
        };
        assert_eq!(t.serialize(), "len3 Compare 0 1 less");
        assert_eq!(
            Trajectory::tokenize("  len3   Compare 0 1  less ").unwrap().serialize(),
            "len3 Compare 0 1 less"
        );
    }

    #[test]
    fn self_comparison_is_grammatical() {
        let t = Trajectory::tokenize("len14 Compare 0 1 more Compare 1 1 equal Swap").unwrap();
        assert_eq!(t.ops.len(), 3);
    }

    #[test]
    fn legal_next_sets() {
        let mut g = GrammarState::new(6);
        assert_eq!(g.legal_next(), vec![Token::Compare]);
        g.advance(Token::Compare).unwrap();
        assert_eq!(g.phase, Phase::AwaitFirstIndex);
        assert_eq!(g.legal_next(), (0..6).map(Token::Index).collect::<Vec<_>>());
        g.advance(Token::Index(2)).unwrap();
        assert_eq!(g.legal_next().len(), 6);
        g.advance(Token::Index(3)).unwrap();
        assert_eq!(
            g.legal_next(),
            vec![
                Token::Outcome(Outcome::Less),
                Token::Outcome(Outcome::Equal),
                Token::Outcome(Outcome::More)
            ]
        );
        g.advance(Token::Outcome(Outcome::Less)).unwrap();
        assert_eq!(g.legal_next(), vec![Token::Compare, Token::Swap]);
        assert!(g.advance(Token::Index(0)).is_err());
    }
}
