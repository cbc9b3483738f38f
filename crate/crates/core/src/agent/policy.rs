use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::net::{Layout, Net, NetShape, Trace};
use super::AgentError;
use crate::tlm::ByteReader;
use crate::vocab::{GrammarState, Outcome, Phase, Token, VOCAB_SIZE};

pub const POLICY_MAGIC: &[u8; 8] = b"ALGOPOL1";
const POLICY_VERSION: u32 = 1;

/// Action-value function over token histories.
///
/// Histories are read with an implied `<bos>` in front, so the empty history
/// is valid and gives the values for the first token.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    layout: Layout,
    params: Vec<f64>,
}

impl PolicyModel {
    pub fn new(shape: NetShape, seed: u64) -> Result<Self, AgentError> {
        shape.validate().map_err(AgentError::InvalidConfig)?;
        let layout = Layout::new(shape);
        let params = layout.init(seed);
        Ok(PolicyModel { layout, params })
    }

    pub fn shape(&self) -> NetShape {
        self.layout.shape
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn parts_mut(&mut self) -> (&Layout, &mut Vec<f64>) {
        (&self.layout, &mut self.params)
    }

    pub fn net(&self) -> Net<'_> {
        Net::new(&self.layout, &self.params)
    }

    /// A trace holding `<bos>` followed by `history`.
    pub fn trace(&self, history: &[Token]) -> Trace {
        let net = self.net();
        let mut trace = net.start();
        net.push(&mut trace, Token::BOS.id());
        for t in history {
            net.push(&mut trace, t.id());
        }
        trace
    }

    /// One value estimate per vocabulary id for the token after `history`.
    pub fn values(&self, history: &[Token]) -> [f64; VOCAB_SIZE] {
        self.net().values_last(&self.trace(history))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.layout.shape;
        let mut out = Vec::with_capacity(48 + 8 * self.params.len());
        out.extend_from_slice(POLICY_MAGIC);
        out.extend_from_slice(&POLICY_VERSION.to_le_bytes());
        for v in [VOCAB_SIZE, s.layers, s.heads, s.dim, s.ffn_dim, s.window] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AgentError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if bytes.len() < POLICY_MAGIC.len() {
            return Err(AgentError::CorruptFile("file shorter than header".into()));
        }
        if r.take(8)? != POLICY_MAGIC {
            return Err(AgentError::VersionMismatch("not a policy file".into()));
        }
        let version = r.u32()?;
        if version != POLICY_VERSION {
            return Err(AgentError::VersionMismatch(format!("policy format version {version}")));
        }
        let vocab = r.u32()? as usize;
        if vocab != VOCAB_SIZE {
            return Err(AgentError::VersionMismatch(format!("vocabulary size {vocab}")));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let shape = NetShape {
            layers: dims[0],
            heads: dims[1],
            dim: dims[2],
            ffn_dim: dims[3],
            window: dims[4],
        };
        shape.validate().map_err(AgentError::CorruptFile)?;
        let layout = Layout::new(shape);
        let count = r.u64()? as usize;
        if count != layout.total {
            return Err(AgentError::CorruptFile(format!(
                "{count} parameters stored, shape needs {}",
                layout.total
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let p = r.f64()?;
            if !p.is_finite() {
                return Err(AgentError::CorruptFile("non-finite parameter".into()));
            }
            params.push(p);
        }
        if r.pos != bytes.len() {
            return Err(AgentError::CorruptFile("trailing bytes".into()));
        }
        Ok(PolicyModel { layout, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AgentError> {
        fs::write(path, self.to_bytes()).map_err(AgentError::Io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        PolicyModel::from_bytes(&fs::read(path).map_err(AgentError::Io)?)
    }
}

pub fn save_policy(p: &PolicyModel, path: impl AsRef<Path>) -> Result<(), AgentError> {
    p.save(path)
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<PolicyModel, AgentError> {
    PolicyModel::load(path)
}

/// Highest legal value; ties go to the lowest id.
pub fn greedy_choice(values: &[f64; VOCAB_SIZE], legal: &[Token]) -> Token {
    let mut best = legal[0];
    for &t in &legal[1..] {
        let (v, b) = (values[t.id() as usize], values[best.id() as usize]);
        if v > b || (v == b && t.id() < best.id()) {
            best = t;
        }
    }
    best
}

/// Epsilon-greedy over `legal`. Draws exactly one uniform number, plus one
/// index when exploring.
pub fn epsilon_greedy(values: &[f64; VOCAB_SIZE], legal: &[Token], epsilon: f64, rng: &mut ChaCha8Rng) -> Token {
    if rng.gen::<f64>() < epsilon {
        *legal.choose(rng).expect("legal set is nonempty")
    } else {
        greedy_choice(values, legal)
    }
}

/// Draws one token from the legal set of `g`.
pub fn select_action(
    p: &PolicyModel,
    history: &[Token],
    g: &GrammarState,
    epsilon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Token, AgentError> {
    if g.phase == Phase::AwaitOutcome {
        return Err(AgentError::ContractViolation(
            "outcomes are emitted by the environment".into(),
        ));
    }
    let legal = g.legal_next();
    Ok(epsilon_greedy(&p.values(history), &legal, epsilon, rng))
}

/// Something that picks agent tokens while watching an episode unfold.
///
/// `begin` starts an episode; `observe` is called for every token of the
/// trajectory in order (length marker, agent choices, outcomes); `choose` is
/// only called when an agent token is due.
pub trait ActionPolicy {
    fn begin(&mut self, n: usize);
    fn observe(&mut self, token: Token);
    fn choose(&mut self, grammar: &GrammarState, rng: &mut ChaCha8Rng) -> Token;
}

/// Epsilon-greedy rollout of a [`PolicyModel`], extending one trace per episode.
pub struct ModelPolicy<'a> {
    model: &'a PolicyModel,
    pub epsilon: f64,
    trace: Trace,
    /// `(trace position, chosen id, values at that position)` per decision.
    pub(crate) decisions: Vec<(usize, u8, [f64; VOCAB_SIZE])>,
    record: bool,
}

impl<'a> ModelPolicy<'a> {
    pub fn new(model: &'a PolicyModel, epsilon: f64) -> Self {
        ModelPolicy {
            model,
            epsilon,
            trace: model.net().start(),
            decisions: Vec::new(),
            record: false,
        }
    }

    pub(crate) fn recording(model: &'a PolicyModel, epsilon: f64) -> Self {
        ModelPolicy {
            record: true,
            ..ModelPolicy::new(model, epsilon)
        }
    }

    pub(crate) fn trace(&self) -> &Trace {
        &self.trace
    }
}

impl ActionPolicy for ModelPolicy<'_> {
    fn begin(&mut self, _n: usize) {
        let net = self.model.net();
        self.trace = net.start();
        net.push(&mut self.trace, Token::BOS.id());
        self.decisions.clear();
    }

    fn observe(&mut self, token: Token) {
        self.model.net().push(&mut self.trace, token.id());
    }

    fn choose(&mut self, grammar: &GrammarState, rng: &mut ChaCha8Rng) -> Token {
        let values = self.model.net().values_last(&self.trace);
        let token = epsilon_greedy(&values, &grammar.legal_next(), self.epsilon, rng);
        if self.record {
            self.decisions.push((self.trace.len() - 1, token.id(), values));
        }
        token
    }
}

/// Repeated adjacent passes: compare `(k, k+1)`, swap when `more`, move on,
/// wrapping after the last pair. Relies on the environment ending the
/// episode once sorted.
#[derive(Debug, Clone, Default)]
pub struct BubbleSortPolicy {
    n: usize,
    k: usize,
    pending: Vec<Token>,
    last_outcome: Option<Outcome>,
}

impl BubbleSortPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    fn next_op(&mut self) {
        if self.last_outcome == Some(Outcome::More) {
            self.pending.push(Token::Swap);
            self.last_outcome = None;
            return;
        }
        if self.last_outcome.is_some() {
            self.k = (self.k + 1) % (self.n - 1);
        }
        self.last_outcome = None;
        self.pending
            .extend([Token::Index(self.k as u8 + 1), Token::Index(self.k as u8), Token::Compare]);
    }
}

impl ActionPolicy for BubbleSortPolicy {
    fn begin(&mut self, n: usize) {
        *self = BubbleSortPolicy {
            n,
            ..Default::default()
        };
    }

    fn observe(&mut self, token: Token) {
        match token {
            Token::Outcome(o) => self.last_outcome = Some(o),
            Token::Swap => {
                // after a swap, the pass continues with the next pair
                self.last_outcome = Some(Outcome::Less);
            }
            _ => {}
        }
    }

    fn choose(&mut self, _grammar: &GrammarState, _rng: &mut ChaCha8Rng) -> Token {
        if self.pending.is_empty() {
            self.next_op();
        }
        self.pending.pop().expect("an operation was queued")
    }
}

/// Uniform over the legal tokens at every decision.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl ActionPolicy for RandomPolicy {
    fn begin(&mut self, _n: usize) {}

    fn observe(&mut self, _token: Token) {}

    fn choose(&mut self, grammar: &GrammarState, rng: &mut ChaCha8Rng) -> Token {
        *grammar.legal_next().choose(rng).expect("legal set is nonempty")
    }
}
