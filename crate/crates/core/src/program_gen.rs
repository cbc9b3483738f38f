//! Random double-loop programs and the interpreter that turns them into
//! trajectories.
//!
//! A template is
//!
//! ```text
//! for i in <outer>:
//!     [y = arr[i]]
//!     for j in <inner>:
//!         if Compare(<left>, <right>) <check> 0:
//!             Swap()
//! ```
//!
//! `Compare(a, b)` reports the positions the two *values* had in the original
//! array, and `Swap` exchanges the current array at those positions. Negative
//! references wrap to the end of the array; a reference past the end aborts
//! the run.

use std::fmt;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::vocab::{Operation, Outcome, Trajectory, MAX_N, MIN_MARKED_N};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OuterLoop {
    /// `for i in range(n - 1)`
    UptoNMinus1,
    /// `for i in range(n)`
    UptoN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnerLoop {
    /// `for j in range(i + 1, n)`
    FromIPlus1,
    /// `for j in range(n - i - 1)`
    UptoNMinusIMinus1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueRef {
    ArrI,
    ArrIMinus1,
    ArrIPlus1,
    ArrJ,
    ArrJMinus1,
    ArrJPlus1,
    Y,
}

impl ValueRef {
    pub const ALL: [ValueRef; 7] = [
        ValueRef::ArrI,
        ValueRef::ArrIMinus1,
        ValueRef::ArrIPlus1,
        ValueRef::ArrJ,
        ValueRef::ArrJMinus1,
        ValueRef::ArrJPlus1,
        ValueRef::Y,
    ];

    fn source(self) -> &'static str {
        match self {
            ValueRef::ArrI => "arr[i]",
            ValueRef::ArrIMinus1 => "arr[i-1]",
            ValueRef::ArrIPlus1 => "arr[i+1]",
            ValueRef::ArrJ => "arr[j]",
            ValueRef::ArrJMinus1 => "arr[j-1]",
            ValueRef::ArrJPlus1 => "arr[j+1]",
            ValueRef::Y => "y",
        }
    }
}

impl fmt::Display for ValueRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.source())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ZeroCheck {
    Gt,
    Lt,
    Eq,
    Ge,
    Le,
}

impl ZeroCheck {
    pub const ALL: [ZeroCheck; 5] = [ZeroCheck::Gt, ZeroCheck::Lt, ZeroCheck::Eq, ZeroCheck::Ge, ZeroCheck::Le];

    pub fn holds(self, value: i8) -> bool {
        match self {
            ZeroCheck::Gt => value > 0,
            ZeroCheck::Lt => value < 0,
            ZeroCheck::Eq => value == 0,
            ZeroCheck::Ge => value >= 0,
            ZeroCheck::Le => value <= 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ZeroCheck::Gt => "> 0",
            ZeroCheck::Lt => "< 0",
            ZeroCheck::Eq => "== 0",
            ZeroCheck::Ge => ">= 0",
            ZeroCheck::Le => "<= 0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FunctionTemplate {
    pub outer: OuterLoop,
    pub bind_y: bool,
    pub inner: InnerLoop,
    pub cond_left: ValueRef,
    pub cond_right: ValueRef,
    pub zero_check: ZeroCheck,
}

impl FunctionTemplate {
    pub fn uses_y(&self) -> bool {
        self.cond_left == ValueRef::Y || self.cond_right == ValueRef::Y
    }
}

impl fmt::Display for FunctionTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let outer = match self.outer {
            OuterLoop::UptoNMinus1 => "range(n - 1)",
            OuterLoop::UptoN => "range(n)",
        };
        let inner = match self.inner {
            InnerLoop::FromIPlus1 => "range(i + 1, n)",
            InnerLoop::UptoNMinusIMinus1 => "range(n - i - 1)",
        };
        write!(f, "for i in {outer}: ")?;
        if self.bind_y {
            f.write_str("y = arr[i]; ")?;
        }
        write!(
            f,
            "for j in {inner}: if Compare({}, {}) {}: Swap()",
            self.cond_left,
            self.cond_right,
            self.zero_check.as_str()
        )
    }
}

/// Probability of binding `y` when the condition does not require it.
pub const DEFAULT_BIND_Y_PROBABILITY: f64 = 0.5;

pub fn sample_template<R: Rng + ?Sized>(rng: &mut R) -> FunctionTemplate {
    sample_template_with(rng, DEFAULT_BIND_Y_PROBABILITY)
}

pub fn sample_template_with<R: Rng + ?Sized>(rng: &mut R, bind_y_probability: f64) -> FunctionTemplate {
    let outer = if rng.gen_bool(0.5) {
        OuterLoop::UptoNMinus1
    } else {
        OuterLoop::UptoN
    };
    let mut bind_y = rng.gen_bool(bind_y_probability);
    let inner = if rng.gen_bool(0.5) {
        InnerLoop::FromIPlus1
    } else {
        InnerLoop::UptoNMinusIMinus1
    };
    let cond_left = *ValueRef::ALL.choose(rng).unwrap();
    let mut cond_right = *ValueRef::ALL.choose(rng).unwrap();
    if cond_right == cond_left {
        cond_right = *ValueRef::ALL.choose(rng).unwrap();
    }
    let zero_check = *ZeroCheck::ALL.choose(rng).unwrap();
    if cond_left == ValueRef::Y || cond_right == ValueRef::Y {
        bind_y = true;
    }
    FunctionTemplate {
        outer,
        bind_y,
        inner,
        cond_left,
        cond_right,
        zero_check,
    }
}

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("{reference} reads index {index} past the end of an array of length {n}")]
    OutOfRangeReference { reference: ValueRef, index: usize, n: usize },
    #[error("y referenced but never bound")]
    UnboundY,
    #[error("array length {0} outside the supported range")]
    InvalidSize(usize),
    #[error("compared value {0} does not occur in the original array")]
    UnknownValue(i64),
    #[error("failed to write corpus line: {0}")]
    SinkFailure(#[from] io::Error),
}

/// Execution state of one template run.
#[derive(Debug, Clone)]
pub struct InterpreterState {
    pub arr: Vec<i64>,
    pub orig_arr: Vec<i64>,
    pub i: usize,
    pub j: usize,
    pub y: Option<i64>,
    pub emitted: Trajectory,
    pub last_pair: Option<(usize, usize)>,
}

impl InterpreterState {
    pub fn new(array: &[i64]) -> Self {
        InterpreterState {
            arr: array.to_vec(),
            orig_arr: array.to_vec(),
            i: 0,
            j: 0,
            y: None,
            emitted: Trajectory::new(array.len()),
            last_pair: None,
        }
    }

    fn resolve(&self, reference: ValueRef) -> Result<i64, ProgramError> {
        let n = self.arr.len() as isize;
        let (base, offset) = match reference {
            ValueRef::Y => return self.y.ok_or(ProgramError::UnboundY),
            ValueRef::ArrI => (self.i, 0),
            ValueRef::ArrIMinus1 => (self.i, -1),
            ValueRef::ArrIPlus1 => (self.i, 1),
            ValueRef::ArrJ => (self.j, 0),
            ValueRef::ArrJMinus1 => (self.j, -1),
            ValueRef::ArrJPlus1 => (self.j, 1),
        };
        let mut index = base as isize + offset;
        if index >= n {
            return Err(ProgramError::OutOfRangeReference {
                reference,
                index: index as usize,
                n: n as usize,
            });
        }
        if index < 0 {
            index += n;
        }
        Ok(self.arr[index as usize])
    }

    fn original_position(&self, value: i64) -> Result<usize, ProgramError> {
        self.orig_arr
            .iter()
            .position(|&v| v == value)
            .ok_or(ProgramError::UnknownValue(value))
    }

    fn compare(&mut self, a: i64, b: i64) -> Result<i8, ProgramError> {
        let idx1 = self.original_position(a)?;
        let idx2 = self.original_position(b)?;
        self.last_pair = Some((idx1, idx2));
        let outcome = Outcome::of(&a, &b);
        self.emitted.ops.push(Operation::Compare {
            i: idx1 as u8,
            j: idx2 as u8,
            outcome,
        });
        Ok(outcome.sign())
    }

    fn swap(&mut self) {
        if let Some((a, b)) = self.last_pair {
            self.arr.swap(a, b);
        }
        self.emitted.ops.push(Operation::Swap);
    }
}

/// Runs `template` on `array` and returns the emitted trajectory.
pub fn execute_template(template: &FunctionTemplate, array: &[i64]) -> Result<Trajectory, ProgramError> {
    let n = array.len();
    if !(1..=MAX_N).contains(&n) {
        return Err(ProgramError::InvalidSize(n));
    }
    let mut state = InterpreterState::new(array);
    let outer_end = match template.outer {
        OuterLoop::UptoNMinus1 => n - 1,
        OuterLoop::UptoN => n,
    };
    for i in 0..outer_end {
        state.i = i;
        if template.bind_y {
            state.y = Some(state.arr[i]);
        }
        let inner = match template.inner {
            InnerLoop::FromIPlus1 => (i + 1)..n,
            InnerLoop::UptoNMinusIMinus1 => 0..(n - i - 1),
        };
        for j in inner {
            state.j = j;
            let a = state.resolve(template.cond_left)?;
            let b = state.resolve(template.cond_right)?;
            let value = state.compare(a, b)?;
            if template.zero_check.holds(value) {
                state.swap();
            }
        }
    }
    Ok(state.emitted)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub generated: u64,
    pub discarded: u64,
}

impl CorpusStats {
    pub fn discard_rate(&self) -> f64 {
        let total = self.generated + self.discarded;
        if total == 0 {
            0.0
        } else {
            self.discarded as f64 / total as f64
        }
    }
}

/// Trajectory number `index` of the corpus defined by `(sizes, seed)`, plus
/// how many templates were discarded before one ran to completion.
///
/// Each index has its own generator seeded with `seed + index`, so any subset
/// of indices can be produced independently and in any order.
pub fn generate_trajectory(index: u64, sizes: &[usize], seed: u64) -> Result<(Trajectory, u64), ProgramError> {
    if let Some(&n) = sizes.iter().find(|&&n| !(MIN_MARKED_N..=MAX_N).contains(&n)) {
        return Err(ProgramError::InvalidSize(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index));
    let n = *sizes.choose(&mut rng).ok_or(ProgramError::InvalidSize(0))?;
    let mut array: Vec<i64> = (1..=n as i64).collect();
    array.shuffle(&mut rng);
    let mut discarded = 0;
    loop {
        let template = sample_template(&mut rng);
        match execute_template(&template, &array) {
            Ok(t) => return Ok((t, discarded)),
            Err(ProgramError::OutOfRangeReference { .. }) => discarded += 1,
            Err(e) => return Err(e),
        }
    }
}

/// Writes `count` trajectory lines to `sink`.
pub fn generate_corpus<W: Write>(
    count: u64,
    sizes: &[usize],
    seed: u64,
    sink: &mut W,
) -> Result<CorpusStats, ProgramError> {
    let mut stats = CorpusStats::default();
    let mut line = String::new();
    for index in 0..count {
        let (trajectory, discarded) = generate_trajectory(index, sizes, seed)?;
        stats.generated += 1;
        stats.discarded += discarded;
        line.clear();
        use std::fmt::Write as _;
        writeln!(line, "{trajectory}").expect("writing to a String");
        sink.write_all(line.as_bytes())?;
    }
    sink.flush()?;
    Ok(stats)
}

/// Convenience: the corpus as a vector of trajectories.
pub fn generate_trajectories(count: u64, sizes: &[usize], seed: u64) -> Result<Vec<Trajectory>, ProgramError> {
    (0..count)
        .map(|index| generate_trajectory(index, sizes, seed).map(|(t, _)| t))
        .collect()
}
