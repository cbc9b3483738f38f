//! Baselines and trajectory metrics: expected QuickSort operation counts,
//! bubble-sort reference trajectories, operation-level discrepancy
//! alignment, windowed success rates and the program-synthesis prompt.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::EpisodeRecord;
use crate::vocab::{Operation, Outcome, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("trajectories have different lengths ({model} vs {reference})")]
    LengthMarkerMismatch { model: usize, reference: usize },
    #[error("window must be at least 1")]
    InvalidWindow,
}

pub fn harmonic(n: u64) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedOps {
    pub n: u64,
    pub harmonic: f64,
    pub compares: f64,
    pub swaps: f64,
    pub total: f64,
}

/// Closed forms for randomized QuickSort with Lomuto partitioning:
/// `2(n+1)H_n - 2n` compares and `(n+1)H_n - 2n` swaps.
pub fn expected_quicksort_ops(n: u64) -> ExpectedOps {
    let h = harmonic(n);
    let m = n as f64;
    let compares = 2.0 * (m + 1.0) * h - 2.0 * m;
    let swaps = (m + 1.0) * h - 2.0 * m;
    ExpectedOps {
        n,
        harmonic: h,
        compares,
        swaps,
        total: compares + swaps,
    }
}

/// `E(0) = 0`, `E(m) = cost(m) + (2/m) * sum_{k<m} E(k)` for `m = 1..=n`.
pub fn partition_recurrence(n: usize, cost: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut e = vec![0.0; n + 1];
    let mut prefix = 0.0;
    for m in 1..=n {
        prefix += e[m - 1];
        e[m] = cost(m) + 2.0 * prefix / m as f64;
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceExpectation {
    pub compares: f64,
    /// `None` at `n = 0`, where the swap recurrence has no partition step.
    pub swaps: Option<f64>,
}

/// Expected counts from the partition recurrences: `m - 1` compares and
/// `(m + 1) / 2` swaps per partition of `m` elements.
///
/// Neither recurrence solves to the closed forms of
/// [`expected_quicksort_ops`]. Compares come out as `2(n+1)H_n - 4n`, which
/// is `2n` below; `m + 1` compares per partition would give the closed form.
/// Swaps with `S(0) = 0` (forcing `S(1) = 1`, the pivot placing itself) come
/// out as `(n+1)H_n - n`, which is `n` above; `(m - 1) / 2` swaps per
/// partition would give the closed form.
pub fn quicksort_expectation_oracle(n: usize) -> RecurrenceExpectation {
    let compares = partition_recurrence(n, |m| (m - 1) as f64)[n];
    let swaps = (n > 0).then(|| partition_recurrence(n, |m| (m + 1) as f64 / 2.0)[n]);
    RecurrenceExpectation { compares, swaps }
}

/// Full double-loop bubble sort (no early exit) over a working copy.
pub fn bubble_sort_reference_trajectory(array: &[i64]) -> Trajectory {
    let n = array.len();
    let mut a = array.to_vec();
    let mut t = Trajectory::new(n);
    for i in 0..n.saturating_sub(1) {
        for j in 0..n - i - 1 {
            let outcome = Outcome::of(&a[j], &a[j + 1]);
            t.ops.push(Operation::Compare {
                i: j as u8,
                j: j as u8 + 1,
                outcome,
            });
            if outcome == Outcome::More {
                a.swap(j, j + 1);
                t.ops.push(Operation::Swap);
            }
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub count: usize,
    /// Reference operations the model trajectory lacks.
    pub missing: Vec<Operation>,
    /// Model operations the reference lacks.
    pub extra: Vec<Operation>,
}

/// Insert/delete edit distance between the operation sequences, with one
/// optimal alignment. Operations match when kind, indices and outcome agree.
pub fn count_discrepancies(model: &Trajectory, reference: &Trajectory) -> Result<DiscrepancyReport, AnalysisError> {
    if model.n != reference.n {
        return Err(AnalysisError::LengthMarkerMismatch {
            model: model.n,
            reference: reference.n,
        });
    }
    let (a, b) = (&model.ops, &reference.ops);
    let (la, lb) = (a.len(), b.len());
    // lcs[i][j] = LCS of a[i..] and b[j..]
    let w = lb + 1;
    let mut lcs = vec![0u32; (la + 1) * w];
    for i in (0..la).rev() {
        for j in (0..lb).rev() {
            lcs[i * w + j] = if a[i] == b[j] {
                lcs[(i + 1) * w + j + 1] + 1
            } else {
                lcs[(i + 1) * w + j].max(lcs[i * w + j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut missing = Vec::new();
    let mut extra = Vec::new();
    while i < la && j < lb {
        if a[i] == b[j] {
            i += 1;
            j += 1;
        } else if lcs[(i + 1) * w + j] >= lcs[i * w + j + 1] {
            extra.push(a[i]);
            i += 1;
        } else {
            missing.push(b[j]);
            j += 1;
        }
    }
    extra.extend_from_slice(&a[i..]);
    missing.extend_from_slice(&b[j..]);
    Ok(DiscrepancyReport {
        count: missing.len() + extra.len(),
        missing,
        extra,
    })
}

/// Mean success over consecutive disjoint windows; each point is labelled
/// with the number of episodes seen at the end of its window. A trailing
/// partial window is dropped.
pub fn success_rate_series(records: &[EpisodeRecord], window: usize) -> Result<Vec<(u64, f64)>, AnalysisError> {
    let flags: Vec<bool> = records.iter().map(|r| r.success).collect();
    success_rate_series_flags(&flags, window)
}

pub fn success_rate_series_flags(success: &[bool], window: usize) -> Result<Vec<(u64, f64)>, AnalysisError> {
    if window == 0 {
        return Err(AnalysisError::InvalidWindow);
    }
    Ok(success
        .chunks_exact(window)
        .enumerate()
        .map(|(k, c)| {
            let ok = c.iter().filter(|&&s| s).count();
            (((k + 1) * window) as u64, ok as f64 / window as f64)
        })
        .collect())
}

const PROMPT_HEAD: &str = "Below is the sequence of actions of a python function that operates on an array of integers named \"a\", and its will receive feedbacks from an environment after it takes actions. Action \"Compare i j\" means the python function compares a[i] and a[j]. If a[i] is greater than a[j], the environment will return \"more\". If a[i] is smaller than a[j], it will return \"less\". Otherwise it will return \"equal\". Action \"Swap\" means the python function swaps a[i] and a[j]. Note this sequence of actions may contain noises, i.e., some actions may be missing and some others added.";

const PROMPT_LABEL: &str = "Sequence of actions and feedbacks:";

const PROMPT_TAIL: &str = "Now, please write a python function that is likely to generate this sequence of actions. Your function should not generate the noises.";

/// Program-synthesis prompt for `t`: four paragraphs separated by blank
/// lines, the trajectory in double quotes, newline-terminated.
pub fn export_llm_prompt(t: &Trajectory) -> String {
    format!(
        "{PROMPT_HEAD}\n\n{PROMPT_LABEL}\n\n\"{}\"\n\n{PROMPT_TAIL}\n",
        t.serialize()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(s: &str) -> Trajectory {
        s.parse().unwrap()
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(1), 1.0);
        assert_eq!(harmonic(2), 1.5);
        assert!((harmonic(6) - 49.0 / 20.0).abs() < 1e-15);
    }

    #[test]
    fn quicksort_small_n() {
        let e = expected_quicksort_ops(1);
        assert_eq!((e.compares, e.swaps), (2.0, 0.0));
        let o = quicksort_expectation_oracle(1);
        assert_eq!(o.compares, 0.0);
        assert_eq!(o.swaps, Some(1.0));
        assert_eq!(quicksort_expectation_oracle(0), RecurrenceExpectation { compares: 0.0, swaps: None });
        // two elements: one compare; pivot swap plus half a swap on average
        let o = quicksort_expectation_oracle(2);
        assert_eq!(o.compares, 1.0);
        assert_eq!(o.swaps, Some(2.5));
    }

    #[test]
    fn recurrence_offsets_from_closed_forms() {
        for n in 1..=20 {
            let closed = expected_quicksort_ops(n as u64);
            let dp = quicksort_expectation_oracle(n);
            let m = n as f64;
            assert!((closed.compares - dp.compares - 2.0 * m).abs() < 1e-9, "n={n}");
            assert!((dp.swaps.unwrap() - closed.swaps - m).abs() < 1e-9, "n={n}");
            let c = partition_recurrence(n, |k| (k + 1) as f64)[n];
            assert!((c - closed.compares).abs() < 1e-9, "n={n}");
            let s = partition_recurrence(n, |k| (k - 1) as f64 / 2.0)[n];
            assert!((s - closed.swaps).abs() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn bubble_reference_examples() {
        assert_eq!(
            bubble_sort_reference_trajectory(&[3, 2, 1]).serialize(),
            "len3 Compare 0 1 more Swap Compare 1 2 more Swap Compare 0 1 more Swap"
        );
        let t = bubble_sort_reference_trajectory(&[1, 2, 3]);
        assert_eq!((t.compares(), t.swaps()), (3, 0));
    }

    #[test]
    fn discrepancy_basics() {
        let r = traj("len4 Compare 0 1 more Swap Compare 1 2 less Compare 2 3 more Swap");
        assert_eq!(count_discrepancies(&r, &r).unwrap().count, 0);
        let m = traj("len4 Compare 0 1 more Swap Compare 2 3 more Swap");
        let rep = count_discrepancies(&m, &r).unwrap();
        assert_eq!(rep.count, 1);
        assert_eq!(rep.missing, vec![Operation::Compare { i: 1, j: 2, outcome: Outcome::Less }]);
        assert!(rep.extra.is_empty());
        let back = count_discrepancies(&r, &m).unwrap();
        assert_eq!(back.extra, rep.missing);
        assert_eq!(
            count_discrepancies(&traj("len5"), &r),
            Err(AnalysisError::LengthMarkerMismatch { model: 5, reference: 4 })
        );
    }

    #[test]
    fn windows() {
        let flags = [true, false, true, false, true];
        assert_eq!(success_rate_series_flags(&flags, 2).unwrap(), vec![(2, 0.5), (4, 0.5)]);
        assert_eq!(success_rate_series_flags(&flags, 0), Err(AnalysisError::InvalidWindow));
    }

    #[test]
    fn prompt_shape() {
        let p = export_llm_prompt(&traj("len6"));
        assert!(p.contains("\n\n\"len6\"\n\n"));
        assert!(p.ends_with("noises.\n"));
        assert_eq!(p, export_llm_prompt(&traj("len6")));
    }
}
