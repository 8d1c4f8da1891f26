//! Bidirectional solution/test-case ranking over a binary pass matrix.
//!
//! Solutions earn score from the tests they pass; tests earn score from the
//! solutions that fail them. Both vectors update simultaneously (Jacobi
//! style, both sides reading the previous iteration), damped by `d`, and are
//! rescaled after each iteration so solution scores sum to `n` and test
//! scores to `m`. From a uniform start the first iteration orders solutions
//! by row sums of the pass matrix and tests by column sums of the fail
//! matrix.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary n x m pass matrix; entry 1 means solution i passes test j. The
/// fail matrix is its complement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PassMatrixDoc", into = "PassMatrixDoc")]
pub struct PassMatrix {
    n: usize,
    m: usize,
    bits: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct PassMatrixDoc {
    n: usize,
    m: usize,
    rows: Vec<Vec<u8>>,
}

impl TryFrom<PassMatrixDoc> for PassMatrix {
    type Error = Error;

    fn try_from(doc: PassMatrixDoc) -> Result<Self> {
        if doc.rows.len() != doc.n {
            return Err(Error::input(format!(
                "declared {} rows, found {}",
                doc.n,
                doc.rows.len()
            )));
        }
        for row in &doc.rows {
            if row.len() != doc.m {
                return Err(Error::input("ragged pass-matrix rows"));
            }
        }
        PassMatrix::from_rows(doc.rows)
    }
}

impl From<PassMatrix> for PassMatrixDoc {
    fn from(pm: PassMatrix) -> Self {
        let rows = (0..pm.n)
            .map(|i| pm.bits[i * pm.m..(i + 1) * pm.m].to_vec())
            .collect();
        PassMatrixDoc {
            n: pm.n,
            m: pm.m,
            rows,
        }
    }
}

impl PassMatrix {
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::input("pass matrix needs at least one solution"));
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(Error::input("pass matrix needs at least one test"));
        }
        let mut bits = Vec::with_capacity(n * m);
        for row in &rows {
            if row.len() != m {
                return Err(Error::input("ragged pass-matrix rows"));
            }
            for &b in row {
                if b > 1 {
                    return Err(Error::input(format!("pass-matrix entry {b} is not 0/1")));
                }
                bits.push(b);
            }
        }
        Ok(PassMatrix { n, m, bits })
    }

    /// Parse comma-separated 0/1 entries, one solution per line.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<u8> = line
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<u8>()
                        .map_err(|_| Error::input(format!("row {i}: bad entry {f:?}")))
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        PassMatrix::from_rows(rows)
    }

    /// Load from a file; `.csv` parses as 0/1 lines, anything else as the
    /// `{n, m, rows}` JSON document.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            PassMatrix::from_csv_str(&text)
        } else {
            serde_json::from_str(&text).map_err(|e| Error::schema(e.to_string()))
        }
    }

    pub fn solutions(&self) -> usize {
        self.n
    }

    pub fn tests(&self) -> usize {
        self.m
    }

    /// 1 if solution i passes test j.
    pub fn passed(&self, i: usize, j: usize) -> u8 {
        self.bits[i * self.m + j]
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.bits[i * self.m..(i + 1) * self.m]
            .iter()
            .map(|&b| b as usize)
            .sum()
    }

    /// Column sum of the fail matrix.
    pub fn fail_col_sum(&self, j: usize) -> usize {
        (0..self.n).map(|i| 1 - self.passed(i, j) as usize).sum()
    }
}

/// Solution and test scores after some number of iterations. Scores are
/// nonnegative; solution scores sum to n and test scores to m.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreState {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub iteration: usize,
}

/// One damped Jacobi update, before normalization. Both outputs read the
/// incoming vectors: `s'[i] = d * (P t)[i] + (1-d) s[i]` and
/// `t'[j] = d * (F^T s)[j] + (1-d) t[j]`.
pub fn jacobi_update(pm: &PassMatrix, s: &[f64], t: &[f64], damping: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (pm.n, pm.m);
    debug_assert_eq!(s.len(), n);
    debug_assert_eq!(t.len(), m);
    let mut s_new = vec![0.0; n];
    let mut t_new = vec![0.0; m];
    for (i, out) in s_new.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, tj) in t.iter().enumerate() {
            if pm.passed(i, j) == 1 {
                acc += tj;
            }
        }
        *out = damping * acc + (1.0 - damping) * s[i];
    }
    for (j, out) in t_new.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, si) in s.iter().enumerate() {
            if pm.passed(i, j) == 0 {
                acc += si;
            }
        }
        *out = damping * acc + (1.0 - damping) * t[j];
    }
    (s_new, t_new)
}

/// Damped Jacobi co-ranking from all-ones initial scores. After each
/// iteration both vectors are rescaled so solution scores sum to n and test
/// scores to m.
pub fn corank(pm: &PassMatrix, damping: f64, iterations: usize) -> Result<ScoreState> {
    let damping_valid = damping.is_finite() && damping > 0.0 && damping < 1.0;
    if !damping_valid {
        return Err(Error::input(format!(
            "damping must be in (0, 1), got {damping}"
        )));
    }
    if iterations == 0 {
        return Err(Error::input("iterations must be positive"));
    }
    let (n, m) = (pm.n, pm.m);
    let mut s = vec![1.0; n];
    let mut t = vec![1.0; m];
    for _ in 0..iterations {
        let (s_new, t_new) = jacobi_update(pm, &s, &t, damping);
        let s_sum: f64 = s_new.iter().sum();
        let t_sum: f64 = t_new.iter().sum();
        let sums_positive = s_sum > 0.0 && t_sum > 0.0;
        if !sums_positive {
            return Err(Error::numeric("co-ranking rescale denominator vanished"));
        }
        for (dst, src) in s.iter_mut().zip(&s_new) {
            *dst = src * n as f64 / s_sum;
        }
        for (dst, src) in t.iter_mut().zip(&t_new) {
            *dst = src * m as f64 / t_sum;
        }
    }
    Ok(ScoreState {
        s,
        t,
        iteration: iterations,
    })
}

/// Result of picking the extreme solutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Extremes {
    Separated {
        best: usize,
        worst: usize,
    },
    /// All solution scores are equal; there is nothing to select.
    NoSeparation,
}

/// Highest- and lowest-scoring solution indices, ties broken by the smaller
/// index. A state in which every score is equal is reported as
/// `NoSeparation` instead of the degenerate `(0, 0)` pair.
pub fn select_extremes(state: &ScoreState) -> Result<Extremes> {
    if state.s.len() < 2 {
        return Err(Error::input(
            "need at least two solutions to select extremes",
        ));
    }
    let mut best = 0;
    let mut worst = 0;
    for (i, &v) in state.s.iter().enumerate() {
        if v > state.s[best] {
            best = i;
        }
        if v < state.s[worst] {
            worst = i;
        }
    }
    if state.s[best] == state.s[worst] {
        return Ok(Extremes::NoSeparation);
    }
    Ok(Extremes::Separated { best, worst })
}
