//! Dense state-by-action tables.

use crate::error::{PmdError, Result};

/// Row-major `n_states x n_actions` matrix shared by the table newtypes.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PmdError::InvalidDimensions(format!(
                "{} values for a {rows}x{cols} table",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PmdError::InvalidDimensions("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1))
    }

    pub fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(PmdError::ShapeMismatch {
                expected: shape,
                got: self.shape(),
            });
        }
        Ok(())
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |self - other|`; panics on shape mismatch.
    pub fn sup_dist(&self, other: &Table) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `min (self - other)` over all entries.
    pub fn min_diff(&self, other: &Table) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(f64::INFINITY, |m, (a, b)| m.min(a - b))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, k: f64, other: &Table) {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += k * b);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Table {
        Table {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Table, f: impl Fn(f64, f64) -> f64) -> Table {
        assert_eq!(self.shape(), other.shape());
        Table {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }
}

macro_rules! table_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub Table);

        impl $name {
            pub fn zeros(n_states: usize, n_actions: usize) -> Self {
                Self(Table::zeros(n_states, n_actions))
            }

            pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
                Table::from_rows(rows).map(Self)
            }

            pub fn n_states(&self) -> usize {
                self.0.rows()
            }

            pub fn n_actions(&self) -> usize {
                self.0.cols()
            }
        }

        impl std::ops::Deref for $name {
            type Target = Table;
            fn deref(&self) -> &Table {
                &self.0
            }
        }

        impl std::ops::DerefMut for $name {
            fn deref_mut(&mut self) -> &mut Table {
                &mut self.0
            }
        }
    };
}

table_newtype!(
    /// Soft action values `Q(s, a)`.
    QTable
);
table_newtype!(
    /// Pre-softmax policy scores.
    Logits
);
table_newtype!(
    /// Per-state action distributions.
    PolicyTable
);

impl PolicyTable {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self(Table::filled(n_states, n_actions, 1.0 / n_actions as f64))
    }

    /// Builds a policy after checking that every row is a distribution.
    pub fn new(table: Table) -> Result<Self> {
        for row in table.iter_rows() {
            check_distribution(row)?;
        }
        Ok(Self(table))
    }

    /// Deterministic policy picking `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let mut t = Table::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            t.set(s, a, 1.0);
        }
        Self(t)
    }

    /// Greedy action per state; ties go to the lowest index.
    pub fn argmax_actions(&self) -> Vec<usize> {
        self.iter_rows().map(argmax).collect()
    }

    /// `max_s || self(s) - other(s) ||_1`.
    pub fn max_l1_dist(&self, other: &PolicyTable) -> f64 {
        self.iter_rows()
            .zip(other.iter_rows())
            .map(|(p, q)| p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Per-state values `V(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VTable(pub Vec<f64>);

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) const DIST_TOL: f64 = 1e-12;

pub fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(PmdError::NotADistribution);
    }
    let sum: f64 = p.iter().sum();
    // rows built by normalisation can sit a few ulps past 1e-12 for wide rows
    if (sum - 1.0).abs() > DIST_TOL.max(4.0 * f64::EPSILON * p.len() as f64) {
        return Err(PmdError::NotADistribution);
    }
    Ok(())
}
