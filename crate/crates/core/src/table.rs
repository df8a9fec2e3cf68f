//! Dense state-action tables.

use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major real table indexed by `(state, action)`.
///
/// Serialized as a JSON array of per-state rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Table {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            data: vec![value; n_states * n_actions],
        }
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                data.push(f(s, a));
            }
        }
        Self {
            n_states,
            n_actions,
            data,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::Configuration("ragged table rows".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.data[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn same_shape(&self, other: &Table) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Table, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += scale * y;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Table {
        Table {
            n_states: self.n_states,
            n_actions: self.n_actions,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Table, f: impl Fn(f64, f64) -> f64) -> Table {
        debug_assert!(self.same_shape(other));
        Table {
            n_states: self.n_states,
            n_actions: self.n_actions,
            data: self.data.iter().zip(&other.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    /// Sup-norm distance to another table of the same shape.
    pub fn max_abs_diff(&self, other: &Table) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_actions.max(1))
    }
}

impl Index<(usize, usize)> for Table {
    type Output = f64;

    fn index(&self, (s, a): (usize, usize)) -> &f64 {
        &self.data[s * self.n_actions + a]
    }
}

impl IndexMut<(usize, usize)> for Table {
    fn index_mut(&mut self, (s, a): (usize, usize)) -> &mut f64 {
        &mut self.data[s * self.n_actions + a]
    }
}

impl From<Table> for Vec<Vec<f64>> {
    fn from(t: Table) -> Self {
        t.rows().map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Table {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Table::from_rows(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_is_nested_rows() {
        let t = Table::from_fn(2, 3, |s, a| (s * 3 + a) as f64);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, "[[0.0,1.0,2.0],[3.0,4.0,5.0]]");
        let back: Table = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(serde_json::from_str::<Table>("[[1.0],[1.0,2.0]]").is_err());
    }
}
