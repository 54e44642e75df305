//! Sparse real vectors for image coordinates.
//!
//! The patch map `H` lives in a space whose dimension is the color count
//! times the patch dimension, but each point touches only the few blocks of
//! the cubes whose `Q**` contains it.

use serde::{Deserialize, Serialize};

/// A sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dense(values: &[f64]) -> Self {
        let mut v = Self::new();
        for (i, &x) in values.iter().enumerate() {
            v.push(i as u32, x);
        }
        v
    }

    /// Entries in any order; repeated indices are summed.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut v = Self::new();
        let mut it = pairs.into_iter().peekable();
        while let Some((i, mut x)) = it.next() {
            while let Some(&(j, y)) = it.peek() {
                if j != i {
                    break;
                }
                x += y;
                it.next();
            }
            v.push(i, x);
        }
        v
    }

    /// Append an entry; indices must be pushed in increasing order.
    pub fn push(&mut self, i: u32, x: f64) {
        debug_assert!(self.idx.last().map_or(true, |&l| l < i));
        if x != 0.0 {
            self.idx.push(i);
            self.val.push(x);
        }
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }

    pub fn get(&self, i: u32) -> f64 {
        self.idx.binary_search(&i).map_or(0.0, |k| self.val[k])
    }

    /// One past the largest stored index.
    pub fn support_end(&self) -> usize {
        self.idx.last().map_or(0, |&i| i as usize + 1)
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (i, x) in self.iter() {
            if (i as usize) < dim {
                out[i as usize] = x;
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.val.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// All indices shifted by `offset`.
    pub fn shifted(&self, offset: u32) -> Self {
        Self {
            idx: self.idx.iter().map(|i| i + offset).collect(),
            val: self.val.clone(),
        }
    }

    /// Concatenate with `other` placed after index `offset`
    /// (`self` must be supported below `offset`).
    pub fn concat(&self, other: &SparseVec, offset: u32) -> Self {
        debug_assert!(self.support_end() <= offset as usize);
        let mut out = self.clone();
        out.idx.extend(other.idx.iter().map(|i| i + offset));
        out.val.extend_from_slice(&other.val);
        out
    }

    /// Squared Euclidean distance by merging the two index lists.
    pub fn dist2(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.idx.len() && b < other.idx.len() {
            match self.idx[a].cmp(&other.idx[b]) {
                std::cmp::Ordering::Less => {
                    acc += self.val[a] * self.val[a];
                    a += 1;
                }
                std::cmp::Ordering::Greater => {
                    acc += other.val[b] * other.val[b];
                    b += 1;
                }
                std::cmp::Ordering::Equal => {
                    let d = self.val[a] - other.val[b];
                    acc += d * d;
                    a += 1;
                    b += 1;
                }
            }
        }
        acc += self.val[a..].iter().map(|x| x * x).sum::<f64>();
        acc += other.val[b..].iter().map(|x| x * x).sum::<f64>();
        acc
    }

    pub fn dist(&self, other: &SparseVec) -> f64 {
        self.dist2(other).sqrt()
    }
}
