//! Square attention masks.

use super::{Result, TensorError};

/// 0/1 visibility matrix over a token sequence. `allowed(i, j)` says whether
/// the query at position `i` may attend to the key at position `j`.
///
/// Invariant: the diagonal is always allowed, so no softmax row is empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allow: Vec<u8>,
}

impl AttentionMask {
    /// Strictly autoregressive: position `i` sees positions `0..=i`.
    pub fn causal(n: usize) -> Self {
        let mut allow = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..=i {
                allow[i * n + j] = 1;
            }
        }
        Self { n, allow }
    }

    /// Causal everywhere, except that the first `prefix_len` positions see
    /// each other bidirectionally: allowed iff `j <= i` or both `i` and `j`
    /// fall inside the prefix block.
    pub fn prefix(prefix_len: usize, n: usize) -> Result<Self> {
        if prefix_len > n {
            return Err(TensorError::Invalid {
                op: "mask.prefix",
                detail: format!("prefix_len {prefix_len} exceeds sequence length {n}"),
            });
        }
        let mut mask = Self::causal(n);
        for i in 0..prefix_len {
            for j in 0..prefix_len {
                mask.allow[i * n + j] = 1;
            }
        }
        Ok(mask)
    }

    /// Fully bidirectional.
    pub fn full(n: usize) -> Self {
        Self {
            n,
            allow: vec![1u8; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.n + j] != 0
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.allow[i * self.n..(i + 1) * self.n]
    }

    /// Dense 0/1 rows, for tests and debugging.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }
}
