//! Matrix-multiply kernels. Three layouts cover forward and both backward
//! products without materializing transposes:
//!
//! * `matmul_nn`: C[m,n] = A[m,k] * B[k,n]
//! * `matmul_nt`: C[m,k] = A[m,n] * B[k,n]^T   (dA = G * B^T)
//! * `matmul_tn`: C[k,n] = A[m,k]^T * G[m,n]   (dB = A^T * G)
//!
//! Each output row is produced by one serial loop, so results are identical
//! for any thread count. Inner loops are written so LLVM can vectorize them
//! without float reassociation.

use super::Element;
use rayon::prelude::*;

/// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_FLOP_THRESHOLD: usize = 1 << 16;

fn parallel_rows<T, F>(c: &mut [T], n: usize, flops: usize, f: F)
where
    T: Element,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if flops >= PAR_FLOP_THRESHOLD && rayon::current_num_threads() > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .with_min_len(8)
            .for_each(|(i, row)| f(i, row));
    } else {
        for (i, row) in c.chunks_mut(n).enumerate() {
            f(i, row);
        }
    }
}

/// C[m,n] = A[m,k] * B[k,n]. `c` is overwritten.
pub fn matmul_nn<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    parallel_rows(c, n, m * k * n, |i, c_row| {
        let c_row = &mut c_row[..n];
        for v in c_row.iter_mut() {
            *v = T::ZERO;
        }
        let a_row = &a[i * k..(i + 1) * k];
        let mut kk = 0;
        while kk + 4 <= k {
            let a0 = a_row[kk];
            let a1 = a_row[kk + 1];
            let a2 = a_row[kk + 2];
            let a3 = a_row[kk + 3];
            let b0 = &b[kk * n..kk * n + n];
            let b1 = &b[(kk + 1) * n..(kk + 1) * n + n];
            let b2 = &b[(kk + 2) * n..(kk + 2) * n + n];
            let b3 = &b[(kk + 3) * n..(kk + 3) * n + n];
            for j in 0..n {
                c_row[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            kk += 4;
        }
        while kk < k {
            let av = a_row[kk];
            let b_row = &b[kk * n..kk * n + n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
            kk += 1;
        }
    });
}

/// `matmul_nn` with a strictly sequential k reduction: products enter each
/// accumulator one at a time, in index order. A row's result is then
/// unchanged by trailing k positions whose multipliers are exact zeros,
/// which the blocked kernel above does not guarantee (its groups of four
/// regroup partial sums around the zero boundary). The attention context
/// product runs through here so cached decoding replays batch bits; the
/// dense projections keep the faster blocked kernel.
pub fn matmul_nn_seq<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    parallel_rows(c, n, m * k * n, |i, c_row| {
        let c_row = &mut c_row[..n];
        for v in c_row.iter_mut() {
            *v = T::ZERO;
        }
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..kk * n + n];
            for j in 0..n {
                c_row[j] += *av * b_row[j];
            }
        }
    });
}

/// C[m,k] = A[m,n] * B[k,n]^T, i.e. C[i][j] = dot(A row i, B row j).
pub fn matmul_nt<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    assert_eq!(a.len(), m * n);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * k);
    parallel_rows(c, k, m * k * n, |i, c_row| {
        let a_row = &a[i * n..(i + 1) * n];
        for (j, out) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * n..(j + 1) * n];
            // Eight independent accumulators so the reduction vectorizes
            // while keeping a fixed summation order.
            let mut acc = [T::ZERO; 8];
            let mut chunks_a = a_row.chunks_exact(8);
            let mut chunks_b = b_row.chunks_exact(8);
            for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
                for l in 0..8 {
                    acc[l] += ca[l] * cb[l];
                }
            }
            let mut tail = T::ZERO;
            for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
                tail += *x * *y;
            }
            let s01 = acc[0] + acc[1];
            let s23 = acc[2] + acc[3];
            let s45 = acc[4] + acc[5];
            let s67 = acc[6] + acc[7];
            *out = ((s01 + s23) + (s45 + s67)) + tail;
        }
    });
}

/// C[k,n] = A[m,k]^T * G[m,n]. Parallel over the k output rows; each task
/// scans the full G once.
pub fn matmul_tn<T: Element>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(g.len(), m * n);
    assert_eq!(c.len(), k * n);
    parallel_rows(c, n, m * k * n, |kk, c_row| {
        let c_row = &mut c_row[..n];
        for v in c_row.iter_mut() {
            *v = T::ZERO;
        }
        for i in 0..m {
            let av = a[i * k + kk];
            let g_row = &g[i * n..i * n + n];
            for j in 0..n {
                c_row[j] += av * g_row[j];
            }
        }
    });
}
