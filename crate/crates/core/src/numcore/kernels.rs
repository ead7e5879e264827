//! Slice-level row-major kernels used by the model's forward and backward
//! passes. All of them accumulate into the output buffer.

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators so the loop vectorizes; order is fixed so results are
    // reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `c (m×n) += a (m×k) · b (k×n)`
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    const MR: usize = 4;
    const NR: usize = 8;
    let m_main = m - m % MR;
    let n_main = n - n % NR;
    // 4×8 register tiles accumulated over the full inner dimension.
    for i in (0..m_main).step_by(MR) {
        let a_blk = &a[i * k..(i + MR) * k];
        let (a0, rest) = a_blk.split_at(k);
        let (a1, rest) = rest.split_at(k);
        let (a2, a3) = rest.split_at(k);
        for j in (0..n_main).step_by(NR) {
            let mut acc = [[0.0f64; NR]; MR];
            for (p, b_row) in b.chunks_exact(n).enumerate() {
                let bp: &[f64; NR] = b_row[j..j + NR].try_into().unwrap();
                let av = [a0[p], a1[p], a2[p], a3[p]];
                for r in 0..MR {
                    for c in 0..NR {
                        acc[r][c] += av[r] * bp[c];
                    }
                }
            }
            for (r, acc_r) in acc.iter().enumerate() {
                let c_row = &mut c[(i + r) * n + j..(i + r) * n + j + NR];
                for (cv, x) in c_row.iter_mut().zip(acc_r) {
                    *cv += x;
                }
            }
        }
    }
    // Ragged edges.
    if n_main < n {
        for i in 0..m_main {
            let c_row = &mut c[i * n + n_main..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                axpy(av, &b[p * n + n_main..(p + 1) * n], c_row);
            }
        }
    }
    for i in m_main..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            axpy(aip, &b[p * n..(p + 1) * n], c_row);
        }
    }
}

/// `c (k×n) += aᵀ · b` with `a (m×k)`, `b (m×n)`.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip != 0.0 {
                axpy(aip, b_row, &mut c[p * n..(p + 1) * n]);
            }
        }
    }
}

/// `c (m×n) += a · bᵀ` with `a (m×k)`, `b (n×k)`.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Adds `bias` to every row of `x (m×n)`.
pub fn add_row_bias(x: &mut [f64], bias: &[f64]) {
    let n = bias.len();
    for row in x.chunks_exact_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// `out (n) += Σ_rows x (m×n)`
pub fn col_sums_acc(x: &[f64], out: &mut [f64]) {
    let n = out.len();
    for row in x.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}
