//! Raw loops behind the tape primitives.
//!
//! Every output element accumulates its terms in a fixed order that does not
//! depend on how many rows are in the batch, so a sample evaluated alone or
//! inside a batch yields bit-identical values.

use crate::par;

/// Minimum number of multiply-adds before a matmul is split across threads.
const PAR_THRESHOLD: usize = 1 << 16;

fn row_chunk(rows: usize, work_per_row: usize) -> usize {
    if rows * work_per_row < PAR_THRESHOLD {
        rows.max(1)
    } else {
        (PAR_THRESHOLD / work_per_row.max(1)).clamp(1, rows)
    }
}

/// Rows of the left operand processed per sweep over the right operand.
const ROW_BLOCK: usize = 8;

/// `c += Σ_t w[t]·rows[t]`, adding the terms in order `t = 0, 1, …` for
/// every element.
#[inline]
fn axpy4(c: &mut [f64], w: [f64; 4], rows: [&[f64]; 4]) {
    let n = c.len();
    let (r0, r1, r2, r3) = (&rows[0][..n], &rows[1][..n], &rows[2][..n], &rows[3][..n]);
    for j in 0..n {
        let mut v = c[j];
        v += w[0] * r0[j];
        v += w[1] * r1[j];
        v += w[2] * r2[j];
        v += w[3] * r3[j];
        c[j] = v;
    }
}

#[inline]
fn axpy(c: &mut [f64], w: f64, row: &[f64]) {
    for (cv, &x) in c.iter_mut().zip(row) {
        *cv += w * x;
    }
}

/// Dot product with four interleaved partial sums, combined as
/// `(s0 + s1) + (s2 + s3)` before the tail. The order depends only on the
/// length.
#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let split = n - n % 4;
    let mut s = [0.0f64; 4];
    for (xc, yc) in x[..split].chunks_exact(4).zip(y[..split].chunks_exact(4)) {
        for t in 0..4 {
            s[t] += xc[t] * yc[t];
        }
    }
    let mut total = (s[0] + s[1]) + (s[2] + s[3]);
    for j in split..n {
        total += x[j] * y[j];
    }
    total
}

/// `c[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    let rows = row_chunk(m, k * n);
    par::for_each_chunk_mut(&mut c, rows * n, |ci, chunk| {
        let r0 = ci * rows;
        for (ri, crow) in chunk.chunks_mut(n).enumerate() {
            let arow = &a[(r0 + ri) * k..(r0 + ri + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                if av != 0.0 {
                    axpy(crow, av, &b[p * n..(p + 1) * n]);
                }
            }
        }
    });
    c
}

/// `c[m×k] = g[m×n] · b[k×n]ᵀ`.
pub fn matmul_b_t(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    let rows = row_chunk(m, k * n);
    par::for_each_chunk_mut(&mut c, rows * k, |ci, chunk| {
        let r0 = ci * rows;
        for (bi, block) in chunk.chunks_mut(ROW_BLOCK * k).enumerate() {
            let first = r0 + bi * ROW_BLOCK;
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                for (ri, crow) in block.chunks_mut(k).enumerate() {
                    crow[p] = dot(&g[(first + ri) * n..(first + ri + 1) * n], brow);
                }
            }
        }
    });
    c
}

/// `c[k×n] = a[m×k]ᵀ · g[m×n]`.
pub fn matmul_a_t(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    let rows = row_chunk(k, m * n);
    let split = m - m % 4;
    par::for_each_chunk_mut(&mut c, rows * n, |ci, chunk| {
        let p0 = ci * rows;
        for (pi, crow) in chunk.chunks_mut(n).enumerate() {
            let p = p0 + pi;
            for i in (0..split).step_by(4) {
                let w = [0, 1, 2, 3].map(|t| a[(i + t) * k + p]);
                let grows = [0, 1, 2, 3].map(|t| &g[(i + t) * n..(i + t + 1) * n]);
                axpy4(crow, w, grows);
            }
            for i in split..m {
                axpy(crow, a[i * k + p], &g[i * n..(i + 1) * n]);
            }
        }
    });
    c
}

/// Geometry of a single-channel valid cross-correlation.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub filters: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        self.height - self.kernel_h + 1
    }

    pub fn out_w(&self) -> usize {
        self.width - self.kernel_w + 1
    }

    pub fn out_len(&self) -> usize {
        self.batch * self.out_h() * self.out_w() * self.filters
    }
}

/// `out[b,y,x,f] = bias[f] + Σ_{dy,dx} input[b,y+dy,x+dx] · kernels[dy,dx,f]`.
pub fn conv2d_forward(g: &ConvGeometry, input: &[f64], kernels: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow, nf) = (g.out_h(), g.out_w(), g.filters);
    let image = g.height * g.width;
    let per_image = oh * ow * nf;
    let mut out = vec![0.0; g.out_len()];
    par::for_each_chunk_mut(&mut out, per_image, |b, dst| {
        let img = &input[b * image..(b + 1) * image];
        for y in 0..oh {
            for x in 0..ow {
                let cell = &mut dst[(y * ow + x) * nf..(y * ow + x + 1) * nf];
                cell.copy_from_slice(bias);
                for dy in 0..g.kernel_h {
                    for dx in 0..g.kernel_w {
                        let v = img[(y + dy) * g.width + x + dx];
                        let krow =
                            &kernels[(dy * g.kernel_w + dx) * nf..(dy * g.kernel_w + dx + 1) * nf];
                        for (o, &kv) in cell.iter_mut().zip(krow) {
                            *o += v * kv;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient of the convolution with respect to its input.
pub fn conv2d_grad_input(g: &ConvGeometry, grad_out: &[f64], kernels: &[f64]) -> Vec<f64> {
    let (oh, ow, nf) = (g.out_h(), g.out_w(), g.filters);
    let image = g.height * g.width;
    let per_image = oh * ow * nf;
    let mut grad = vec![0.0; g.batch * image];
    par::for_each_chunk_mut(&mut grad, image, |b, dst| {
        let go = &grad_out[b * per_image..(b + 1) * per_image];
        for y in 0..oh {
            for x in 0..ow {
                let cell = &go[(y * ow + x) * nf..(y * ow + x + 1) * nf];
                for dy in 0..g.kernel_h {
                    for dx in 0..g.kernel_w {
                        let krow =
                            &kernels[(dy * g.kernel_w + dx) * nf..(dy * g.kernel_w + dx + 1) * nf];
                        let s: f64 = cell.iter().zip(krow).map(|(a, b)| a * b).sum();
                        dst[(y + dy) * g.width + x + dx] += s;
                    }
                }
            }
        }
    });
    grad
}

/// Gradients of the convolution with respect to kernels and bias.
pub fn conv2d_grad_params(
    g: &ConvGeometry,
    input: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (oh, ow, nf) = (g.out_h(), g.out_w(), g.filters);
    let image = g.height * g.width;
    let mut gk = vec![0.0; g.kernel_h * g.kernel_w * nf];
    let mut gb = vec![0.0; nf];
    for b in 0..g.batch {
        let img = &input[b * image..(b + 1) * image];
        let go = &grad_out[b * oh * ow * nf..(b + 1) * oh * ow * nf];
        for y in 0..oh {
            for x in 0..ow {
                let cell = &go[(y * ow + x) * nf..(y * ow + x + 1) * nf];
                for (acc, &c) in gb.iter_mut().zip(cell) {
                    *acc += c;
                }
                for dy in 0..g.kernel_h {
                    for dx in 0..g.kernel_w {
                        let v = img[(y + dy) * g.width + x + dx];
                        let krow =
                            &mut gk[(dy * g.kernel_w + dx) * nf..(dy * g.kernel_w + dx + 1) * nf];
                        for (acc, &c) in krow.iter_mut().zip(cell) {
                            *acc += v * c;
                        }
                    }
                }
            }
        }
    }
    (gk, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_variants_agree_with_loops() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let c = matmul(&a, &b, m, k, n);
        let r = naive(&a, &b, m, k, n);
        for (x, y) in c.iter().zip(&r) {
            assert!((x - y).abs() < 1e-12);
        }
        // a·b then project back: check the transposed helpers against naive transposes
        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let g: Vec<f64> = (0..m * n).map(|i| i as f64 * 0.1 - 0.4).collect();
        let ga = matmul_b_t(&g, &b, m, k, n);
        let ra = naive(&g, &bt, m, n, k);
        for (x, y) in ga.iter().zip(&ra) {
            assert!((x - y).abs() < 1e-12);
        }
        let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
        let gb = matmul_a_t(&a, &g, m, k, n);
        let rb = naive(&at, &g, k, m, n);
        for (x, y) in gb.iter().zip(&rb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rows_do_not_depend_on_batch() {
        let (m, k, n) = (9, 300, 40);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.013).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.029).cos()).collect();
        let full = matmul(&a, &b, m, k, n);
        for i in 0..m {
            let single = matmul(&a[i * k..(i + 1) * k], &b, 1, k, n);
            assert_eq!(&full[i * n..(i + 1) * n], &single[..]);
        }
    }
}
