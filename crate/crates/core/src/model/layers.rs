//! Dense kernels for the convolutional front end. Tensors are flat row-major
//! buffers in `[batch, channel, freq, time]` order.

/// `c = alpha * op(a) * op(b) + beta * c` for row-major `a` (m x k, or k x m
/// when `a_t`), `b` (k x n, or n x k when `b_t`) and `c` (m x n).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds above cover every element addressed by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds 3x3 same-padded neighbourhoods of `x` (`[cin, h, w]`) into
/// `cols` (`[cin * 9, h * w]`).
pub(crate) fn im2col(x: &[f64], cin: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for c in 0..cin {
        let src = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                let dx = kx as isize - 1;
                let (x0, x1) = (dx.min(0).unsigned_abs(), w - dx.max(0) as usize);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let s = &src[sy as usize * w..(sy as usize + 1) * w];
                    dst[..x0].fill(0.0);
                    dst[x1..].fill(0.0);
                    let lo = (x0 as isize + dx) as usize;
                    dst[x0..x1].copy_from_slice(&s[lo..lo + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `dx`.
pub(crate) fn col2im(cols: &[f64], cin: usize, h: usize, w: usize, dx_out: &mut [f64]) {
    let hw = h * w;
    for c in 0..cin {
        let dst = &mut dx_out[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * hw..(c * 9 + ky * 3 + kx + 1) * hw];
                let dx = kx as isize - 1;
                let (x0, x1) = (dx.min(0).unsigned_abs(), w - dx.max(0) as usize);
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let lo = (x0 as isize + dx) as usize;
                    let d = &mut dst[sy as usize * w + lo..sy as usize * w + lo + (x1 - x0)];
                    for (o, &v) in d.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *o += v;
                    }
                }
            }
        }
    }
}

/// Non-overlapping max pooling with floor semantics; records the flat input
/// index of each maximum.
pub(crate) fn maxpool_forward(
    x: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    (kh, kw): (usize, usize),
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / kh, w / kw);
    for c in 0..channels {
        let base = c * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0usize;
                for dy in 0..kh {
                    let row = base + (oy * kh + dy) * w + ox * kw;
                    for dx in 0..kw {
                        let v = x[row + dx];
                        if v > best {
                            best = v;
                            best_i = row + dx;
                        }
                    }
                }
                let o = c * oh * ow + oy * ow + ox;
                out[o] = best;
                argmax[o] = best_i as u32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, 1.0, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, 1.0, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        let (cin, h, w) = (2, 4, 5);
        let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let k: Vec<f64> = (0..cin * 9).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; cin * 9 * h * w];
        im2col(&x, cin, h, w, &mut cols);
        let mut out = vec![0.0; h * w];
        gemm(1, cin * 9, h * w, 1.0, &k, false, &cols, false, 0.0, &mut out);
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for c in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                acc += k[c * 9 + ky * 3 + kx]
                                    * x[c * h * w + sy as usize * w + sx as usize];
                            }
                        }
                    }
                }
                assert!((acc - out[y * w + xx]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (cin, h, w) = (3, 5, 4);
        let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..cin * 9 * h * w).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, cin, h, w, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, cin, h, w, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn pooling_floors_odd_sizes() {
        let x: Vec<f64> = (0..5 * 9).map(|i| i as f64).collect();
        let mut out = vec![0.0; 2 * 2];
        let mut arg = vec![0u32; 4];
        maxpool_forward(&x, 1, 5, 9, (2, 4), &mut out, &mut arg);
        assert_eq!(out, vec![12.0, 16.0, 30.0, 34.0]);
        assert_eq!(arg, vec![12, 16, 30, 34]);
    }
}
