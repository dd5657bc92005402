//! Single-direction LSTM over a short sequence, with backpropagation through
//! time. Gate order follows the usual `i, f, g, o` packing.

use std::ops::Range;

use super::layers::gemm;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LstmIdx {
    pub w_ih: Range<usize>,
    pub w_hh: Range<usize>,
    pub b_ih: Range<usize>,
    pub b_hh: Range<usize>,
    pub input: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SeqDims {
    pub steps: usize,
    pub batch: usize,
    pub hidden: usize,
}

/// Activations kept for the backward pass; all `[steps, batch, ...]`.
#[derive(Debug, Clone)]
pub(crate) struct LstmDirCache {
    /// Activated gates, `4 * hidden` wide.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn step_order(steps: usize, reverse: bool) -> impl DoubleEndedIterator<Item = usize> {
    (0..steps).map(move |s| if reverse { steps - 1 - s } else { s })
}

/// Runs one direction over `x` (`[steps, batch, input]`).
pub(crate) fn forward(
    params: &[f64],
    idx: &LstmIdx,
    x: &[f64],
    d: SeqDims,
    reverse: bool,
) -> LstmDirCache {
    let (t_n, b_n, h_n) = (d.steps, d.batch, d.hidden);
    let g4 = 4 * h_n;
    let mut pre = vec![0.0; t_n * b_n * g4];
    gemm(t_n * b_n, idx.input, g4, 1.0, x, false, &params[idx.w_ih.clone()], true, 0.0, &mut pre);
    let b_ih = &params[idx.b_ih.clone()];
    let b_hh = &params[idx.b_hh.clone()];
    for row in pre.chunks_exact_mut(g4) {
        for j in 0..g4 {
            row[j] += b_ih[j] + b_hh[j];
        }
    }

    let w_hh = &params[idx.w_hh.clone()];
    let mut c = vec![0.0; t_n * b_n * h_n];
    let mut tanh_c = vec![0.0; t_n * b_n * h_n];
    let mut h = vec![0.0; t_n * b_n * h_n];
    let mut prev: Option<usize> = None;
    for t in step_order(t_n, reverse) {
        let g = &mut pre[t * b_n * g4..(t + 1) * b_n * g4];
        if let Some(p) = prev {
            gemm(b_n, h_n, g4, 1.0, &h[p * b_n * h_n..(p + 1) * b_n * h_n], false, w_hh, true, 1.0, g);
        }
        for b in 0..b_n {
            let gr = &mut g[b * g4..(b + 1) * g4];
            for j in 0..h_n {
                let i_g = sigmoid(gr[j]);
                let f_g = sigmoid(gr[h_n + j]);
                let g_g = gr[2 * h_n + j].tanh();
                let o_g = sigmoid(gr[3 * h_n + j]);
                gr[j] = i_g;
                gr[h_n + j] = f_g;
                gr[2 * h_n + j] = g_g;
                gr[3 * h_n + j] = o_g;
                let c_prev = prev.map_or(0.0, |p| c[(p * b_n + b) * h_n + j]);
                let cell = f_g * c_prev + i_g * g_g;
                let o = (t * b_n + b) * h_n + j;
                c[o] = cell;
                tanh_c[o] = cell.tanh();
                h[o] = o_g * tanh_c[o];
            }
        }
        prev = Some(t);
    }
    LstmDirCache {
        gates: pre,
        c,
        tanh_c,
        h,
    }
}

/// Backpropagates `dh_out` (gradient w.r.t. every emitted hidden state) through
/// one direction, accumulating parameter gradients into `grads` and input
/// gradients into `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    params: &[f64],
    idx: &LstmIdx,
    x: &[f64],
    cache: &LstmDirCache,
    dh_out: &[f64],
    d: SeqDims,
    reverse: bool,
    grads: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let (t_n, b_n, h_n) = (d.steps, d.batch, d.hidden);
    let g4 = 4 * h_n;
    let w_hh = &params[idx.w_hh.clone()];
    let mut dgates = vec![0.0; t_n * b_n * g4];
    let mut dh_next = vec![0.0; b_n * h_n];
    let mut dc_next = vec![0.0; b_n * h_n];

    let order: Vec<usize> = step_order(t_n, reverse).collect();
    for s in (0..t_n).rev() {
        let t = order[s];
        let prev = (s > 0).then(|| order[s - 1]);
        {
            let dg = &mut dgates[t * b_n * g4..(t + 1) * b_n * g4];
            for b in 0..b_n {
                let gr = &cache.gates[(t * b_n + b) * g4..(t * b_n + b + 1) * g4];
                for j in 0..h_n {
                    let o = (t * b_n + b) * h_n + j;
                    let (i_g, f_g, g_g, o_g) = (gr[j], gr[h_n + j], gr[2 * h_n + j], gr[3 * h_n + j]);
                    let dh = dh_out[o] + dh_next[b * h_n + j];
                    let tc = cache.tanh_c[o];
                    let dc = dh * o_g * (1.0 - tc * tc) + dc_next[b * h_n + j];
                    let c_prev = prev.map_or(0.0, |p| cache.c[(p * b_n + b) * h_n + j]);
                    let row = &mut dg[b * g4..(b + 1) * g4];
                    row[j] = dc * g_g * i_g * (1.0 - i_g);
                    row[h_n + j] = dc * c_prev * f_g * (1.0 - f_g);
                    row[2 * h_n + j] = dc * i_g * (1.0 - g_g * g_g);
                    row[3 * h_n + j] = dh * tc * o_g * (1.0 - o_g);
                    dc_next[b * h_n + j] = dc * f_g;
                }
            }
        }
        let dg = &dgates[t * b_n * g4..(t + 1) * b_n * g4];
        if let Some(p) = prev {
            let h_prev = &cache.h[p * b_n * h_n..(p + 1) * b_n * h_n];
            gemm(g4, b_n, h_n, 1.0, dg, true, h_prev, false, 1.0, &mut grads[idx.w_hh.clone()]);
            gemm(b_n, g4, h_n, 1.0, dg, false, w_hh, false, 0.0, &mut dh_next);
        } else {
            dh_next.fill(0.0);
        }
    }

    gemm(g4, t_n * b_n, idx.input, 1.0, &dgates, true, x, false, 1.0, &mut grads[idx.w_ih.clone()]);
    let mut bias = vec![0.0; g4];
    for row in dgates.chunks_exact(g4) {
        for (acc, v) in bias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for (gi, v) in grads[idx.b_ih.clone()].iter_mut().zip(&bias) {
        *gi += v;
    }
    for (gi, v) in grads[idx.b_hh.clone()].iter_mut().zip(&bias) {
        *gi += v;
    }
    if let Some(dx) = dx {
        gemm(t_n * b_n, g4, idx.input, 1.0, &dgates, false, &params[idx.w_ih.clone()], false, 1.0, dx);
    }
}
