//! Transformer layer primitives: each forward returns the cache its backward
//! needs, and every backward accumulates parameter gradients exactly (no
//! approximations, so finite differences can audit the whole stack).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{add_scaled, col_sum_acc, dot, gemm_nn, gemm_nt, gemm_tn, softmax_in_place, Mat};
use super::{AttentionParams, FfnParams, LayerNormParams};

const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

pub(crate) fn layernorm_fwd(x: &Mat, p: &LayerNormParams) -> (Mat, LnCache) {
    let (r, c) = (x.r, x.c);
    let mut out = Mat::zeros(r, c);
    let mut xhat = Mat::zeros(r, c);
    let mut inv_std = Vec::with_capacity(r);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let isd = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(isd);
        let xh = xhat.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            xh[j] = (v - mean) * isd;
        }
        let o = out.row_mut(i);
        for j in 0..c {
            o[j] = p.gain[j] * xh[j] + p.bias[j];
        }
    }
    (out, LnCache { xhat, inv_std })
}

pub(crate) fn layernorm_bwd(
    dy: &Mat,
    cache: &LnCache,
    p: &LayerNormParams,
    gp: &mut LayerNormParams,
) -> Mat {
    let (r, c) = (dy.r, dy.c);
    let mut dx = Mat::zeros(r, c);
    for i in 0..r {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..c {
            gp.gain[j] += dyr[j] * xh[j];
            gp.bias[j] += dyr[j];
            let dxh = dyr[j] * p.gain[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= c as f64;
        mean_dxh_xh /= c as f64;
        let isd = cache.inv_std[i];
        let dxr = dx.row_mut(i);
        for j in 0..c {
            let dxh = dyr[j] * p.gain[j];
            dxr[j] = isd * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    dx
}

pub(crate) struct AttnCache {
    q: Mat,
    k: Mat,
    v: Mat,
    /// Attention probabilities, rows grouped head-major: row `h * lq + i`.
    probs: Mat,
    concat: Mat,
}

pub(crate) fn mha_fwd(xq: &Mat, xkv: &Mat, p: &AttentionParams, nh: usize) -> (Mat, AttnCache) {
    let d = xq.c;
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let (lq, lk) = (xq.r, xkv.r);

    let mut q = Mat::zeros(lq, d);
    let mut k = Mat::zeros(lk, d);
    let mut v = Mat::zeros(lk, d);
    gemm_nn(&mut q.v, &xq.v, &p.wq, lq, d, d, false);
    gemm_nn(&mut k.v, &xkv.v, &p.wk, lk, d, d, false);
    gemm_nn(&mut v.v, &xkv.v, &p.wv, lk, d, d, false);

    let mut probs = Mat::zeros(nh * lq, lk);
    for h in 0..nh {
        let hs = h * dh;
        for i in 0..lq {
            let qrow = &q.row(i)[hs..hs + dh];
            let prow = probs.row_mut(h * lq + i);
            for j in 0..lk {
                prow[j] = scale * dot(qrow, &k.row(j)[hs..hs + dh]);
            }
            softmax_in_place(prow);
        }
    }

    let mut concat = Mat::zeros(lq, d);
    for h in 0..nh {
        let hs = h * dh;
        for i in 0..lq {
            let prow = probs.row(h * lq + i);
            let orow = &mut concat.row_mut(i)[hs..hs + dh];
            for j in 0..lk {
                add_scaled(orow, &v.row(j)[hs..hs + dh], prow[j]);
            }
        }
    }

    let mut out = Mat::zeros(lq, d);
    gemm_nn(&mut out.v, &concat.v, &p.wo, lq, d, d, false);
    (out, AttnCache { q, k, v, probs, concat })
}

/// `dxkv: None` means self-attention: key/value input gradients accumulate
/// into `dxq`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mha_bwd(
    dout: &Mat,
    xq: &Mat,
    xkv: &Mat,
    p: &AttentionParams,
    cache: &AttnCache,
    nh: usize,
    gp: &mut AttentionParams,
    dxq: &mut Mat,
    dxkv: Option<&mut Mat>,
) {
    let d = xq.c;
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let (lq, lk) = (xq.r, xkv.r);

    let mut dconcat = Mat::zeros(lq, d);
    gemm_nt(&mut dconcat.v, &dout.v, &p.wo, lq, d, d, false);
    gemm_tn(&mut gp.wo, &cache.concat.v, &dout.v, lq, d, d, true);

    let mut dq = Mat::zeros(lq, d);
    let mut dk = Mat::zeros(lk, d);
    let mut dv = Mat::zeros(lk, d);
    let mut dp = vec![0.0f64; lk];
    for h in 0..nh {
        let hs = h * dh;
        for i in 0..lq {
            let prow = cache.probs.row(h * lq + i);
            let dorow = &dconcat.row(i)[hs..hs + dh];
            for j in 0..lk {
                dp[j] = dot(dorow, &cache.v.row(j)[hs..hs + dh]);
                add_scaled(&mut dv.row_mut(j)[hs..hs + dh], dorow, prow[j]);
            }
            let inner: f64 = dp.iter().zip(prow).map(|(&a, &b)| a * b).sum();
            let qrow: Vec<f64> = cache.q.row(i)[hs..hs + dh].to_vec();
            for j in 0..lk {
                let ds = prow[j] * (dp[j] - inner) * scale;
                add_scaled(&mut dq.row_mut(i)[hs..hs + dh], &cache.k.row(j)[hs..hs + dh], ds);
                add_scaled(&mut dk.row_mut(j)[hs..hs + dh], &qrow, ds);
            }
        }
    }

    gemm_nt(&mut dxq.v, &dq.v, &p.wq, lq, d, d, true);
    gemm_tn(&mut gp.wq, &xq.v, &dq.v, lq, d, d, true);
    match dxkv {
        Some(dxkv) => {
            gemm_nt(&mut dxkv.v, &dk.v, &p.wk, lk, d, d, true);
            gemm_nt(&mut dxkv.v, &dv.v, &p.wv, lk, d, d, true);
        }
        None => {
            gemm_nt(&mut dxq.v, &dk.v, &p.wk, lk, d, d, true);
            gemm_nt(&mut dxq.v, &dv.v, &p.wv, lk, d, d, true);
        }
    }
    gemm_tn(&mut gp.wk, &xkv.v, &dk.v, lk, d, d, true);
    gemm_tn(&mut gp.wv, &xkv.v, &dv.v, lk, d, d, true);
}

pub(crate) struct FfnCache {
    /// Post-ReLU hidden activations; positivity doubles as the ReLU mask.
    h: Mat,
}

pub(crate) fn ffn_fwd(x: &Mat, p: &FfnParams) -> (Mat, FfnCache) {
    let (l, d) = (x.r, x.c);
    let f = p.b1.len();
    let mut h = Mat::zeros(l, f);
    gemm_nn(&mut h.v, &x.v, &p.w1, l, d, f, false);
    for i in 0..l {
        for (hv, &b) in h.row_mut(i).iter_mut().zip(&p.b1) {
            *hv = (*hv + b).max(0.0);
        }
    }
    let mut out = Mat::zeros(l, d);
    gemm_nn(&mut out.v, &h.v, &p.w2, l, f, d, false);
    for i in 0..l {
        for (ov, &b) in out.row_mut(i).iter_mut().zip(&p.b2) {
            *ov += b;
        }
    }
    (out, FfnCache { h })
}

pub(crate) fn ffn_bwd(
    dout: &Mat,
    x: &Mat,
    p: &FfnParams,
    cache: &FfnCache,
    gp: &mut FfnParams,
    dx: &mut Mat,
) {
    let (l, d) = (x.r, x.c);
    let f = p.b1.len();
    col_sum_acc(&mut gp.b2, &dout.v, l, d);
    gemm_tn(&mut gp.w2, &cache.h.v, &dout.v, l, f, d, true);
    let mut dh = Mat::zeros(l, f);
    gemm_nt(&mut dh.v, &dout.v, &p.w2, l, d, f, false);
    for (dv, &hv) in dh.v.iter_mut().zip(&cache.h.v) {
        if hv <= 0.0 {
            *dv = 0.0;
        }
    }
    col_sum_acc(&mut gp.b1, &dh.v, l, f);
    gemm_tn(&mut gp.w1, &x.v, &dh.v, l, d, f, true);
    gemm_nt(&mut dx.v, &dh.v, &p.w1, l, f, d, true);
}

/// Inverted dropout; returns the mask only when active, so eval-mode forward
/// passes are mask-free.
pub(crate) fn dropout_fwd(x: &mut Mat, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = x
        .v
        .iter()
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
        .collect();
    for (xv, &m) in x.v.iter_mut().zip(&mask) {
        *xv *= m;
    }
    Some(mask)
}

pub(crate) fn dropout_bwd(dx: &mut Mat, mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (dv, &mv) in dx.v.iter_mut().zip(m) {
            *dv *= mv;
        }
    }
}

/// One post-LN residual block tail: `y = LN(x + dropout(sub_out))`.
pub(crate) struct SubCache {
    pub x_in: Mat,
    drop: Option<Vec<f64>>,
    ln: LnCache,
}

pub(crate) fn residual_ln_fwd(
    x: Mat,
    mut sub_out: Mat,
    p: &LayerNormParams,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (Mat, SubCache) {
    let drop = dropout_fwd(&mut sub_out, rate, rng);
    for (zv, &xv) in sub_out.v.iter_mut().zip(&x.v) {
        *zv += xv;
    }
    let (out, ln) = layernorm_fwd(&sub_out, p);
    (out, SubCache { x_in: x, drop, ln })
}

/// Returns `(dz, d_sub_out)`: `dz` flows on through the residual identity
/// branch, `d_sub_out` feeds the sublayer's own backward.
pub(crate) fn residual_ln_bwd(
    dy: &Mat,
    cache: &SubCache,
    p: &LayerNormParams,
    gp: &mut LayerNormParams,
) -> (Mat, Mat) {
    let dz = layernorm_bwd(dy, &cache.ln, p, gp);
    let mut dsub = dz.clone();
    dropout_bwd(&mut dsub, &cache.drop);
    (dz, dsub)
}
