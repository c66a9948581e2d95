//! Straight-line reference implementations used as test oracles. They use
//! plain loops over `f64` slices and share no code with the library.

#![allow(dead_code)]

use scfnet::model::{Fusion, ModelConfig, Sharing};
use scfnet::nn::ParamStore;
use scfnet::video::Mask;

pub fn param(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    store.get(name).unwrap_or_else(|| panic!("missing parameter {name}")).to_f64_vec()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `[m,k]·[k,n]`, triple loop.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Cross-correlation of `x: [b,c,h,w]` with `wt: [o,c,kh,kw]`, zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    [b, c, h, w]: [usize; 4],
    wt: &[f64],
    [o, kh, kw]: [usize; 3],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * o * oh * ow];
    for bi in 0..b {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[oc]);
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((bi * c + ic) * h + iy as usize) * w + ix as usize];
                                let wv = wt[((oc * c + ic) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((bi * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// 1×1 convolution with bias read from the store (`{name}.w`, `{name}.b`).
pub fn linear_1x1(store: &ParamStore<f64>, name: &str, x: &[f64], [b, c, h, w]: [usize; 4]) -> (Vec<f64>, usize) {
    let wt = param(store, &format!("{name}.w"));
    let o = wt.len() / c;
    let bias = store.get(&format!("{name}.b")).map(|t| t.to_f64_vec());
    let mut out = vec![0.0; b * o * h * w];
    for bi in 0..b {
        for oc in 0..o {
            for p in 0..h * w {
                let mut acc = bias.as_ref().map_or(0.0, |bb| bb[oc]);
                for ic in 0..c {
                    acc += wt[oc * c + ic] * x[(bi * c + ic) * h * w + p];
                }
                out[(bi * o + oc) * h * w + p] = acc;
            }
        }
    }
    (out, o)
}

/// Bilinear resize with half-pixel centres (source coordinate
/// `(dst + 0.5)·in/out − 0.5`, clamped at the low edge), one plane.
pub fn bilinear_plane(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |d: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = (d as f64 + 0.5) * (n_in as f64 / n_out as f64) - 0.5;
        let s = if s < 0.0 { 0.0 } else { s };
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = if lo + 1 < n_in { lo + 1 } else { lo };
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, h, oh);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, w, ow);
            let v00 = src[y0 * w + x0];
            let v01 = src[y0 * w + x1];
            let v10 = src[y1 * w + x0];
            let v11 = src[y1 * w + x1];
            out.push(v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx);
        }
    }
    out
}

/// Residual-free gate: `x ⊙ σ(fc2(relu(fc1(mean x)))) ⊙ σ(conv7(x))`.
pub fn gated(store: &ParamStore<f64>, name: &str, x: &[f64], [b, c, h, w]: [usize; 4]) -> Vec<f64> {
    let fc1w = param(store, &format!("{name}.fc1.w"));
    let fc1b = param(store, &format!("{name}.fc1.b"));
    let fc2w = param(store, &format!("{name}.fc2.w"));
    let fc2b = param(store, &format!("{name}.fc2.b"));
    let spw = param(store, &format!("{name}.spatial.w"));
    let spb = param(store, &format!("{name}.spatial.b"));
    let hidden = fc1b.len();
    let k = ((spw.len() / c) as f64).sqrt() as usize;
    let (spatial, _, _) = conv2d(x, [b, c, h, w], &spw, [1, k, k], Some(&spb), 1, k / 2);
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        let mean: Vec<f64> = (0..c)
            .map(|ch| x[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
            .collect();
        let hid: Vec<f64> = (0..hidden)
            .map(|j| (fc1b[j] + (0..c).map(|ch| fc1w[j * c + ch] * mean[ch]).sum::<f64>()).max(0.0))
            .collect();
        for ch in 0..c {
            let g = sigmoid(fc2b[ch] + (0..hidden).map(|j| fc2w[ch * hidden + j] * hid[j]).sum::<f64>());
            for p in 0..h * w {
                let i = (bi * c + ch) * h * w + p;
                out[i] = x[i] * g * sigmoid(spatial[bi * h * w + p]);
            }
        }
    }
    out
}

/// Parallel co-attention on `[b,c,h,w]` inputs, written out index by index:
/// `A[i][j] = Σ_{k,l} η(Q')[k][i]·W[k][l]·η(P')[l][j]`,
/// `P_out[c][j] = P[c][j] + Σ_i P'[c][i]·rowsoftmax(A)[i][j]`,
/// `Q_out[c][j] = Q[c][j] + Σ_i Q'[c][i]·colsoftmax(A)[i][j]`.
pub fn pcm(store: &ParamStore<f64>, prefix: &str, p: &[f64], q: &[f64], dims: [usize; 4]) -> (Vec<f64>, Vec<f64>) {
    let [b, c, h, w] = dims;
    let n = h * w;
    let sa = format!("{prefix}.sa");
    let pp = gated(store, &sa, p, dims);
    let qp = gated(store, &sa, q, dims);
    let eta = param(store, &format!("{prefix}.eta.w"));
    let wm = param(store, &format!("{prefix}.W"));
    let cl = eta.len() / c;
    let mut p_out = p.to_vec();
    let mut q_out = q.to_vec();
    for bi in 0..b {
        let at = |x: &[f64], ch: usize, i: usize| x[(bi * c + ch) * n + i];
        let embed = |x: &[f64]| -> Vec<Vec<f64>> {
            (0..cl).map(|k| (0..n).map(|i| (0..c).map(|ch| eta[k * c + ch] * at(x, ch, i)).sum()).collect()).collect()
        };
        let ep = embed(&pp);
        let eq = embed(&qp);
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..cl {
                    for l in 0..cl {
                        acc += eq[k][i] * wm[k * cl + l] * ep[l][j];
                    }
                }
                *v = acc;
            }
        }
        let mut srow = a.clone();
        for row in srow.iter_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            row.iter_mut().for_each(|v| *v = (*v - m).exp() / z);
        }
        let mut scol = a.clone();
        for j in 0..n {
            let m = (0..n).map(|i| a[i][j]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..n).map(|i| (a[i][j] - m).exp()).sum();
            for (i, row) in scol.iter_mut().enumerate() {
                row[j] = (a[i][j] - m).exp() / z;
            }
        }
        for ch in 0..c {
            for j in 0..n {
                let mut dp = 0.0;
                let mut dq = 0.0;
                for i in 0..n {
                    dp += at(&pp, ch, i) * srow[i][j];
                    dq += at(&qp, ch, i) * scol[i][j];
                }
                p_out[(bi * c + ch) * n + j] += dp;
                q_out[(bi * c + ch) * n + j] += dq;
            }
        }
    }
    (p_out, q_out)
}

/// One pyramid level: values and `[b, c, h, w]`.
pub struct Level {
    pub data: Vec<f64>,
    pub dims: [usize; 4],
}

/// All-MLP decoder: project each level to `C`, upsample to the quarter
/// resolution, concatenate, fuse to `C`, predict one channel, upsample.
pub fn decoder(store: &ParamStore<f64>, d: &str, levels: &[Level], out_h: usize, out_w: usize) -> Vec<f64> {
    let (qh, qw) = (out_h / 4, out_w / 4);
    let b = levels[0].dims[0];
    let mut projected = Vec::new();
    let mut c = 0;
    for (l, lev) in levels.iter().enumerate() {
        let [_, _, h, w] = lev.dims;
        let (pr, o) = linear_1x1(store, &format!("{d}.proj{}", l + 1), &lev.data, lev.dims);
        c = o;
        let mut up = vec![0.0; b * o * qh * qw];
        for plane in 0..b * o {
            let r = bilinear_plane(&pr[plane * h * w..(plane + 1) * h * w], h, w, qh, qw);
            up[plane * qh * qw..(plane + 1) * qh * qw].copy_from_slice(&r);
        }
        projected.push(up);
    }
    // Concatenate along channels: level 1 channels first.
    let mut cat = vec![0.0; b * 4 * c * qh * qw];
    for bi in 0..b {
        for (l, pr) in projected.iter().enumerate() {
            for ch in 0..c {
                let src = &pr[(bi * c + ch) * qh * qw..(bi * c + ch + 1) * qh * qw];
                let dst = (bi * 4 * c + l * c + ch) * qh * qw;
                cat[dst..dst + qh * qw].copy_from_slice(src);
            }
        }
    }
    let (fused, _) = linear_1x1(store, &format!("{d}.fuse"), &cat, [b, 4 * c, qh, qw]);
    let (pred, _) = linear_1x1(store, &format!("{d}.pred"), &fused, [b, c, qh, qw]);
    let mut out = Vec::with_capacity(b * out_h * out_w);
    for bi in 0..b {
        out.extend(bilinear_plane(&pred[bi * qh * qw..(bi + 1) * qh * qw], qh, qw, out_h, out_w));
    }
    out
}

/// `(tp, fp, fn, tn)` by visiting every pixel.
pub fn count_pixels(probs: &[f64], mask: &Mask, thr: f64) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for y in 0..mask.h() {
        for x in 0..mask.w() {
            let pred = probs[y * mask.w() + x] >= thr;
            match (pred, mask.get(y, x)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    (tp, fp, fn_, tn)
}

fn gate_count(ch: usize) -> usize {
    let hidden = ch.div_ceil(8).max(1);
    ch * hidden + hidden + hidden * ch + ch + ch * 49 + 1
}

/// Trainable scalars of a model, counted layer by layer from the config.
pub fn model_param_count(cfg: &ModelConfig) -> usize {
    let bb = &cfg.backbone;
    let mut backbone = 3 * 49 * bb.stem_channels + 2 * bb.stem_channels;
    let mut cin = bb.stem_channels;
    for s in 0..4 {
        let cout = bb.stage_channels[s];
        for blk in 0..bb.blocks_per_stage[s] {
            let i = if blk == 0 { cin } else { cout };
            backbone += 9 * i * cout + 2 * cout + 9 * cout * cout + 2 * cout;
            let strided = blk == 0 && s > 0;
            if i != cout || strided {
                backbone += i * cout + 2 * cout;
            }
        }
        cin = cout;
    }
    let copies = if cfg.sharing == Sharing::Shared { 1 } else { 2 };
    let mut fusion = 0;
    for s in 1..4 {
        let ch = bb.stage_channels[s];
        let cl = (ch / 2).max(1);
        if cfg.pcm == Fusion::Attention {
            fusion += copies * (gate_count(ch) + cl * ch + cl * cl);
        }
        if cfg.ccm == Fusion::Attention {
            fusion += gate_count(ch);
            if cfg.gac == Fusion::Attention {
                fusion += gate_count(ch);
            }
        }
    }
    if cfg.gac == Fusion::Attention {
        fusion += bb.stage_channels.iter().map(|&c| gate_count(c)).sum::<usize>();
    }
    let c = cfg.decoder_dim;
    let decoder = bb.stage_channels.iter().map(|&ci| ci * c + c).sum::<usize>() + (4 * c * c + c) + (c + 1);
    let branches = if cfg.sharing == Sharing::Shared { 1 } else { 3 };
    branches * backbone + fusion + copies * decoder
}
