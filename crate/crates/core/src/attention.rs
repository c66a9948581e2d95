//! Cross-frame feature fusion.
//!
//! * soft attention: `X ⊙ σ(channel(GAP X)) ⊙ σ(spatial X)`
//! * parallel co-attention (PCM): an affinity `A = η(Q')ᵀ·W·η(P')` between
//!   every pair of spatial positions, normalized by row and by column softmax,
//!   re-weights each branch: `P̂' = P'·S_row(A)`, `Q̂' = Q'·S_col(A)`.
//! * GAC / GAF: residual global-channel × local-spatial gates.
//! * CCM: `GAF(GAC(F_l) + GAC(F_r))`.
//!
//! Spatial positions are flattened row-major (row `y`, then column `x`), so
//! index `y·W + x` of the affinity matrix refers to pixel `(y, x)`.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{ParamStore, Session};
use crate::tensor::{Real, SoftmaxAxis, Var};

/// Channel bottleneck ratio of the global (channel) gate.
pub const BOTTLENECK_RATIO: usize = 8;
/// Kernel size of the local (spatial) gate.
pub const SPATIAL_KERNEL: usize = 7;

pub fn bottleneck(ch: usize) -> usize {
    ch.div_ceil(BOTTLENECK_RATIO).max(1)
}

/// Channel width of the co-attention embedding `η`.
pub fn embed_dim(ch: usize) -> usize {
    (ch / 2).max(1)
}

/// Registers a global-local gate under `name`.
pub fn register_gate<R: Rng + ?Sized>(store: &mut ParamStore<impl Real>, name: &str, ch: usize, rng: &mut R) {
    let hidden = bottleneck(ch);
    store.add_conv(&format!("{name}.fc1"), hidden, ch, 1, true, 2.0, rng);
    store.add_conv(&format!("{name}.fc2"), ch, hidden, 1, true, 1.0, rng);
    store.add_conv(&format!("{name}.spatial"), 1, ch, SPATIAL_KERNEL, true, 1.0, rng);
}

pub fn gate_param_count(ch: usize) -> usize {
    let h = bottleneck(ch);
    (h * ch + h) + (ch * h + ch) + (ch * SPATIAL_KERNEL * SPATIAL_KERNEL + 1)
}

/// `(σ(MLP(GAP x)) : [B,C,1,1], σ(conv7(x)) : [B,1,H,W])`.
fn gates<T: Real>(s: &mut Session<'_, T>, name: &str, x: Var) -> Result<(Var, Var)> {
    let pooled = s.g.global_avg_pool(x)?;
    let h = s.conv(&format!("{name}.fc1"), pooled, 1, 0)?;
    let h = s.g.relu(h);
    let h = s.conv(&format!("{name}.fc2"), h, 1, 0)?;
    let channel = s.g.sigmoid(h);
    let sp = s.conv(&format!("{name}.spatial"), x, 1, SPATIAL_KERNEL / 2)?;
    let spatial = s.g.sigmoid(sp);
    Ok((channel, spatial))
}

fn gated<T: Real>(s: &mut Session<'_, T>, name: &str, x: Var) -> Result<Var> {
    let (channel, spatial) = gates(s, name, x)?;
    let y = s.g.mul(x, channel)?;
    s.g.mul(y, spatial)
}

/// Soft-attention pre-enhancement; output shape equals input shape.
pub fn soft_attention_enhance<T: Real>(s: &mut Session<'_, T>, name: &str, x: Var) -> Result<Var> {
    gated(s, name, x)
}

/// Global-local attention context: `X + X ⊙ σ(MLP(GAP X)) ⊙ σ(conv7 X)`.
pub fn gac_enhance<T: Real>(s: &mut Session<'_, T>, name: &str, x: Var) -> Result<Var> {
    let y = gated(s, name, x)?;
    s.g.add(x, y)
}

/// Global-local attention fusion. Same residual gate as [`gac_enhance`],
/// applied to an already fused feature with its own parameters.
pub fn gaf_fuse<T: Real>(s: &mut Session<'_, T>, name: &str, x: Var) -> Result<Var> {
    let y = gated(s, name, x)?;
    s.g.add(x, y)
}

pub fn register_pcm<R: Rng + ?Sized, T: Real>(store: &mut ParamStore<T>, p: &str, ch: usize, rng: &mut R) {
    let cl = embed_dim(ch);
    register_gate(store, &format!("{p}.sa"), ch, rng);
    store.add_conv(&format!("{p}.eta"), cl, ch, 1, false, 1.0, rng);
    store.insert(format!("{p}.W"), crate::tensor::Tensor::randn(&[cl, cl], 1.0 / cl as f64, rng));
}

pub fn pcm_param_count(ch: usize) -> usize {
    let cl = embed_dim(ch);
    gate_param_count(ch) + cl * ch + cl * cl
}

/// The co-attention core on already enhanced features `P'`, `Q'`
/// (`[B,C,H,W]` each): returns `(P̂', Q̂')` in the same shape.
pub fn co_attention<T: Real>(s: &mut Session<'_, T>, p: &str, pp: Var, qp: Var) -> Result<(Var, Var)> {
    let shape = s.g.shape(pp).to_vec();
    let (b, c, n) = (shape[0], shape[1], shape[2] * shape[3]);
    let w = s.param(&format!("{p}.W"))?;
    let cl = s.g.shape(w)[0];

    let ep = s.conv(&format!("{p}.eta"), pp, 1, 0)?;
    let ep = s.g.reshape(ep, &[b, cl, n])?;
    let eq = s.conv(&format!("{p}.eta"), qp, 1, 0)?;
    let eq = s.g.reshape(eq, &[b, cl, n])?;

    // A[i, j] relates position i of Q' to position j of P'.
    let eq_t = s.g.transpose(eq)?;
    let left = s.g.matmul(eq_t, w)?;
    let affinity = s.g.matmul(left, ep)?;
    let s_row = s.g.softmax(affinity, SoftmaxAxis::Rows)?;
    let s_col = s.g.softmax(affinity, SoftmaxAxis::Cols)?;

    let pf = s.g.reshape(pp, &[b, c, n])?;
    let qf = s.g.reshape(qp, &[b, c, n])?;
    let p_hat = s.g.matmul(pf, s_row)?;
    let q_hat = s.g.matmul(qf, s_col)?;
    Ok((s.g.reshape(p_hat, &shape)?, s.g.reshape(q_hat, &shape)?))
}

/// Parallel co-attention module. Returns `(P + P̂', Q + Q̂')`.
pub fn pcm_fuse<T: Real>(s: &mut Session<'_, T>, p: &str, pv: Var, qv: Var) -> Result<(Var, Var)> {
    let (sp, sq) = (s.g.shape(pv).to_vec(), s.g.shape(qv).to_vec());
    if sp != sq || sp.len() != 4 {
        return Err(shape_err!("pcm: P {sp:?} and Q {sq:?} must share one [B,C,H,W] shape"));
    }
    let sa = format!("{p}.sa");
    let pp = soft_attention_enhance(s, &sa, pv)?;
    let qp = soft_attention_enhance(s, &sa, qv)?;
    let (p_hat, q_hat) = co_attention(s, p, pp, qp)?;
    Ok((s.g.add(pv, p_hat)?, s.g.add(qv, q_hat)?))
}

pub fn register_ccm<R: Rng + ?Sized, T: Real>(
    store: &mut ParamStore<T>,
    p: &str,
    ch: usize,
    with_gac: bool,
    rng: &mut R,
) {
    if with_gac {
        register_gate(store, &format!("{p}.gac"), ch, rng);
    }
    register_gate(store, &format!("{p}.gaf"), ch, rng);
}

/// Cross co-attention: `GAF(GAC(F_l) + GAC(F_r))`; with `with_gac` off the
/// GAC stage is replaced by the plain sum `GAF(F_l + F_r)`.
pub fn ccm_fuse<T: Real>(s: &mut Session<'_, T>, p: &str, fl: Var, fr: Var, with_gac: bool) -> Result<Var> {
    let (sl, sr) = (s.g.shape(fl).to_vec(), s.g.shape(fr).to_vec());
    if sl != sr {
        return Err(shape_err!("ccm: inputs {sl:?} and {sr:?} differ"));
    }
    let merged = if with_gac {
        let name = format!("{p}.gac");
        let l = gac_enhance(s, &name, fl)?;
        let r = gac_enhance(s, &name, fr)?;
        s.g.add(l, r)?
    } else {
        s.g.add(fl, fr)?
    };
    gaf_fuse(s, &format!("{p}.gaf"), merged)
}
