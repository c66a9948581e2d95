//! Residual encoder: a 7×7/2 stem with a 3×3/2 max pool, then four stages of
//! basic two-conv residual blocks tapped at cumulative strides 4, 8, 16, 32.

use rand::Rng;

use crate::error::{arg_err, Error, Result};
use crate::nn::{ParamStore, Session};
use crate::tensor::{Real, Var};

/// Cumulative output stride of each stage.
pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
}

impl BackboneConfig {
    /// Small enough to train on a CPU in minutes.
    pub fn desk() -> Self {
        BackboneConfig { stem_channels: 16, stage_channels: [16, 32, 64, 128], blocks_per_stage: [1, 1, 1, 1] }
    }

    /// ResNet-101 widths and depths (3/4/23/3 blocks), with basic blocks in
    /// place of bottlenecks. Only used for shape checks.
    pub fn resnet101_like() -> Self {
        BackboneConfig { stem_channels: 64, stage_channels: [256, 512, 1024, 2048], blocks_per_stage: [3, 4, 23, 3] }
    }

    /// Minimal widths for gradient checks.
    pub fn tiny() -> Self {
        BackboneConfig { stem_channels: 4, stage_channels: [4, 4, 8, 8], blocks_per_stage: [1, 1, 1, 1] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 || self.stage_channels.contains(&0) {
            return Err(Error::Config("backbone channel counts must be positive".into()));
        }
        if self.blocks_per_stage.contains(&0) {
            return Err(Error::Config("every stage needs at least one block".into()));
        }
        Ok(())
    }

    fn stage_input(&self, stage: usize) -> usize {
        if stage == 0 {
            self.stem_channels
        } else {
            self.stage_channels[stage - 1]
        }
    }

    /// `[C, H, W]` of each pyramid level for an `h×w` input, from the
    /// convolution output-size formula.
    pub fn pyramid_shapes(&self, h: usize, w: usize) -> [[usize; 3]; 4] {
        let conv = |n: usize, k: usize, s: usize, p: usize| (n + 2 * p - k) / s + 1;
        let (mut h, mut w) = (conv(conv(h, 7, 2, 3), 3, 2, 1), conv(conv(w, 7, 2, 3), 3, 2, 1));
        let mut out = [[0; 3]; 4];
        for (s, level) in out.iter_mut().enumerate() {
            if s > 0 {
                h = conv(h, 3, 2, 1);
                w = conv(w, 3, 2, 1);
            }
            *level = [self.stage_channels[s], h, w];
        }
        out
    }

    /// Trainable scalar count, from the layer formulas alone.
    pub fn param_count(&self) -> usize {
        let norm = |c: usize| 2 * c;
        let mut n = self.stem_channels * 3 * 49 + norm(self.stem_channels);
        for s in 0..4 {
            let (cin, cout) = (self.stage_input(s), self.stage_channels[s]);
            for b in 0..self.blocks_per_stage[s] {
                let bin = if b == 0 { cin } else { cout };
                n += cout * bin * 9 + norm(cout) + cout * cout * 9 + norm(cout);
                if bin != cout || (b == 0 && s > 0) {
                    n += cout * bin + norm(cout);
                }
            }
        }
        n
    }
}

/// The four per-stage feature maps of one branch (strides 4/8/16/32).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeaturePyramid {
    pub levels: [Var; 4],
}

fn block_stride(stage: usize, block: usize) -> usize {
    if block == 0 && stage > 0 {
        2
    } else {
        1
    }
}

pub fn register<R: Rng + ?Sized>(store: &mut ParamStore<impl Real>, prefix: &str, cfg: &BackboneConfig, rng: &mut R) {
    store.add_conv(&format!("{prefix}.stem.conv"), cfg.stem_channels, 3, 7, false, 2.0, rng);
    store.add_norm(&format!("{prefix}.stem.bn"), cfg.stem_channels);
    for s in 0..4 {
        let cout = cfg.stage_channels[s];
        for b in 0..cfg.blocks_per_stage[s] {
            let cin = if b == 0 { cfg.stage_input(s) } else { cout };
            let p = block_name(prefix, s, b);
            register_block(store, &p, cin, cout, block_stride(s, b), rng);
        }
    }
}

fn block_name(prefix: &str, stage: usize, block: usize) -> String {
    format!("{prefix}.s{}.b{block}", stage + 1)
}

/// Parameters of one residual block; a projection shortcut is added when the
/// block changes width or resolution.
pub fn register_block<R: Rng + ?Sized>(
    store: &mut ParamStore<impl Real>,
    p: &str,
    cin: usize,
    cout: usize,
    stride: usize,
    rng: &mut R,
) {
    store.add_conv(&format!("{p}.conv1"), cout, cin, 3, false, 2.0, rng);
    store.add_norm(&format!("{p}.bn1"), cout);
    store.add_conv(&format!("{p}.conv2"), cout, cout, 3, false, 2.0, rng);
    store.add_norm(&format!("{p}.bn2"), cout);
    if cin != cout || stride != 1 {
        store.add_conv(&format!("{p}.proj"), cout, cin, 1, false, 1.0, rng);
        store.add_norm(&format!("{p}.proj_bn"), cout);
    }
}

/// `relu(norm(conv(relu(norm(conv(x))))) + shortcut(x))`.
pub fn residual_block<T: Real>(s: &mut Session<'_, T>, p: &str, x: Var, stride: usize) -> Result<Var> {
    if stride != 1 && stride != 2 {
        return Err(arg_err!("residual block stride must be 1 or 2, got {stride}"));
    }
    let h = s.conv(&format!("{p}.conv1"), x, stride, 1)?;
    let h = norm_layer(s, &format!("{p}.bn1"), h)?;
    let h = s.g.relu(h);
    let h = s.conv(&format!("{p}.conv2"), h, 1, 1)?;
    let h = norm_layer(s, &format!("{p}.bn2"), h)?;
    let shortcut = if s.has_param(&format!("{p}.proj.w")) {
        let sc = s.conv(&format!("{p}.proj"), x, stride, 0)?;
        norm_layer(s, &format!("{p}.proj_bn"), sc)?
    } else {
        x
    };
    let sum = s.g.add(h, shortcut)?;
    Ok(s.g.relu(sum))
}

/// Per-channel normalization with affine scale/shift. Training mode uses
/// batch statistics (recorded on the session for the running update);
/// inference mode uses the stored running estimates.
pub fn norm_layer<T: Real>(s: &mut Session<'_, T>, name: &str, x: Var) -> Result<Var> {
    s.norm(name, x)
}

/// Stem: conv 7×7/2 → norm → relu → max-pool 3×3/2 (stride 4 overall).
pub fn stem<T: Real>(s: &mut Session<'_, T>, prefix: &str, x: Var) -> Result<Var> {
    let h = s.conv(&format!("{prefix}.stem.conv"), x, 2, 3)?;
    let h = norm_layer(s, &format!("{prefix}.stem.bn"), h)?;
    let h = s.g.relu(h);
    s.g.max_pool2d(h, 3, 2, 1)
}

/// Runs stage `stage` (0-based) of the backbone.
pub fn stage<T: Real>(
    s: &mut Session<'_, T>,
    prefix: &str,
    cfg: &BackboneConfig,
    stage: usize,
    mut x: Var,
) -> Result<Var> {
    for b in 0..cfg.blocks_per_stage[stage] {
        x = residual_block(s, &block_name(prefix, stage, b), x, block_stride(stage, b))?;
    }
    Ok(x)
}

pub fn check_input_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(arg_err!("input {h}x{w} must be a positive multiple of 32 in both dimensions (resize first)"));
    }
    Ok(())
}

/// Single-branch forward with no cross-branch fusion.
pub fn backbone_forward<T: Real>(
    s: &mut Session<'_, T>,
    prefix: &str,
    cfg: &BackboneConfig,
    frame: Var,
) -> Result<FeaturePyramid> {
    let shape = s.g.shape(frame).to_vec();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(arg_err!("backbone expects [B,3,H,W], got {shape:?}"));
    }
    check_input_dims(shape[2], shape[3])?;
    let mut x = stem(s, prefix, frame)?;
    let mut levels = [x; 4];
    for (i, level) in levels.iter_mut().enumerate() {
        x = stage(s, prefix, cfg, i, x)?;
        *level = x;
    }
    Ok(FeaturePyramid { levels })
}
