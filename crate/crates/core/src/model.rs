//! The three-stream localization network.
//!
//! Frames `I_{t−1}, I_t, I_{t+1}` run through the backbone in parallel. After
//! each of stages 2–4 the outer branches are fused with the middle one by a
//! PCM each (`PCM(outer, middle)`), the two middle outputs are merged by the
//! CCM, and the three results feed the next stage. Every stage output passes
//! through a GAC before entering the pyramid. Decoders read the pyramids of
//! branches 1 and 3, giving maps for `t−1` and `t+1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, ccm_fuse, gac_enhance, pcm_fuse};
use crate::backbone::{self, BackboneConfig, FeaturePyramid};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::nn::{Mode, ParamStore, Session};
use crate::tensor::{Graph, Real, Tensor, Var};
use crate::video::Mask;

/// Fusion block implementation; `Add` is the element-wise addition used for
/// ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    Attention,
    Add,
}

/// Whether the three streams (and the two PCMs and two decoders) share
/// weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sharing {
    Shared,
    Independent,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Common decoder width `C`.
    pub decoder_dim: usize,
    pub pcm: Fusion,
    pub ccm: Fusion,
    pub gac: Fusion,
    pub sharing: Sharing,
    pub input_h: usize,
    pub input_w: usize,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            backbone: BackboneConfig::desk(),
            decoder_dim: 32,
            pcm: Fusion::Attention,
            ccm: Fusion::Attention,
            gac: Fusion::Attention,
            sharing: Sharing::Shared,
            input_h: 64,
            input_w: 64,
        }
    }

    pub fn large() -> Self {
        ModelConfig {
            backbone: BackboneConfig::resnet101_like(),
            decoder_dim: 256,
            input_h: 512,
            input_w: 512,
            ..Self::desk()
        }
    }

    /// Smallest useful network, for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig { backbone: BackboneConfig::tiny(), decoder_dim: 4, input_h: 32, input_w: 32, ..Self::desk() }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        let (pcm, ccm, gac) = match v {
            Variant::Full => (Fusion::Attention, Fusion::Attention, Fusion::Attention),
            Variant::NoPcm => (Fusion::Add, Fusion::Attention, Fusion::Attention),
            Variant::NoCcm => (Fusion::Attention, Fusion::Add, Fusion::Attention),
            Variant::NoGac => (Fusion::Attention, Fusion::Attention, Fusion::Add),
        };
        self.pcm = pcm;
        self.ccm = ccm;
        self.gac = gac;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.decoder_dim == 0 {
            return Err(Error::Config("decoder_dim must be positive".into()));
        }
        backbone::check_input_dims(self.input_h, self.input_w).map_err(|e| Error::Config(e.to_string()))
    }
}

/// The ablation variants: full model and each fusion block replaced by
/// element-wise addition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    NoPcm,
    NoCcm,
    NoGac,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::NoPcm, Variant::NoCcm, Variant::NoGac, Variant::Full];

    /// Row label in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::NoPcm => "w/o. PCM",
            Variant::NoCcm => "w/o. CCM",
            Variant::NoGac => "w/o. GAC",
            Variant::Full => "SCFNet",
        }
    }
}

/// Three consecutive frames (`[3,H,W]`, values in `[0,1]`) and their masks.
#[derive(Clone, Debug)]
pub struct FrameTriple<T> {
    pub frames: [Tensor<T>; 3],
    pub masks: [Mask; 3],
}

/// Per-pixel tampering probabilities for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationMap {
    pub frame_index: usize,
    pub h: usize,
    pub w: usize,
    pub probs: Vec<f64>,
}

/// Tape handles of one PCM application, for inspection.
#[derive(Clone, Debug)]
pub struct PcmTrace {
    pub prefix: String,
    pub p_in: Var,
    pub q_in: Var,
    pub p_out: Var,
    pub q_out: Var,
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub pyramids: [FeaturePyramid; 3],
    pub pcm: Vec<PcmTrace>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
}

const BRANCH: [&str; 3] = ["a", "b", "c"];

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bb = &cfg.backbone;
        for p in backbone_prefixes(cfg.sharing) {
            backbone::register(&mut store, &p, bb, &mut rng);
        }
        for stage in 1..4 {
            let ch = bb.stage_channels[stage];
            if cfg.pcm == Fusion::Attention {
                for p in pcm_prefixes(cfg.sharing, stage) {
                    attention::register_pcm(&mut store, &p, ch, &mut rng);
                }
            }
            if cfg.ccm == Fusion::Attention {
                attention::register_ccm(
                    &mut store,
                    &format!("ccm{}", stage + 1),
                    ch,
                    cfg.gac == Fusion::Attention,
                    &mut rng,
                );
            }
        }
        if cfg.gac == Fusion::Attention {
            for (l, &ch) in bb.stage_channels.iter().enumerate() {
                attention::register_gate(&mut store, &format!("gac{}", l + 1), ch, &mut rng);
            }
        }
        for d in decoder_prefixes(cfg.sharing) {
            register_decoder(&mut store, &d, &bb.stage_channels, cfg.decoder_dim, &mut rng);
        }
        Ok(Model { cfg, store })
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { cfg: self.cfg.clone(), store: self.store.cast() }
    }

    /// Encoder over `[B,3,H,W]` frame batches for positions `t−1, t, t+1`.
    pub fn encode(&self, s: &mut Session<'_, T>, frames: [Var; 3]) -> Result<Encoded> {
        let cfg = &self.cfg;
        let shape = s.g.shape(frames[0]).to_vec();
        for &f in &frames[1..] {
            if s.g.shape(f) != shape.as_slice() {
                return Err(shape_err!("triple frames differ: {shape:?} vs {:?}", s.g.shape(f)));
            }
        }
        if shape.len() != 4 || shape[1] != 3 || shape[2] != cfg.input_h || shape[3] != cfg.input_w {
            return Err(shape_err!(
                "frames {shape:?} do not match the configured [B,3,{},{}]",
                cfg.input_h,
                cfg.input_w
            ));
        }
        let bb = &cfg.backbone;
        let mut x = self.per_branch(s, frames, |s, p, x| {
            let h = backbone::stem(s, p, x)?;
            backbone::stage(s, p, bb, 0, h)
        })?;
        let mut levels = [[x[0]; 4]; 3];
        let mut traces = Vec::new();
        for stage in 0..4 {
            if stage > 0 {
                x = self.per_branch(s, x, |s, p, v| backbone::stage(s, p, bb, stage, v))?;
                x = self.fuse(s, stage, x, &mut traces)?;
            }
            let pyr = self.pyramid_gac(s, stage, x)?;
            for (branch, &v) in pyr.iter().enumerate() {
                levels[branch][stage] = v;
            }
        }
        Ok(Encoded { pyramids: levels.map(|levels| FeaturePyramid { levels }), pcm: traces })
    }

    fn fuse(
        &self,
        s: &mut Session<'_, T>,
        stage: usize,
        [a, b, c]: [Var; 3],
        traces: &mut Vec<PcmTrace>,
    ) -> Result<[Var; 3]> {
        let cfg = &self.cfg;
        let (a2, bl, c2, br) = match cfg.pcm {
            Fusion::Attention => {
                let prefixes = pcm_prefixes(cfg.sharing, stage);
                let (pl, pr) = (&prefixes[0], prefixes.last().unwrap());
                let (a2, bl) = pcm_fuse(s, pl, a, b)?;
                let (c2, br) = pcm_fuse(s, pr, c, b)?;
                traces.push(PcmTrace { prefix: pl.clone(), p_in: a, q_in: b, p_out: a2, q_out: bl });
                traces.push(PcmTrace { prefix: pr.clone(), p_in: c, q_in: b, p_out: c2, q_out: br });
                (a2, bl, c2, br)
            }
            Fusion::Add => {
                let ab = s.g.add(a, b)?;
                let cb = s.g.add(c, b)?;
                (ab, ab, cb, cb)
            }
        };
        let mid = match cfg.ccm {
            Fusion::Attention => ccm_fuse(s, &format!("ccm{}", stage + 1), bl, br, cfg.gac == Fusion::Attention)?,
            Fusion::Add => s.g.add(bl, br)?,
        };
        Ok([a2, mid, c2])
    }

    fn pyramid_gac(&self, s: &mut Session<'_, T>, stage: usize, x: [Var; 3]) -> Result<[Var; 3]> {
        if self.cfg.gac == Fusion::Add {
            return Ok(x);
        }
        let name = format!("gac{}", stage + 1);
        // GAC is per-sample, so the branches can share one batched call.
        let batch = s.g.shape(x[0])[0];
        let all = s.g.concat(&x, 0)?;
        let y = gac_enhance(s, &name, all)?;
        split3(s.g, y, batch)
    }

    /// Runs `f` once per branch, or once on the branch-stacked batch when
    /// weights are shared.
    fn per_branch(
        &self,
        s: &mut Session<'_, T>,
        x: [Var; 3],
        f: impl Fn(&mut Session<'_, T>, &str, Var) -> Result<Var>,
    ) -> Result<[Var; 3]> {
        match self.cfg.sharing {
            Sharing::Shared => {
                let batch = s.g.shape(x[0])[0];
                let all = s.g.concat(&x, 0)?;
                let y = f(s, "bb", all)?;
                split3(s.g, y, batch)
            }
            Sharing::Independent => {
                let mut out = x;
                for (i, v) in out.iter_mut().enumerate() {
                    *v = f(s, &format!("bb.{}", BRANCH[i]), *v)?;
                }
                Ok(out)
            }
        }
    }

    /// Logits `[B,1,H,W]` for frames `t−1` and `t+1`.
    pub fn forward_logits(&self, s: &mut Session<'_, T>, frames: [Var; 3]) -> Result<(Var, Var, Encoded)> {
        let enc = self.encode(s, frames)?;
        let (h, w) = (self.cfg.input_h, self.cfg.input_w);
        let [pa, _, pc] = &enc.pyramids;
        let c = self.cfg.decoder_dim;
        let (la, lc) = match self.cfg.sharing {
            Sharing::Shared => {
                let batch = s.g.shape(pa.levels[0])[0];
                let mut levels = pa.levels;
                for (l, v) in levels.iter_mut().enumerate() {
                    *v = s.g.concat(&[pa.levels[l], pc.levels[l]], 0)?;
                }
                let logits = decoder_forward(s, "dec", &FeaturePyramid { levels }, c, h, w)?;
                (s.g.slice(logits, 0, 0, batch)?, s.g.slice(logits, 0, batch, batch)?)
            }
            Sharing::Independent => {
                (decoder_forward(s, "dec.a", pa, c, h, w)?, decoder_forward(s, "dec.c", pc, c, h, w)?)
            }
        };
        Ok((la, lc, enc))
    }

    /// Probability maps for `t−1` and `t+1` of one triple (inference mode).
    pub fn model_forward(&self, triple: &FrameTriple<T>) -> Result<(LocalizationMap, LocalizationMap)> {
        let maps = self.infer_batch(&[[&triple.frames[0], &triple.frames[1], &triple.frames[2]]])?;
        let (a, c) = maps.into_iter().next().expect("one window");
        Ok((a, c))
    }

    /// Inference-mode forward over several windows at once.
    fn infer_batch(&self, windows: &[[&Tensor<T>; 3]]) -> Result<Vec<(LocalizationMap, LocalizationMap)>> {
        let (h, w) = (self.cfg.input_h, self.cfg.input_w);
        let mut g = Graph::new();
        let mut s = Session::new(&mut g, &self.store, Mode::Infer, false);
        let mut inputs = Vec::with_capacity(3);
        for pos in 0..3 {
            let frames: Vec<&Tensor<T>> = windows.iter().map(|win| win[pos]).collect();
            inputs.push(s.g.constant(stack_frames(&frames, h, w)?));
        }
        let (la, lc, _) = self.forward_logits(&mut s, [inputs[0], inputs[1], inputs[2]])?;
        let to_maps = |v: Var| -> Vec<LocalizationMap> { g_probs(s.g.value(v), h, w) };
        let (ma, mc) = (to_maps(la), to_maps(lc));
        Ok(ma.into_iter().zip(mc).collect())
    }

    /// Maps for every frame of a video: windows `(f_{i−1}, f_i, f_{i+1})` over
    /// the edge-replicated sequence; each frame averages the predictions of
    /// every window holding it in the first or third slot.
    pub fn video_infer(&self, frames: &[Tensor<T>]) -> Result<Vec<LocalizationMap>> {
        const WINDOWS_PER_BATCH: usize = 4;
        let n = frames.len();
        if n == 0 {
            return Err(arg_err!("video_infer needs at least one frame"));
        }
        let (h, w) = (self.cfg.input_h, self.cfg.input_w);
        let mut acc = vec![vec![0.0f64; h * w]; n];
        let mut counts = vec![0usize; n];
        let windows = windows(n);
        for chunk in windows.chunks(WINDOWS_PER_BATCH) {
            let refs: Vec<[&Tensor<T>; 3]> =
                chunk.iter().map(|&(l, m, r)| [&frames[l], &frames[m], &frames[r]]).collect();
            for (&(l, _, r), (ma, mc)) in chunk.iter().zip(self.infer_batch(&refs)?) {
                for (target, map) in [(l, ma), (r, mc)] {
                    acc[target].iter_mut().zip(&map.probs).for_each(|(a, p)| *a += p);
                    counts[target] += 1;
                }
            }
        }
        Ok(acc
            .into_iter()
            .zip(counts)
            .enumerate()
            .map(|(i, (sum, k))| LocalizationMap {
                frame_index: i,
                h,
                w,
                probs: sum.into_iter().map(|v| v / k as f64).collect(),
            })
            .collect())
    }
}

/// Frame indices `(t−1, t, t+1)` of each inference window, edge-replicated.
pub fn windows(n: usize) -> Vec<(usize, usize, usize)> {
    (0..n).map(|i| (i.saturating_sub(1), i, (i + 1).min(n - 1))).collect()
}

/// How many predictions each frame receives from [`Model::video_infer`].
pub fn window_coverage(n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for (l, _, r) in windows(n) {
        counts[l] += 1;
        counts[r] += 1;
    }
    counts
}

fn g_probs<T: Real>(logits: &Tensor<T>, h: usize, w: usize) -> Vec<LocalizationMap> {
    logits
        .data()
        .chunks(h * w)
        .map(|plane| LocalizationMap {
            frame_index: 0,
            h,
            w,
            probs: plane.iter().map(|&z| crate::tensor::sigmoid(z).as_f64()).collect(),
        })
        .collect()
}

/// Stacks `[3,H,W]` frames into a `[B,3,H,W]` batch.
pub fn stack_frames<T: Real>(frames: &[&Tensor<T>], h: usize, w: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(frames.len() * 3 * h * w);
    for f in frames {
        if f.shape() != [3, h, w] {
            return Err(shape_err!("frame {:?} is not [3,{h},{w}]", f.shape()));
        }
        data.extend_from_slice(f.data());
    }
    Tensor::from_vec(&[frames.len(), 3, h, w], data)
}

fn split3<T: Real>(g: &mut Graph<T>, y: Var, batch: usize) -> Result<[Var; 3]> {
    Ok([g.slice(y, 0, 0, batch)?, g.slice(y, 0, batch, batch)?, g.slice(y, 0, 2 * batch, batch)?])
}

fn backbone_prefixes(sharing: Sharing) -> Vec<String> {
    match sharing {
        Sharing::Shared => vec!["bb".into()],
        Sharing::Independent => BRANCH.iter().map(|b| format!("bb.{b}")).collect(),
    }
}

fn pcm_prefixes(sharing: Sharing, stage: usize) -> Vec<String> {
    let base = format!("pcm{}", stage + 1);
    match sharing {
        Sharing::Shared => vec![base],
        Sharing::Independent => vec![format!("{base}.l"), format!("{base}.r")],
    }
}

fn decoder_prefixes(sharing: Sharing) -> Vec<String> {
    match sharing {
        Sharing::Shared => vec!["dec".into()],
        Sharing::Independent => vec!["dec.a".into(), "dec.c".into()],
    }
}

pub fn register_decoder<R: rand::Rng + ?Sized, T: Real>(
    store: &mut ParamStore<T>,
    d: &str,
    level_channels: &[usize; 4],
    c: usize,
    rng: &mut R,
) {
    for (l, &ch) in level_channels.iter().enumerate() {
        store.add_conv(&format!("{d}.proj{}", l + 1), c, ch, 1, true, 1.0, rng);
    }
    store.add_conv(&format!("{d}.fuse"), c, 4 * c, 1, true, 1.0, rng);
    store.add_conv(&format!("{d}.pred"), 1, c, 1, true, 1.0, rng);
}

/// All-MLP decoder: per-level `Linear(C_i, C)`, upsample to `H/4 × W/4`,
/// concat, `Linear(4C, C)`, `Linear(C, 1)`, upsample to `H × W`. Linear
/// layers act on channels (1×1 convolutions). Returns logits `[B,1,H,W]`.
pub fn decoder_forward<T: Real>(
    s: &mut Session<'_, T>,
    d: &str,
    pyr: &FeaturePyramid,
    c: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    let (qh, qw) = (out_h / 4, out_w / 4);
    let mut projected = Vec::with_capacity(4);
    for (l, &f) in pyr.levels.iter().enumerate() {
        let sh = s.g.shape(f).to_vec();
        let stride = 1 << l;
        if sh.len() != 4 || sh[2] * stride != qh || sh[3] * stride != qw {
            return Err(shape_err!(
                "decoder level {} has shape {sh:?}; expected spatial {}x{}",
                l + 1,
                qh / stride,
                qw / stride
            ));
        }
        let p = s.conv(&format!("{d}.proj{}", l + 1), f, 1, 0)?;
        projected.push(s.g.bilinear_upsample(p, qh, qw)?);
    }
    let cat = s.g.concat(&projected, 1)?;
    debug_assert_eq!(s.g.shape(cat)[1], 4 * c);
    let fused = s.conv(&format!("{d}.fuse"), cat, 1, 0)?;
    let m = s.conv(&format!("{d}.pred"), fused, 1, 0)?;
    s.g.bilinear_upsample(m, out_h, out_w)
}
