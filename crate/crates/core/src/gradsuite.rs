//! Finite-difference checks of every tape operation and every composed
//! block, run in 64-bit with `eps = 1e-5`.
//!
//! Each check reduces its output to a scalar through a fixed random
//! weighting, so no gradient component can hide behind a plain sum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention;
use crate::backbone::{self, BackboneConfig, FeaturePyramid};
use crate::error::Result;
use crate::model::{decoder_forward, register_decoder, FrameTriple, Model, ModelConfig};
use crate::nn::{Mode, ParamStore, Session};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::train::Trainer;
use crate::tensor::{compare_gradients, gradcheck, GradCheck, Graph, SoftmaxAxis, Tensor, Var};
use crate::video::Mask;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub result: GradCheck,
}

/// `Σ out ⊙ R` with a fixed random `R`.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    let r = Tensor::uniform(g.shape(v), -1.0, 1.0, &mut rng);
    let r = g.constant(r);
    let p = g.mul(v, r)?;
    Ok(g.sum(p))
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

type Check = (&'static str, Box<dyn Fn(u64) -> Result<GradCheck>>);

fn op_checks() -> Vec<Check> {
    fn unary(name: &'static str, shape: &'static [usize], f: fn(&mut Graph<f64>, Var) -> Result<Var>) -> Check {
        (
            name,
            Box::new(move |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = randn(shape, &mut rng);
                gradcheck(
                    |g, v| {
                        let y = f(g, v[0])?;
                        project(g, y, seed)
                    },
                    &[x],
                    EPS,
                )
            }),
        )
    }
    fn binary(
        name: &'static str,
        a: &'static [usize],
        b: &'static [usize],
        f: fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
    ) -> Check {
        (
            name,
            Box::new(move |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (x, y) = (randn(a, &mut rng), randn(b, &mut rng));
                gradcheck(
                    |g, v| {
                        let o = f(g, v[0], v[1])?;
                        project(g, o, seed)
                    },
                    &[x, y],
                    EPS,
                )
            }),
        )
    }
    vec![
        binary("matmul 2d", &[3, 4], &[4, 5], |g, a, b| g.matmul(a, b)),
        binary("matmul batched", &[2, 3, 4], &[2, 4, 5], |g, a, b| g.matmul(a, b)),
        binary("matmul batched x shared", &[2, 3, 4], &[4, 2], |g, a, b| g.matmul(a, b)),
        unary("transpose", &[2, 3, 4], |g, a| g.transpose(a)),
        unary("reshape", &[2, 3, 4], |g, a| g.reshape(a, &[4, 6])),
        unary("softmax rows", &[2, 4, 5], |g, a| g.softmax(a, SoftmaxAxis::Rows)),
        unary("softmax cols", &[2, 4, 5], |g, a| g.softmax(a, SoftmaxAxis::Cols)),
        binary("conv2d 3x3 pad 1", &[2, 3, 6, 6], &[4, 3, 3, 3], |g, x, w| g.conv2d(x, w, None, 1, 1)),
        binary("conv2d stride 2", &[2, 2, 6, 6], &[3, 2, 3, 3], |g, x, w| g.conv2d(x, w, None, 2, 1)),
        binary("conv2d 1x1", &[2, 4, 5, 5], &[3, 4, 1, 1], |g, x, w| g.conv2d(x, w, None, 1, 0)),
        (
            "conv2d bias",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let xs = [randn(&[2, 2, 5, 5], &mut rng), randn(&[3, 2, 3, 3], &mut rng), randn(&[3], &mut rng)];
                gradcheck(
                    |g, v| {
                        let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 0)?;
                        project(g, y, seed)
                    },
                    &xs,
                    EPS,
                )
            }),
        ),
        unary("max_pool2d", &[2, 3, 6, 6], |g, a| g.max_pool2d(a, 3, 2, 1)),
        unary("global_avg_pool", &[2, 4, 5, 5], |g, a| g.global_avg_pool(a)),
        unary("bilinear_upsample", &[2, 3, 3, 4], |g, a| g.bilinear_upsample(a, 6, 6)),
        unary("relu", &[2, 4, 6, 6], |g, a| Ok(g.relu(a))),
        unary("sigmoid", &[2, 4, 6, 6], |g, a| Ok(g.sigmoid(a))),
        unary("add_const", &[2, 4], |g, a| Ok(g.add_const(a, 0.7))),
        unary("scale", &[2, 4], |g, a| Ok(g.scale(a, -1.3))),
        binary("add broadcast", &[2, 4, 3, 3], &[1, 4, 1, 1], |g, a, b| g.add(a, b)),
        binary("mul broadcast", &[2, 4, 3, 3], &[2, 1, 3, 3], |g, a, b| g.mul(a, b)),
        binary("add_all", &[2, 3, 4], &[2, 3, 4], |g, a, b| g.add_all(&[a, b, a])),
        binary("concat", &[2, 3, 4], &[2, 2, 4], |g, a, b| g.concat(&[a, b], 1)),
        unary("slice", &[4, 3, 4], |g, a| g.slice(a, 0, 1, 2)),
        (
            "batch_norm train",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let xs = [randn(&[2, 3, 4, 4], &mut rng), randn(&[3], &mut rng), randn(&[3], &mut rng)];
                gradcheck(
                    |g, v| {
                        let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
                        project(g, y, seed)
                    },
                    &xs,
                    EPS,
                )
            }),
        ),
        (
            "batch_norm infer",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let xs = [randn(&[2, 3, 4, 4], &mut rng), randn(&[3], &mut rng), randn(&[3], &mut rng)];
                let mean = [0.1, -0.3, 0.5];
                let var = [0.5, 1.5, 2.0];
                gradcheck(
                    |g, v| {
                        let y = g.batch_norm_infer(v[0], v[1], v[2], &mean, &var, 1e-5)?;
                        project(g, y, seed)
                    },
                    &xs,
                    EPS,
                )
            }),
        ),
        unary("sum", &[2, 3, 4], |g, a| Ok(g.sum(a))),
        unary("mean", &[2, 3, 4], |g, a| Ok(g.mean(a))),
        (
            "bce_with_logits",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let z = Tensor::randn(&[2, 1, 6, 6], 3.0, &mut rng);
                let y = Tensor::from_vec(&[2, 1, 6, 6], (0..72).map(|_| rng.gen_range(0..2) as f64).collect())?;
                gradcheck(|g, v| g.bce_with_logits(v[0], &y), &[z], EPS)
            }),
        ),
    ]
}

/// Checks `f` with every parameter of `store` plus `extra` tensors as inputs.
fn check_block(
    store: &ParamStore<f64>,
    extra: Vec<Tensor<f64>>,
    mode: Mode,
    seed: u64,
    f: impl Fn(&mut Session<'_, f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let names: Vec<String> = store.params().map(|(k, _)| k.clone()).collect();
    let mut inputs = extra.clone();
    let n_extra = extra.len();
    inputs.extend(store.params().map(|(_, v)| v.clone()));
    gradcheck(
        |g, v| {
            let mut s = Session::new(g, store, mode, false);
            for (name, &var) in names.iter().zip(&v[n_extra..]) {
                s.bind(name.clone(), var);
            }
            let y = f(&mut s, &v[..n_extra])?;
            project(s.g, y, seed)
        },
        &inputs,
        EPS,
    )
}

/// Randomises biases and norm parameters so no gradient path is trivially
/// zero.
fn perturb(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (name, t) in store.params_mut() {
        if name.ends_with(".b") || name.ends_with(".beta") {
            *t = Tensor::randn(t.shape(), 0.2, rng);
        } else if name.ends_with(".gamma") {
            *t = Tensor::uniform(t.shape(), 0.5, 1.5, rng);
        }
    }
}

fn block_checks() -> Vec<Check> {
    vec![
        (
            "soft attention",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut store = ParamStore::new();
                attention::register_gate(&mut store, "sa", 4, &mut rng);
                perturb(&mut store, &mut rng);
                let x = randn(&[2, 4, 6, 6], &mut rng);
                check_block(&store, vec![x], Mode::Train, seed, |s, v| attention::soft_attention_enhance(s, "sa", v[0]))
            }),
        ),
        (
            "GAC",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut store = ParamStore::new();
                attention::register_gate(&mut store, "gac", 4, &mut rng);
                perturb(&mut store, &mut rng);
                let x = randn(&[2, 4, 6, 6], &mut rng);
                check_block(&store, vec![x], Mode::Train, seed, |s, v| attention::gac_enhance(s, "gac", v[0]))
            }),
        ),
        (
            "GAF",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut store = ParamStore::new();
                attention::register_gate(&mut store, "gaf", 4, &mut rng);
                perturb(&mut store, &mut rng);
                let x = randn(&[2, 4, 6, 6], &mut rng);
                check_block(&store, vec![x], Mode::Train, seed, |s, v| attention::gaf_fuse(s, "gaf", v[0]))
            }),
        ),
        (
            "PCM",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut store = ParamStore::new();
                attention::register_pcm(&mut store, "pcm", 4, &mut rng);
                perturb(&mut store, &mut rng);
                let (p, q) = (randn(&[2, 4, 4, 4], &mut rng), randn(&[2, 4, 4, 4], &mut rng));
                check_block(&store, vec![p, q], Mode::Train, seed, |s, v| {
                    let (a, b) = attention::pcm_fuse(s, "pcm", v[0], v[1])?;
                    s.g.concat(&[a, b], 1)
                })
            }),
        ),
        (
            "CCM",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut store = ParamStore::new();
                attention::register_ccm(&mut store, "ccm", 4, true, &mut rng);
                perturb(&mut store, &mut rng);
                let (l, r) = (randn(&[2, 4, 6, 6], &mut rng), randn(&[2, 4, 6, 6], &mut rng));
                check_block(&store, vec![l, r], Mode::Train, seed, |s, v| {
                    attention::ccm_fuse(s, "ccm", v[0], v[1], true)
                })
            }),
        ),
        (
            "decoder",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let chans = [3, 4, 4, 2];
                let mut store = ParamStore::new();
                register_decoder(&mut store, "dec", &chans, 3, &mut rng);
                perturb(&mut store, &mut rng);
                // Strides 4..32 of a 32×32 frame: 8×8 down to 1×1.
                let levels: Vec<Tensor<f64>> =
                    (0..4).map(|l| randn(&[1, chans[l], 8 >> l, 8 >> l], &mut rng)).collect();
                check_block(&store, levels, Mode::Train, seed, |s, v| {
                    let pyr = FeaturePyramid { levels: [v[0], v[1], v[2], v[3]] };
                    decoder_forward(s, "dec", &pyr, 3, 32, 32)
                })
            }),
        ),
        (
            "residual block",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut store = ParamStore::new();
                backbone::register_block(&mut store, "blk", 3, 4, 2, &mut rng);
                perturb(&mut store, &mut rng);
                let x = randn(&[2, 3, 6, 6], &mut rng);
                check_block(&store, vec![x], Mode::Train, seed, |s, v| backbone::residual_block(s, "blk", v[0], 2))
            }),
        ),
        ("tiny model step", Box::new(model_step_check)),
    ]
}

/// The full training loss of the smallest model, differentiated with
/// respect to a deterministic sample of parameter coordinates.
fn model_step_check(seed: u64) -> Result<GradCheck> {
    const COORDS_PER_TENSOR: usize = 3;
    let mut cfg = ModelConfig::tiny();
    cfg.backbone = BackboneConfig { stem_channels: 2, stage_channels: [2, 2, 4, 4], blocks_per_stage: [1, 1, 1, 1] };
    cfg.decoder_dim = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::<f64>::new(cfg.clone(), seed)?;
    perturb(&mut model.store, &mut rng);
    let (h, w) = (cfg.input_h, cfg.input_w);
    let triple = FrameTriple {
        frames: [0, 1, 2].map(|_| Tensor::uniform(&[3, h, w], 0.0, 1.0, &mut rng)),
        masks: [0, 1, 2].map(|k| Mask::from_fn(h, w, |y, x| (y + x + k) % 7 < 3)),
    };
    let mut tc = TrainConfig::desk();
    tc.resize = (h, w);
    let trainer = Trainer::new(tc, model)?;
    let (_, grads, _) = trainer.loss_and_grads(&[&triple])?;

    let mut analytic = Vec::new();
    let mut picks = Vec::new();
    for (name, t) in trainer.model.store.params() {
        for _ in 0..COORDS_PER_TENSOR.min(t.numel()) {
            let j = rng.gen_range(0..t.numel());
            picks.push((name.clone(), j));
            analytic.push(grads[name].data()[j]);
        }
    }
    let loss_with = |offsets: &[f64]| -> Result<f64> {
        let mut t = trainer.clone();
        for ((name, j), &d) in picks.iter().zip(offsets) {
            t.model.store.get_mut(name).expect("picked parameter").data_mut()[*j] += d;
        }
        Ok(t.loss_and_grads(&[&triple])?.0)
    };
    let origin = Tensor::zeros(&[picks.len()]);
    let analytic = Tensor::from_vec(&[picks.len()], analytic)?;
    compare_gradients(&[analytic], |xs| loss_with(xs[0].data()), &[origin], EPS)
}

/// Runs every check with a fixed seed.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    op_checks().into_iter().chain(block_checks()).map(|(name, f)| Ok(SuiteEntry { name, result: f(seed)? })).collect()
}

/// Names of all checks, in run order.
pub fn suite_names() -> Vec<&'static str> {
    op_checks().into_iter().chain(block_checks()).map(|c| c.0).collect()
}
