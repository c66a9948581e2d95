//! Triples from videos, epoch shuffling, and the augmentation plan.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::FrameTriple;
use crate::pipeline::degrade::degrade_quality;
use crate::synth::read_dataset;
use crate::tensor::Real;
use crate::video::Video;

/// `(video index, first frame)` of every natural triple. Videos shorter
/// than three frames are skipped with a warning.
pub fn natural_triples<T>(videos: &[Video<T>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (vi, v) in videos.iter().enumerate() {
        if v.frames.len() < 3 {
            log::warn!("video {} has {} frames; skipped", v.id, v.frames.len());
            continue;
        }
        out.extend((0..v.frames.len() - 2).map(|t| (vi, t)));
    }
    out
}

pub fn triple_at<T: Real>(v: &Video<T>, start: usize) -> FrameTriple<T> {
    FrameTriple {
        frames: [0, 1, 2].map(|k| v.frames[start + k].clone()),
        masks: [0, 1, 2].map(|k| v.masks[start + k].clone()),
    }
}

pub fn triples<T: Real>(videos: &[Video<T>]) -> Vec<FrameTriple<T>> {
    natural_triples(videos).into_iter().map(|(vi, t)| triple_at(&videos[vi], t)).collect()
}

/// Sample order for one epoch, determined by `(seed, epoch)` alone.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Reads a dataset and groups its triples into shuffled batches for one
/// epoch.
pub fn load_triples<T: Real>(
    root: &Path,
    resize: (usize, usize),
    shuffle_seed: u64,
    epoch: usize,
    batch: usize,
) -> Result<Vec<Vec<FrameTriple<T>>>> {
    let videos = read_dataset::<T>(root, Some(resize))?;
    let all = triples(&videos);
    let order = epoch_order(all.len(), shuffle_seed, epoch);
    Ok(order.chunks(batch.max(1)).map(|c| c.iter().map(|&i| all[i].clone()).collect()).collect())
}

/// Per-sample quality level, `None` for untouched samples. Exactly
/// `round(fraction · n)` samples are degraded; which ones and at which
/// level is fixed by `seed`.
pub fn augment_plan(n: usize, fraction: f64, levels: &[u8], seed: u64) -> Vec<Option<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6175_676D);
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut plan = vec![None; n];
    for &i in &idx[..k] {
        plan[i] = Some(levels[rng.gen_range(0..levels.len())]);
    }
    plan
}

/// Applies a plan; all three frames of a triple share its quality level.
pub fn apply_plan<T: Real>(triples: &mut [FrameTriple<T>], plan: &[Option<u8>]) -> Result<()> {
    for (t, q) in triples.iter_mut().zip(plan) {
        if let Some(q) = *q {
            for f in t.frames.iter_mut() {
                *f = degrade_quality(f, q)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::video::Mask;

    fn video(id: &str, n: usize) -> Video<f32> {
        Video {
            id: id.into(),
            frames: (0..n).map(|i| Tensor::full(&[3, 2, 2], i as f32)).collect(),
            masks: (0..n).map(|_| Mask::zeros(2, 2)).collect(),
        }
    }

    #[test]
    fn triple_counts() {
        let vids = [video("a", 10), video("b", 2), video("c", 3)];
        let t = natural_triples(&vids);
        assert_eq!(t.len(), 8 + 1);
        let tr = triple_at(&vids[0], 4);
        assert_eq!(tr.frames[2].data()[0], 6.0);
    }

    #[test]
    fn order_depends_only_on_seed_and_epoch() {
        assert_eq!(epoch_order(20, 1, 0), epoch_order(20, 1, 0));
        assert_ne!(epoch_order(20, 1, 0), epoch_order(20, 2, 0));
        assert_ne!(epoch_order(20, 1, 0), epoch_order(20, 1, 1));
        let mut o = epoch_order(20, 2, 3);
        o.sort();
        assert_eq!(o, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn plan_hits_exact_fraction() {
        for n in [0, 1, 7, 40, 101] {
            let p = augment_plan(n, 0.25, &[15, 23, 30], 9);
            let k = p.iter().filter(|q| q.is_some()).count();
            assert_eq!(k, (0.25 * n as f64).round() as usize);
            assert!(p.iter().flatten().all(|q| [15, 23, 30].contains(q)));
        }
        assert_eq!(augment_plan(30, 0.25, &[15], 4), augment_plan(30, 0.25, &[15], 4));
    }
}
