//! Pixel-level IoU / F1 scoring, threshold search, quality sweeps and
//! ablation tables.
//!
//! Conventions: a pixel is predicted positive when `prob ≥ thr`. When a
//! video has no predicted and no true positives at all, IoU = F1 = 1.
//! Counts are summed over all frames of a video before computing its
//! scores; aggregates are plain means over videos.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{arg_err, Error, Result};
use crate::model::{LocalizationMap, Model, Variant};
use crate::pipeline::degrade::degrade_quality;
use crate::tensor::Real;
use crate::video::{Mask, Video};

pub const FIXED_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / d as f64
        }
    }

    pub fn add(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

pub fn count(probs: &[f64], gt: &Mask, thr: f64) -> Result<ConfusionCounts> {
    if probs.len() != gt.data().len() {
        return Err(arg_err!("map has {} pixels, mask {}x{}", probs.len(), gt.h(), gt.w()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in probs.iter().zip(gt.data()) {
        match (p >= thr, g == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Scores one map against its mask at threshold `thr ∈ (0,1)`.
pub fn score_pair(map: &LocalizationMap, gt: &Mask, thr: f64) -> Result<(ConfusionCounts, f64, f64)> {
    if (map.h, map.w) != (gt.h(), gt.w()) {
        return Err(arg_err!("map {}x{} vs mask {}x{}", map.h, map.w, gt.h(), gt.w()));
    }
    if !(thr > 0.0 && thr < 1.0) {
        return Err(arg_err!("threshold {thr} outside (0,1)"));
    }
    let c = count(&map.probs, gt, thr)?;
    Ok((c, c.iou(), c.f1()))
}

/// The grid `0.05, 0.10, …, 0.95`.
pub fn threshold_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

/// Counts of a whole video at one threshold.
pub fn video_counts(maps: &[LocalizationMap], gts: &[Mask], thr: f64) -> Result<ConfusionCounts> {
    if maps.len() != gts.len() {
        return Err(arg_err!("{} maps but {} masks", maps.len(), gts.len()));
    }
    let mut total = ConfusionCounts::default();
    for (m, g) in maps.iter().zip(gts) {
        total.add(&score_pair(m, g, thr)?.0);
    }
    Ok(total)
}

/// The grid threshold with the highest video F1 (ties go to the lowest),
/// with the IoU at that threshold.
pub fn best_threshold(maps: &[LocalizationMap], gts: &[Mask], grid: &[f64]) -> Result<(f64, f64, f64)> {
    if grid.is_empty() {
        return Err(arg_err!("empty threshold grid"));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for &thr in grid {
        let c = video_counts(maps, gts, thr)?;
        if best.map_or(true, |b| c.f1() > b.2) {
            best = Some((thr, c.iou(), c.f1()));
        }
    }
    Ok(best.expect("nonempty grid"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoScore {
    pub id: String,
    pub thr: f64,
    pub iou: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityRow {
    pub quality: u8,
    pub mean_iou: f64,
    pub mean_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub fixed: Vec<VideoScore>,
    pub best: Option<Vec<VideoScore>>,
    pub sweep: Option<Vec<QualityRow>>,
}

impl MetricsReport {
    pub fn mean_fixed(&self) -> (f64, f64) {
        means(&self.fixed)
    }

    pub fn mean_best(&self) -> Option<(f64, f64)> {
        self.best.as_deref().map(means)
    }
}

pub fn means(rows: &[VideoScore]) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let n = rows.len() as f64;
    (rows.iter().map(|r| r.iou).sum::<f64>() / n, rows.iter().map(|r| r.f1).sum::<f64>() / n)
}

/// One video's predictions and ground truth.
pub struct Scored<'a> {
    pub id: &'a str,
    pub maps: &'a [LocalizationMap],
    pub gts: &'a [Mask],
}

/// Per-video scores at the fixed threshold and optionally at the best
/// threshold, in input order.
pub fn evaluate(videos: &[Scored<'_>], with_best: bool) -> Result<MetricsReport> {
    let mut fixed = Vec::with_capacity(videos.len());
    let mut best = with_best.then(Vec::new);
    for v in videos {
        let c = video_counts(v.maps, v.gts, FIXED_THRESHOLD)?;
        fixed.push(VideoScore { id: v.id.to_string(), thr: FIXED_THRESHOLD, iou: c.iou(), f1: c.f1() });
        if let Some(b) = best.as_mut() {
            let (thr, iou, f1) = best_threshold(v.maps, v.gts, &threshold_grid())?;
            b.push(VideoScore { id: v.id.to_string(), thr, iou, f1 });
        }
    }
    Ok(MetricsReport { fixed, best, sweep: None })
}

/// Runs the model over each video and scores it at the fixed threshold.
pub fn evaluate_model<T: Real>(model: &Model<T>, videos: &[Video<T>]) -> Result<Vec<VideoScore>> {
    videos
        .iter()
        .map(|v| {
            let maps = model.video_infer(&v.frames)?;
            let c = video_counts(&maps, &v.masks, FIXED_THRESHOLD)?;
            Ok(VideoScore { id: v.id.clone(), thr: FIXED_THRESHOLD, iou: c.iou(), f1: c.f1() })
        })
        .collect()
}

/// Scores of a predictor that marks every pixel as tampered.
pub fn all_positive_baseline<T>(videos: &[Video<T>]) -> Result<Vec<VideoScore>> {
    videos
        .iter()
        .map(|v| {
            let maps: Vec<LocalizationMap> = v
                .masks
                .iter()
                .enumerate()
                .map(|(i, m)| LocalizationMap { frame_index: i, h: m.h(), w: m.w(), probs: vec![1.0; m.h() * m.w()] })
                .collect();
            let c = video_counts(&maps, &v.masks, FIXED_THRESHOLD)?;
            Ok(VideoScore { id: v.id.clone(), thr: FIXED_THRESHOLD, iou: c.iou(), f1: c.f1() })
        })
        .collect()
}

/// Mean IoU/F1 at the fixed threshold after degrading every frame at each
/// quality level (`0` = pristine).
pub fn robustness_sweep<T: Real>(model: &Model<T>, videos: &[Video<T>], qualities: &[u8]) -> Result<Vec<QualityRow>> {
    qualities
        .iter()
        .map(|&q| {
            let degraded: Vec<Video<T>> = videos
                .iter()
                .map(|v| {
                    Ok(Video {
                        id: v.id.clone(),
                        frames: v.frames.iter().map(|f| degrade_quality(f, q)).collect::<Result<_>>()?,
                        masks: v.masks.clone(),
                    })
                })
                .collect::<Result<_>>()?;
            let (mean_iou, mean_f1) = means(&evaluate_model(model, &degraded)?);
            Ok(QualityRow { quality: q, mean_iou, mean_f1 })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub iou: f64,
    pub f1: f64,
}

/// One row per variant, in the order given. Every variant must have a
/// trained model.
pub fn ablation_table<T: Real>(
    models: &[(Variant, Option<&Model<T>>)],
    videos: &[Video<T>],
) -> Result<Vec<AblationRow>> {
    let missing: Vec<&str> = models.iter().filter(|m| m.1.is_none()).map(|m| m.0.label()).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("no trained model for: {}", missing.join(", "))));
    }
    models
        .iter()
        .map(|&(variant, m)| {
            let m = m.expect("checked above");
            let (iou, f1) = means(&evaluate_model(m, videos)?);
            Ok(AblationRow { variant, params: m.param_count(), iou, f1 })
        })
        .collect()
}

pub fn video_csv(rows: &[VideoScore]) -> String {
    let mut s = String::from("video,thr,iou,f1\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.2},{:.6},{:.6}", r.id, r.thr, r.iou, r.f1);
    }
    s
}

pub fn quality_csv(rows: &[QualityRow]) -> String {
    let mut s = String::from("quality,mean_iou,mean_f1\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{:.6}", r.quality, r.mean_iou, r.mean_f1);
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,params,iou,f1\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", r.variant.label(), r.params, r.iou, r.f1);
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
