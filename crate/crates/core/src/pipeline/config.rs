//! Plain-text configuration: one `key = value` per line, `#` starts a
//! comment. Model and training keys are disjoint, so one file may hold both.
//!
//! Model keys: `preset` (desk|large|tiny, applied first), `stem_channels`,
//! `stage_channels` (4 comma-separated), `blocks_per_stage` (4
//! comma-separated), `decoder_dim`, `pcm`/`ccm`/`gac` (attention|add),
//! `sharing` (shared|independent), `input` (HxW).
//!
//! Training keys: `lr0`, `momentum`, `weight_decay`, `epochs`, `batch`,
//! `resize` (HxW), `augment_fraction`, `quality_levels` (comma-separated),
//! `seed`, `lr_halve_every`, `max_steps` (0 = unlimited), `val_data` (path).

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::model::{Fusion, ModelConfig, Sharing};
use crate::pipeline::degrade::MAX_QUALITY;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub resize: (usize, usize),
    pub augment_fraction: f64,
    pub quality_levels: Vec<u8>,
    pub seed: u64,
    /// Epochs between learning-rate halvings.
    pub lr_halve_every: usize,
    /// Stop after this many optimizer steps in total (0 = no limit).
    pub max_steps: usize,
    /// Held-out dataset scored at the end of each epoch.
    pub val_data: Option<PathBuf>,
}

impl TrainConfig {
    /// Full-scale schedule.
    pub fn large() -> Self {
        TrainConfig {
            lr0: 1e-4,
            momentum: 0.9,
            weight_decay: 1e-5,
            epochs: 12,
            batch: 10,
            resize: (512, 512),
            augment_fraction: 0.25,
            quality_levels: vec![15, 23, 30],
            seed: 0,
            lr_halve_every: 2,
            max_steps: 0,
            val_data: None,
        }
    }

    /// Same schedule, desk-sized batches and frames.
    pub fn desk() -> Self {
        TrainConfig { batch: 2, resize: (64, 64), ..Self::large() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.augment_fraction) {
            return bad(format!("augment_fraction {} outside [0,1]", self.augment_fraction));
        }
        if self.quality_levels.is_empty() {
            return bad("quality_levels is empty".into());
        }
        if let Some(q) = self.quality_levels.iter().find(|&&q| q > MAX_QUALITY) {
            return bad(format!("quality level {q} above {MAX_QUALITY}"));
        }
        if self.batch == 0 || self.epochs == 0 || self.lr_halve_every == 0 {
            return bad("batch, epochs and lr_halve_every must be positive".into());
        }
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return bad(format!("lr0 {} must be finite and non-negative", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0,1) and weight_decay be non-negative".into());
        }
        if self.resize.0 == 0 || self.resize.1 == 0 {
            return bad("resize must be positive".into());
        }
        Ok(())
    }

    /// Applies one key; `Ok(false)` if the key is not a training key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr0" => self.lr0 = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "resize" => self.resize = dims(key, value)?,
            "augment_fraction" => self.augment_fraction = num(key, value)?,
            "quality_levels" => self.quality_levels = list(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "lr_halve_every" => self.lr_halve_every = num(key, value)?,
            "max_steps" => self.max_steps = num(key, value)?,
            "val_data" => self.val_data = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        for (line, key, value) in pairs(text)? {
            if !cfg.apply(key, value)? {
                return Err(Error::Config(format!("line {line}: unknown training key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr0 = {:e}", self.lr0);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "weight_decay = {:e}", self.weight_decay);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "resize = {}x{}", self.resize.0, self.resize.1);
        let _ = writeln!(s, "augment_fraction = {}", self.augment_fraction);
        let _ = writeln!(s, "quality_levels = {}", join(&self.quality_levels));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "lr_halve_every = {}", self.lr_halve_every);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        if let Some(v) = &self.val_data {
            let _ = writeln!(s, "val_data = {}", v.display());
        }
        s
    }
}

impl ModelConfig {
    /// Applies one key; `Ok(false)` if the key is not a model key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "preset" => {
                *self = match value {
                    "desk" => ModelConfig::desk(),
                    "large" => ModelConfig::large(),
                    "tiny" => ModelConfig::tiny(),
                    _ => return Err(Error::Config(format!("unknown preset `{value}`"))),
                }
            }
            "stem_channels" => self.backbone.stem_channels = num(key, value)?,
            "stage_channels" => self.backbone.stage_channels = four(key, value)?,
            "blocks_per_stage" => self.backbone.blocks_per_stage = four(key, value)?,
            "decoder_dim" => self.decoder_dim = num(key, value)?,
            "pcm" => self.pcm = fusion(key, value)?,
            "ccm" => self.ccm = fusion(key, value)?,
            "gac" => self.gac = fusion(key, value)?,
            "sharing" => {
                self.sharing = match value {
                    "shared" => Sharing::Shared,
                    "independent" => Sharing::Independent,
                    _ => return Err(Error::Config(format!("sharing must be shared|independent, got `{value}`"))),
                }
            }
            "input" => (self.input_h, self.input_w) = dims(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        let kv = pairs(text)?;
        // A preset resets everything, so it must come first wherever it is
        // written.
        for &(line, key, value) in kv.iter().filter(|p| p.1 == "preset") {
            cfg.apply(key, value).map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        for (line, key, value) in kv.into_iter().filter(|p| p.1 != "preset") {
            if !cfg.apply(key, value)? {
                return Err(Error::Config(format!("line {line}: unknown model key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let b: &BackboneConfig = &self.backbone;
        let f = |x: Fusion| match x {
            Fusion::Attention => "attention",
            Fusion::Add => "add",
        };
        let mut s = String::new();
        let _ = writeln!(s, "stem_channels = {}", b.stem_channels);
        let _ = writeln!(s, "stage_channels = {}", join(&b.stage_channels));
        let _ = writeln!(s, "blocks_per_stage = {}", join(&b.blocks_per_stage));
        let _ = writeln!(s, "decoder_dim = {}", self.decoder_dim);
        let _ = writeln!(s, "pcm = {}", f(self.pcm));
        let _ = writeln!(s, "ccm = {}", f(self.ccm));
        let _ = writeln!(s, "gac = {}", f(self.gac));
        let _ = writeln!(
            s,
            "sharing = {}",
            match self.sharing {
                Sharing::Shared => "shared",
                Sharing::Independent => "independent",
            }
        );
        let _ = writeln!(s, "input = {}x{}", self.input_h, self.input_w);
        s
    }
}

/// Splits a config text into `(line number, key, value)` triples.
pub fn pairs(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        out.push((n + 1, k.trim(), v.trim()));
    }
    Ok(out)
}

/// Parses a combined file holding model and/or training keys on top of the
/// given defaults.
pub fn parse_combined(text: &str, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
    let kv = pairs(text)?;
    for &(_, key, value) in kv.iter().filter(|p| p.1 == "preset") {
        model.apply(key, value)?;
    }
    for (line, key, value) in kv.into_iter().filter(|p| p.1 != "preset") {
        if !model.apply(key, value)? && !train.apply(key, value)? {
            return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
        }
    }
    model.validate()?;
    train.validate()
}

fn num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn list<N: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<N>> {
    v.split(',').map(|p| num(key, p.trim())).collect()
}

fn four(key: &str, v: &str) -> Result<[usize; 4]> {
    list(key, v)?.try_into().map_err(|_| Error::Config(format!("`{key}` needs exactly 4 values, got `{v}`")))
}

pub fn parse_dims(v: &str) -> Option<(usize, usize)> {
    let (h, w) = v.split_once(['x', 'X'])?;
    Some((h.trim().parse().ok()?, w.trim().parse().ok()?))
}

fn dims(key: &str, v: &str) -> Result<(usize, usize)> {
    parse_dims(v).ok_or_else(|| Error::Config(format!("`{key}` must look like 64x64, got `{v}`")))
}

fn fusion(key: &str, v: &str) -> Result<Fusion> {
    match v {
        "attention" => Ok(Fusion::Attention),
        "add" => Ok(Fusion::Add),
        _ => Err(Error::Config(format!("`{key}` must be attention|add, got `{v}`"))),
    }
}

fn join<D: std::fmt::Display>(xs: &[D]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn defaults() {
        let p = TrainConfig::large();
        assert_eq!((p.lr0, p.momentum, p.weight_decay), (1e-4, 0.9, 1e-5));
        assert_eq!((p.epochs, p.batch, p.resize), (12, 10, (512, 512)));
        assert_eq!(p.augment_fraction, 0.25);
        assert_eq!(p.quality_levels, vec![15, 23, 30]);
        let d = TrainConfig::desk();
        assert_eq!((d.batch, d.resize), (2, (64, 64)));
    }

    #[test]
    fn text_round_trips() {
        let mut t = TrainConfig::desk();
        t.lr0 = 0.0123;
        t.val_data = Some("/tmp/v".into());
        assert_eq!(TrainConfig::parse(&t.to_text()).unwrap(), t);
        let m = ModelConfig::desk().with_variant(Variant::NoCcm);
        assert_eq!(ModelConfig::parse(&m.to_text()).unwrap(), m);
        let m = ModelConfig::large();
        assert_eq!(ModelConfig::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn preset_applies_before_overrides() {
        let m = ModelConfig::parse("decoder_dim = 7\npreset = tiny\n").unwrap();
        assert_eq!(m.decoder_dim, 7);
        assert_eq!(m.backbone, BackboneConfig::tiny());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::parse("augment_fraction = 1.5").is_err());
        assert!(TrainConfig::parse("quality_levels = ").is_err());
        assert!(TrainConfig::parse("colour = red").is_err());
        assert!(TrainConfig::parse("lr0 0.1").is_err());
        assert!(ModelConfig::parse("input = 50x64").is_err());
        assert!(ModelConfig::parse("stage_channels = 1,2,3").is_err());
    }

    #[test]
    fn combined_file_routes_keys() {
        let mut m = ModelConfig::desk();
        let mut t = TrainConfig::desk();
        parse_combined("# both\ndecoder_dim = 8\nepochs = 3\n", &mut m, &mut t).unwrap();
        assert_eq!((m.decoder_dim, t.epochs), (8, 3));
        assert!(parse_combined("nope = 1", &mut m, &mut t).is_err());
    }
}
