//! Frames, binary masks, and their PNG encodings.
//!
//! A frame is a `[3,H,W]` tensor with values in `[0,1]`. On disk frames are
//! 8-bit RGB and masks 8-bit gray with values strictly 0 or 255.

use std::path::Path;

use image::imageops::FilterType;
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Binary ground-truth mask; every value is 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(shape_err!("mask data {} != {h}x{w}", data.len()));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Argument(format!("mask value {v} is not binary")));
        }
        Ok(Mask { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Mask { h, w, data: vec![0; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x) as u8);
            }
        }
        Mask { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] == 1
    }

    pub fn area(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// `[1,H,W]` tensor of zeros and ones.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(&[1, self.h, self.w], data).expect("mask dims")
    }

    /// Nearest-neighbour resize; the result stays binary.
    pub fn resize(&self, h: usize, w: usize) -> Mask {
        if (h, w) == (self.h, self.w) {
            return self.clone();
        }
        let img = self.to_image();
        let r = image::imageops::resize(&img, w as u32, h as u32, FilterType::Nearest);
        Mask::from_image(&r)
    }

    fn to_image(&self) -> GrayImage {
        ImageBuffer::from_fn(self.w as u32, self.h as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }

    fn from_image(img: &GrayImage) -> Mask {
        let (w, h) = img.dimensions();
        Mask { h: h as usize, w: w as usize, data: img.pixels().map(|p| (p.0[0] > 127) as u8).collect() }
    }
}

/// A frame sequence with one mask per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Video<T> {
    pub id: String,
    pub frames: Vec<Tensor<T>>,
    pub masks: Vec<Mask>,
}

/// Rounds a frame onto the 8-bit grid so it survives a PNG round trip.
pub fn quantize_frame<T: Real>(frame: &Tensor<T>) -> Tensor<T> {
    frame.map(|v| T::of(to_u8(v) as f64 / 255.0))
}

fn to_u8<T: Real>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn frame_dims<T: Real>(frame: &Tensor<T>) -> Result<(usize, usize)> {
    match frame.shape() {
        &[3, h, w] => Ok((h, w)),
        s => Err(shape_err!("frame {s:?} is not [3,H,W]")),
    }
}

pub fn frame_to_image<T: Real>(frame: &Tensor<T>) -> Result<RgbImage> {
    let (h, w) = frame_dims(frame)?;
    let d = frame.data();
    let plane = h * w;
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(d[i]), to_u8(d[plane + i]), to_u8(d[2 * plane + i])])
    }))
}

pub fn image_to_frame<T: Real>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![T::zero(); 3 * plane];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::of(p.0[c] as f64 / 255.0);
        }
    }
    Tensor::from_vec(&[3, h as usize, w as usize], data).expect("image dims")
}

pub fn write_frame<T: Real>(path: &Path, frame: &Tensor<T>) -> Result<()> {
    frame_to_image(frame)?.save(path).map_err(|e| Error::image(path, e))
}

/// Reads an RGB frame, resizing bilinearly to `size` when given.
pub fn read_frame<T: Real>(path: &Path, size: Option<(usize, usize)>) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
    let img = match size {
        Some((h, w)) if (w as u32, h as u32) != img.dimensions() => {
            image::imageops::resize(&img, w as u32, h as u32, FilterType::Triangle)
        }
        _ => img,
    };
    Ok(image_to_frame(&img))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    mask.to_image().save(path).map_err(|e| Error::image(path, e))
}

/// Reads a mask (gray > 127 is positive), resizing by nearest neighbour.
pub fn read_mask(path: &Path, size: Option<(usize, usize)>) -> Result<Mask> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
    let m = Mask::from_image(&img);
    Ok(match size {
        Some((h, w)) => m.resize(h, w),
        None => m,
    })
}

/// 8-bit gray encoding of probabilities: value `v` stands for `v/255`.
pub fn write_prob_png(path: &Path, h: usize, w: usize, probs: &[f64]) -> Result<()> {
    if probs.len() != h * w {
        return Err(shape_err!("{} probabilities for {h}x{w}", probs.len()));
    }
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([(probs[y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path).map_err(|e| Error::image(path, e))
}

pub fn read_prob_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.pixels().map(|p| p.0[0] as f64 / 255.0).collect()))
}

/// Exact little-endian `f32` sidecar next to a probability PNG.
pub fn write_prob_raw(path: &Path, probs: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = probs.iter().flat_map(|&p| (p as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_prob_raw(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{}: length not a multiple of 4", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect())
}
