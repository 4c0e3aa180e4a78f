//! Dense event representations: the two-channel timestamp frame and the
//! bilinearly time-splatted polarity volume (voxel grid), plus PNG rendering.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use thiserror::Error;

use crate::event::EventWindow;
use crate::tensor::Tensor;

/// Default number of temporal slices of the polarity volume.
pub const DEFAULT_SLICES: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RepresentError {
    #[error("event window is empty")]
    EmptyWindow,
    #[error("slice count must be at least 1")]
    ZeroSlices,
}

/// Per pixel and polarity, the latest event time normalized to `[0, 1]`.
///
/// `data` is `2×H×W` with channel 0 holding positive and channel 1 negative
/// events. Times are window relative: a value is `(t - t_start) / (t_ref - t_start)`
/// where `t_ref` is the timestamp of the last event.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampFrame {
    pub data: Tensor,
    pub t_ref: u64,
}

impl TimestampFrame {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Tensor::zeros(&[2, height, width]),
            t_ref: 0,
        }
    }

    /// Per-pixel max over the two polarity channels, as an `H×W` tensor.
    pub fn channel_max(&self) -> Tensor {
        let [_, h, w] = self.data.dims3().expect("timestamp frame is rank 3");
        let (pos, neg) = self.data.data().split_at(h * w);
        let data = pos.iter().zip(neg).map(|(a, b)| a.max(*b)).collect();
        Tensor::from_vec(&[h, w], data).unwrap()
    }
}

/// `B×H×W` signed polarity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarityIntegration {
    pub data: Tensor,
}

impl PolarityIntegration {
    pub fn slices(&self) -> usize {
        self.data.shape()[0]
    }
}

pub fn timestamp_frame(window: &EventWindow) -> Result<TimestampFrame, RepresentError> {
    let last = window.events().last().ok_or(RepresentError::EmptyWindow)?;
    let (w, h) = (window.width() as usize, window.height() as usize);
    let t_start = window.t_start();
    let t_ref = last.t;
    let span = (t_ref - t_start) as f64;
    // Track the latest raw timestamp, then normalize once.
    let mut latest: Vec<Option<u64>> = vec![None; 2 * h * w];
    for e in window.events() {
        let idx = e.p.channel() * h * w + e.y as usize * w + e.x as usize;
        let slot = &mut latest[idx];
        *slot = Some(slot.map_or(e.t, |t| t.max(e.t)));
    }
    let data = latest
        .into_iter()
        .map(|t| match t {
            None => 0.0,
            // every event sits at t_ref when the window has zero span
            Some(_) if span == 0.0 => 1.0,
            Some(t) => ((t - t_start) as f64 / span) as f32,
        })
        .collect();
    Ok(TimestampFrame {
        data: Tensor::from_vec(&[2, h, w], data).unwrap(),
        t_ref,
    })
}

/// Like [`timestamp_frame`] but yields an all-zero frame for an empty window.
pub fn timestamp_frame_or_zeros(window: &EventWindow) -> TimestampFrame {
    timestamp_frame(window).unwrap_or_else(|_| {
        TimestampFrame::zeros(window.height() as usize, window.width() as usize)
    })
}

/// Normalized slice coordinate `(B - 1)(t - t_first) / (t_last - t_first)`.
///
/// Returns 0 when `t_last == t_first`.
pub fn slice_coordinate(t: u64, t_first: u64, t_last: u64, slices: usize) -> f64 {
    if t_last == t_first {
        return 0.0;
    }
    (slices - 1) as f64 * (t - t_first) as f64 / (t_last - t_first) as f64
}

/// Non-zero triangular-kernel weights `max(0, 1 - |s - t*|)` for slices `s` in `0..slices`.
///
/// At most two entries; they sum to 1 whenever `t*` lies in `[0, slices - 1]`.
pub fn slice_weights(t_star: f64, slices: usize) -> impl Iterator<Item = (usize, f64)> {
    let lo = t_star.floor();
    let frac = t_star - lo;
    let lo = lo as i64;
    [(lo, 1.0 - frac), (lo + 1, frac)]
        .into_iter()
        .filter(move |&(s, wgt)| wgt > 0.0 && s >= 0 && (s as usize) < slices)
        .map(|(s, wgt)| (s as usize, wgt))
}

pub fn polarity_integration(
    window: &EventWindow,
    slices: usize,
) -> Result<PolarityIntegration, RepresentError> {
    if slices == 0 {
        return Err(RepresentError::ZeroSlices);
    }
    let (w, h) = (window.width() as usize, window.height() as usize);
    let plane = h * w;
    let mut acc = vec![0.0f64; slices * plane];
    let ev = window.events();
    if let (Some(first), Some(last)) = (ev.first(), ev.last()) {
        for e in ev {
            let t_star = slice_coordinate(e.t, first.t, last.t, slices);
            let p = e.p.sign() as f64;
            let px = e.y as usize * w + e.x as usize;
            for (s, wgt) in slice_weights(t_star, slices) {
                acc[s * plane + px] += p * wgt;
            }
        }
    }
    Ok(PolarityIntegration {
        data: Tensor::from_vec(&[slices, h, w], acc.into_iter().map(|v| v as f32).collect()).unwrap(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorMapping {
    /// Min-max stretch to `0..=255`.
    Grayscale,
    /// Symmetric about zero: 0 maps to 128, `±max|v|` to 255 / 1.
    SignedDiverging,
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("cannot render tensor of shape {0:?}")]
    UnsupportedShape(Vec<usize>),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub enum Rendered {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl Rendered {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        match self {
            Rendered::Gray(img) => img.save_with_format(path, image::ImageFormat::Png)?,
            Rendered::Rgb(img) => img.save_with_format(path, image::ImageFormat::Png)?,
        }
        Ok(())
    }

    pub fn dimensions(&self) -> (u32, u32) {
        match self {
            Rendered::Gray(img) => img.dimensions(),
            Rendered::Rgb(img) => img.dimensions(),
        }
    }
}

/// Converts a rank-2 tensor or a rank-3 `C×H×W` tensor into an 8-bit image.
///
/// Three channels render as RGB. Any other channel count is first reduced to
/// one plane: channel max for grayscale, channel sum for the diverging map.
pub fn render(tensor: &Tensor, mapping: ColorMapping) -> Result<Rendered, RenderError> {
    let unsupported = || RenderError::UnsupportedShape(tensor.shape().to_vec());
    if tensor.is_empty() {
        return Err(unsupported());
    }
    let (channels, h, w) = match *tensor.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => return Err(unsupported()),
    };
    let (h32, w32) = (u32::try_from(h).map_err(|_| unsupported())?, u32::try_from(w).map_err(|_| unsupported())?);
    let plane = h * w;
    let src = tensor.data();
    let scale = Scale::fit(src, mapping);
    if channels == 3 {
        let img = RgbImage::from_fn(w32, h32, |x, y| {
            let i = y as usize * w + x as usize;
            Rgb([0, 1, 2].map(|c| scale.apply(src[c * plane + i])))
        });
        return Ok(Rendered::Rgb(img));
    }
    let reduced: Vec<f32> = if channels == 1 {
        src.to_vec()
    } else {
        (0..plane)
            .map(|i| {
                let vals = (0..channels).map(|c| src[c * plane + i]);
                match mapping {
                    ColorMapping::Grayscale => vals.fold(f32::NEG_INFINITY, f32::max),
                    ColorMapping::SignedDiverging => vals.sum(),
                }
            })
            .collect()
    };
    let scale = Scale::fit(&reduced, mapping);
    let img = GrayImage::from_fn(w32, h32, |x, y| Luma([scale.apply(reduced[y as usize * w + x as usize])]));
    Ok(Rendered::Gray(img))
}

pub fn render_png(tensor: &Tensor, mapping: ColorMapping, path: impl AsRef<Path>) -> Result<(), RenderError> {
    render(tensor, mapping)?.save(path)
}

struct Scale {
    mapping: ColorMapping,
    lo: f32,
    span: f32,
}

impl Scale {
    fn fit(values: &[f32], mapping: ColorMapping) -> Self {
        let finite = values.iter().copied().filter(|v| v.is_finite());
        match mapping {
            ColorMapping::Grayscale => {
                let (lo, hi) = finite.fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                let lo = if lo.is_finite() { lo } else { 0.0 };
                let span = if hi > lo { hi - lo } else { 0.0 };
                Self { mapping, lo, span }
            }
            ColorMapping::SignedDiverging => {
                let span = finite.fold(0.0f32, |m, v| m.max(v.abs()));
                Self { mapping, lo: 0.0, span }
            }
        }
    }

    fn apply(&self, v: f32) -> u8 {
        let v = if v.is_finite() { v } else { 0.0 };
        match self.mapping {
            ColorMapping::Grayscale => {
                if self.span == 0.0 {
                    0
                } else {
                    (255.0 * (v - self.lo) / self.span).round().clamp(0.0, 255.0) as u8
                }
            }
            ColorMapping::SignedDiverging => {
                if self.span == 0.0 {
                    128
                } else {
                    (128.0 + 127.0 * v / self.span).round().clamp(1.0, 255.0) as u8
                }
            }
        }
    }
}
