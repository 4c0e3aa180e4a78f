//! Dense feature-map primitives and the RGB-event fusion kernels.
//!
//! * ERM gates event features with a sigmoid mask computed from channel
//!   pooled RGB features through one 7×7 convolution.
//! * LDAM projects RGB features to queries and refined event features to
//!   keys/values with 1×1 convolutions, forms an `(H·W)×(H·W)` attention map,
//!   gathers values with it and adds the re-projected result to the RGB input.
//!
//! Matrix orientation: queries are `N×C'` (`N = H·W`), keys `C'×N`, so the
//! attention map `A = softmax(Q·K)` is `N×N` with row `i` indexed by the RGB
//! (query) position. Values `V` are `C'×N` and the gathered features are
//! `V·Aᵀ`, i.e. `out[c, i] = Σ_j A[i, j] · V[c, j]`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub const ERM_KERNEL: usize = 7;
pub const DEFAULT_REDUCTION: usize = 2;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("reduction ratio {reduction} does not divide channel count {channels}")]
    Reduction { channels: usize, reduction: usize },
    #[error("weight tensor {0:?} is missing")]
    MissingTensor(String),
    #[error("weight tensor {name:?} has shape {got:?}, expected {expected:?}")]
    WeightShape { name: String, got: Vec<usize>, expected: Vec<usize> },
    #[error("bad weight manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Event,
}

/// `C×H×W` features tagged with the modality they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Tensor,
    pub modality: Modality,
}

impl FeatureMap {
    pub fn new(data: Tensor, modality: Modality) -> Result<Self, FusionError> {
        let [c, h, w] = data.dims3()?;
        if c == 0 || h == 0 || w == 0 {
            return Err(FusionError::Shape(format!("feature map {:?} has an empty axis", data.shape())));
        }
        Ok(Self { data, modality })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.data.dims3().expect("feature map is rank 3")
    }
}

/// Same-padded 2-D cross-correlation with zero padding.
///
/// `input` is `C_in×H×W`, `weight` is `C_out×C_in×k×k` with odd `k`, and
/// `bias` has `C_out` entries. Accumulation is in `f64`; output channels are
/// computed independently, so the result does not depend on thread count.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor, FusionError> {
    let [c_in, h, w] = input.dims3()?;
    let (c_out, wc_in, kh, kw) = match *weight.shape() {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(FusionError::Shape(format!("conv weight must be rank 4, got {:?}", weight.shape()))),
    };
    if wc_in != c_in {
        return Err(FusionError::Shape(format!(
            "conv weight expects {wc_in} input channels, input has {c_in}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(FusionError::Shape(format!("conv kernel must be square and odd, got {kh}x{kw}")));
    }
    if bias.len() != c_out {
        return Err(FusionError::Shape(format!("bias has {} entries, expected {c_out}", bias.len())));
    }
    let r = (kh / 2) as isize;
    let src = input.data();
    let wt = weight.data();
    let plane = h * w;
    let mut out = vec![0.0f32; c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(co, dst)| {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[co] as f64;
                for ci in 0..c_in {
                    let wbase = (co * c_in + ci) * kh * kw;
                    let sbase = ci * plane;
                    for ky in 0..kh {
                        let yy = y as isize + ky as isize - r;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let xx = x as isize + kx as isize - r;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            acc += wt[wbase + ky * kw + kx] as f64
                                * src[sbase + yy as usize * w + xx as usize] as f64;
                        }
                    }
                }
                dst[y * w + x] = acc as f32;
            }
        }
    });
    Ok(Tensor::from_vec(&[c_out, h, w], out)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Pools across the channel axis, giving `1×H×W`.
pub fn channel_pool(f: &Tensor, mode: PoolMode) -> Result<Tensor, FusionError> {
    let [c, h, w] = f.dims3()?;
    let plane = h * w;
    let src = f.data();
    let out = (0..plane)
        .map(|i| {
            let vals = (0..c).map(|ch| src[ch * plane + i]);
            match mode {
                PoolMode::Max => vals.fold(f32::NEG_INFINITY, f32::max),
                PoolMode::Avg => (vals.map(f64::from).sum::<f64>() / c as f64) as f32,
            }
        })
        .collect();
    Ok(Tensor::from_vec(&[1, h, w], out)?)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Which axis of the attention logits the softmax normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxAxis {
    /// Each query (RGB) row sums to one over the event positions.
    #[default]
    Keys,
    /// Each key (event) column sums to one over the RGB positions.
    Queries,
}

/// `N×N` attention map, `N = H·W`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub data: Tensor,
    pub axis: SoftmaxAxis,
}

impl AttentionMap {
    pub fn row_sums(&self) -> Vec<f64> {
        let n = self.data.shape()[0];
        self.data.data().chunks(n).map(|r| r.iter().map(|&v| v as f64).sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.data.shape()[0];
        let d = self.data.data();
        (0..n).map(|j| (0..n).map(|i| d[i * n + j] as f64).sum()).collect()
    }

    /// Sums along the normalized axis; each should be 1.
    pub fn normalized_sums(&self) -> Vec<f64> {
        match self.axis {
            SoftmaxAxis::Keys => self.row_sums(),
            SoftmaxAxis::Queries => self.column_sums(),
        }
    }
}

/// Convolution weights for ERM and LDAM.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    /// `1×2×7×7`; input channel 0 is the average pool, 1 the max pool.
    pub erm_weight: Tensor,
    pub erm_bias: Vec<f32>,
    /// `C'×C×1×1`.
    pub q_weight: Tensor,
    pub q_bias: Vec<f32>,
    pub k_weight: Tensor,
    pub k_bias: Vec<f32>,
    pub v_weight: Tensor,
    pub v_bias: Vec<f32>,
    /// `C×C'×1×1`.
    pub out_weight: Tensor,
    pub out_bias: Vec<f32>,
    pub channels: usize,
    pub reduction: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    channels: usize,
    reduction: usize,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn reduced_channels(channels: usize, reduction: usize) -> Result<usize, FusionError> {
    if channels == 0 || reduction == 0 || channels % reduction != 0 {
        return Err(FusionError::Reduction { channels, reduction });
    }
    Ok(channels / reduction)
}

impl FusionWeights {
    /// Uniform `±1/sqrt(fan_in)` initialization from a seeded ChaCha stream.
    pub fn random(channels: usize, reduction: usize, seed: u64) -> Result<Self, FusionError> {
        let reduced = reduced_channels(channels, reduction)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f32).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
            Tensor::from_vec(shape, data).unwrap()
        };
        let erm_fan = 2 * ERM_KERNEL * ERM_KERNEL;
        let erm_weight = draw(&[1, 2, ERM_KERNEL, ERM_KERNEL], erm_fan);
        let erm_bias = draw(&[1], erm_fan).into_data();
        let q_weight = draw(&[reduced, channels, 1, 1], channels);
        let q_bias = draw(&[reduced], channels).into_data();
        let k_weight = draw(&[reduced, channels, 1, 1], channels);
        let k_bias = draw(&[reduced], channels).into_data();
        let v_weight = draw(&[reduced, channels, 1, 1], channels);
        let v_bias = draw(&[reduced], channels).into_data();
        let out_weight = draw(&[channels, reduced, 1, 1], reduced);
        let out_bias = draw(&[channels], reduced).into_data();
        Ok(Self {
            erm_weight,
            erm_bias,
            q_weight,
            q_bias,
            k_weight,
            k_bias,
            v_weight,
            v_bias,
            out_weight,
            out_bias,
            channels,
            reduction,
        })
    }

    /// Zeroes the LDAM output projection, turning LDAM into the identity.
    pub fn with_zero_output(mut self) -> Self {
        self.out_weight = Tensor::zeros(self.out_weight.shape());
        self.out_bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    fn expected_shapes(channels: usize, reduced: usize) -> Vec<(&'static str, Vec<usize>)> {
        vec![
            ("erm.weight", vec![1, 2, ERM_KERNEL, ERM_KERNEL]),
            ("erm.bias", vec![1]),
            ("ldam_q.weight", vec![reduced, channels, 1, 1]),
            ("ldam_q.bias", vec![reduced]),
            ("ldam_k.weight", vec![reduced, channels, 1, 1]),
            ("ldam_k.bias", vec![reduced]),
            ("ldam_v.weight", vec![reduced, channels, 1, 1]),
            ("ldam_v.bias", vec![reduced]),
            ("ldam_out.weight", vec![channels, reduced, 1, 1]),
            ("ldam_out.bias", vec![channels]),
        ]
    }

    fn named(&self) -> Vec<(&'static str, Tensor)> {
        let vec1 = |v: &[f32]| Tensor::from_vec(&[v.len()], v.to_vec()).unwrap();
        vec![
            ("erm.weight", self.erm_weight.clone()),
            ("erm.bias", vec1(&self.erm_bias)),
            ("ldam_q.weight", self.q_weight.clone()),
            ("ldam_q.bias", vec1(&self.q_bias)),
            ("ldam_k.weight", self.k_weight.clone()),
            ("ldam_k.bias", vec1(&self.k_bias)),
            ("ldam_v.weight", self.v_weight.clone()),
            ("ldam_v.bias", vec1(&self.v_bias)),
            ("ldam_out.weight", self.out_weight.clone()),
            ("ldam_out.bias", vec1(&self.out_bias)),
        ]
    }

    /// Builds weights from named tensors, checking every shape.
    pub fn from_named(
        channels: usize,
        reduction: usize,
        mut tensors: BTreeMap<String, Tensor>,
    ) -> Result<Self, FusionError> {
        let reduced = reduced_channels(channels, reduction)?;
        let mut take = |name: &str, expected: &[usize]| -> Result<Tensor, FusionError> {
            let t = tensors.remove(name).ok_or_else(|| FusionError::MissingTensor(name.to_string()))?;
            if t.shape() != expected {
                return Err(FusionError::WeightShape {
                    name: name.to_string(),
                    got: t.shape().to_vec(),
                    expected: expected.to_vec(),
                });
            }
            Ok(t)
        };
        let shapes = Self::expected_shapes(channels, reduced);
        let mut got = shapes.iter().map(|(n, s)| take(n, s)).collect::<Result<Vec<_>, _>>()?.into_iter();
        let mut next = || got.next().unwrap();
        Ok(Self {
            erm_weight: next(),
            erm_bias: next().into_data(),
            q_weight: next(),
            q_bias: next().into_data(),
            k_weight: next(),
            k_bias: next().into_data(),
            v_weight: next(),
            v_bias: next().into_data(),
            out_weight: next(),
            out_bias: next().into_data(),
            channels,
            reduction,
        })
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let named: BTreeMap<String, Tensor> =
            self.named().into_iter().map(|(n, t)| (n.to_string(), t)).collect();
        Self::from_named(self.channels, self.reduction, named).map(|_| ())
    }

    /// Writes `manifest.json` plus one `<name>.tnsr` per tensor into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<(), FusionError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (name, t) in self.named() {
            let file = format!("{name}.tnsr");
            t.save(dir.join(&file))?;
            entries.push(ManifestEntry { name: name.to_string(), file, shape: t.shape().to_vec() });
        }
        let manifest = Manifest { channels: self.channels, reduction: self.reduction, tensors: entries };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| FusionError::Manifest(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, FusionError> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| FusionError::Manifest(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for entry in manifest.tensors {
            let path = dir.join(&entry.file);
            if !path.is_file() {
                return Err(FusionError::MissingTensor(entry.name));
            }
            let t = Tensor::load(path)?;
            if t.shape() != entry.shape.as_slice() {
                return Err(FusionError::WeightShape { name: entry.name, got: t.shape().to_vec(), expected: entry.shape });
            }
            tensors.insert(entry.name, t);
        }
        Self::from_named(manifest.channels, manifest.reduction, tensors)
    }
}

/// The single-channel ERM gate `σ(conv7x7([avg; max](f_r)))`, shape `1×H×W`.
pub fn erm_mask(f_r: &FeatureMap, w: &FusionWeights) -> Result<Tensor, FusionError> {
    let avg = channel_pool(&f_r.data, PoolMode::Avg)?;
    let max = channel_pool(&f_r.data, PoolMode::Max)?;
    let [_, h, wd] = f_r.dims();
    let mut pooled = avg.into_data();
    pooled.extend_from_slice(max.data());
    let pooled = Tensor::from_vec(&[2, h, wd], pooled)?;
    let logits = conv2d(&pooled, &w.erm_weight, &w.erm_bias)?;
    Ok(logits.map(|v| sigmoid(v as f64) as f32))
}

/// Event features gated by the ERM mask; channel counts of the inputs may differ.
pub fn erm(f_r: &FeatureMap, f_e: &FeatureMap, w: &FusionWeights) -> Result<FeatureMap, FusionError> {
    let [_, hr, wr] = f_r.dims();
    let [ce, he, we] = f_e.dims();
    if (hr, wr) != (he, we) {
        return Err(FusionError::Shape(format!(
            "rgb features are {hr}x{wr} but event features are {he}x{we}"
        )));
    }
    let mask = erm_mask(f_r, w)?;
    let m = mask.data();
    let plane = he * we;
    let src = f_e.data.data();
    let out = (0..ce * plane).map(|k| src[k] * m[k % plane]).collect();
    Ok(FeatureMap { data: Tensor::from_vec(&[ce, he, we], out)?, modality: Modality::Event })
}

fn softmax_in_place(vals: &mut [f64]) {
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in vals.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in vals.iter_mut() {
        *v /= sum;
    }
}

/// LDAM with an explicit softmax axis; also returns the attention map.
pub fn ldam_with_attention(
    f_r: &FeatureMap,
    f_e_refined: &FeatureMap,
    w: &FusionWeights,
    axis: SoftmaxAxis,
) -> Result<(FeatureMap, AttentionMap), FusionError> {
    let [c, h, wd] = f_r.dims();
    if f_e_refined.dims() != [c, h, wd] {
        return Err(FusionError::Shape(format!(
            "ldam inputs differ: rgb {:?}, event {:?}",
            f_r.dims(),
            f_e_refined.dims()
        )));
    }
    let reduced = reduced_channels(c, w.reduction)?;
    if w.channels != c {
        return Err(FusionError::Shape(format!("weights built for {} channels, features have {c}", w.channels)));
    }
    let n = h * wd;
    // C'×N each
    let q = conv2d(&f_r.data, &w.q_weight, &w.q_bias)?;
    let k = conv2d(&f_e_refined.data, &w.k_weight, &w.k_bias)?;
    let v = conv2d(&f_e_refined.data, &w.v_weight, &w.v_bias)?;
    let (q, k, v) = (q.data(), k.data(), v.data());

    let mut attn = vec![0.0f64; n * n];
    attn.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..reduced).map(|ch| q[ch * n + i] as f64 * k[ch * n + j] as f64).sum();
        }
        if axis == SoftmaxAxis::Keys {
            softmax_in_place(row);
        }
    });
    if axis == SoftmaxAxis::Queries {
        let mut col = vec![0.0f64; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = attn[i * n + j];
            }
            softmax_in_place(&mut col);
            for i in 0..n {
                attn[i * n + j] = col[i];
            }
        }
    }

    // gathered[c', i] = Σ_j attn[i, j] v[c', j]
    let mut gathered = vec![0.0f32; reduced * n];
    gathered.par_chunks_mut(n).enumerate().for_each(|(ch, dst)| {
        let vrow = &v[ch * n..(ch + 1) * n];
        for (i, d) in dst.iter_mut().enumerate() {
            let arow = &attn[i * n..(i + 1) * n];
            *d = arow.iter().zip(vrow).map(|(&a, &b)| a * b as f64).sum::<f64>() as f32;
        }
    });
    let gathered = Tensor::from_vec(&[reduced, h, wd], gathered)?;
    let projected = conv2d(&gathered, &w.out_weight, &w.out_bias)?;
    let fused = f_r.data.data().iter().zip(projected.data()).map(|(a, b)| a + b).collect();
    let attention = AttentionMap {
        data: Tensor::from_vec(&[n, n], attn.into_iter().map(|v| v as f32).collect())?,
        axis,
    };
    Ok((FeatureMap { data: Tensor::from_vec(&[c, h, wd], fused)?, modality: Modality::Rgb }, attention))
}

pub fn ldam(f_r: &FeatureMap, f_e_refined: &FeatureMap, w: &FusionWeights) -> Result<FeatureMap, FusionError> {
    ldam_with_attention(f_r, f_e_refined, w, SoftmaxAxis::Keys).map(|(f, _)| f)
}

/// `ldam(f_r, erm(f_r, f_e))`, returning the attention map as well.
pub fn afcm_with_attention(
    f_r: &FeatureMap,
    f_e: &FeatureMap,
    w: &FusionWeights,
    axis: SoftmaxAxis,
) -> Result<(FeatureMap, AttentionMap), FusionError> {
    let refined = erm(f_r, f_e, w)?;
    ldam_with_attention(f_r, &refined, w, axis)
}

pub fn afcm(f_r: &FeatureMap, f_e: &FeatureMap, w: &FusionWeights) -> Result<FeatureMap, FusionError> {
    afcm_with_attention(f_r, f_e, w, SoftmaxAxis::Keys).map(|(f, _)| f)
}

/// Spatial sizes for the demo, one per backbone insertion point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StagePreset {
    /// After the stem convolution.
    Conv,
    Layer1,
    Layer2,
    Layer3,
}

impl StagePreset {
    /// `(channels, height, width)` at desk scale: each stage halves the
    /// spatial size and doubles the channels.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            StagePreset::Conv => (8, 24, 32),
            StagePreset::Layer1 => (16, 12, 16),
            StagePreset::Layer2 => (32, 6, 8),
            StagePreset::Layer3 => (64, 3, 4),
        }
    }
}

impl std::str::FromStr for StagePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conv" => Ok(Self::Conv),
            "layer1" => Ok(Self::Layer1),
            "layer2" => Ok(Self::Layer2),
            "layer3" => Ok(Self::Layer3),
            _ => Err(format!("unknown stage {s:?} (expected conv, layer1, layer2 or layer3)")),
        }
    }
}

/// Uniform `[-1, 1)` features for the given shape.
pub fn random_features(c: usize, h: usize, w: usize, modality: Modality, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..c * h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    FeatureMap { data: Tensor::from_vec(&[c, h, w], data).unwrap(), modality }
}
