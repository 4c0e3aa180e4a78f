//! Structure supervision and the SIF losses.
//!
//! All loss arithmetic runs on [`Plane`], a double-precision `H×W` grid, so
//! that analytic gradients can be checked against finite differences. Planes
//! convert to and from [`Tensor`] at the module boundary.
//!
//! The TV term is `-Σ (∇x I)² + (∇y I)²`: it *rewards* gradients, so the total
//! loss is unbounded below in the image scale. The correlation term is
//! scale-invariant, which is what keeps [`fit_sif`] meaningful over a bounded
//! number of iterations.

use std::fmt::Write as _;

use thiserror::Error;

use crate::represent::{PolarityIntegration, TimestampFrame};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("image {height}x{width} is smaller than the required {min}x{min}")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error("expected a rank-2 tensor, got shape {0:?}")]
    NotPlanar(Vec<usize>),
    #[error("local window must be odd and at least 3, got {0}")]
    BadWindow(usize),
    #[error("variance stabilizer must be positive")]
    BadStabilizer,
    #[error("loss became non-finite at iteration {0}")]
    Diverged(usize),
    #[error("optimizer needs a positive finite step size")]
    BadStep,
}

/// Row-major `H×W` grid of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(height * width, data.len(), "plane size mismatch");
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, LossError> {
        let [h, w] = t.dims2().map_err(|_| LossError::NotPlanar(t.shape().to_vec()))?;
        Ok(Self::new(h, w, t.data().iter().map(|&v| v as f64).collect()))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.height, self.width], self.data.iter().map(|&v| v as f32).collect()).unwrap()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Value at a possibly out-of-range coordinate, clamped to the border.
    #[inline]
    pub fn at_clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.at(y, x)
    }

    fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane::new(
            self.height,
            self.width,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }
}

fn check_same(a: &Plane, b: &Plane) -> Result<(), LossError> {
    if a.dims() != b.dims() {
        return Err(LossError::ShapeMismatch { left: a.dims(), right: b.dims() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeOperator {
    #[default]
    Sobel,
    Roberts,
    Laplace,
}

impl std::str::FromStr for EdgeOperator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sobel" => Ok(Self::Sobel),
            "roberts" => Ok(Self::Roberts),
            "laplace" | "laplacian" => Ok(Self::Laplace),
            other => Err(format!("unknown edge operator {other:?} (expected sobel, roberts or laplace)")),
        }
    }
}

/// Non-negative edge magnitudes used as the structure target.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionMap {
    pub plane: Plane,
    pub operator: EdgeOperator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SifImage {
    pub plane: Plane,
}

pub fn sobel_edges(image: &Plane) -> Result<SupervisionMap, LossError> {
    edge_map(image, EdgeOperator::Sobel)
}

/// Edge magnitude with replicate-padded borders.
///
/// * Sobel: `sqrt(Gx² + Gy²)` with the 3×3 kernels `[-1 0 1; -2 0 2; -1 0 1]` and its transpose.
/// * Roberts: `sqrt(D1² + D2²)` with the 2×2 cross `I(y,x) - I(y+1,x+1)`, `I(y,x+1) - I(y+1,x)`.
/// * Laplace: `|4I - I(y±1,x) - I(y,x±1)|`.
pub fn edge_map(image: &Plane, operator: EdgeOperator) -> Result<SupervisionMap, LossError> {
    let (h, w) = image.dims();
    if h < 3 || w < 3 {
        return Err(LossError::TooSmall { height: h, width: w, min: 3 });
    }
    let p = |y: usize, x: usize, dy: isize, dx: isize| image.at_clamped(y as isize + dy, x as isize + dx);
    let plane = match operator {
        EdgeOperator::Sobel => Plane::from_fn(h, w, |y, x| {
            let gx = (p(y, x, -1, 1) + 2.0 * p(y, x, 0, 1) + p(y, x, 1, 1))
                - (p(y, x, -1, -1) + 2.0 * p(y, x, 0, -1) + p(y, x, 1, -1));
            let gy = (p(y, x, 1, -1) + 2.0 * p(y, x, 1, 0) + p(y, x, 1, 1))
                - (p(y, x, -1, -1) + 2.0 * p(y, x, -1, 0) + p(y, x, -1, 1));
            gx.hypot(gy)
        }),
        EdgeOperator::Roberts => Plane::from_fn(h, w, |y, x| {
            let d1 = p(y, x, 0, 0) - p(y, x, 1, 1);
            let d2 = p(y, x, 0, 1) - p(y, x, 1, 0);
            d1.hypot(d2)
        }),
        EdgeOperator::Laplace => Plane::from_fn(h, w, |y, x| {
            (4.0 * p(y, x, 0, 0) - p(y, x, -1, 0) - p(y, x, 1, 0) - p(y, x, 0, -1) - p(y, x, 0, 1)).abs()
        }),
    };
    Ok(SupervisionMap { plane, operator })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcConfig {
    /// Odd side length of the local window.
    pub omega: usize,
    /// Added to the variance product in the denominator.
    pub var_eps: f64,
}

impl Default for CcConfig {
    fn default() -> Self {
        Self { omega: 9, var_eps: 1e-5 }
    }
}

impl CcConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.omega < 3 || self.omega % 2 == 0 {
            return Err(LossError::BadWindow(self.omega));
        }
        if !(self.var_eps > 0.0) {
            return Err(LossError::BadStabilizer);
        }
        Ok(())
    }
}

/// Separable box sum of side `omega` with replicate padding: every output
/// pixel sums the `omega²` clamped neighbours (border pixels may repeat).
fn box_sum(src: &Plane, omega: usize) -> Plane {
    let r = (omega / 2) as isize;
    let (h, w) = src.dims();
    let rows = Plane::from_fn(h, w, |y, x| (-r..=r).map(|d| src.at_clamped(y as isize, x as isize + d)).sum());
    Plane::from_fn(h, w, |y, x| (-r..=r).map(|d| rows.at_clamped(y as isize + d, x as isize)).sum())
}

/// Adjoint of [`box_sum`]: scatters each value onto the clamped pixels of its window.
fn box_sum_adjoint(src: &Plane, omega: usize) -> Plane {
    let r = (omega / 2) as isize;
    let (h, w) = src.dims();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut cols = Plane::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = src.at(y, x);
            for d in -r..=r {
                let yy = clamp(y as isize + d, h);
                cols.data[yy * w + x] += v;
            }
        }
    }
    let mut out = Plane::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = cols.at(y, x);
            for d in -r..=r {
                let xx = clamp(x as isize + d, w);
                out.data[y * w + xx] += v;
            }
        }
    }
    out
}

/// Window moments shared by the loss and its gradient.
struct CcMoments {
    mean_i: Plane,
    mean_s: Plane,
    /// Σ (I - Î)(S - Ŝ) per window.
    cross: Plane,
    /// Σ (I - Î)² per window.
    var_i: Plane,
    /// Σ (S - Ŝ)² per window.
    var_s: Plane,
}

impl CcMoments {
    fn compute(sif: &Plane, s: &Plane, omega: usize) -> Self {
        let n = (omega * omega) as f64;
        let sum_i = box_sum(sif, omega);
        let sum_s = box_sum(s, omega);
        let sum_ii = box_sum(&sif.zip_map(sif, |a, b| a * b), omega);
        let sum_ss = box_sum(&s.zip_map(s, |a, b| a * b), omega);
        let sum_is = box_sum(&sif.zip_map(s, |a, b| a * b), omega);
        let mean_i = Plane::new(sif.height, sif.width, sum_i.data.iter().map(|v| v / n).collect());
        let mean_s = Plane::new(sif.height, sif.width, sum_s.data.iter().map(|v| v / n).collect());
        let len = sif.data.len();
        let mut cross = Vec::with_capacity(len);
        let mut var_i = Vec::with_capacity(len);
        let mut var_s = Vec::with_capacity(len);
        for k in 0..len {
            let (mi, ms) = (mean_i.data[k], mean_s.data[k]);
            cross.push(sum_is.data[k] - n * mi * ms);
            var_i.push((sum_ii.data[k] - n * mi * mi).max(0.0));
            var_s.push((sum_ss.data[k] - n * ms * ms).max(0.0));
        }
        let (h, w) = sif.dims();
        Self {
            mean_i,
            mean_s,
            cross: Plane::new(h, w, cross),
            var_i: Plane::new(h, w, var_i),
            var_s: Plane::new(h, w, var_s),
        }
    }

    fn term(&self, k: usize, var_eps: f64) -> f64 {
        let a = self.cross.data[k];
        a * a / (self.var_i.data[k] * self.var_s.data[k] + var_eps)
    }
}

/// Per-pixel local correlation terms `cov² / (var_I · var_S + var_eps)`, each in `[0, 1]`.
pub fn local_cc_terms(sif: &Plane, s: &Plane, cfg: &CcConfig) -> Result<Plane, LossError> {
    check_same(sif, s)?;
    cfg.validate()?;
    let m = CcMoments::compute(sif, s, cfg.omega);
    let (h, w) = sif.dims();
    Ok(Plane::new(h, w, (0..h * w).map(|k| m.term(k, cfg.var_eps)).collect()))
}

/// Sum of [`local_cc_terms`] over all pixels.
pub fn local_cc(sif: &Plane, s: &Plane, cfg: &CcConfig) -> Result<f64, LossError> {
    Ok(local_cc_terms(sif, s, cfg)?.data.iter().sum())
}

pub fn cc_loss(sif: &Plane, s: &Plane, cfg: &CcConfig) -> Result<f64, LossError> {
    Ok(-local_cc(sif, s, cfg)?)
}

/// `-Σ (∇x I)² + (∇y I)²` with forward differences; the last column has no
/// horizontal difference and the last row no vertical one.
pub fn tv_loss(sif: &Plane) -> f64 {
    let (h, w) = sif.dims();
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = sif.at(y, x);
            if x + 1 < w {
                let d = sif.at(y, x + 1) - v;
                acc += d * d;
            }
            if y + 1 < h {
                let d = sif.at(y + 1, x) - v;
                acc += d * d;
            }
        }
    }
    -acc
}

pub fn grad_tv(sif: &Plane) -> Plane {
    let (h, w) = sif.dims();
    let mut g = Plane::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = sif.at(y, x);
            if x + 1 < w {
                let d = sif.at(y, x + 1) - v;
                // -(d²) differentiated wrt both endpoints
                g.data[y * w + x] += 2.0 * d;
                g.data[y * w + x + 1] -= 2.0 * d;
            }
            if y + 1 < h {
                let d = sif.at(y + 1, x) - v;
                g.data[y * w + x] += 2.0 * d;
                g.data[(y + 1) * w + x] -= 2.0 * d;
            }
        }
    }
    g
}

/// Loss decomposition at one SIF state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub cc: f64,
    pub tv: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.cc + self.tv
    }
}

pub fn loss_parts(sif: &Plane, s: &Plane, cfg: &CcConfig) -> Result<LossParts, LossError> {
    Ok(LossParts { cc: cc_loss(sif, s, cfg)?, tv: tv_loss(sif) })
}

pub fn total_loss(sif: &Plane, s: &Plane, cfg: &CcConfig) -> Result<f64, LossError> {
    Ok(loss_parts(sif, s, cfg)?.total())
}

/// Gradient of `-local_cc` with respect to the SIF pixels.
///
/// With `A`, `B`, `C` the window cross/variance sums and `D = B·C + ε`, each
/// window term `A²/D` has partial derivative
/// `count·[2A(S_p - Ŝ)/D - 2A²C(I_p - Î)/D²]` on pixel `p`, where `count`
/// is how often `p` appears in the clamped window. Summing over windows is
/// the adjoint box filter of the per-window coefficients.
pub fn grad_cc_loss(sif: &Plane, s: &Plane, cfg: &CcConfig) -> Result<Plane, LossError> {
    check_same(sif, s)?;
    cfg.validate()?;
    let m = CcMoments::compute(sif, s, cfg.omega);
    let (h, w) = sif.dims();
    let len = h * w;
    let mut alpha = Vec::with_capacity(len);
    let mut beta = Vec::with_capacity(len);
    for k in 0..len {
        let a = m.cross.data[k];
        let c = m.var_s.data[k];
        let d = m.var_i.data[k] * c + cfg.var_eps;
        alpha.push(2.0 * a / d);
        beta.push(2.0 * a * a * c / (d * d));
    }
    let alpha = Plane::new(h, w, alpha);
    let beta = Plane::new(h, w, beta);
    // grad_p = S_p·Σα - Σα·Ŝ - I_p·Σβ + Σβ·Î  (sums over windows containing p)
    let sa = box_sum_adjoint(&alpha, cfg.omega);
    let sam = box_sum_adjoint(&alpha.zip_map(&m.mean_s, |a, b| a * b), cfg.omega);
    let sb = box_sum_adjoint(&beta, cfg.omega);
    let sbm = box_sum_adjoint(&beta.zip_map(&m.mean_i, |a, b| a * b), cfg.omega);
    let grad_cc: Vec<f64> = (0..len)
        .map(|k| s.data[k] * sa.data[k] - sam.data[k] - sif.data[k] * sb.data[k] + sbm.data[k])
        .collect();
    // the loss is the negated correlation
    Ok(Plane::new(h, w, grad_cc.into_iter().map(|v| -v).collect()))
}

/// Gradient of [`total_loss`] with respect to every SIF pixel.
pub fn grad_total(sif: &Plane, s: &Plane, cfg: &CcConfig) -> Result<Plane, LossError> {
    let cc = grad_cc_loss(sif, s, cfg)?;
    Ok(cc.zip_map(&grad_tv(sif), |a, b| a + b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub step: f64,
    pub iterations: usize,
    /// Halve the step until the loss does not increase.
    pub line_search: bool,
    /// Halvings tried per iteration before the step is rejected.
    pub max_halvings: u32,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { step: 1e-3, iterations: 200, line_search: true, max_halvings: 30 }
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub cc: f64,
    pub tv: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub sif: SifImage,
    /// Row 0 is the initialization; row `k` follows iteration `k`.
    pub trace: Vec<TraceRow>,
}

impl FitResult {
    pub fn trace_csv(&self) -> String {
        trace_to_csv(&self.trace)
    }
}

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iteration,cc_term,tv_term,total\n");
    for r in trace {
        let _ = writeln!(out, "{},{:e},{:e},{:e}", r.iteration, r.cc, r.tv, r.total);
    }
    out
}

/// Optimizes SIF pixels directly against the structure loss.
///
/// Starts from the channel max of the timestamp frame and runs gradient
/// descent. The polarity volume only has to agree in spatial shape.
pub fn fit_sif(
    f: &TimestampFrame,
    e: &PolarityIntegration,
    s: &SupervisionMap,
    cfg: &CcConfig,
    opt: &FitOptions,
) -> Result<FitResult, LossError> {
    cfg.validate()?;
    if !(opt.step > 0.0 && opt.step.is_finite()) {
        return Err(LossError::BadStep);
    }
    let init = Plane::from_tensor(&f.channel_max())?;
    let e_dims = e.data.shape();
    let e_hw = (e_dims[1], e_dims[2]);
    if e_hw != init.dims() {
        return Err(LossError::ShapeMismatch { left: init.dims(), right: e_hw });
    }
    check_same(&init, &s.plane)?;

    let mut sif = init;
    let mut parts = loss_parts(&sif, &s.plane, cfg)?;
    let row = |iteration, p: LossParts| TraceRow { iteration, cc: p.cc, tv: p.tv, total: p.total() };
    let mut trace = vec![row(0, parts)];
    for it in 1..=opt.iterations {
        let g = grad_total(&sif, &s.plane, cfg)?;
        let mut step = opt.step;
        let mut accepted = None;
        let attempts = if opt.line_search { opt.max_halvings + 1 } else { 1 };
        for _ in 0..attempts {
            let cand = sif.zip_map(&g, |v, d| v - step * d);
            let cp = loss_parts(&cand, &s.plane, cfg)?;
            if !opt.line_search {
                if !cp.total().is_finite() {
                    return Err(LossError::Diverged(it));
                }
                accepted = Some((cand, cp));
                break;
            }
            if cp.total().is_finite() && cp.total() <= parts.total() {
                accepted = Some((cand, cp));
                break;
            }
            step *= 0.5;
        }
        if let Some((cand, cp)) = accepted {
            sif = cand;
            parts = cp;
        }
        trace.push(row(it, parts));
    }
    Ok(FitResult { sif: SifImage { plane: sif }, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_plane(h: usize, w: usize, seed: u64) -> Plane {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Plane::from_fn(h, w, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn constant_image_has_no_edges() {
        let m = sobel_edges(&Plane::filled(5, 6, 3.0)).unwrap();
        assert!(m.plane.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sobel_step_edge_is_four_times_step() {
        // columns 0..=1 are 0, columns 2..=4 are 1: the edge sits between x=1 and x=2
        let img = Plane::from_fn(5, 5, |_, x| if x >= 2 { 1.0 } else { 0.0 });
        let m = sobel_edges(&img).unwrap();
        for y in 0..5 {
            assert_eq!(m.plane.at(y, 1), 4.0);
            assert_eq!(m.plane.at(y, 2), 4.0);
            assert_eq!(m.plane.at(y, 0), 0.0);
            assert_eq!(m.plane.at(y, 4), 0.0);
        }
    }

    #[test]
    fn operators_differ_on_step() {
        let img = Plane::from_fn(5, 5, |_, x| if x >= 2 { 1.0 } else { 0.0 });
        let sobel = edge_map(&img, EdgeOperator::Sobel).unwrap();
        let roberts = edge_map(&img, EdgeOperator::Roberts).unwrap();
        let laplace = edge_map(&img, EdgeOperator::Laplace).unwrap();
        // Roberts at x=1: d1 = 0 - 1, d2 = 1 - 0 -> sqrt(2); zero at x=2
        assert!((roberts.plane.at(2, 1) - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(roberts.plane.at(2, 2), 0.0);
        // Laplace: |4*0 - 1| = 1 at x=1, |4 - 3| = 1 at x=2
        assert_eq!(laplace.plane.at(2, 1), 1.0);
        assert_eq!(laplace.plane.at(2, 2), 1.0);
        assert_ne!(sobel.plane, roberts.plane);
        assert_ne!(sobel.plane, laplace.plane);
        assert_ne!(roberts.plane, laplace.plane);
    }

    #[test]
    fn tiny_image_rejected() {
        assert!(matches!(sobel_edges(&Plane::filled(2, 5, 0.0)), Err(LossError::TooSmall { .. })));
    }

    #[test]
    fn self_correlation_is_near_pixel_count() {
        let x = lcg_plane(12, 10, 3);
        let cfg = CcConfig::default();
        let cc = local_cc(&x, &x, &cfg).unwrap();
        assert!((cc - 120.0).abs() < 120.0 * 1e-3, "{cc}");
        assert!((cc_loss(&x, &x, &cfg).unwrap() + cc).abs() < 1e-12);
    }

    #[test]
    fn constant_sif_has_zero_correlation() {
        let s = lcg_plane(8, 8, 5);
        let cc = local_cc(&Plane::filled(8, 8, 0.3), &s, &CcConfig::default()).unwrap();
        assert!(cc.abs() < 1e-12);
    }

    #[test]
    fn terms_are_bounded() {
        let a = lcg_plane(9, 7, 1);
        let b = lcg_plane(9, 7, 2);
        let t = local_cc_terms(&a, &b, &CcConfig { omega: 3, var_eps: 1e-5 }).unwrap();
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn config_and_shape_errors() {
        let a = Plane::filled(4, 4, 0.0);
        let b = Plane::filled(4, 5, 0.0);
        assert!(matches!(local_cc(&a, &b, &CcConfig::default()), Err(LossError::ShapeMismatch { .. })));
        assert_eq!(
            local_cc(&a, &a, &CcConfig { omega: 4, var_eps: 1e-5 }).unwrap_err(),
            LossError::BadWindow(4)
        );
        assert_eq!(
            local_cc(&a, &a, &CcConfig { omega: 3, var_eps: 0.0 }).unwrap_err(),
            LossError::BadStabilizer
        );
    }

    #[test]
    fn tv_hand_values() {
        let img = Plane::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(tv_loss(&img), -2.0);
        assert_eq!(grad_tv(&img).data(), &[2.0, -2.0, 2.0, -2.0]);
        assert_eq!(tv_loss(&Plane::filled(3, 3, 7.0)), 0.0);
        assert!(grad_tv(&Plane::filled(3, 3, 7.0)).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn box_adjoint_is_transpose() {
        // <box(x), y> == <x, box_adj(y)>
        let x = lcg_plane(7, 5, 11);
        let y = lcg_plane(7, 5, 12);
        let bx = box_sum(&x, 5);
        let ay = box_sum_adjoint(&y, 5);
        let lhs: f64 = bx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ay.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let data = Tensor::from_vec(&[2, 3, 3], (0..18).map(|v| (v % 5) as f32 / 4.0).collect()).unwrap();
        let f = TimestampFrame { data, t_ref: 1 };
        let e = PolarityIntegration { data: Tensor::zeros(&[10, 3, 3]) };
        let init = Plane::from_tensor(&f.channel_max()).unwrap();
        let s = SupervisionMap { plane: init.clone(), operator: EdgeOperator::Sobel };
        let opt = FitOptions { iterations: 0, ..FitOptions::default() };
        let r = fit_sif(&f, &e, &s, &CcConfig { omega: 3, var_eps: 1e-5 }, &opt).unwrap();
        assert_eq!(r.sif.plane, init);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn mismatched_volume_rejected() {
        let f = TimestampFrame { data: Tensor::zeros(&[2, 4, 4]), t_ref: 1 };
        let e = PolarityIntegration { data: Tensor::zeros(&[10, 4, 5]) };
        let s = SupervisionMap { plane: Plane::filled(4, 4, 0.0), operator: EdgeOperator::Sobel };
        assert!(matches!(
            fit_sif(&f, &e, &s, &CcConfig::default(), &FitOptions::default()),
            Err(LossError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn huge_step_without_line_search_diverges() {
        let f = TimestampFrame {
            data: Tensor::from_vec(&[2, 4, 4], (0..32).map(|v| (v % 3) as f32).collect()).unwrap(),
            t_ref: 1,
        };
        let e = PolarityIntegration { data: Tensor::zeros(&[1, 4, 4]) };
        let s = SupervisionMap { plane: lcg_plane(4, 4, 9), operator: EdgeOperator::Sobel };
        let opt = FitOptions { step: 1e30, iterations: 50, line_search: false, max_halvings: 0 };
        assert!(matches!(
            fit_sif(&f, &e, &s, &CcConfig { omega: 3, var_eps: 1e-5 }, &opt),
            Err(LossError::Diverged(_))
        ));
    }

    #[test]
    fn trace_csv_header() {
        let csv = trace_to_csv(&[TraceRow { iteration: 0, cc: -1.5, tv: -0.25, total: -1.75 }]);
        assert_eq!(csv, "iteration,cc_term,tv_term,total\n0,-1.5e0,-2.5e-1,-1.75e0\n");
    }
}
