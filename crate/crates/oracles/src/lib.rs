//! Slow, direct reference implementations.
//!
//! Everything here works on plain slices and tuples and is written as the
//! most literal loop over the defining formula. Nothing in this crate may
//! call into `efk-core`: it is the independent side of every equivalence test.

/// `(x, y, t_us, polarity)` with polarity `+1` or `-1`.
pub type RawEvent = (u32, u32, u64, i8);

/// `2×H×W` latest-timestamp frame, channel 0 positive. Values are
/// `(max t at pixel - t_start) / (last t - t_start)`; 1 when the span is zero.
pub fn timestamp_frame(events: &[RawEvent], width: usize, height: usize, t_start: u64) -> Vec<f64> {
    let t_last = events.iter().map(|e| e.2).max().expect("non-empty");
    let mut latest: Vec<Option<u64>> = vec![None; 2 * width * height];
    for e in events {
        let ch = if e.3 > 0 { 0 } else { 1 };
        let slot = &mut latest[ch * width * height + e.1 as usize * width + e.0 as usize];
        *slot = Some(slot.map_or(e.2, |t| t.max(e.2)));
    }
    latest
        .into_iter()
        .map(|t| match t {
            None => 0.0,
            Some(_) if t_last == t_start => 1.0,
            Some(t) => (t - t_start) as f64 / (t_last - t_start) as f64,
        })
        .collect()
}

/// `B×H×W` volume: `E[s, y, x] = Σ_k p_k max(0, 1 - |s - t*_k|)` over events at `(x, y)`.
pub fn polarity_volume(events: &[RawEvent], width: usize, height: usize, slices: usize) -> Vec<f64> {
    let t1 = events.iter().map(|e| e.2).min().unwrap_or(0);
    let tn = events.iter().map(|e| e.2).max().unwrap_or(0);
    let mut out = vec![0.0; slices * width * height];
    for e in events {
        let t_star = if tn == t1 { 0.0 } else { (slices - 1) as f64 * (e.2 - t1) as f64 / (tn - t1) as f64 };
        for s in 0..slices {
            let wgt = (1.0 - (s as f64 - t_star).abs()).max(0.0);
            out[s * width * height + e.1 as usize * width + e.0 as usize] += e.3 as f64 * wgt;
        }
    }
    out
}

fn clamp(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Σ_i (Σ_q (I_q - Î_i)(S_q - Ŝ_i))² / ((Σ_q (I_q - Î_i)²)(Σ_q (S_q - Ŝ_i)²) + eps)
/// with `q` ranging over the replicate-padded `omega×omega` window at `i`.
pub fn local_cc(sif: &[f64], s: &[f64], height: usize, width: usize, omega: usize, eps: f64) -> f64 {
    let r = (omega / 2) as isize;
    let mut total = 0.0;
    for y in 0..height {
        for x in 0..width {
            let mut window = Vec::with_capacity(omega * omega);
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = clamp(y as isize + dy, height);
                    let xx = clamp(x as isize + dx, width);
                    window.push((sif[yy * width + xx], s[yy * width + xx]));
                }
            }
            let n = window.len() as f64;
            let mi = window.iter().map(|p| p.0).sum::<f64>() / n;
            let ms = window.iter().map(|p| p.1).sum::<f64>() / n;
            let cross: f64 = window.iter().map(|p| (p.0 - mi) * (p.1 - ms)).sum();
            let vi: f64 = window.iter().map(|p| (p.0 - mi).powi(2)).sum();
            let vs: f64 = window.iter().map(|p| (p.1 - ms).powi(2)).sum();
            total += cross * cross / (vi * vs + eps);
        }
    }
    total
}

/// `-Σ (I[y, x+1] - I[y, x])² + (I[y+1, x] - I[y, x])²`, differences beyond the border are 0.
pub fn tv(img: &[f64], height: usize, width: usize) -> f64 {
    let mut acc = 0.0;
    for y in 0..height {
        for x in 0..width {
            let v = img[y * width + x];
            let gx = if x + 1 < width { img[y * width + x + 1] - v } else { 0.0 };
            let gy = if y + 1 < height { img[(y + 1) * width + x] - v } else { 0.0 };
            acc += gx * gx + gy * gy;
        }
    }
    -acc
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Zero-padded same-size cross-correlation, six nested loops.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f32],
    c_in: usize,
    height: usize,
    width: usize,
    weight: &[f32],
    c_out: usize,
    k: usize,
    bias: &[f32],
) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; c_out * height * width];
    for co in 0..c_out {
        for y in 0..height {
            for x in 0..width {
                let mut acc = bias[co] as f64;
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let yy = y as isize + ky as isize - r;
                            let xx = x as isize + kx as isize - r;
                            if yy >= 0 && xx >= 0 && (yy as usize) < height && (xx as usize) < width {
                                acc += weight[((co * c_in + ci) * k + ky) * k + kx] as f64
                                    * input[(ci * height + yy as usize) * width + xx as usize] as f64;
                            }
                        }
                    }
                }
                out[(co * height + y) * width + x] = acc;
            }
        }
    }
    out
}

/// Per-pixel `(mean, max)` across channels.
pub fn channel_mean_max(input: &[f32], c: usize, height: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let plane = height * width;
    let mut mean = vec![0.0; plane];
    let mut max = vec![f64::NEG_INFINITY; plane];
    for p in 0..plane {
        for ch in 0..c {
            let v = input[ch * plane + p] as f64;
            mean[p] += v / c as f64;
            max[p] = max[p].max(v);
        }
    }
    (mean, max)
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Event features times `sigmoid(conv7x7([mean; max](rgb)))`.
#[allow(clippy::too_many_arguments)]
pub fn erm(
    rgb: &[f32],
    c_rgb: usize,
    event: &[f32],
    c_event: usize,
    height: usize,
    width: usize,
    conv_w: &[f32],
    conv_b: f32,
) -> Vec<f64> {
    let (mean, max) = channel_mean_max(rgb, c_rgb, height, width);
    let pooled: Vec<f32> = mean.iter().chain(max.iter()).map(|&v| v as f32).collect();
    let logits = conv2d(&pooled, 2, height, width, conv_w, 1, 7, &[conv_b]);
    let plane = height * width;
    let mut out = vec![0.0; c_event * plane];
    for ch in 0..c_event {
        for p in 0..plane {
            out[ch * plane + p] = event[ch * plane + p] as f64 * sigmoid(logits[p]);
        }
    }
    out
}

/// Matrix view of a 1×1 convolution: `out[o][n] = b[o] + Σ_i W[o][i] X[i][n]`.
fn project(w: &[f32], b: &[f32], x: &[f32], c_out: usize, c_in: usize, n: usize) -> Vec<Vec<f64>> {
    (0..c_out)
        .map(|o| {
            (0..n)
                .map(|j| b[o] as f64 + (0..c_in).map(|i| w[o * c_in + i] as f64 * x[i * n + j] as f64).sum::<f64>())
                .collect()
        })
        .collect()
}

/// LDAM weights in plain slices: 1×1 filters as row-major `out×in` matrices.
pub struct LdamWeights<'a> {
    pub q: (&'a [f32], &'a [f32]),
    pub k: (&'a [f32], &'a [f32]),
    pub v: (&'a [f32], &'a [f32]),
    pub out: (&'a [f32], &'a [f32]),
    pub reduced: usize,
}

/// Returns `(fused C×N, attention N×N)` with row-wise softmax over keys.
pub fn ldam(rgb: &[f32], event: &[f32], c: usize, n: usize, w: &LdamWeights<'_>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let cr = w.reduced;
    // f_R' : N×C'
    let q = project(w.q.0, w.q.1, rgb, cr, c, n);
    let q_t: Vec<Vec<f64>> = (0..n).map(|i| (0..cr).map(|ch| q[ch][i]).collect()).collect();
    // f_E1 : C'×N, f_E2 : C'×N
    let k = project(w.k.0, w.k.1, event, cr, c, n);
    let v = project(w.v.0, w.v.1, event, cr, c, n);
    let mut gsc = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for ch in 0..cr {
                gsc[i][j] += q_t[i][ch] * k[ch][j];
            }
        }
        let m = gsc[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = gsc[i].iter().map(|v| (v - m).exp()).sum();
        for j in 0..n {
            gsc[i][j] = (gsc[i][j] - m).exp() / z;
        }
    }
    // f_E' = f_E2 · GSCᵀ : C'×N
    let mut gathered = vec![0.0f32; cr * n];
    for ch in 0..cr {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += v[ch][j] * gsc[i][j];
            }
            gathered[ch * n + i] = acc as f32;
        }
    }
    let proj = project(w.out.0, w.out.1, &gathered, c, cr, n);
    let mut fused = vec![0.0; c * n];
    for ch in 0..c {
        for j in 0..n {
            fused[ch * n + j] = rgb[ch * n + j] as f64 + proj[ch][j];
        }
    }
    (fused, gsc)
}

/// `(x, y, w, h)` boxes.
pub type RawBox = (f64, f64, f64, f64);

pub fn iou(a: RawBox, b: RawBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.0, a.1, a.0 + a.2, a.1 + a.3);
    let (bx1, by1, bx2, by2) = (b.0, b.1, b.0 + b.2, b.1 + b.3);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.2 * a.3 + b.2 * b.3 - inter)
}

/// Enumerates every partial one-to-one assignment of detections to ground
/// truths (pairs need IoU >= thr) and picks the one the greedy rule selects:
/// the lexicographic maximum, over detections in score order (stable), of
/// the matched IoU (unmatched = -1), preferring lower ground-truth indices on
/// equal IoU. Returns TP flags in input order.
pub fn enumerate_matching(scores: &[f64], dets: &[RawBox], gts: &[RawBox], thr: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    // key per assignment: for each det in order, (iou or -1, -(gt index))
    let mut best: Option<(Vec<(f64, i64)>, Vec<Option<usize>>)> = None;
    let mut current = vec![None; dets.len()];
    fn rec(
        pos: usize,
        order: &[usize],
        dets: &[RawBox],
        gts: &[RawBox],
        thr: f64,
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        best: &mut Option<(Vec<(f64, i64)>, Vec<Option<usize>>)>,
    ) {
        if pos == order.len() {
            let key: Vec<(f64, i64)> = order
                .iter()
                .map(|&d| match current[d] {
                    Some(g) => (iou(dets[d], gts[g]), -(g as i64)),
                    None => (-1.0, 0),
                })
                .collect();
            let better = match best {
                None => true,
                Some((bk, _)) => key.partial_cmp(bk) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                *best = Some((key, current.clone()));
            }
            return;
        }
        let d = order[pos];
        current[d] = None;
        rec(pos + 1, order, dets, gts, thr, used, current, best);
        for g in 0..gts.len() {
            if !used[g] && iou(dets[d], gts[g]) >= thr {
                used[g] = true;
                current[d] = Some(g);
                rec(pos + 1, order, dets, gts, thr, used, current, best);
                current[d] = None;
                used[g] = false;
            }
        }
    }
    let mut used = vec![false; gts.len()];
    rec(0, &order, dets, gts, thr, &mut used, &mut current, &mut best);
    best.map(|(_, a)| a.iter().map(Option::is_some).collect()).unwrap_or_default()
}

/// 101-point AP straight from the definition: at each recall level `r`,
/// the best precision over all ranked prefixes whose recall reaches `r`.
pub fn ap101(ranked_tp: &[bool], num_gt: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let mut best: f64 = 0.0;
        for k in 1..=ranked_tp.len() {
            let hits = ranked_tp[..k].iter().filter(|&&t| t).count();
            let recall = hits as f64 / num_gt as f64;
            if recall >= r {
                best = best.max(hits as f64 / k as f64);
            }
        }
        total += best;
    }
    total / 101.0
}

/// `(frame, class, box, score)` detections and `(frame, class, box)` ground truths.
pub type RawDet<'a> = (&'a str, &'a str, RawBox, f64);
pub type RawGt<'a> = (&'a str, &'a str, RawBox);

/// AP of one class at one threshold using [`enumerate_matching`] per frame.
pub fn class_ap(dets: &[RawDet<'_>], gts: &[RawGt<'_>], class: &str, thr: f64) -> Option<f64> {
    let cg: Vec<&RawGt<'_>> = gts.iter().filter(|g| g.1 == class).collect();
    if cg.is_empty() {
        return None;
    }
    let cd: Vec<(usize, &RawDet<'_>)> = dets.iter().filter(|d| d.1 == class).enumerate().collect();
    let mut tp = vec![false; cd.len()];
    let mut frames: Vec<&str> = cd.iter().map(|(_, d)| d.0).collect();
    frames.sort();
    frames.dedup();
    for f in frames {
        let idx: Vec<usize> = cd.iter().filter(|(_, d)| d.0 == f).map(|(i, _)| *i).collect();
        let scores: Vec<f64> = idx.iter().map(|&i| cd[i].1 .3).collect();
        let boxes: Vec<RawBox> = idx.iter().map(|&i| cd[i].1 .2).collect();
        let fg: Vec<RawBox> = cg.iter().filter(|g| g.0 == f).map(|g| g.2).collect();
        for (k, flag) in enumerate_matching(&scores, &boxes, &fg, thr).into_iter().enumerate() {
            tp[idx[k]] = flag;
        }
    }
    let mut order: Vec<usize> = (0..cd.len()).collect();
    order.sort_by(|&a, &b| cd[b].1 .3.partial_cmp(&cd[a].1 .3).unwrap());
    let ranked: Vec<bool> = order.iter().map(|&i| tp[i]).collect();
    Some(ap101(&ranked, cg.len()))
}

/// `(mAP50, mAP50:95)` over classes present in the ground truth.
pub fn maps(dets: &[RawDet<'_>], gts: &[RawGt<'_>]) -> Option<(f64, f64)> {
    let mut classes: Vec<&str> = gts.iter().map(|g| g.1).collect();
    classes.sort();
    classes.dedup();
    if classes.is_empty() {
        return None;
    }
    let thresholds: Vec<f64> = (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect();
    let mut m50 = 0.0;
    let mut m5095 = 0.0;
    for c in &classes {
        m50 += class_ap(dets, gts, c, 0.5).unwrap();
        m5095 += thresholds.iter().map(|&t| class_ap(dets, gts, c, t).unwrap()).sum::<f64>() / 10.0;
    }
    Some((m50 / classes.len() as f64, m5095 / classes.len() as f64))
}

/// Projects `(x, y)` through a row-major 3×3 matrix.
pub fn project_point(m: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let u = m[0] * x + m[1] * y + m[2];
    let v = m[3] * x + m[4] * y + m[5];
    let w = m[6] * x + m[7] * y + m[8];
    (u / w, v / w)
}

/// Hull `(x0, y0, x1, y1)` of a box's four projected corners.
pub fn warped_hull(m: &[f64; 9], b: RawBox) -> (f64, f64, f64, f64) {
    let corners = [(b.0, b.1), (b.0 + b.2, b.1), (b.0, b.1 + b.3), (b.0 + b.2, b.1 + b.3)];
    let pts: Vec<(f64, f64)> = corners.iter().map(|&(x, y)| project_point(m, x, y)).collect();
    let x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    (x0, y0, x1, y1)
}
