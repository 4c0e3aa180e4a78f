//! Event data model, the `EVT1` / CSV codecs, window slicing and a
//! frame-pair event simulator.

use std::fmt::Write as _;

use thiserror::Error;

use crate::tensor::Tensor;

/// Default window duration in microseconds (100 ms).
pub const DEFAULT_WINDOW_US: u64 = 100_000;

pub const EVT1_MAGIC: [u8; 4] = *b"EVT1";
pub const EVT1_HEADER_LEN: usize = 16;
/// u16 x, u16 y, i8 polarity, pad byte, u64 timestamp.
pub const EVT1_RECORD_LEN: usize = 14;

const CSV_HEADER: &str = "x,y,t_us,p";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(v: i64) -> Option<Self> {
        match v {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    /// Channel index in a two-channel (positive, negative) layout.
    pub fn channel(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u32,
    pub y: u32,
    /// Microseconds.
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u32, y: u32, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }

    fn order_key(&self) -> (u64, u32, u32, Polarity) {
        (self.t, self.y, self.x, self.p)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EventError {
    #[error("event {index}: ({x}, {y}) outside {width}x{height}")]
    OutOfRange {
        index: usize,
        x: u64,
        y: u64,
        width: u32,
        height: u32,
    },
    #[error("event {index}: timestamp {t} precedes previous timestamp {prev}")]
    NonMonotonic { index: usize, t: u64, prev: u64 },
    #[error("event {index}: timestamp {t} outside window [{t_start}, {t_end}]")]
    OutsideWindow {
        index: usize,
        t: u64,
        t_start: u64,
        t_end: u64,
    },
    #[error("window bounds [{t_start}, {t_end}] are empty")]
    EmptyBounds { t_start: u64, t_end: u64 },
    #[error("resolution must be non-zero, got {width}x{height}")]
    ZeroResolution { width: u32, height: u32 },
    #[error("duration must be positive")]
    ZeroDuration,
}

/// An ordered run of events on a `width`×`height` sensor within `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventWindow {
    events: Vec<Event>,
    width: u32,
    height: u32,
    t_start: u64,
    t_end: u64,
}

impl EventWindow {
    pub fn new(
        events: Vec<Event>,
        width: u32,
        height: u32,
        t_start: u64,
        t_end: u64,
    ) -> Result<Self, EventError> {
        if width == 0 || height == 0 {
            return Err(EventError::ZeroResolution { width, height });
        }
        if t_end <= t_start {
            return Err(EventError::EmptyBounds { t_start, t_end });
        }
        let mut prev = None;
        for (index, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(EventError::OutOfRange {
                    index,
                    x: e.x as u64,
                    y: e.y as u64,
                    width,
                    height,
                });
            }
            if let Some(prev) = prev {
                if e.t < prev {
                    return Err(EventError::NonMonotonic { index, t: e.t, prev });
                }
            }
            if e.t < t_start || e.t > t_end {
                return Err(EventError::OutsideWindow {
                    index,
                    t: e.t,
                    t_start,
                    t_end,
                });
            }
            prev = Some(e.t);
        }
        Ok(Self {
            events,
            width,
            height,
            t_start,
            t_end,
        })
    }

    /// Builds a window whose bounds are derived from the events:
    /// `[first.t, last.t + 1]`, or `[0, 1]` when empty.
    pub fn from_events(events: Vec<Event>, width: u32, height: u32) -> Result<Self, EventError> {
        let (t_start, t_end) = natural_bounds(&events);
        Self::new(events, width, height, t_start, t_end)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn t_start(&self) -> u64 {
        self.t_start
    }

    pub fn t_end(&self) -> u64 {
        self.t_end
    }

    pub fn duration(&self) -> u64 {
        self.t_end - self.t_start
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn natural_bounds(events: &[Event]) -> (u64, u64) {
    match (events.first(), events.last()) {
        (Some(first), Some(last)) => (first.t, last.t.max(first.t) + 1),
        _ => (0, 1),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Evt1,
    Csv,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("header: expected magic \"EVT1\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("header truncated: {0} bytes, need 16")]
    TruncatedHeader(usize),
    #[error("header declares {declared} records but payload holds {available} bytes of record data")]
    CountMismatch { declared: u64, available: usize },
    #[error("record {index}: pad byte is {value:#04x}, expected 0x00")]
    BadPad { index: usize, value: u8 },
    #[error("record {index}: polarity byte {value} is not +1 or -1")]
    BadPolarity { index: usize, value: i64 },
    #[error("line {line}: {message}")]
    CsvSyntax { line: usize, message: String },
    #[error("csv decoding requires an explicit resolution")]
    MissingResolution,
    #[error("resolution {width}x{height} exceeds the u16 range of EVT1")]
    ResolutionTooLarge { width: u32, height: u32 },
    #[error("csv line {line}: {source}")]
    CsvEvent { line: usize, source: EventError },
    #[error(transparent)]
    Event(#[from] EventError),
}

/// Decodes a complete byte buffer. `resolution` is required for CSV and ignored for EVT1.
pub fn decode_events(
    bytes: &[u8],
    format: EventFormat,
    resolution: Option<(u32, u32)>,
) -> Result<EventWindow, CodecError> {
    match format {
        EventFormat::Evt1 => decode_evt1(bytes),
        EventFormat::Csv => {
            let (w, h) = resolution.ok_or(CodecError::MissingResolution)?;
            decode_csv(bytes, w, h)
        }
    }
}

pub fn encode_events(window: &EventWindow, format: EventFormat) -> Result<Vec<u8>, CodecError> {
    match format {
        EventFormat::Evt1 => encode_evt1(window),
        EventFormat::Csv => Ok(encode_csv(window)),
    }
}

pub fn encode_evt1(window: &EventWindow) -> Result<Vec<u8>, CodecError> {
    let (width, height) = (window.width(), window.height());
    let (w16, h16) = match (u16::try_from(width), u16::try_from(height)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => return Err(CodecError::ResolutionTooLarge { width, height }),
    };
    let mut out = Vec::with_capacity(EVT1_HEADER_LEN + EVT1_RECORD_LEN * window.len());
    out.extend_from_slice(&EVT1_MAGIC);
    out.extend_from_slice(&w16.to_le_bytes());
    out.extend_from_slice(&h16.to_le_bytes());
    out.extend_from_slice(&(window.len() as u64).to_le_bytes());
    for e in window.events() {
        // x < width <= u16::MAX, checked by the window invariant.
        out.extend_from_slice(&(e.x as u16).to_le_bytes());
        out.extend_from_slice(&(e.y as u16).to_le_bytes());
        out.push(e.p.sign() as u8);
        out.push(0);
        out.extend_from_slice(&e.t.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_evt1(bytes: &[u8]) -> Result<EventWindow, CodecError> {
    if bytes.len() < EVT1_HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != EVT1_MAGIC {
            return Err(CodecError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(CodecError::TruncatedHeader(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != EVT1_MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]) as u32;
    let height = u16::from_le_bytes([bytes[6], bytes[7]]) as u32;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let payload = &bytes[EVT1_HEADER_LEN..];
    let expected = (count as u128) * EVT1_RECORD_LEN as u128;
    if expected != payload.len() as u128 {
        return Err(CodecError::CountMismatch {
            declared: count,
            available: payload.len(),
        });
    }
    let mut events = Vec::with_capacity(count as usize);
    for (index, rec) in payload.chunks_exact(EVT1_RECORD_LEN).enumerate() {
        let x = u16::from_le_bytes([rec[0], rec[1]]) as u32;
        let y = u16::from_le_bytes([rec[2], rec[3]]) as u32;
        let praw = rec[4] as i8;
        let p = Polarity::from_sign(praw as i64).ok_or(CodecError::BadPolarity {
            index,
            value: praw as i64,
        })?;
        if rec[5] != 0 {
            return Err(CodecError::BadPad {
                index,
                value: rec[5],
            });
        }
        let t = u64::from_le_bytes(rec[6..14].try_into().unwrap());
        events.push(Event { x, y, t, p });
    }
    if width == 0 || height == 0 {
        return Err(EventError::ZeroResolution { width, height }.into());
    }
    Ok(EventWindow::from_events(events, width, height)?)
}

/// CSV with a `x,y,t_us,p` header line.
pub fn encode_csv(window: &EventWindow) -> Vec<u8> {
    let mut s = String::with_capacity(16 * (window.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for e in window.events() {
        let _ = writeln!(s, "{},{},{},{}", e.x, e.y, e.t, e.p.sign());
    }
    s.into_bytes()
}

pub fn decode_csv(bytes: &[u8], width: u32, height: u32) -> Result<EventWindow, CodecError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CodecError::CsvSyntax {
        line: line_of_offset(bytes, e.valid_up_to()),
        message: "invalid UTF-8".into(),
    })?;
    if width == 0 || height == 0 {
        return Err(EventError::ZeroResolution { width, height }.into());
    }
    let mut events = Vec::new();
    let mut prev: Option<u64> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if i == 0 && trimmed.replace(' ', "") == CSV_HEADER {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(CodecError::CsvSyntax {
                line,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let int = |idx: usize, name: &str| -> Result<i64, CodecError> {
            fields[idx].parse::<i64>().map_err(|_| CodecError::CsvSyntax {
                line,
                message: format!("{name} is not an integer: {:?}", fields[idx]),
            })
        };
        let (x, y, t, p) = (int(0, "x")?, int(1, "y")?, int(2, "t_us")?, int(3, "p")?);
        let index = events.len();
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            return Err(CodecError::CsvEvent {
                line,
                source: EventError::OutOfRange {
                    index,
                    x: x.max(0) as u64,
                    y: y.max(0) as u64,
                    width,
                    height,
                },
            });
        }
        if t < 0 {
            return Err(CodecError::CsvSyntax {
                line,
                message: format!("negative timestamp {t}"),
            });
        }
        let t = t as u64;
        if let Some(prev) = prev {
            if t < prev {
                return Err(CodecError::CsvEvent {
                    line,
                    source: EventError::NonMonotonic { index, t, prev },
                });
            }
        }
        let p = Polarity::from_sign(p).ok_or(CodecError::CsvSyntax {
            line,
            message: format!("polarity must be 1 or -1, found {p}"),
        })?;
        prev = Some(t);
        events.push(Event::new(x as u32, y as u32, t, p));
    }
    Ok(EventWindow::from_events(events, width, height)?)
}

fn line_of_offset(bytes: &[u8], offset: usize) -> usize {
    bytes[..offset].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Events with `t0 <= t <= t0 + duration`, with bounds reset to that interval.
pub fn window_slice(window: &EventWindow, t0: u64, duration: u64) -> Result<EventWindow, EventError> {
    if duration == 0 {
        return Err(EventError::ZeroDuration);
    }
    let t1 = t0.saturating_add(duration);
    let ev = window.events();
    let lo = ev.partition_point(|e| e.t < t0);
    let hi = ev.partition_point(|e| e.t <= t1);
    let events = ev[lo..hi.max(lo)].to_vec();
    Ok(EventWindow {
        events,
        width: window.width,
        height: window.height,
        t_start: t0,
        t_end: t1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Contrast threshold in log-intensity units.
    pub c: f64,
    /// Floor added to intensities before taking the log.
    pub eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { c: 0.2, eps: 1e-3 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("frame shapes differ: {prev:?} vs {next:?}")]
    ShapeMismatch { prev: Vec<usize>, next: Vec<usize> },
    #[error("frames must be rank-2 grayscale, got {0:?}")]
    NotGrayscale(Vec<usize>),
    #[error("frame holds a negative or non-finite intensity at ({x}, {y})")]
    BadIntensity { x: usize, y: usize },
    #[error("contrast threshold and eps must be positive")]
    BadConfig,
    #[error(transparent)]
    Event(#[from] EventError),
}

/// Number of events and their polarity emitted at a pixel for one log ratio.
///
/// Nothing fires unless `|ratio| > c`; above that the count is `floor(|ratio| / c)`.
pub fn pixel_event_count(log_ratio: f64, c: f64) -> (u64, Polarity) {
    let p = if log_ratio >= 0.0 {
        Polarity::Positive
    } else {
        Polarity::Negative
    };
    let mag = log_ratio.abs();
    if mag <= c || !mag.is_finite() {
        return (0, p);
    }
    ((mag / c).floor() as u64, p)
}

/// Emits events between two grayscale frames.
///
/// Uses frame-pair semantics: the reference intensity is `frame_prev`, not the
/// intensity at the pixel's last event. `k` events at a pixel get timestamps
/// `t0 + ceil(j * (t1 - t0) / k)` for `j = 1..=k`.
pub fn simulate_events(
    frame_prev: &Tensor,
    frame_next: &Tensor,
    cfg: &SimConfig,
    t0: u64,
    t1: u64,
) -> Result<EventWindow, SimError> {
    if frame_prev.shape() != frame_next.shape() {
        return Err(SimError::ShapeMismatch {
            prev: frame_prev.shape().to_vec(),
            next: frame_next.shape().to_vec(),
        });
    }
    let [h, w] = frame_prev
        .dims2()
        .map_err(|_| SimError::NotGrayscale(frame_prev.shape().to_vec()))?;
    if !(cfg.c > 0.0 && cfg.eps > 0.0) {
        return Err(SimError::BadConfig);
    }
    if t1 <= t0 {
        return Err(EventError::EmptyBounds { t_start: t0, t_end: t1 }.into());
    }
    let span = (t1 - t0) as u128;
    let mut events = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let a = frame_prev.data()[y * w + x] as f64;
            let b = frame_next.data()[y * w + x] as f64;
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return Err(SimError::BadIntensity { x, y });
            }
            let ratio = ((b + cfg.eps) / (a + cfg.eps)).ln();
            let (k, p) = pixel_event_count(ratio, cfg.c);
            for j in 1..=k as u128 {
                let offset = (j * span).div_ceil(k as u128) as u64;
                events.push(Event::new(x as u32, y as u32, t0 + offset, p));
            }
        }
    }
    events.sort_unstable_by_key(Event::order_key);
    Ok(EventWindow::new(events, w as u32, h as u32, t0, t1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(x: u32, y: u32, t: u64, p: i64) -> Event {
        Event::new(x, y, t, Polarity::from_sign(p).unwrap())
    }

    #[test]
    fn empty_evt1_is_header_only() {
        let w = EventWindow::from_events(vec![], 640, 480).unwrap();
        let bytes = encode_evt1(&w).unwrap();
        assert_eq!(bytes.len(), 16);
        let back = decode_evt1(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!((back.width(), back.height()), (640, 480));
    }

    #[test]
    fn single_event_record_layout() {
        let w = EventWindow::from_events(vec![ev(3, 4, 1000, -1)], 640, 480).unwrap();
        let bytes = encode_evt1(&w).unwrap();
        assert_eq!(bytes.len(), EVT1_HEADER_LEN + EVT1_RECORD_LEN);
        assert_eq!(&bytes[16..], &[3, 0, 4, 0, 0xff, 0, 0xe8, 0x03, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn csv_single_record() {
        let w = decode_csv(b"3,4,1000,1\n", 640, 480).unwrap();
        assert_eq!(w.events(), &[ev(3, 4, 1000, 1)]);
        let with_header = decode_csv(b"x,y,t_us,p\n3,4,1000,1\n", 640, 480).unwrap();
        assert_eq!(with_header.events(), w.events());
    }

    #[test]
    fn csv_errors_are_located() {
        let err = decode_csv(b"x,y,t_us,p\n1,1,10,1\n1,1,5,1\n", 4, 4).unwrap_err();
        assert_eq!(
            err,
            CodecError::CsvEvent {
                line: 3,
                source: EventError::NonMonotonic { index: 1, t: 5, prev: 10 }
            }
        );
        let err = decode_csv(b"1,9,10,1\n", 4, 4).unwrap_err();
        assert!(matches!(err, CodecError::CsvEvent { line: 1, .. }));
        let err = decode_csv(b"1,1,10,0\n", 4, 4).unwrap_err();
        assert!(matches!(err, CodecError::CsvSyntax { line: 1, .. }));
        assert_eq!(
            decode_events(b"", EventFormat::Csv, None).unwrap_err(),
            CodecError::MissingResolution
        );
    }

    #[test]
    fn evt1_errors_are_located() {
        let w = EventWindow::from_events(vec![ev(0, 0, 1, 1), ev(1, 1, 2, 1)], 2, 2).unwrap();
        let good = encode_evt1(&w).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_evt1(&bad), Err(CodecError::BadMagic(_))));

        assert!(matches!(
            decode_evt1(&good[..good.len() - 1]),
            Err(CodecError::CountMismatch { declared: 2, .. })
        ));

        // second record: x = 5 on a 2x2 sensor
        let mut bad = good.clone();
        bad[16 + 14] = 5;
        assert_eq!(
            decode_evt1(&bad).unwrap_err(),
            CodecError::Event(EventError::OutOfRange { index: 1, x: 5, y: 1, width: 2, height: 2 })
        );

        // second record timestamp goes backwards
        let mut bad = good.clone();
        bad[16 + 14 + 6..16 + 28].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(
            decode_evt1(&bad),
            Err(CodecError::Event(EventError::NonMonotonic { index: 1, .. }))
        ));

        let mut bad = good;
        bad[16 + 4] = 3;
        assert_eq!(decode_evt1(&bad).unwrap_err(), CodecError::BadPolarity { index: 0, value: 3 });
    }

    #[test]
    fn oversized_resolution_cannot_be_encoded() {
        let w = EventWindow::from_events(vec![], 70_000, 10).unwrap();
        assert!(matches!(encode_evt1(&w), Err(CodecError::ResolutionTooLarge { .. })));
        // csv has no such limit
        assert!(encode_events(&w, EventFormat::Csv).is_ok());
    }

    #[test]
    fn identical_frames_emit_nothing() {
        let f = Tensor::from_vec(&[4, 4], (0..16).map(|v| v as f32 / 16.0).collect()).unwrap();
        let w = simulate_events(&f, &f, &SimConfig::default(), 0, 1000).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn threshold_is_strict() {
        let prev = Tensor::full(&[4, 4], 0.5);
        let mut next = prev.clone();
        next.data_mut()[5] = 0.9;
        let c = ((0.9f32 as f64 + 1e-3) / (0.5 + 1e-3)).ln();
        let w = simulate_events(&prev, &next, &SimConfig { c, eps: 1e-3 }, 0, 1000).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn two_and_a_half_thresholds_give_two_events() {
        let c = 0.2;
        let eps = 1e-3;
        let prev = Tensor::full(&[4, 4], 0.25);
        let mut next = prev.clone();
        // (b + eps) = (a + eps) * exp(2.5c)
        let b = (0.25 + eps) * (2.5f64 * c).exp() - eps;
        next.data_mut()[4 * 2 + 1] = b as f32;
        let w = simulate_events(&prev, &next, &SimConfig { c, eps }, 100, 300).unwrap();
        assert_eq!(w.events(), &[ev(1, 2, 200, 1), ev(1, 2, 300, 1)]);
    }

    #[test]
    fn simulated_stream_is_sorted_by_time_then_row_then_column() {
        let prev = Tensor::full(&[3, 3], 0.1);
        let next = Tensor::from_vec(&[3, 3], vec![0.9, 0.1, 0.01, 0.1, 0.5, 0.1, 0.01, 0.1, 0.9]).unwrap();
        let w = simulate_events(&prev, &next, &SimConfig::default(), 0, 90).unwrap();
        let keys: Vec<_> = w.events().iter().map(Event::order_key).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(w.events().iter().all(|e| e.t > 0 && e.t <= 90));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        assert!(matches!(
            simulate_events(&a, &b, &SimConfig::default(), 0, 1),
            Err(SimError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn slice_edges() {
        let events = vec![ev(0, 0, 10, 1), ev(1, 0, 20, -1), ev(0, 1, 30, 1)];
        let w = EventWindow::new(events.clone(), 2, 2, 0, 40).unwrap();
        let full = window_slice(&w, 0, 40).unwrap();
        assert_eq!(full.events(), &events[..]);
        let none = window_slice(&w, 100, 5).unwrap();
        assert!(none.is_empty());
        assert_eq!((none.t_start(), none.t_end()), (100, 105));
        let inner = window_slice(&w, 20, 10).unwrap();
        assert_eq!(inner.events(), &events[1..]);
        assert_eq!(window_slice(&w, 0, 0).unwrap_err(), EventError::ZeroDuration);
    }

    fn arb_window() -> impl Strategy<Value = EventWindow> {
        (1u32..50, 1u32..50, prop::collection::vec((any::<u32>(), any::<u32>(), 0u64..5_000, any::<bool>()), 0..300))
            .prop_map(|(w, h, raw)| {
                let mut evs: Vec<Event> = raw
                    .into_iter()
                    .map(|(x, y, t, p)| {
                        Event::new(x % w, y % h, t, if p { Polarity::Positive } else { Polarity::Negative })
                    })
                    .collect();
                evs.sort_by_key(Event::order_key);
                EventWindow::from_events(evs, w, h).unwrap()
            })
    }

    proptest! {
        #[test]
        fn evt1_round_trip(w in arb_window()) {
            let bytes = encode_evt1(&w).unwrap();
            let back = decode_evt1(&bytes).unwrap();
            prop_assert_eq!(&back, &w);
            prop_assert_eq!(encode_evt1(&back).unwrap(), bytes);
        }

        #[test]
        fn csv_round_trip(w in arb_window()) {
            let back = decode_csv(&encode_csv(&w), w.width(), w.height()).unwrap();
            prop_assert_eq!(back, w);
        }

        #[test]
        fn slice_matches_linear_filter(w in arb_window(), t0 in 0u64..5_000, dur in 1u64..3_000) {
            let s = window_slice(&w, t0, dur).unwrap();
            let expected: Vec<Event> =
                w.events().iter().copied().filter(|e| e.t >= t0 && e.t <= t0 + dur).collect();
            prop_assert_eq!(s.events(), &expected[..]);
        }

        #[test]
        fn per_pixel_counts_follow_floor_rule(
            vals in prop::collection::vec((0.0f32..1.0, 0.0f32..1.0), 9),
            c in 0.05f64..0.6,
        ) {
            let prev = Tensor::from_vec(&[3, 3], vals.iter().map(|v| v.0).collect()).unwrap();
            let next = Tensor::from_vec(&[3, 3], vals.iter().map(|v| v.1).collect()).unwrap();
            let cfg = SimConfig { c, eps: 1e-3 };
            let w = simulate_events(&prev, &next, &cfg, 0, 10_000).unwrap();
            for (i, (a, b)) in vals.iter().enumerate() {
                let r = ((b.to_owned() as f64 + 1e-3) / (*a as f64 + 1e-3)).ln();
                let expected = if r.abs() <= c { 0 } else { (r.abs() / c).floor() as usize };
                let got: Vec<_> = w.events().iter().filter(|e| (e.y * 3 + e.x) as usize == i).collect();
                prop_assert_eq!(got.len(), expected);
                prop_assert!(got.iter().all(|e| e.p.sign() as f64 * r > 0.0));
            }
        }
    }
}
