//! Synthetic moving-bar scene: a bright vertical bar sliding across a dark
//! background, with events simulated between consecutive frames.

use crate::event::{simulate_events, EventWindow, SimConfig, SimError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingBar {
    pub width: usize,
    pub height: usize,
    /// Bar width in pixels.
    pub bar: usize,
    /// Left edge of the bar in the first and last frame.
    pub x_start: usize,
    pub x_end: usize,
    pub frames: usize,
    pub duration_us: u64,
    pub background: f32,
    pub foreground: f32,
}

impl Default for MovingBar {
    fn default() -> Self {
        Self {
            width: 32,
            height: 24,
            bar: 3,
            x_start: 4,
            x_end: 20,
            frames: 9,
            duration_us: 100_000,
            background: 0.1,
            foreground: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub frames: Vec<Tensor>,
    pub window: EventWindow,
}

impl Scene {
    /// Final, sharp intensity image; the natural structure target.
    pub fn last_frame(&self) -> &Tensor {
        self.frames.last().expect("scene has frames")
    }
}

impl MovingBar {
    pub fn frame(&self, index: usize) -> Tensor {
        let steps = (self.frames - 1).max(1);
        let left = self.x_start as f64 + (self.x_end as f64 - self.x_start as f64) * index as f64 / steps as f64;
        let left = left.round() as usize;
        let mut data = vec![self.background; self.width * self.height];
        // the bar spans the middle two thirds of the rows
        for y in self.height / 6..self.height - self.height / 6 {
            for x in left..(left + self.bar).min(self.width) {
                data[y * self.width + x] = self.foreground;
            }
        }
        Tensor::from_vec(&[self.height, self.width], data).unwrap()
    }

    pub fn render(&self, cfg: &SimConfig) -> Result<Scene, SimError> {
        assert!(self.frames >= 2, "need at least two frames");
        let frames: Vec<Tensor> = (0..self.frames).map(|i| self.frame(i)).collect();
        let dt = self.duration_us / (self.frames as u64 - 1);
        let mut events = Vec::new();
        for (i, pair) in frames.windows(2).enumerate() {
            let t0 = i as u64 * dt;
            let w = simulate_events(&pair[0], &pair[1], cfg, t0, t0 + dt)?;
            events.extend(w.into_events());
        }
        let window = EventWindow::new(
            events,
            self.width as u32,
            self.height as u32,
            0,
            dt * (self.frames as u64 - 1),
        )?;
        Ok(Scene { frames, window })
    }
}
