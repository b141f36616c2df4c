//! Procedural bouncing-sprites video generation and the on-disk containers.
//!
//! Sequences are short clips of sprites moving with constant velocity and
//! mirror-reflecting off the frame walls. By default each sprite is a fixed
//! procedural glyph drawn into its own channel, so sprites never interact;
//! ingested digit bitmaps can substitute for the glyphs.

mod container;
mod idx;

pub use container::{load_container, save_container};
pub use idx::load_idx_digits;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A video: `n` frames of `channels x height x width` pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    channels: usize,
    height: usize,
    width: usize,
    frames: Vec<f32>,
}

impl VideoSequence {
    /// All-black sequence of the given dimensions.
    pub fn zeros(n_frames: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        if n_frames == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape("video dimensions must be positive".into()));
        }
        Ok(Self { channels, height, width, frames: vec![0.0; n_frames * channels * height * width] })
    }

    /// Wraps raw frame data, validating the pixel range.
    pub fn from_raw(
        channels: usize,
        height: usize,
        width: usize,
        frames: Vec<f32>,
    ) -> Result<Self> {
        let frame_len = channels * height * width;
        if frame_len == 0 || frames.is_empty() || frames.len() % frame_len != 0 {
            return Err(Error::Shape(format!(
                "frame data length {} is not a positive multiple of {frame_len}",
                frames.len()
            )));
        }
        if frames.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("pixel outside [0, 1]".into()));
        }
        Ok(Self { channels, height, width, frames })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len() / self.frame_len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn raw(&self) -> &[f32] {
        &self.frames
    }

    /// Frame `t` as a flat `f32` slice in channel, row, column order.
    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.frame_len();
        &self.frames[t * len..(t + 1) * len]
    }

    /// Frame `t` widened to `f64` for the model.
    pub fn frame_f64(&self, t: usize) -> Vec<f64> {
        self.frame(t).iter().map(|&v| v as f64).collect()
    }

    pub fn pixel(&self, t: usize, c: usize, y: usize, x: usize) -> f32 {
        self.frames[((t * self.channels + c) * self.height + y) * self.width + x]
    }

    fn pixel_mut(&mut self, t: usize, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.frames[((t * self.channels + c) * self.height + y) * self.width + x]
    }
}

/// A small bitmap stamped into frames as a sprite.
#[derive(Debug, Clone, PartialEq)]
pub struct Glyph {
    pub height: usize,
    pub width: usize,
    /// Row-major values in `[0, 1]`.
    pub data: Vec<f32>,
}

impl Glyph {
    /// Filled square.
    pub fn square(size: usize) -> Self {
        Self { height: size, width: size, data: vec![1.0; size * size] }
    }

    /// Plus-shaped cross with a two-pixel arm width.
    pub fn cross(size: usize) -> Self {
        let mut data = vec![0.0; size * size];
        let mid = size / 2;
        let band = |i: usize| i + 1 >= mid && i <= mid;
        for y in 0..size {
            for x in 0..size {
                if band(y) || band(x) {
                    data[y * size + x] = 1.0;
                }
            }
        }
        Self { height: size, width: size, data }
    }
}

/// World parameters for the procedural sprite generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpriteWorldConfig {
    pub n_sprites: usize,
    pub sprite_size: usize,
    pub frame_channels: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub seq_len: usize,
    /// Speed in pixels per frame, drawn uniformly from this interval.
    pub speed_range: (f64, f64),
    pub one_sprite_per_channel: bool,
}

impl Default for SpriteWorldConfig {
    fn default() -> Self {
        Self {
            n_sprites: 2,
            sprite_size: 6,
            frame_channels: 2,
            frame_height: 32,
            frame_width: 32,
            seq_len: 8,
            speed_range: (0.5, 2.0),
            one_sprite_per_channel: true,
        }
    }
}

impl SpriteWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sprites == 0 || self.seq_len == 0 {
            return Err(Error::Config("need at least one sprite and one frame".into()));
        }
        if self.sprite_size > self.frame_width || self.sprite_size > self.frame_height {
            return Err(Error::Config("sprite does not fit inside the frame".into()));
        }
        if self.one_sprite_per_channel && self.n_sprites > self.frame_channels {
            return Err(Error::Config(format!(
                "{} sprites need {} channels with one sprite per channel",
                self.n_sprites, self.frame_channels
            )));
        }
        if !(self.speed_range.0 <= self.speed_range.1) || self.speed_range.0 < 0.0 {
            return Err(Error::Config("bad speed range".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box the sprite position must stay inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

/// Advances a sprite one step with mirror reflection off the walls: any axis
/// crossing a wall has its position folded back and its velocity negated.
pub fn step_sprite(pos: [f64; 2], vel: [f64; 2], bounds: &Bounds) -> ([f64; 2], [f64; 2]) {
    let mut pos_out = [0.0; 2];
    let mut vel_out = vel;
    for axis in 0..2 {
        let (lo, hi) = (bounds.min[axis], bounds.max[axis]);
        let mut p = pos[axis] + vel[axis];
        while p < lo || p > hi {
            if p < lo {
                p = 2.0 * lo - p;
                vel_out[axis] = -vel_out[axis];
            }
            if p > hi {
                p = 2.0 * hi - p;
                vel_out[axis] = -vel_out[axis];
            }
        }
        pos_out[axis] = p;
    }
    (pos_out, vel_out)
}

fn stamp(seq: &mut VideoSequence, t: usize, channel: usize, glyph: &Glyph, pos: [f64; 2]) {
    let x0 = pos[0].round() as usize;
    let y0 = pos[1].round() as usize;
    for gy in 0..glyph.height {
        for gx in 0..glyph.width {
            let v = glyph.data[gy * glyph.width + gx];
            let p = seq.pixel_mut(t, channel, y0 + gy, x0 + gx);
            *p = p.max(v);
        }
    }
}

/// Generates sequences using caller-supplied glyphs; sprite `i` uses
/// `glyphs[i % glyphs.len()]`.
pub fn make_dataset_with_glyphs(
    cfg: &SpriteWorldConfig,
    glyphs: &[Glyph],
    n_sequences: usize,
    rng: &mut RngStream,
) -> Result<Vec<VideoSequence>> {
    cfg.validate()?;
    if glyphs.is_empty() {
        return Err(Error::Config("need at least one glyph".into()));
    }
    for g in glyphs {
        if g.width > cfg.frame_width || g.height > cfg.frame_height {
            return Err(Error::Config("glyph does not fit inside the frame".into()));
        }
    }

    let mut out = Vec::with_capacity(n_sequences);
    for _ in 0..n_sequences {
        let mut stream = rng.split();
        let mut seq = VideoSequence::zeros(
            cfg.seq_len,
            cfg.frame_channels,
            cfg.frame_height,
            cfg.frame_width,
        )?;
        for (i, glyph) in (0..cfg.n_sprites).map(|i| (i, &glyphs[i % glyphs.len()])) {
            let channel = if cfg.one_sprite_per_channel { i } else { i % cfg.frame_channels };
            let bounds = Bounds {
                min: [0.0, 0.0],
                max: [
                    (cfg.frame_width - glyph.width) as f64,
                    (cfg.frame_height - glyph.height) as f64,
                ],
            };
            let mut pos = [
                stream.uniform_range(0.0, bounds.max[0]),
                stream.uniform_range(0.0, bounds.max[1]),
            ];
            let speed = stream.uniform_range(cfg.speed_range.0, cfg.speed_range.1);
            let angle = stream.uniform_range(0.0, std::f64::consts::TAU);
            let mut vel = [speed * angle.cos(), speed * angle.sin()];
            for t in 0..cfg.seq_len {
                stamp(&mut seq, t, channel, glyph, pos);
                (pos, vel) = step_sprite(pos, vel, &bounds);
            }
        }
        out.push(seq);
    }
    Ok(out)
}

/// Generates sequences with the default procedural glyphs (square, cross).
pub fn make_dataset(
    cfg: &SpriteWorldConfig,
    n_sequences: usize,
    rng: &mut RngStream,
) -> Result<Vec<VideoSequence>> {
    let glyphs = [Glyph::square(cfg.sprite_size), Glyph::cross(cfg.sprite_size)];
    make_dataset_with_glyphs(cfg, &glyphs, n_sequences, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_without_wall_contact() {
        let b = Bounds { min: [0.0, 0.0], max: [10.0, 10.0] };
        let (p, v) = step_sprite([5.0, 5.0], [1.0, 0.0], &b);
        assert_eq!(p, [6.0, 5.0]);
        assert_eq!(v, [1.0, 0.0]);
    }

    #[test]
    fn step_reflects_off_wall() {
        let b = Bounds { min: [0.0, 0.0], max: [10.0, 10.0] };
        let (p, v) = step_sprite([9.5, 5.0], [1.0, 0.0], &b);
        assert_eq!(p, [9.5, 5.0]); // 10.5 mirrored about 10
        assert_eq!(v, [-1.0, 0.0]);
    }

    #[test]
    fn long_trajectories_stay_in_bounds() {
        let b = Bounds { min: [0.0, 0.0], max: [26.0, 26.0] };
        let mut rng = RngStream::new(4);
        for _ in 0..20 {
            let mut pos = [rng.uniform_range(0.0, 26.0), rng.uniform_range(0.0, 26.0)];
            let mut vel = [rng.uniform_range(-3.0, 3.0), rng.uniform_range(-3.0, 3.0)];
            for _ in 0..1000 {
                (pos, vel) = step_sprite(pos, vel, &b);
                for axis in 0..2 {
                    assert!(
                        pos[axis] >= b.min[axis] && pos[axis] <= b.max[axis],
                        "escaped at {pos:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = SpriteWorldConfig::default();
        let a = make_dataset(&cfg, 5, &mut RngStream::new(9)).unwrap();
        let b = make_dataset(&cfg, 5, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_sprite_per_channel_keeps_channels_separate() {
        let cfg = SpriteWorldConfig::default();
        let seqs = make_dataset(&cfg, 3, &mut RngStream::new(2)).unwrap();
        // deleting sprite 1 must leave channel 0 untouched
        let solo = make_dataset(&SpriteWorldConfig { n_sprites: 1, ..cfg.clone() }, 3, &mut RngStream::new(2)).unwrap();
        for (a, b) in seqs.iter().zip(&solo) {
            for t in 0..a.n_frames() {
                for y in 0..a.height() {
                    for x in 0..a.width() {
                        assert_eq!(a.pixel(t, 0, y, x), b.pixel(t, 0, y, x));
                        assert_eq!(b.pixel(t, 1, y, x), 0.0);
                    }
                }
            }
            assert!((0..a.n_frames()).any(|t| {
                (0..a.height()).any(|y| (0..a.width()).any(|x| a.pixel(t, 1, y, x) > 0.0))
            }));
        }
    }

    #[test]
    fn zero_velocity_freezes_the_scene() {
        let cfg = SpriteWorldConfig { speed_range: (0.0, 0.0), ..Default::default() };
        let seqs = make_dataset(&cfg, 2, &mut RngStream::new(6)).unwrap();
        for seq in seqs {
            let first = seq.frame(0).to_vec();
            for t in 1..seq.n_frames() {
                assert_eq!(seq.frame(t), first.as_slice());
            }
        }
    }

    #[test]
    fn pixels_stay_in_unit_interval() {
        let cfg = SpriteWorldConfig::default();
        let seqs = make_dataset(&cfg, 10, &mut RngStream::new(8)).unwrap();
        for seq in seqs {
            assert!(seq.raw().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn invalid_world_configs_are_rejected() {
        let cfg = SpriteWorldConfig { sprite_size: 64, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = SpriteWorldConfig { n_sprites: 3, frame_channels: 2, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
