//! Procedural sprite videos with controlled intrinsic speed.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::numerics::Tensor;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionCategory {
    Linear,
    Circular,
    Oscillatory,
    RandomWalk,
}

impl MotionCategory {
    pub const ALL: [MotionCategory; 4] = [
        MotionCategory::Linear,
        MotionCategory::Circular,
        MotionCategory::Oscillatory,
        MotionCategory::RandomWalk,
    ];
    pub const COUNT: usize = 4;

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionCategory::Linear => "linear",
            MotionCategory::Circular => "circular",
            MotionCategory::Oscillatory => "oscillatory",
            MotionCategory::RandomWalk => "random-walk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sprite {
    Square,
    Disc,
    Triangle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub frames: usize,
    pub size: usize,
    /// Intrinsic speed range in pixels per frame, sampled log-uniformly.
    pub speed: (f64, f64),
    /// Sprite extent range in pixels.
    pub sprite_size: (f64, f64),
    /// Standard deviation of the static background texture.
    pub noise_sigma: f64,
    /// Full oscillations over the video for the oscillatory category.
    pub oscillation_cycles: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            frames: 200,
            size: 64,
            speed: (0.5, 2.0),
            sprite_size: (8.0, 12.0),
            noise_sigma: 0.1,
            oscillation_cycles: 4,
        }
    }
}

/// `C x T x H x W` volume of 8-bit intensities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameVolume {
    pub dims: [usize; 4],
    pub data: Vec<u8>,
}

impl FrameVolume {
    pub fn new(dims: [usize; 4], data: Vec<u8>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn channels(&self) -> usize {
        self.dims[0]
    }

    pub fn len(&self) -> usize {
        self.dims[1]
    }

    pub fn is_empty(&self) -> bool {
        self.dims[1] == 0
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    /// Gathers the given frames into a `C x l x H x W` tensor scaled to [0, 1].
    pub fn clip(&self, indices: &[usize]) -> Tensor<f32> {
        let [c, t, h, w] = self.dims;
        let plane = h * w;
        let mut out = Vec::with_capacity(c * indices.len() * plane);
        for ch in 0..c {
            for &i in indices {
                assert!(i < t, "frame {i} out of range {t}");
                let start = (ch * t + i) * plane;
                out.extend(
                    self.data[start..start + plane]
                        .iter()
                        .map(|&v| v as f32 / 255.0),
                );
            }
        }
        Tensor::new(&[c, indices.len(), h, w], out).expect("clip shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub id: u32,
    pub category: MotionCategory,
    pub intrinsic_speed: f64,
    /// Known for freshly generated videos; not persisted on disk.
    pub sprite: Option<Sprite>,
    pub frames: FrameVolume,
}

/// Everything drawn for one video before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPlan {
    pub id: u32,
    pub category: MotionCategory,
    pub speed: f64,
    pub sprite: Sprite,
    pub sprite_size: f64,
    pub intensity: f64,
    /// Sprite centre `(x, y)` per frame.
    pub centers: Vec<(f64, f64)>,
    background_seed: u64,
}

/// Reflects `x` into `[lo, hi]`, returning whether the velocity flips.
fn reflect(x: f64, lo: f64, hi: f64) -> (f64, bool) {
    let mut x = x;
    let mut flipped = false;
    for _ in 0..8 {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            break;
        }
        flipped = !flipped;
    }
    (x.clamp(lo, hi), flipped)
}

pub fn plan_video(seed: u64, id: u32, params: &GeneratorParams) -> VideoPlan {
    let mut rng = rng::stream(seed, Purpose::Generate, &[id as u64]);
    let category = MotionCategory::ALL[id as usize % MotionCategory::COUNT];
    let (lo_v, hi_v) = params.speed;
    let speed = rng.random_range(lo_v.ln()..=hi_v.ln()).exp();
    let sprite = [Sprite::Square, Sprite::Disc, Sprite::Triangle][rng.random_range(0..3)];
    let sprite_size = rng.random_range(params.sprite_size.0..=params.sprite_size.1);
    let intensity = rng.random_range(0.75..=1.0);
    let background_seed: u64 = rng.random();

    let size = params.size as f64;
    let half = params.sprite_size.1 / 2.0;
    let (lo, hi) = (half, size - half);
    let n = params.frames;
    let mut centers = Vec::with_capacity(n);
    match category {
        MotionCategory::Linear | MotionCategory::RandomWalk => {
            let mut x = rng.random_range(lo..hi);
            let mut y = rng.random_range(lo..hi);
            let mut theta: f64 = rng.random_range(0.0..2.0 * PI);
            let turn = Normal::new(0.0, 0.5).expect("valid normal");
            for _ in 0..n {
                centers.push((x, y));
                if category == MotionCategory::RandomWalk {
                    theta += turn.sample(&mut rng);
                }
                let (nx, fx) = reflect(x + speed * theta.cos(), lo, hi);
                let (ny, fy) = reflect(y + speed * theta.sin(), lo, hi);
                // Mirror the heading on each wall bounce.
                let (mut dx, mut dy) = (theta.cos(), theta.sin());
                if fx {
                    dx = -dx;
                }
                if fy {
                    dy = -dy;
                }
                theta = dy.atan2(dx);
                x = nx;
                y = ny;
            }
        }
        MotionCategory::Circular => {
            let room = (hi - lo) / 2.0;
            let r_lo = 8.0f64.min(room * 0.5);
            let radius = rng.random_range(r_lo..=(room - 1.0).max(r_lo));
            let cx = rng.random_range(lo + radius..=hi - radius);
            let cy = rng.random_range(lo + radius..=hi - radius);
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let phase = rng.random_range(0.0..2.0 * PI);
            let omega = speed / radius;
            for t in 0..n {
                let a = phase + dir * omega * t as f64;
                centers.push((cx + radius * a.cos(), cy + radius * a.sin()));
            }
        }
        MotionCategory::Oscillatory => {
            let freq = params.oscillation_cycles as f64 / n as f64;
            let cx = size / 2.0;
            // Mean |dx/dt| of A sin(2 pi f t) is 4 A f.
            let amplitude = (speed / (4.0 * freq)).min(hi - cx);
            let y = rng.random_range(lo..hi);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            for t in 0..n {
                centers.push((
                    cx + sign * amplitude * (2.0 * PI * freq * t as f64).sin(),
                    y,
                ));
            }
        }
    }

    VideoPlan {
        id,
        category,
        speed,
        sprite,
        sprite_size,
        intensity,
        centers,
        background_seed,
    }
}

fn background(seed: u64, params: &GeneratorParams) -> Vec<f64> {
    let s = params.size;
    let mut rng = rng::stream(seed, Purpose::Generate, &[u64::MAX]);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let raw: Vec<f64> = (0..s * s).map(|_| normal.sample(&mut rng)).collect();
    // A 3x3 box blur divides the iid standard deviation by 3.
    let mut out = vec![0.0; s * s];
    for y in 0..s {
        for x in 0..s {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for yy in y.saturating_sub(1)..(y + 2).min(s) {
                for xx in x.saturating_sub(1)..(x + 2).min(s) {
                    acc += raw[yy * s + xx];
                    cnt += 1.0;
                }
            }
            out[y * s + x] = 0.35 + params.noise_sigma * 3.0 * acc / cnt;
        }
    }
    out
}

/// Signed distance from a pixel centre to the sprite outline (negative inside).
fn sprite_distance(sprite: Sprite, dx: f64, dy: f64, size: f64) -> f64 {
    let r = size / 2.0;
    match sprite {
        Sprite::Square => dx.abs().max(dy.abs()) - r,
        Sprite::Disc => (dx * dx + dy * dy).sqrt() - r,
        Sprite::Triangle => {
            let base = dy - r;
            let sides = (2.0 * dx.abs() - dy - r) / 5f64.sqrt();
            base.max(sides)
        }
    }
}

pub fn render(plan: &VideoPlan, params: &GeneratorParams) -> FrameVolume {
    let s = params.size;
    let bg = background(plan.background_seed, params);
    let mut data = Vec::with_capacity(plan.centers.len() * s * s);
    let reach = plan.sprite_size / 2.0 + 2.0;
    for &(cx, cy) in &plan.centers {
        let mut frame = bg.clone();
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(s);
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(s);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = sprite_distance(
                    plan.sprite,
                    x as f64 + 0.5 - cx,
                    y as f64 + 0.5 - cy,
                    plan.sprite_size,
                );
                let cover = (0.5 - d).clamp(0.0, 1.0);
                let p = &mut frame[y * s + x];
                *p += cover * (plan.intensity - *p);
            }
        }
        data.extend(
            frame
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    FrameVolume::new([1, plan.centers.len(), s, s], data)
}

/// Deterministic in `(seed, id)`.
pub fn generate_video(seed: u64, id: u32, params: &GeneratorParams) -> SyntheticVideo {
    let plan = plan_video(seed, id, params);
    let frames = render(&plan, params);
    SyntheticVideo {
        id,
        category: plan.category,
        intrinsic_speed: plan.speed,
        sprite: Some(plan.sprite),
        frames,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SyntheticVideo>,
    pub test: Vec<SyntheticVideo>,
}

/// Train ids `0..n_train`, test ids `n_train..n_train + n_test`.
pub fn generate_dataset(
    seed: u64,
    n_train: usize,
    n_test: usize,
    params: &GeneratorParams,
) -> Dataset {
    let gen = |range: std::ops::Range<usize>| {
        range
            .map(|id| generate_video(seed, id as u32, params))
            .collect()
    };
    Dataset {
        train: gen(0..n_train),
        test: gen(n_train..n_train + n_test),
    }
}
