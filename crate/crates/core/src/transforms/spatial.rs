//! Clip-wise spatial augmentation: one random resized crop, grayscale,
//! brightness/contrast and rotation per clip, shared by all of its frames.

use rand::Rng;

use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAugConfig {
    /// Crop area as a fraction of the frame area.
    pub area: (f64, f64),
    /// Crop aspect ratio (width / height), sampled log-uniformly.
    pub aspect: (f64, f64),
    pub grayscale_prob: f64,
    /// Multiplicative contrast gain.
    pub gain: (f64, f64),
    /// Additive brightness offset, in units of the [0, 1] dynamic range.
    pub bias: (f64, f64),
    /// Draw a rotation in {0, 90, 180, 270} degrees.
    pub rotate: bool,
    pub output: (usize, usize),
}

impl Default for SpatialAugConfig {
    fn default() -> Self {
        Self {
            area: (0.4, 1.0),
            aspect: (0.5, 2.0),
            grayscale_prob: 0.2,
            gain: (0.8, 1.2),
            bias: (-0.1, 0.1),
            rotate: false,
            output: (32, 32),
        }
    }
}

impl SpatialAugConfig {
    /// No-op augmentation for a frame of `h x w`.
    pub fn identity(h: usize, w: usize) -> Self {
        let r = w as f64 / h as f64;
        Self {
            area: (1.0, 1.0),
            aspect: (r, r),
            grayscale_prob: 0.0,
            gain: (1.0, 1.0),
            bias: (0.0, 0.0),
            rotate: false,
            output: (h, w),
        }
    }
}

/// Source rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRect {
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
}

impl CropRect {
    pub fn full(h: usize, w: usize) -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            w: w as f64,
            h: h as f64,
        }
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }
}

#[derive(Debug, Clone)]
pub struct AugmentedClip {
    pub clip: Tensor<f32>,
    pub crop: CropRect,
    /// Aspect ratio of the source region (ranking target for the aspect task).
    pub aspect_ratio: f64,
    /// Quarter turns applied, in 0..4.
    pub rotation: u8,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random-resized-crop rectangle. Falls back to the largest centred crop
/// of clamped aspect ratio after ten rejected draws.
pub fn sample_crop(h: usize, w: usize, cfg: &SpatialAugConfig, rng: &mut impl Rng) -> CropRect {
    let (fh, fw) = (h as f64, w as f64);
    let area = fh * fw;
    let log_r = (cfg.aspect.0.ln(), cfg.aspect.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, cfg.area);
        let r = uniform(rng, log_r).exp();
        let cw = (target * r).sqrt();
        let ch = (target / r).sqrt();
        if cw <= fw + 1e-9 && ch <= fh + 1e-9 {
            let (cw, ch) = (cw.min(fw), ch.min(fh));
            let x0 = uniform(rng, (0.0, fw - cw));
            let y0 = uniform(rng, (0.0, fh - ch));
            return CropRect {
                x0,
                y0,
                w: cw,
                h: ch,
            };
        }
    }
    let frame_r = fw / fh;
    let r = frame_r.clamp(cfg.aspect.0, cfg.aspect.1);
    let (cw, ch) = if r > frame_r {
        (fw, fw / r)
    } else {
        (fh * r, fh)
    };
    CropRect {
        x0: (fw - cw) / 2.0,
        y0: (fh - ch) / 2.0,
        w: cw,
        h: ch,
    }
}

/// Bilinear resample of `rect` from every `C x T` plane to `out_h x out_w`
/// (pixel-centre aligned, edge clamped).
pub fn resize_crop(clip: &Tensor<f32>, rect: CropRect, out_h: usize, out_w: usize) -> Tensor<f32> {
    let s = clip.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let sy = rect.h / out_h as f64;
    let sx = rect.w / out_w as f64;
    let taps = |o: usize, start: f64, scale: f64, n: usize| {
        let src = (start + (o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, (src - i0 as f64) as f32)
    };
    let ys: Vec<_> = (0..out_h).map(|o| taps(o, rect.y0, sy, h)).collect();
    let xs: Vec<_> = (0..out_w).map(|o| taps(o, rect.x0, sx, w)).collect();
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    for plane in clip.data().chunks(h * w) {
        for &(y0, y1, fy) in &ys {
            let (r0, r1) = (&plane[y0 * w..(y0 + 1) * w], &plane[y1 * w..(y1 + 1) * w]);
            for &(x0, x1, fx) in &xs {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    Tensor::new(&[s[0], s[1], out_h, out_w], out).expect("resize shape")
}

/// Rotates every frame by `quarter_turns * 90` degrees clockwise.
pub fn rotate90(clip: &Tensor<f32>, quarter_turns: u8) -> Tensor<f32> {
    let s = clip.shape();
    let (h, w) = (s[2], s[3]);
    let q = quarter_turns % 4;
    if q == 0 {
        return clip.clone();
    }
    let (oh, ow) = if q % 2 == 1 { (w, h) } else { (h, w) };
    let mut out = Vec::with_capacity(clip.len());
    for plane in clip.data().chunks(h * w) {
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = match q {
                    1 => (h - 1 - x, y),
                    2 => (h - 1 - y, w - 1 - x),
                    _ => (x, w - 1 - y),
                };
                out.push(plane[sy * w + sx]);
            }
        }
    }
    Tensor::new(&[s[0], s[1], oh, ow], out).expect("rotate shape")
}

/// Replaces every channel by the channel mean.
pub fn to_grayscale(clip: &Tensor<f32>) -> Tensor<f32> {
    let s = clip.shape();
    let c = s[0];
    if c == 1 {
        return clip.clone();
    }
    let per = clip.len() / c;
    let mut mean = vec![0.0f32; per];
    for ch in clip.data().chunks(per) {
        mean.iter_mut()
            .zip(ch)
            .for_each(|(m, &v)| *m += v / c as f32);
    }
    let data = (0..c).flat_map(|_| mean.iter().copied()).collect();
    Tensor::new(s, data).expect("grayscale shape")
}

/// Full augmentation of one `C x T x H x W` clip with values in [0, 1].
pub fn spatial_augment(
    clip: &Tensor<f32>,
    cfg: &SpatialAugConfig,
    rng: &mut impl Rng,
) -> AugmentedClip {
    let s = clip.shape();
    let (h, w) = (s[2], s[3]);
    let crop = sample_crop(h, w, cfg, rng);
    let mut out = resize_crop(clip, crop, cfg.output.0, cfg.output.1);
    if cfg.grayscale_prob > 0.0 && rng.random_bool(cfg.grayscale_prob.min(1.0)) {
        out = to_grayscale(&out);
    }
    let gain = uniform(rng, cfg.gain) as f32;
    let bias = uniform(rng, cfg.bias) as f32;
    if gain != 1.0 || bias != 0.0 {
        // Contrast about mid-grey, then brightness shift.
        out = out.map(|v| (v - 0.5) * gain + 0.5 + bias);
    }
    let rotation = if cfg.rotate {
        rng.random_range(0..4u8)
    } else {
        0
    };
    if rotation != 0 {
        out = rotate90(&out, rotation);
    }
    AugmentedClip {
        clip: out,
        crop,
        aspect_ratio: crop.aspect_ratio(),
        rotation,
    }
}

/// Maps intensities from [0, 1] to [-1, 1], the encoder's input range.
pub fn center_intensity(clip: Tensor<f32>) -> Tensor<f32> {
    clip.map(|v| 2.0 * v - 1.0)
}

/// Deterministic evaluation view: the whole frame resized to `out`.
pub fn center_view(clip: &Tensor<f32>, out: (usize, usize)) -> Tensor<f32> {
    let s = clip.shape();
    resize_crop(clip, CropRect::full(s[2], s[3]), out.0, out.1)
}
