//! Wrinkle-shaped random masks.
//!
//! Strokes are random walks with a bounded turning angle, rasterized with a
//! round brush. Training masks are the union of annotated wrinkles and such
//! strokes; evaluation masks place strokes only on clean skin, away from the
//! annotated wrinkles.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Mask;
use crate::error::{Error, Result};

/// Closed integer/real ranges are written `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskPolicy {
    pub n_strokes: [usize; 2],
    pub points_per_stroke: [usize; 2],
    pub step_px: [f64; 2],
    pub turn_deg_max: f64,
    pub thickness_px: [f64; 2],
    pub target_coverage: [f64; 2],
    pub max_tries: usize,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy {
            n_strokes: [1, 4],
            points_per_stroke: [4, 12],
            step_px: [8.0, 32.0],
            turn_deg_max: 45.0,
            thickness_px: [2.0, 8.0],
            target_coverage: [0.005, 0.08],
            max_tries: 200,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(alloc::format!("mask policy: {what}")));
        if self.n_strokes[0] > self.n_strokes[1] {
            return bad("n_strokes min > max");
        }
        if self.points_per_stroke[0] > self.points_per_stroke[1] || self.points_per_stroke[0] < 2 {
            return bad("points_per_stroke must satisfy 2 <= min <= max");
        }
        if !(self.step_px[0] > 0.0 && self.step_px[0] <= self.step_px[1]) {
            return bad("step_px must satisfy 0 < min <= max");
        }
        if !(self.thickness_px[0] > 0.0 && self.thickness_px[0] <= self.thickness_px[1]) {
            return bad("thickness_px must satisfy 0 < min <= max");
        }
        if !(self.turn_deg_max >= 0.0 && self.turn_deg_max <= 180.0) {
            return bad("turn_deg_max outside [0, 180]");
        }
        let [lo, hi] = self.target_coverage;
        if !(lo > 0.0 && lo <= hi && hi < 0.5) {
            return bad("target_coverage must satisfy 0 < min <= max < 0.5");
        }
        if self.max_tries == 0 {
            return bad("max_tries must be positive");
        }
        Ok(())
    }

    /// Exclusion radius used around annotated wrinkles for evaluation masks.
    pub fn exclusion_radius(&self) -> usize {
        libm::ceil(self.thickness_px[1]) as usize
    }
}

fn check_size(h: usize, w: usize) -> Result<()> {
    if h < 32 || w < 32 {
        return Err(Error::invalid(alloc::format!(
            "mask size {h}x{w} below 32x32"
        )));
    }
    Ok(())
}

/// Stamp one stroke into a fresh pixel list.
fn draw_stroke<R: Rng>(rng: &mut R, h: usize, w: usize, policy: &MaskPolicy) -> Vec<usize> {
    let n_points = rng.random_range(policy.points_per_stroke[0]..=policy.points_per_stroke[1]);
    let thickness = rng.random_range(policy.thickness_px[0]..=policy.thickness_px[1]);
    let mut y = rng.random_range(0.0..h as f64);
    let mut x = rng.random_range(0.0..w as f64);
    let mut angle = rng.random_range(0.0..2.0 * PI);
    let turn = policy.turn_deg_max.to_radians();
    let mut vertices = Vec::with_capacity(n_points);
    vertices.push((y, x));
    for _ in 1..n_points {
        if turn > 0.0 {
            angle += rng.random_range(-turn..=turn);
        }
        let step = rng.random_range(policy.step_px[0]..=policy.step_px[1]);
        y = (y + step * libm::sin(angle)).clamp(0.0, (h - 1) as f64);
        x = (x + step * libm::cos(angle)).clamp(0.0, (w - 1) as f64);
        vertices.push((y, x));
    }
    rasterize_polyline(&vertices, thickness / 2.0, h, w)
}

/// Pixels whose centre lies within `radius` of the polyline.
pub(crate) fn rasterize_polyline(
    vertices: &[(f64, f64)],
    radius: f64,
    h: usize,
    w: usize,
) -> Vec<usize> {
    let mut out = Vec::new();
    let r2 = radius * radius;
    for seg in vertices.windows(2) {
        let ((y0, x0), (y1, x1)) = (seg[0], seg[1]);
        let ymin = (libm::floor(y0.min(y1) - radius).max(0.0)) as usize;
        let ymax = (libm::ceil(y0.max(y1) + radius) as usize).min(h - 1);
        let xmin = (libm::floor(x0.min(x1) - radius).max(0.0)) as usize;
        let xmax = (libm::ceil(x0.max(x1) + radius) as usize).min(w - 1);
        let (dy, dx) = (y1 - y0, x1 - x0);
        let len2 = dy * dy + dx * dx;
        for py in ymin..=ymax {
            for px in xmin..=xmax {
                let (fy, fx) = (py as f64, px as f64);
                let t = if len2 > 0.0 {
                    (((fy - y0) * dy + (fx - x0) * dx) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (cy, cx) = (y0 + t * dy - fy, x0 + t * dx - fx);
                if cy * cy + cx * cx <= r2 {
                    out.push(py * w + px);
                }
            }
        }
    }
    out
}

/// Shared sampler. With an empty `exclusion` it consumes exactly the same
/// random draws as the unconstrained generator.
fn sample_mask(
    h: usize,
    w: usize,
    policy: &MaskPolicy,
    seed: u64,
    exclusion: Option<&Mask>,
) -> Result<Mask> {
    policy.validate()?;
    check_size(h, w)?;
    if policy.n_strokes[1] == 0 {
        return Ok(Mask::zeros(h, w));
    }
    if let Some(ex) = exclusion {
        let free = 1.0 - ex.coverage();
        if free < policy.target_coverage[0] {
            return Err(Error::Placement { tries: 0 });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = policy.target_coverage;
    let mut achieved = 0.0;
    let mut rejected = 0usize;
    for _ in 0..policy.max_tries {
        let mut mask = Mask::zeros(h, w);
        let n = rng.random_range(policy.n_strokes[0]..=policy.n_strokes[1]);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < n && attempts < policy.max_tries {
            attempts += 1;
            let pixels = draw_stroke(&mut rng, h, w, policy);
            if let Some(ex) = exclusion {
                if pixels.iter().any(|&p| ex.data()[p] != 0) {
                    rejected += 1;
                    continue;
                }
            }
            for p in pixels {
                mask.set(p / w, p % w, true);
            }
            placed += 1;
        }
        achieved = mask.coverage();
        if (lo..=hi).contains(&achieved) {
            return Ok(mask);
        }
    }
    if exclusion.is_some() && rejected > 0 && achieved < lo {
        return Err(Error::Placement {
            tries: policy.max_tries,
        });
    }
    Err(Error::Coverage {
        achieved,
        tries: policy.max_tries,
    })
}

/// Random polygonal-chain mask with coverage inside `policy.target_coverage`.
/// A policy allowing zero strokes at most yields the empty mask.
pub fn generate_polyline_mask(h: usize, w: usize, policy: &MaskPolicy, seed: u64) -> Result<Mask> {
    sample_mask(h, w, policy, seed, None)
}

/// Inpainting mask: pixelwise union of wrinkles and generated strokes.
pub fn build_inpaint_mask(wrinkles: &Mask, generated: &Mask) -> Result<Mask> {
    wrinkles.union(generated)
}

/// Evaluation mask on clean skin: strokes never touch a dilation of the
/// annotated wrinkles (radius = maximum brush thickness).
pub fn synth_eval_masks(wrinkles: &Mask, policy: &MaskPolicy, seed: u64) -> Result<Mask> {
    let exclusion = wrinkles.dilate(policy.exclusion_radius());
    sample_mask(
        wrinkles.height(),
        wrinkles.width(),
        policy,
        seed,
        Some(&exclusion),
    )
}
