//! Images, masks, probability maps and paired samples, plus augmentation and
//! dataset splitting.
//!
//! Images are stored planar (`[3][H][W]`) so they convert to network tensors
//! without reshuffling. Masks use `1` for "selected" (a wrinkle, a hole).

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::nearest_index;
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;
    pub const MIN_SIZE: usize = 32;

    /// Planar RGB in `[0, 1]`, at least 32x32.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < Self::MIN_SIZE || width < Self::MIN_SIZE {
            return Err(Error::invalid(alloc::format!(
                "image {}x{} is smaller than {}x{}",
                height,
                width,
                Self::MIN_SIZE,
                Self::MIN_SIZE
            )));
        }
        if data.len() != Self::CHANNELS * height * width {
            return Err(Error::shape(
                "Image::new",
                alloc::format!("{} values for {}x{}x3", data.len(), height, width),
            ));
        }
        if let Some(v) = data
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::invalid(alloc::format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, data)
    }

    /// Interleaved 8-bit RGB, scaled by 1/255.
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * height * width {
            return Err(Error::shape("Image::from_rgb8", "buffer length"));
        }
        Self::from_fn(height, width, |c, y, x| {
            rgb[(y * width + x) * 3 + c] as f64 / 255.0
        })
    }

    /// Interleaved 8-bit RGB, rounded to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = vec![0u8; 3 * self.height * self.width];
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    out[(y * self.width + x) * 3 + c] =
                        math::round(self.get(c, y, x) * 255.0) as u8;
                }
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// `[1, 3, H, W]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 3, self.height, self.width], self.data.clone()).expect("consistent")
    }

    /// Inverse of [`Image::to_tensor`] for a `[1, 3, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 || c != 3 {
            return Err(Error::shape(
                "Image::from_tensor",
                alloc::format!("{:?}", t.shape()),
            ));
        }
        Self::new(h, w, t.data().to_vec())
    }

    pub fn flip_horizontal(&self) -> Image {
        self.remap(self.height, self.width, |y, x| (y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> Image {
        self.remap(self.height, self.width, |y, x| (self.height - 1 - y, x))
    }

    fn remap(&self, h: usize, w: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Image {
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = src(y, x);
                    data.push(self.get(c, sy, sx));
                }
            }
        }
        Image {
            height: h,
            width: w,
            data,
        }
    }

    /// Bilinear sample at continuous coordinates, reflecting at the borders.
    fn sample_bilinear(&self, c: usize, fy: f64, fx: f64) -> f64 {
        let y0 = libm::floor(fy);
        let x0 = libm::floor(fx);
        let (ty, tx) = (fy - y0, fx - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let at =
            |yy: isize, xx: isize| self.get(c, reflect(yy, self.height), reflect(xx, self.width));
        let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
        let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Bilinear resize with half-pixel centres.
    pub fn resize_bilinear(&self, h: usize, w: usize) -> Result<Image> {
        let sy = self.height as f64 / h as f64;
        let sx = self.width as f64 / w as f64;
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in 0..h {
                let fy = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
                for x in 0..w {
                    let fx = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
                    let fy = fy.min((self.height - 1) as f64);
                    let fx = fx.min((self.width - 1) as f64);
                    data.push(self.sample_bilinear(c, fy, fx).clamp(0.0, 1.0));
                }
            }
        }
        Image::new(h, w, data)
    }

    /// Reflect-pad bottom and right so both sides are multiples of `factor`.
    pub fn pad_to_multiple(&self, factor: usize) -> Image {
        let h = self.height.div_ceil(factor) * factor;
        let w = self.width.div_ceil(factor) * factor;
        if (h, w) == (self.height, self.width) {
            return self.clone();
        }
        self.remap(h, w, |y, x| {
            (
                reflect(y as isize, self.height),
                reflect(x as isize, self.width),
            )
        })
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::invalid(alloc::format!(
                "crop {}x{} at ({}, {}) exceeds {}x{}",
                h,
                w,
                top,
                left,
                self.height,
                self.width
            )));
        }
        Image::new(h, w, self.remap(h, w, |y, x| (top + y, left + x)).data)
    }
}

/// Mirror an index into `0..len` (edge pixel not repeated).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "Mask::new",
                alloc::format!("{} values for {}x{}", data.len(), height, width),
            ));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Mask {
            height,
            width,
            data,
        }
    }

    /// Binarize 8-bit values: strictly above 127 becomes 1.
    pub fn from_gray8(height: usize, width: usize, gray: &[u8]) -> Result<Self> {
        if gray.len() != height * width {
            return Err(Error::shape("Mask::from_gray8", "buffer length"));
        }
        Ok(Mask {
            height,
            width,
            data: gray.iter().map(|&g| (g > 127) as u8).collect(),
        })
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| v * 255).collect()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Fraction of selected pixels.
    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn same_dims(&self, other: &Mask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::DimMismatch {
                left_h: self.height,
                left_w: self.width,
                right_h: other.height,
                right_w: other.width,
            });
        }
        Ok(())
    }

    pub fn matches_image(&self, image: &Image) -> Result<()> {
        if (self.height, self.width) != (image.height, image.width) {
            return Err(Error::DimMismatch {
                left_h: image.height,
                left_w: image.width,
                right_h: self.height,
                right_w: self.width,
            });
        }
        Ok(())
    }

    /// Pixelwise AND.
    pub fn intersect(&self, other: &Mask) -> Result<Mask> {
        self.same_dims(other)?;
        Ok(Mask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a & b)
                .collect(),
        })
    }

    /// Pixelwise OR.
    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.same_dims(other)?;
        Ok(Mask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a | b)
                .collect(),
        })
    }

    pub fn flip_horizontal(&self) -> Mask {
        Mask::from_fn(self.height, self.width, |y, x| {
            self.get(y, self.width - 1 - x)
        })
    }

    pub fn flip_vertical(&self) -> Mask {
        Mask::from_fn(self.height, self.width, |y, x| {
            self.get(self.height - 1 - y, x)
        })
    }

    pub fn resize_nearest(&self, h: usize, w: usize) -> Mask {
        Mask::from_fn(h, w, |y, x| {
            self.get(
                nearest_index(y, h, self.height),
                nearest_index(x, w, self.width),
            )
        })
    }

    /// Morphological dilation with a disk of the given radius.
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        let offsets: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
            .filter(|(dy, dx)| dy * dy + dx * dx <= r * r)
            .collect();
        let mut out = Mask::zeros(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(y, x) {
                    continue;
                }
                for &(dy, dx) in &offsets {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0
                        && xx >= 0
                        && (yy as usize) < self.height
                        && (xx as usize) < self.width
                    {
                        out.data[yy as usize * self.width + xx as usize] = 1;
                    }
                }
            }
        }
        out
    }

    pub fn pad_to_multiple(&self, factor: usize) -> Mask {
        let h = self.height.div_ceil(factor) * factor;
        let w = self.width.div_ceil(factor) * factor;
        Mask::from_fn(h, w, |y, x| {
            self.get(
                reflect(y as isize, self.height),
                reflect(x as isize, self.width),
            )
        })
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Mask {
        Mask::from_fn(h, w, |y, x| self.get(top + y, left + x))
    }

    /// `[1, 1, H, W]` of zeros and ones.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, 1, self.height, self.width],
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .expect("consistent")
    }
}

/// Per-pixel probabilities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("ProbMap::new", "length"));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        Ok(ProbMap {
            height,
            width,
            data,
        })
    }

    pub fn from_mask(mask: &Mask) -> Self {
        ProbMap {
            height: mask.height,
            width: mask.width,
            data: mask.data.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn resize_nearest(&self, h: usize, w: usize) -> ProbMap {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            let sy = nearest_index(y, h, self.height);
            for x in 0..w {
                data.push(self.data[sy * self.width + nearest_index(x, w, self.width)]);
            }
        }
        ProbMap {
            height: h,
            width: w,
            data,
        }
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> ProbMap {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(self.data[(top + y) * self.width + left + x]);
            }
        }
        ProbMap {
            height: h,
            width: w,
            data,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 1, self.height, self.width], self.data.clone()).expect("consistent")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub wrinkle_mask: Mask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Image, wrinkle_mask: Mask) -> Result<Self> {
        wrinkle_mask.matches_image(&image)?;
        Ok(Sample {
            id: id.into(),
            image,
            wrinkle_mask,
        })
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn width(&self) -> usize {
        self.image.width
    }
}

/// Serde form for an optional working size where `0` stands for "native".
/// Formats without a null (TOML) could not otherwise write `None` when the
/// default is `Some`.
pub mod size_or_native {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        v: &Option<usize>,
        s: S,
    ) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> core::result::Result<Option<usize>, D::Error> {
        let n = usize::deserialize(d)?;
        Ok((n != 0).then_some(n))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_horizontal: f64,
    pub flip_vertical: f64,
    pub random_shift_px: usize,
    pub rotation_deg_max: f64,
    pub crop_size: Option<usize>,
}

impl Default for AugmentConfig {
    /// The identity transform.
    fn default() -> Self {
        AugmentConfig {
            flip_horizontal: 0.0,
            flip_vertical: 0.0,
            random_shift_px: 0,
            rotation_deg_max: 0.0,
            crop_size: None,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("flip_horizontal", self.flip_horizontal),
            ("flip_vertical", self.flip_vertical),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(alloc::format!(
                    "{name} probability {p} outside [0, 1]"
                )));
            }
        }
        if !(self.rotation_deg_max.is_finite() && self.rotation_deg_max >= 0.0) {
            return Err(Error::invalid(
                "rotation_deg_max must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Apply identical random spatial transforms to a sample's image and mask.
///
/// Order: horizontal flip, vertical flip, rotation about the centre, integer
/// shift, crop. Images resample bilinearly and masks by nearest neighbour;
/// borders reflect.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, seed: u64) -> Result<Sample> {
    cfg.validate()?;
    let (h, w) = (sample.height(), sample.width());
    if let Some(c) = cfg.crop_size {
        if c > h.min(w) {
            return Err(Error::invalid(alloc::format!(
                "crop size {} exceeds {}x{} sample",
                c,
                h,
                w
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = sample.image.clone();
    let mut mask = sample.wrinkle_mask.clone();

    if rng.random::<f64>() < cfg.flip_horizontal {
        image = image.flip_horizontal();
        mask = mask.flip_horizontal();
    }
    if rng.random::<f64>() < cfg.flip_vertical {
        image = image.flip_vertical();
        mask = mask.flip_vertical();
    }
    if cfg.rotation_deg_max > 0.0 {
        let deg = rng.random_range(-cfg.rotation_deg_max..=cfg.rotation_deg_max);
        let (img, m) = rotate(&image, &mask, deg.to_radians());
        image = img?;
        mask = m;
    }
    if cfg.random_shift_px > 0 {
        let s = cfg.random_shift_px as i64;
        let dy = rng.random_range(-s..=s) as isize;
        let dx = rng.random_range(-s..=s) as isize;
        image = image.remap(h, w, |y, x| {
            (reflect(y as isize - dy, h), reflect(x as isize - dx, w))
        });
        mask = Mask::from_fn(h, w, |y, x| {
            mask.get(reflect(y as isize - dy, h), reflect(x as isize - dx, w))
        });
    }
    if let Some(c) = cfg.crop_size {
        let top = rng.random_range(0..=h - c);
        let left = rng.random_range(0..=w - c);
        image = image.crop(top, left, c, c)?;
        mask = mask.crop(top, left, c, c);
    }
    Sample::new(sample.id.clone(), image, mask)
}

fn rotate(image: &Image, mask: &Mask, theta: f64) -> (Result<Image>, Mask) {
    let (h, w) = (image.height, image.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    // Inverse map: output pixel -> source coordinate.
    let src = |y: usize, x: usize| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        (c * dy - s * dx + cy, s * dy + c * dx + cx)
    };
    let mut data = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let (fy, fx) = src(y, x);
                data.push(image.sample_bilinear(ch, fy, fx).clamp(0.0, 1.0));
            }
        }
    }
    let rotated_mask = Mask::from_fn(h, w, |y, x| {
        let (fy, fx) = src(y, x);
        mask.get(
            reflect(math::round(fy) as isize, h),
            reflect(math::round(fx) as isize, w),
        )
    });
    (Image::new(h, w, data), rotated_mask)
}

/// Deterministic train/validation split. `|val| = round(val_fraction * |ids|)`;
/// both halves keep the input order.
pub fn split_dataset(
    ids: &[String],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    if ids.is_empty() {
        return Err(Error::invalid("cannot split an empty id list"));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(alloc::format!(
            "val_fraction {val_fraction} outside (0, 1)"
        )));
    }
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid(alloc::format!("duplicate id `{id}`")));
        }
    }
    let n_val = math::round(val_fraction * ids.len() as f64) as usize;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val_set: BTreeSet<usize> = order[..n_val].iter().copied().collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, id) in ids.iter().enumerate() {
        if val_set.contains(&i) {
            val.push(id.clone());
        } else {
            train.push(id.clone());
        }
    }
    Ok((train, val))
}
