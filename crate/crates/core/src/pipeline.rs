//! End-to-end wrinkle removal: segment, threshold, dilate, inpaint, composite.

use serde::{Deserialize, Serialize};

use crate::data::{Image, Mask, ProbMap};
use crate::error::{Error, Result};
use crate::inpaint::{composite, inpaint_forward, InpaintGenerator};
use crate::segnet::{seg_forward, threshold_mask, SegModel};

/// Produces a wrinkle probability map at the image's own resolution.
pub trait Segmenter {
    fn segment(&self, x: &Image) -> Result<ProbMap>;
}

/// Fills the holes of `m` in `x`. Implementations must return `x` unchanged
/// outside the mask.
pub trait Inpainter {
    fn inpaint(&self, x: &Image, m: &Mask) -> Result<Image>;
}

/// Inputs that are not multiples of the model factor are reflect-padded and
/// the prediction is cropped back.
impl Segmenter for SegModel {
    fn segment(&self, x: &Image) -> Result<ProbMap> {
        let padded = x.pad_to_multiple(self.factor());
        let p = seg_forward(self, &padded)?;
        Ok(p.crop(0, 0, x.height(), x.width()))
    }
}

impl Inpainter for InpaintGenerator {
    fn inpaint(&self, x: &Image, m: &Mask) -> Result<Image> {
        m.matches_image(x)?;
        let f = self.factor();
        let raw = inpaint_forward(self, &x.pad_to_multiple(f), &m.pad_to_multiple(f))?;
        composite(x, &raw.crop(0, 0, x.height(), x.width())?, m)
    }
}

/// Leaves the image untouched.
pub struct IdentityInpainter;

impl Inpainter for IdentityInpainter {
    fn inpaint(&self, x: &Image, m: &Mask) -> Result<Image> {
        m.matches_image(x)?;
        Ok(x.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    /// Square side the segmenter runs at; `None` (written `0`) segments at native size.
    #[serde(with = "crate::data::size_or_native")]
    pub seg_input_size: Option<usize>,
    pub threshold: f64,
    pub dilate_px: usize,
    #[serde(skip)]
    pub mask_override: Option<Mask>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            seg_input_size: Some(512),
            threshold: 0.5,
            dilate_px: 2,
            mask_override: None,
        }
    }
}

impl PipelineOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(alloc::format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.seg_input_size == Some(0) {
            return Err(Error::invalid("seg_input_size must be positive"));
        }
        Ok(())
    }
}

/// Predicted (or overridden) wrinkle mask after thresholding and dilation.
pub fn predict_mask(x: &Image, seg: &dyn Segmenter, opts: &PipelineOptions) -> Result<Mask> {
    opts.validate()?;
    let mask = match &opts.mask_override {
        Some(m) => {
            m.matches_image(x)?;
            m.clone()
        }
        None => {
            let p = match opts.seg_input_size {
                Some(n) if (x.height(), x.width()) != (n, n) => seg
                    .segment(&x.resize_bilinear(n, n)?)?
                    .resize_nearest(x.height(), x.width()),
                _ => seg.segment(x)?,
            };
            threshold_mask(&p, opts.threshold)
        }
    };
    Ok(mask.dilate(opts.dilate_px))
}

/// Returns the edited image and the final mask; pixels outside the mask are
/// copied from `x`.
pub fn remove_wrinkles(
    x: &Image,
    seg: &dyn Segmenter,
    inpainter: &dyn Inpainter,
    opts: &PipelineOptions,
) -> Result<(Image, Mask)> {
    let mask = predict_mask(x, seg, opts)?;
    if mask.is_empty() {
        return Ok((x.clone(), mask));
    }
    let out = inpainter.inpaint(x, &mask)?;
    // Enforce the contract even for inpainters that do not composite.
    Ok((composite(x, &out, &mask)?, mask))
}
