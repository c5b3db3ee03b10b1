//! Metrics: IoU for segmentation, LPIPS and FID for inpainting, plus the
//! PSNR and spectral-error helpers used by the toy experiments.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{Image, Mask, Sample};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::fft;
use crate::maskgen::{synth_eval_masks, MaskPolicy};
use crate::math::{self, derive_seed};
use crate::pipeline::{Inpainter, Segmenter};
use crate::segnet::{iou, threshold_mask};

const LPIPS_EPS: f64 = 1e-10;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iou: Option<f64>,
    pub lpips_mean: Option<f64>,
    pub fid: Option<f64>,
    pub n_samples: usize,
    /// Samples dropped because no clean-skin mask could be placed.
    pub n_skipped: usize,
    pub mask_seed: u64,
    pub config_hash: String,
}

/// Perceptual distance: per layer, unit-normalize each position's feature
/// vector, weight channels, sum squared differences over channels and
/// average over positions; layers are summed. `weights[l]` defaults to ones.
pub fn compute_lpips(
    x: &Image,
    y: &Image,
    feat: &FeatureExtractor,
    weights: Option<&[Vec<f64>]>,
) -> Result<f64> {
    if (x.height(), x.width()) != (y.height(), y.width()) {
        return Err(Error::DimMismatch {
            left_h: x.height(),
            left_w: x.width(),
            right_h: y.height(),
            right_w: y.width(),
        });
    }
    let fx = feat.eval(&x.to_tensor())?;
    let fy = feat.eval(&y.to_tensor())?;
    let mut total = 0.0;
    for (l, (a, b)) in fx.iter().zip(&fy).enumerate() {
        let (_, c, h, w) = a.dims4()?;
        let plane = h * w;
        let wl = weights.and_then(|ws| ws.get(l));
        if let Some(wl) = wl {
            if wl.len() != c {
                return Err(Error::shape(
                    "lpips",
                    alloc::format!("layer {l} has {c} channels, {} weights", wl.len()),
                ));
            }
        }
        let mut layer = 0.0;
        for p in 0..plane {
            let norm = |t: &[f64]| {
                math::sqrt(
                    (0..c)
                        .map(|ch| t[ch * plane + p] * t[ch * plane + p])
                        .sum::<f64>(),
                ) + LPIPS_EPS
            };
            let (na, nb) = (norm(a.data()), norm(b.data()));
            for ch in 0..c {
                let d = a.data()[ch * plane + p] / na - b.data()[ch * plane + p] / nb;
                layer += wl.map_or(1.0, |w| w[ch]) * d * d;
            }
        }
        total += layer / plane as f64;
    }
    Ok(total)
}

fn moments(set: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = set.len();
    if n < 2 {
        return Err(Error::invalid(
            "FID needs at least two feature vectors per set",
        ));
    }
    let d = set[0].len();
    if d == 0 || set.iter().any(|v| v.len() != d) {
        return Err(Error::invalid(
            "feature vectors must share a positive dimension",
        ));
    }
    if set.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    let data = DMatrix::from_fn(n, d, |i, j| set[i][j]);
    let mean = data.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean, cov))
}

/// Square root of a symmetric PSD matrix, negative eigenvalues clipped to 0.
fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| math::sqrt(l.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn compute_fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = moments(a)?;
    let (mu_b, cov_b) = moments(b)?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::invalid("feature sets differ in dimension"));
    }
    // tr((Σa Σb)^½) = tr((√Σa Σb √Σa)^½), and the inner product is symmetric PSD.
    let ra = sqrtm_psd(&cov_a);
    let inner = &ra * &cov_b * &ra;
    let tr_sqrt = sqrtm_psd(&inner).trace();
    let diff = mu_a - mu_b;
    let fid = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    Ok(fid.max(0.0))
}

/// PSNR in dB over the masked pixels (all channels), peak 1. Identical
/// regions give infinity.
pub fn masked_psnr(x: &Image, y: &Image, m: &Mask) -> Result<f64> {
    m.matches_image(x)?;
    m.matches_image(y)?;
    let plane = x.height() * x.width();
    let (mut se, mut n) = (0.0, 0usize);
    for i in 0..3 * plane {
        if m.data()[i % plane] == 1 {
            let d = x.data()[i] - y.data()[i];
            se += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("PSNR over an empty mask"));
    }
    Ok(-10.0 * libm::log10(se / n as f64))
}

/// Mean magnitude of `F(x) - F(y)` over all frequencies of every channel,
/// using the unnormalized 2-D DFT.
pub fn spectral_error(x: &Image, y: &Image) -> Result<f64> {
    let (h, w) = (x.height(), x.width());
    if (h, w) != (y.height(), y.width()) {
        return Err(Error::DimMismatch {
            left_h: h,
            left_w: w,
            right_h: y.height(),
            right_w: y.width(),
        });
    }
    let d = x.to_tensor().zip_map(&y.to_tensor(), |a, b| a - b);
    let spec = fft::rfft2(&d)?;
    let wf = fft::half_width(w);
    let plane = h * wf;
    let mut total = 0.0;
    for c in 0..3 {
        for i in 0..plane {
            let re = spec.data()[c * plane + i];
            let im = spec.data()[(3 + c) * plane + i];
            total += fft::column_multiplicity(i % wf, w) * math::sqrt(re * re + im * im);
        }
    }
    Ok(total / (3 * h * w) as f64)
}

/// Inpaint clean-skin masks placed away from the annotated wrinkles and
/// compare with the originals. Deterministic given `seed`.
pub fn evaluate_inpainting(
    inpainter: &dyn Inpainter,
    dataset: &[Sample],
    policy: &MaskPolicy,
    feat: &FeatureExtractor,
    seed: u64,
) -> Result<MetricsReport> {
    let mut report = MetricsReport {
        mask_seed: seed,
        ..MetricsReport::default()
    };
    let mut lpips_sum = 0.0;
    let (mut feats_real, mut feats_fake) = (Vec::new(), Vec::new());
    for (i, s) in dataset.iter().enumerate() {
        let mask = match synth_eval_masks(&s.wrinkle_mask, policy, derive_seed(seed, &[i as u64])) {
            Ok(m) => m,
            Err(Error::Placement { .. } | Error::Coverage { .. }) => {
                report.n_skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let out = inpainter.inpaint(&s.image, &mask)?;
        lpips_sum += compute_lpips(&s.image, &out, feat, None)?;
        feats_real.extend(feat.pooled(&s.image.to_tensor())?);
        feats_fake.extend(feat.pooled(&out.to_tensor())?);
        report.n_samples += 1;
    }
    if report.n_samples > 0 {
        report.lpips_mean = Some(lpips_sum / report.n_samples as f64);
    }
    if report.n_samples >= 2 {
        report.fid = Some(compute_fid(&feats_real, &feats_fake)?);
    }
    Ok(report)
}

/// Mean IoU at threshold 0.5.
pub fn evaluate_segmentation(seg: &dyn Segmenter, dataset: &[Sample]) -> Result<MetricsReport> {
    let mut total = 0.0;
    for s in dataset {
        let p = seg.segment(&s.image)?;
        total += iou(&s.wrinkle_mask, &threshold_mask(&p, 0.5))?;
    }
    Ok(MetricsReport {
        iou: (!dataset.is_empty()).then(|| total / dataset.len() as f64),
        n_samples: dataset.len(),
        ..MetricsReport::default()
    })
}
