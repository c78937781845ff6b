//! Image quality metrics: MSE, PSNR, SSIM (uniform 8×8 window on luma) and a
//! pixelwise ROC AUC for guidance maps.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::imagecore::{to_grayscale, Image};

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR printed for identical images.
pub const PSNR_TEXT_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn compute(a: &Image, b: &Image) -> Result<Self> {
        Ok(Self {
            mse: mse_metric(a, b)?,
            psnr: psnr(a, b)?,
            ssim: ssim(a, b)?,
        })
    }

    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(MetricReport {
            mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
            psnr: reports.iter().map(|r| r.psnr.min(PSNR_TEXT_CAP_DB)).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        })
    }
}

fn check_same(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return invalid(format!("image dims differ: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok(())
}

/// Mean squared difference over all pixels and channels.
pub fn mse_metric(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(1/mse)` for a given MSE; infinite at zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse_metric(a, b)?))
}

/// Formats a PSNR for text output, capping the zero-error sentinel.
pub fn format_psnr(db: f64) -> String {
    format!("{:.4}", db.min(PSNR_TEXT_CAP_DB))
}

/// SSIM of one window given its means, (population) variances and covariance.
pub fn ssim_window(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

/// Mean SSIM over every 8×8 window (stride 1) of the luma channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b)?;
    let (h, w, _) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return invalid(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let ga = to_grayscale(a)?;
    let gb = to_grayscale(b)?;
    let (pa, pb) = (ga.data(), gb.data());

    let area = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let window = || {
                (y..y + SSIM_WINDOW).flat_map(move |yy| {
                    (x..x + SSIM_WINDOW).map(move |xx| (f64::from(pa[yy * w + xx]), f64::from(pb[yy * w + xx])))
                })
            };
            let (sa, sb) = window().fold((0.0, 0.0), |(sa, sb), (va, vb)| (sa + va, sb + vb));
            let mu_a = sa / area;
            let mu_b = sb / area;
            let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
            for (va, vb) in window() {
                let (da, db) = (va - mu_a, vb - mu_b);
                var_a += da * da;
                var_b += db * db;
                cov += da * db;
            }
            total += ssim_window(mu_a, mu_b, var_a / area, var_b / area, cov / area);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Area under the ROC curve of `scores` against binary `labels`
/// (Mann-Whitney statistic, ties count one half). `None` if either class is
/// absent.
pub fn pixel_auc(scores: &[f32], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}
