use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::curation::{Heatmap, Normalization};
use crate::raster::{reflect_index, resize_bilinear, BinaryMask, Grid};

/// Attention similarity between a predicted and a reference heatmap.
/// IoU columns are percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttnScores {
    pub fg_iou: f64,
    pub bg_iou: f64,
    pub fw_iou: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub l1: f64,
    pub l2: f64,
}

impl AttnScores {
    pub const IDENTITY: AttnScores = AttnScores {
        fg_iou: 100.0,
        bg_iou: 100.0,
        fw_iou: 100.0,
        ssim: 1.0,
        psnr: 100.0,
        l1: 0.0,
        l2: 0.0,
    };

    /// Column-wise mean, folded left in input order.
    pub fn mean(scores: &[AttnScores]) -> Option<AttnScores> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        let mut acc = [0.0; 7];
        for s in scores {
            for (a, v) in acc.iter_mut().zip(s.as_array()) {
                *a += v;
            }
        }
        Some(AttnScores {
            fg_iou: acc[0] / n,
            bg_iou: acc[1] / n,
            fw_iou: acc[2] / n,
            ssim: acc[3] / n,
            psnr: acc[4] / n,
            l1: acc[5] / n,
            l2: acc[6] / n,
        })
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.fg_iou,
            self.bg_iou,
            self.fw_iou,
            self.ssim,
            self.psnr,
            self.l1,
            self.l2,
        ]
    }
}

const PSNR_CAP: f64 = 100.0;
const SSIM_RADIUS: isize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn unit_values(h: &Heatmap) -> Grid<f64> {
    let g = h.grid();
    let max = g.max();
    match h.normalization() {
        Normalization::Raw if max > 0.0 => g.map(|v| v / max),
        _ => g.clone(),
    }
}

/// Upsamples whichever raster is coarser so both share the finer grid.
fn common_grid(pred: &Heatmap, gt: &Heatmap) -> Result<(Grid<f64>, Grid<f64>), MetricError> {
    let (p, g) = (unit_values(pred), unit_values(gt));
    let (pd, gd) = (p.dims(), g.dims());
    if pd == gd {
        Ok((p, g))
    } else if pd.0 <= gd.0 && pd.1 <= gd.1 {
        Ok((resize_bilinear(&p, gd.0, gd.1), g))
    } else if gd.0 <= pd.0 && gd.1 <= pd.1 {
        let g = resize_bilinear(&g, pd.0, pd.1);
        Ok((p, g))
    } else {
        Err(MetricError::DimensionMismatch { pred: pd, gt: gd })
    }
}

fn iou(a: &BinaryMask, b: &BinaryMask, positive: bool) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let (x, y) = (x == positive, y == positive);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        100.0
    } else {
        inter as f64 / union as f64 * 100.0
    }
}

fn filter_separable(grid: &Grid<f64>, taps: &[f64]) -> Grid<f64> {
    let (w, h) = grid.dims();
    let r = (taps.len() / 2) as isize;
    let tmp = Grid::from_fn(w, h, |x, y| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * grid.get(reflect_index(x as isize + k as isize - r, w), y))
            .sum()
    });
    Grid::from_fn(w, h, |x, y| {
        taps.iter()
            .enumerate()
            .map(|(k, t)| t * tmp.get(x, reflect_index(y as isize + k as isize - r, h)))
            .sum()
    })
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, symmetric border reflection. Inputs must
/// share dimensions.
pub fn ssim(a: &Grid<f64>, b: &Grid<f64>) -> f64 {
    assert_eq!(a.dims(), b.dims(), "ssim inputs must share dimensions");
    if a.is_empty() {
        return 1.0;
    }
    let mut taps: Vec<f64> = (-SSIM_RADIUS..=SSIM_RADIUS)
        .map(|k| (-((k * k) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    let (c1, c2) = ((SSIM_K1 * 1.0_f64).powi(2), (SSIM_K2 * 1.0_f64).powi(2));
    let mu_a = filter_separable(a, &taps);
    let mu_b = filter_separable(b, &taps);
    let aa = filter_separable(&a.map(|v| v * v), &taps);
    let bb = filter_separable(&b.map(|v| v * v), &taps);
    let ab = filter_separable(
        &Grid::from_vec(
            a.width(),
            a.height(),
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| x * y)
                .collect(),
        ),
        &taps,
    );
    let mut sum = 0.0;
    for i in 0..a.len() {
        let (ma, mb) = (mu_a.as_slice()[i], mu_b.as_slice()[i]);
        let var_a = aa.as_slice()[i] - ma * ma;
        let var_b = bb.as_slice()[i] - mb * mb;
        let cov = ab.as_slice()[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    sum / a.len() as f64
}

/// Compares two heatmaps: binarized IoUs at `threshold` (cells `>=`
/// threshold are foreground), SSIM, PSNR (capped at 100 dB), mean absolute
/// and mean squared error on the continuous values.
pub fn attention_metrics(
    pred: &Heatmap,
    gt: &Heatmap,
    threshold: f64,
) -> Result<AttnScores, MetricError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricError::InvalidThreshold(threshold));
    }
    let (p, g) = common_grid(pred, gt)?;
    let pb = p.map(|&v| v >= threshold);
    let gb = g.map(|&v| v >= threshold);
    let fg_iou = iou(&pb, &gb, true);
    let bg_iou = iou(&pb, &gb, false);
    let n_fg = gb.count() as f64;
    let n_bg = gb.len() as f64 - n_fg;
    let fw_iou = if gb.is_empty() {
        100.0
    } else {
        (n_fg * fg_iou + n_bg * bg_iou) / (n_fg + n_bg)
    };
    let n = p.len().max(1) as f64;
    let (mut l1, mut l2) = (0.0, 0.0);
    for (x, y) in p.as_slice().iter().zip(g.as_slice()) {
        l1 += (x - y).abs();
        l2 += (x - y) * (x - y);
    }
    let (l1, l2) = (l1 / n, l2 / n);
    let psnr = if l2 < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / l2).log10()).min(PSNR_CAP)
    };
    Ok(AttnScores {
        fg_iou,
        bg_iou,
        fw_iou,
        ssim: ssim(&p, &g),
        psnr,
        l1,
        l2,
    })
}
