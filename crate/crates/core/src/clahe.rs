//! Contrast-limited adaptive histogram equalization.
//!
//! The image is cut into a `grid x grid` tiling of equal tiles of
//! `ceil(len / grid)` pixels per axis; where that overhangs the frame the image
//! is extended by mirror reflection (edge pixel not repeated). Equal tiles keep
//! the clip ceiling identical everywhere, so a flat frame stays flat. Each tile gets a clipped 256-bin histogram whose
//! excess is spread back over all bins in one pass; its CDF becomes a lookup
//! table, and every output pixel bilinearly blends the tables of the nearest
//! tile centers.

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheConfig {
    /// Clip height in multiples of the uniform bin height (`pixels / 256`).
    pub clip_limit: f64,
    /// Tiles per axis.
    pub grid: usize,
}

impl ClaheConfig {
    pub fn new(clip_limit: f64, grid: usize) -> Result<Self> {
        if !(clip_limit > 0.0) || !clip_limit.is_finite() {
            return Err(Error::Config(format!(
                "CLAHE clip limit must be positive, got {clip_limit}"
            )));
        }
        if grid == 0 {
            return Err(Error::Config("CLAHE grid must be at least 1".into()));
        }
        Ok(Self { clip_limit, grid })
    }
}

pub type Histogram = [u64; BINS];

pub fn histogram(pixels: impl IntoIterator<Item = u8>) -> Histogram {
    let mut h = [0u64; BINS];
    for p in pixels {
        h[p as usize] += 1;
    }
    h
}

/// Clips every bin at `floor(clip_limit * total / 256)` (at least 1) and spreads
/// the excess evenly; the `excess % 256` leftover goes one count each to the
/// lowest bins. The total count is unchanged.
pub fn clip_histogram(hist: &mut Histogram, clip_limit: f64) {
    let total: u64 = hist.iter().sum();
    let ceiling = (clip_limit * total as f64 / BINS as f64).floor();
    // Anything at or above the total can never clip.
    if ceiling >= total as f64 {
        return;
    }
    let ceiling = (ceiling as u64).max(1);
    let mut excess = 0;
    for bin in hist.iter_mut() {
        if *bin > ceiling {
            excess += *bin - ceiling;
            *bin = ceiling;
        }
    }
    let share = excess / BINS as u64;
    let leftover = (excess % BINS as u64) as usize;
    for (i, bin) in hist.iter_mut().enumerate() {
        *bin += share + u64::from(i < leftover);
    }
}

/// `round(255 * cdf / total)` with halves rounded up, in exact integer math.
pub fn equalization_lut(hist: &Histogram) -> [u8; BINS] {
    let total: u64 = hist.iter().sum();
    let mut lut = [0u8; BINS];
    if total == 0 {
        return lut;
    }
    let mut cdf = 0u64;
    for (v, &count) in hist.iter().enumerate() {
        cdf += count;
        lut[v] = ((2 * 255 * cdf + total) / (2 * total)) as u8;
    }
    lut
}

/// Plain histogram equalization over the whole frame.
pub fn global_hist_equalize(img: &GrayImage) -> GrayImage {
    let lut = equalization_lut(&histogram(img.pixels().iter().copied()));
    let data = img.pixels().iter().map(|&p| lut[p as usize]).collect();
    GrayImage::new(img.width(), img.height(), data).expect("same shape as input")
}

/// Interpolation anchors along one axis: for each pixel coordinate, the two
/// neighbouring tile indices and the weight of the second one.
fn axis_weights(spans: &[(usize, usize)], len: usize) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = spans
        .iter()
        .map(|&(a, b)| (a + b - 1) as f64 / 2.0)
        .collect();
    let last = centers.len() - 1;
    (0..len)
        .map(|p| {
            let pos = p as f64;
            if pos <= centers[0] {
                (0, 0, 0.0)
            } else if pos >= centers[last] {
                (last, last, 0.0)
            } else {
                let i = centers.partition_point(|&c| c <= pos) - 1;
                let w = (pos - centers[i]) / (centers[i + 1] - centers[i]);
                (i, i + 1, w)
            }
        })
        .collect()
}

/// `parts` spans of `ceil(len / parts)` each; the last may run past `len`.
fn equal_spans(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let size = len.div_ceil(parts);
    (0..parts).map(|i| (i * size, (i + 1) * size)).collect()
}

/// Mirror index past the end of an axis of length `len`.
fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        (2 * (len - 1)).saturating_sub(i)
    }
}

pub fn clahe_enhance(img: &GrayImage, cfg: &ClaheConfig) -> Result<GrayImage> {
    let g = cfg.grid;
    if g == 0 || img.width() < g || img.height() < g {
        return Err(Error::GridTooFine {
            grid: g,
            width: img.width(),
            height: img.height(),
        });
    }
    let xs = equal_spans(img.width(), g);
    let ys = equal_spans(img.height(), g);
    let (w, h) = (img.width(), img.height());

    let mut luts = Vec::with_capacity(g * g);
    for &(y0, y1) in &ys {
        for &(x0, x1) in &xs {
            let mut hist = histogram(
                (y0..y1).flat_map(|y| (x0..x1).map(move |x| img.get(reflect(x, w), reflect(y, h)))),
            );
            clip_histogram(&mut hist, cfg.clip_limit);
            luts.push(equalization_lut(&hist));
        }
    }

    let wx = axis_weights(&xs, img.width());
    let wy = axis_weights(&ys, img.height());
    let mut data = Vec::with_capacity(img.width() * img.height());
    for (y, &(ty0, ty1, fy)) in wy.iter().enumerate() {
        for (x, &(tx0, tx1, fx)) in wx.iter().enumerate() {
            let v = img.get(x, y) as usize;
            let at = |ty: usize, tx: usize| luts[ty * g + tx][v] as f64;
            let top = at(ty0, tx0) * (1.0 - fx) + at(ty0, tx1) * fx;
            let bottom = at(ty1, tx0) * (1.0 - fx) + at(ty1, tx1) * fx;
            let blended = top * (1.0 - fy) + bottom * fy;
            data.push((blended + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(img.width(), img.height(), data)
}
