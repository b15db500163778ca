use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

pub const MAX_SHAPES: usize = 8;
pub const MAX_COLORS: usize = 8;

/// Raster side of the synthetic images.
pub const IMAGE_SIDE: usize = 16;
/// Glyph design box side.
const BOX: usize = 9;
/// Jittered placements per (shape, color) combination.
const DEFAULT_VARIANTS: usize = 6;

/// Small RGB rasters generated from (shape id, color id) pairs, split into a
/// train set and a held-out set of unseen combinations.
#[derive(Debug, Clone)]
pub struct SyntheticFactorDataset {
    /// Flattened side*side*3 images in [0,1].
    pub images: Vec<Vec<f64>>,
    /// Generating (shape, color) pair per image.
    pub labels: Vec<(usize, usize)>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub side: usize,
    pub shapes: usize,
    pub colors: usize,
}

impl SyntheticFactorDataset {
    pub fn train_images(&self) -> Vec<Vec<f64>> {
        self.train_indices
            .iter()
            .map(|&i| self.images[i].clone())
            .collect()
    }

    pub fn train_combination_count(&self) -> usize {
        let mut combos: Vec<(usize, usize)> = self
            .train_indices
            .iter()
            .map(|&i| self.labels[i])
            .collect();
        combos.sort();
        combos.dedup();
        combos.len()
    }

    pub fn test_combination_count(&self) -> usize {
        let mut combos: Vec<(usize, usize)> = self
            .test_indices
            .iter()
            .map(|&i| self.labels[i])
            .collect();
        combos.sort();
        combos.dedup();
        combos.len()
    }
}

/// RGB prototype for a color id, in [0,1].
pub fn color_prototype(color: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; MAX_COLORS] = [
        [0.85, 0.15, 0.15], // red
        [0.20, 0.80, 0.25], // green
        [0.20, 0.35, 0.85], // blue
        [0.90, 0.85, 0.20], // yellow
        [0.80, 0.20, 0.80], // magenta
        [0.20, 0.80, 0.80], // cyan
        [0.90, 0.55, 0.15], // orange
        [0.90, 0.90, 0.90], // white
    ];
    PALETTE[color]
}

/// Boolean glyph mask for a shape id on the BOX x BOX design grid.
pub fn shape_mask(shape: usize) -> Vec<bool> {
    let c = (BOX / 2) as i64;
    let mut mask = vec![false; BOX * BOX];
    for r in 0..BOX as i64 {
        for q in 0..BOX as i64 {
            let dr = r - c;
            let dq = q - c;
            let on = match shape {
                0 => dr.abs() <= 3 && dq.abs() <= 3,                      // solid square
                1 => dr * dr + dq * dq <= 13,                             // disk
                2 => (7..=17).contains(&(dr * dr + dq * dq)),             // ring
                3 => dr.abs() <= 1 || dq.abs() <= 1,                      // plus
                4 => (dr - dq).abs() <= 1 || (dr + dq).abs() <= 1,        // x
                5 => r >= 1 && dq.abs() * 2 <= r,                         // triangle
                6 => r % 3 == 1,                                          // bars
                7 => dr.abs() + dq.abs() <= 4,                            // diamond
                _ => false,
            };
            mask[(r * BOX as i64 + q) as usize] = on;
        }
    }
    mask
}

fn render_combo(shape: usize, color: usize, offset: (usize, usize)) -> Vec<f64> {
    let mask = shape_mask(shape);
    let rgb = color_prototype(color);
    let mut img = vec![0.0; IMAGE_SIDE * IMAGE_SIDE * 3];
    for r in 0..BOX {
        for q in 0..BOX {
            if mask[r * BOX + q] {
                let pr = r + offset.0;
                let pc = q + offset.1;
                let idx = (pr * IMAGE_SIDE + pc) * 3;
                img[idx] = rgb[0];
                img[idx + 1] = rgb[1];
                img[idx + 2] = rgb[2];
            }
        }
    }
    img
}

/// Builds the shape-by-color dataset with the default number of jittered
/// variants per combination. Held-out pairs are excluded from the train
/// split and form the test split.
pub fn build_synthetic_factor_dataset(
    shapes: usize,
    colors: usize,
    holdout: &[(usize, usize)],
    seed: u64,
) -> Result<SyntheticFactorDataset> {
    build_with_variants(shapes, colors, holdout, seed, DEFAULT_VARIANTS)
}

pub fn build_with_variants(
    shapes: usize,
    colors: usize,
    holdout: &[(usize, usize)],
    seed: u64,
    variants: usize,
) -> Result<SyntheticFactorDataset> {
    if shapes == 0 || shapes > MAX_SHAPES || colors == 0 || colors > MAX_COLORS {
        return Err(Error::config(format!(
            "shapes must be 1..={MAX_SHAPES}, colors 1..={MAX_COLORS}"
        )));
    }
    for &(s, c) in holdout {
        if s >= shapes || c >= colors {
            return Err(Error::config(format!(
                "holdout pair ({s},{c}) outside the {shapes}x{colors} grid"
            )));
        }
    }
    if holdout.len() >= shapes * colors {
        return Err(Error::config("holdout covers every combination"));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let max_off = IMAGE_SIDE - BOX;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for s in 0..shapes {
        for c in 0..colors {
            let held = holdout.contains(&(s, c));
            for _ in 0..variants.max(1) {
                let offset = (rng.gen_range(0..=max_off), rng.gen_range(0..=max_off));
                let idx = images.len();
                images.push(render_combo(s, c, offset));
                labels.push((s, c));
                if held {
                    test_indices.push(idx);
                } else {
                    train_indices.push(idx);
                }
            }
        }
    }
    Ok(SyntheticFactorDataset {
        images,
        labels,
        train_indices,
        test_indices,
        side: IMAGE_SIDE,
        shapes,
        colors,
    })
}

/// Template probe: color label by cosine similarity between the mean lit RGB
/// and the palette prototypes.
pub fn classify_color(image: &[f64], colors: usize) -> usize {
    let mut sum = [0.0f64; 3];
    let mut lit = 0.0;
    for px in image.chunks_exact(3) {
        let brightness = px[0].max(px[1]).max(px[2]);
        if brightness > 0.15 {
            sum[0] += px[0];
            sum[1] += px[1];
            sum[2] += px[2];
            lit += 1.0;
        }
    }
    if lit == 0.0 {
        return 0;
    }
    let mean = [sum[0] / lit, sum[1] / lit, sum[2] / lit];
    let norm = (mean[0] * mean[0] + mean[1] * mean[1] + mean[2] * mean[2]).sqrt();
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for c in 0..colors {
        let p = color_prototype(c);
        let pn = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let sim = (mean[0] * p[0] + mean[1] * p[1] + mean[2] * p[2]) / (norm * pn).max(1e-12);
        if sim > best_sim {
            best_sim = sim;
            best = c;
        }
    }
    best
}

/// Template probe: shape label by the best intersection-over-union between
/// the binarized image and each glyph mask over all placements.
pub fn classify_shape(image: &[f64], shapes: usize) -> usize {
    let mut brightness = vec![0.0; IMAGE_SIDE * IMAGE_SIDE];
    let mut peak = 0.0f64;
    for (i, px) in image.chunks_exact(3).enumerate() {
        brightness[i] = px[0].max(px[1]).max(px[2]);
        peak = peak.max(brightness[i]);
    }
    let threshold = 0.5 * peak;
    let binary: Vec<bool> = brightness.iter().map(|&b| b > threshold).collect();

    let max_off = IMAGE_SIDE - BOX;
    let mut best = 0;
    let mut best_iou = f64::NEG_INFINITY;
    for s in 0..shapes {
        let mask = shape_mask(s);
        for or in 0..=max_off {
            for oc in 0..=max_off {
                let mut inter = 0usize;
                let mut mask_on = 0usize;
                for r in 0..BOX {
                    for q in 0..BOX {
                        if mask[r * BOX + q] {
                            mask_on += 1;
                            if binary[(r + or) * IMAGE_SIDE + (q + oc)] {
                                inter += 1;
                            }
                        }
                    }
                }
                let img_on = binary.iter().filter(|&&b| b).count();
                let union = mask_on + img_on - inter;
                let iou = inter as f64 / union.max(1) as f64;
                if iou > best_iou {
                    best_iou = iou;
                    best = s;
                }
            }
        }
    }
    best
}
