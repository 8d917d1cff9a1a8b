//! Dataset descriptors that condition the predictors.
//!
//! Seven cheap statistics derived from image sizes and label masks. They are
//! log-transformed (counts and areas) and standardized against the
//! meta-training population before being fed to the networks.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const META_DIM: usize = 7;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatures {
    pub n_images: f64,
    pub n_classes: f64,
    pub mean_height: f64,
    pub mean_width: f64,
    pub mean_foreground_fraction: f64,
    pub mean_instances_per_image: f64,
    pub channel_count: f64,
}

impl MetaFeatures {
    pub fn to_array(&self) -> [f64; META_DIM] {
        [
            self.n_images,
            self.n_classes,
            self.mean_height,
            self.mean_width,
            self.mean_foreground_fraction,
            self.mean_instances_per_image,
            self.channel_count,
        ]
    }

    /// The vector that gets standardized: counts and areas pass through
    /// `ln(1 + x)` first.
    fn transformed(&self) -> [f64; META_DIM] {
        let mut a = self.to_array();
        for i in LOG_DIMS {
            a[i] = a[i].ln_1p();
        }
        a
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite() && *x >= 0.0)
            && self.mean_foreground_fraction <= 1.0
            && self.n_classes >= 2.0
    }
}

// n_images, mean_height, mean_width
const LOG_DIMS: [usize; 3] = [0, 2, 3];

/// One image (only its shape matters) with its label mask. Mask values are
/// class indices, 0 being background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub mask_width: u32,
    pub mask_height: u32,
    pub mask: Vec<u8>,
}

impl LabeledImage {
    pub fn new(width: u32, height: u32, channels: u32, mask: Vec<u8>) -> Self {
        Self {
            width,
            height,
            channels,
            mask_width: width,
            mask_height: height,
            mask,
        }
    }
}

pub fn extract(dataset: &[LabeledImage]) -> Result<MetaFeatures> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut max_label = 1u8;
    let mut sum_h = 0.0;
    let mut sum_w = 0.0;
    let mut sum_fg = 0.0;
    let mut sum_inst = 0.0;
    let mut sum_ch = 0.0;
    for (index, img) in dataset.iter().enumerate() {
        let area = img.mask_width as usize * img.mask_height as usize;
        if img.width != img.mask_width || img.height != img.mask_height || img.mask.len() != area {
            return Err(Error::ShapeMismatch {
                index,
                image: (img.width, img.height),
                mask: (img.mask_width, img.mask_height),
            });
        }
        let fg = img.mask.iter().filter(|&&v| v != 0).count();
        max_label = max_label.max(img.mask.iter().copied().max().unwrap_or(0));
        sum_h += img.height as f64;
        sum_w += img.width as f64;
        sum_fg += if area > 0 { fg as f64 / area as f64 } else { 0.0 };
        sum_inst += count_components(img) as f64;
        sum_ch += img.channels as f64;
    }
    let n = dataset.len() as f64;
    Ok(MetaFeatures {
        n_images: n,
        n_classes: max_label as f64 + 1.0,
        mean_height: sum_h / n,
        mean_width: sum_w / n,
        mean_foreground_fraction: sum_fg / n,
        mean_instances_per_image: sum_inst / n,
        channel_count: sum_ch / n,
    })
}

/// 4-connected components of each non-zero label, summed over labels.
fn count_components(img: &LabeledImage) -> usize {
    let (w, h) = (img.mask_width as usize, img.mask_height as usize);
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut count = 0;
    for start in 0..w * h {
        let label = img.mask[start];
        if label == 0 || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if !seen[q] && img.mask[q] == label {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-dimension mean and population std of the transformed features.
pub fn fit_stats(features: &[MetaFeatures]) -> Result<MetaStats> {
    if features.is_empty() {
        return Err(Error::EmptyFeatures);
    }
    let n = features.len() as f64;
    let rows: Vec<_> = features.iter().map(MetaFeatures::transformed).collect();
    let mut mean = vec![0.0; META_DIM];
    for r in &rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n;
        }
    }
    let mut std = vec![0.0; META_DIM];
    for r in &rows {
        for ((s, x), m) in std.iter_mut().zip(r).zip(&mean) {
            *s += (x - m).powi(2) / n;
        }
    }
    let std = std.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
    Ok(MetaStats { mean, std })
}

pub fn normalize(f: &MetaFeatures, s: &MetaStats) -> Result<Vec<f64>> {
    if s.mean.len() != META_DIM || s.std.len() != META_DIM {
        return Err(Error::DimensionMismatch {
            expected: META_DIM,
            got: s.mean.len().min(s.std.len()),
        });
    }
    Ok(f.transformed()
        .iter()
        .zip(s.mean.iter().zip(&s.std))
        .map(|(x, (m, sd))| (x - m) / sd)
        .collect())
}

/// Loads `images/*.png` and `masks/*.png` (matched by file name) from a
/// dataset directory, keeping a seeded subsample of `subsample_n` pairs.
/// Masks holding only 0/255 are read as binary.
pub fn load_dataset_dir(dir: &Path, subsample_n: usize, seed: u64) -> Result<Vec<LabeledImage>> {
    let masks_dir = dir.join("masks");
    let mut names: Vec<_> = std::fs::read_dir(&masks_dir)
        .map_err(|e| Error::io(&masks_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name())
        .filter(|n| n.to_string_lossy().ends_with(".png"))
        .collect();
    names.sort();
    names.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    names.truncate(subsample_n);
    names.sort();

    names
        .iter()
        .map(|name| {
            let img_path = dir.join("images").join(name);
            let mask_path = masks_dir.join(name);
            let img = image::open(&img_path).map_err(|e| Error::Image(format!("{img_path:?}: {e}")))?;
            let mask = image::open(&mask_path)
                .map_err(|e| Error::Image(format!("{mask_path:?}: {e}")))?
                .into_luma8();
            let mut labels = mask.as_raw().clone();
            if labels.iter().all(|&v| v == 0 || v == 255) {
                labels.iter_mut().for_each(|v| *v = (*v == 255) as u8);
            }
            Ok(LabeledImage {
                width: img.width(),
                height: img.height(),
                channels: img.color().channel_count() as u32,
                mask_width: mask.width(),
                mask_height: mask.height(),
                mask: labels,
            })
        })
        .collect()
}
