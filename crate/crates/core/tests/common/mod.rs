//! Independent reference implementations shared by the integration tests
//! and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;

use albedo::dataset::{self, DatasetManifest, ManifestEntry, Provenance, Split, MANIFEST_VERSION};
use albedo::gan::{Dropout, Generator, GeneratorConfig, Tensor};
use albedo::image::LinearImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> LinearImage {
    LinearImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

fn values(img: &LinearImage, c: usize) -> Vec<Vec<f64>> {
    (0..img.height())
        .map(|y| (0..img.width()).map(|x| img.pixel(x, y)[c] as f64).collect())
        .collect()
}

pub fn naive_l1(a: &LinearImage, b: &LinearImage) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for c in 0..3 {
        let (va, vb) = (values(a, c), values(b, c));
        for y in 0..a.height() {
            for x in 0..a.width() {
                sum += (va[y][x] - vb[y][x]).abs();
                n += 1.0;
            }
        }
    }
    sum / n
}

pub fn naive_psnr(a: &LinearImage, b: &LinearImage) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for c in 0..3 {
        let (va, vb) = (values(a, c), values(b, c));
        for y in 0..a.height() {
            for x in 0..a.width() {
                sum += (va[y][x] - vb[y][x]).powi(2);
                n += 1.0;
            }
        }
    }
    let mse = sum / n;
    if mse == 0.0 {
        99.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(99.0)
    }
}

/// Two-pass window statistics with no shared accumulation tricks.
pub fn naive_ssim(a: &LinearImage, b: &LinearImage) -> f64 {
    const K: usize = 8;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    let mut count = 0.0;
    for c in 0..3 {
        let (va, vb) = (values(a, c), values(b, c));
        for y0 in 0..=h - K {
            for x0 in 0..=w - K {
                let cells: Vec<(f64, f64)> = (y0..y0 + K)
                    .flat_map(|y| (x0..x0 + K).map(move |x| (y, x)))
                    .map(|(y, x)| (va[y][x], vb[y][x]))
                    .collect();
                let n = cells.len() as f64;
                let ma = cells.iter().map(|p| p.0).sum::<f64>() / n;
                let mb = cells.iter().map(|p| p.1).sum::<f64>() / n;
                let sa = cells.iter().map(|p| (p.0 - ma).powi(2)).sum::<f64>() / n;
                let sb = cells.iter().map(|p| (p.1 - mb).powi(2)).sum::<f64>() / n;
                let sab = cells.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / n;
                total += ((2.0 * ma * mb + c1) * (2.0 * sab + c2)) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
                count += 1.0;
            }
        }
    }
    total / count
}

/// A manifest of `n_labels × renders` entries with no files behind it.
pub fn synthetic_manifest(n_labels: usize, renders: usize, master_seed: u64) -> DatasetManifest {
    DatasetManifest {
        version: MANIFEST_VERSION,
        master_seed,
        split_ratio: 0.0,
        entries: (0..n_labels)
            .flat_map(|l| {
                (0..renders).map(move |r| ManifestEntry {
                    pair_id: format!("L{l:04}_{r:03}"),
                    label_id: format!("L{l:04}"),
                    lit_path: format!("lit/L{l:04}_{r:03}.png"),
                    albedo_path: format!("albedo/L{l:04}_{r:03}.png"),
                    split: Split::Test,
                    provenance: Provenance::External {
                        dataset: "synthetic".into(),
                    },
                })
            })
            .collect(),
    }
}

/// Splits `manifest` and checks disjointness, coverage, the ratio bound and
/// that per-split iteration never mixes labels.
pub fn check_split_soundness(manifest: &DatasetManifest, ratio: f64) -> Result<(), String> {
    let assignment = dataset::assign_split(manifest, ratio).map_err(|e| e.to_string())?;
    let labels: BTreeSet<String> = manifest.entries.iter().map(|e| e.label_id.clone()).collect();
    if !assignment.train_labels.is_disjoint(&assignment.test_labels) {
        return Err("train and test label sets overlap".into());
    }
    let union: BTreeSet<String> = assignment.train_labels.union(&assignment.test_labels).cloned().collect();
    if union != labels {
        return Err("split does not cover every label".into());
    }
    let wanted = ratio * labels.len() as f64;
    let got = assignment.train_labels.len() as f64;
    if (got - wanted).abs() > 1.0 {
        return Err(format!("{got} train labels for ratio {ratio} of {}", labels.len()));
    }
    let mut applied = manifest.clone();
    applied.apply_split(&assignment, ratio).map_err(|e| e.to_string())?;
    for e in applied.entries_in(Split::Train) {
        if !assignment.train_labels.contains(&e.label_id) {
            return Err(format!("{} iterated as train", e.pair_id));
        }
    }
    for e in applied.entries_in(Split::Test) {
        if !assignment.test_labels.contains(&e.label_id) {
            return Err(format!("{} iterated as test", e.pair_id));
        }
    }
    Ok(())
}

pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    /// Relative error with a 1e-8 floor on the scale, so parameters whose
    /// true gradient is zero (biases ahead of a normalization) compare absolutely.
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(1e-8)
    }
}

fn mean_abs(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Compares backpropagated gradients of the mean-L1 reconstruction loss of
/// a miniature generator (8×8 input, 2 stages, 4 base channels, f64) with
/// central differences at `samples` randomly chosen scalars. A fixed
/// dropout seed gives the same mask on every evaluation.
pub fn generator_gradient_check(samples: usize, seed: u64, dropout: Option<Dropout>) -> Vec<GradSample> {
    let cfg = GeneratorConfig {
        image_size: 8,
        base_channels: 4,
        depth: 2,
    };
    let generator = Generator::<f64>::new_unchecked(cfg, seed).expect("mini generator");
    let n = 3 * 8 * 8;
    let input: Vec<f64> = (0..n).map(|i| 0.5 + 0.45 * ((i * 37 % 101) as f64 / 101.0 - 0.5) * 2.0).collect();
    let input = Tensor::from_vec(3, 8, 8, input);
    // Targets sit at 0 or 1, well away from the untrained output (≈0.5), so the
    // L1 kink is never crossed by a perturbation.
    let target: Vec<f64> = (0..n).map(|i| ((i / 3 + i / 24) % 2) as f64).collect();

    let (y, tape) = generator.forward_train(&input, dropout).expect("forward");
    let dy: Vec<f64> = y
        .data
        .iter()
        .zip(&target)
        .map(|(p, t)| (p - t).signum() / n as f64)
        .collect();
    let mut grads = generator.params.zeros_like();
    generator.backward(&tape, &Tensor::from_vec(3, 8, 8, dy), &mut grads);

    let loss_with = |param: usize, index: usize, delta: f64| {
        let mut g = generator.clone();
        g.params.entries_mut()[param].data[index] += delta;
        mean_abs(&g.forward_train(&input, dropout).expect("forward").0.data, &target)
    };

    let sizes: Vec<usize> = generator.params.entries().iter().map(|p| p.data.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let eps = 1e-6;
    (0..samples)
        .map(|_| {
            let mut flat = rng.random_range(0..total);
            let mut param = 0;
            while flat >= sizes[param] {
                flat -= sizes[param];
                param += 1;
            }
            let numeric = (loss_with(param, flat, eps) - loss_with(param, flat, -eps)) / (2.0 * eps);
            GradSample {
                param: generator.params.entries()[param].name.clone(),
                index: flat,
                analytic: grads[param][flat],
                numeric,
            }
        })
        .collect()
}
