//! On-disk corpora of (lit, albedo) pairs.
//!
//! Layout: `<root>/lit/<pair_id>.png`, `<root>/albedo/<pair_id>.png` and
//! `<root>/manifest.json`. PNGs are 8-bit sRGB. The manifest is written
//! last, so a directory without one is an incomplete build. Splits are made
//! per label: every pair of a label lands in the same split, keeping test
//! labels unseen during training.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AlbedoImage, LinearImage, LitImage};
use crate::label_synth::{self, sample_label_batch};
use crate::light_sim::{self, Dimness, EnvironmentLight, RenderProvenance};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;
/// Environment pool composition: bright, medium, dim.
pub const ENVIRONMENT_POOL: [(Dimness, usize); 3] = [(Dimness::Bright, 20), (Dimness::Medium, 20), (Dimness::Dim, 10)];

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "tif"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::validation("split", format!("{other:?} is neither train nor test"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Rendered(RenderProvenance),
    External { dataset: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub label_id: String,
    pub lit_path: String,
    pub albedo_path: String,
    pub split: Split,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub master_seed: u64,
    pub split_ratio: f64,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub train_labels: BTreeSet<String>,
    pub test_labels: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn split_of(&self, label_id: &str) -> Option<Split> {
        if self.train_labels.contains(label_id) {
            Some(Split::Train)
        } else if self.test_labels.contains(label_id) {
            Some(Split::Test)
        } else {
            None
        }
    }

    /// Set when the split leaves nothing to evaluate on.
    pub fn warning(&self) -> Option<String> {
        self.test_labels
            .is_empty()
            .then(|| format!("all {} labels went to train; the test split is empty", self.train_labels.len()))
    }
}

impl DatasetManifest {
    pub fn labels(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.label_id.clone()).collect()
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Checks id uniqueness and that each label maps to one split.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::validation("version", format!("unsupported manifest version {}", self.version)));
        }
        let mut ids = HashSet::new();
        let mut label_split: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &self.entries {
            if !ids.insert(e.pair_id.as_str()) {
                return Err(Error::Pair {
                    pair_id: e.pair_id.clone(),
                    reason: "duplicate pair_id".into(),
                });
            }
            if let Some(prev) = label_split.insert(&e.label_id, e.split) {
                if prev != e.split {
                    return Err(Error::Pair {
                        pair_id: e.pair_id.clone(),
                        reason: format!("label {} appears in both splits", e.label_id),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(self.to_json().as_bytes()))
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest = Self::from_json(&text, path)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn apply_split(&mut self, assignment: &SplitAssignment, ratio: f64) -> Result<()> {
        for e in &mut self.entries {
            e.split = assignment.split_of(&e.label_id).ok_or_else(|| Error::Pair {
                pair_id: e.pair_id.clone(),
                reason: format!("label {} missing from the split assignment", e.label_id),
            })?;
        }
        self.split_ratio = ratio;
        Ok(())
    }
}

/// Orders labels by `stable_hash(master_seed, label_id)` and sends the first
/// `⌈ratio · n_labels⌉` to train.
pub fn assign_split(manifest: &DatasetManifest, ratio: f64) -> Result<SplitAssignment> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::validation("ratio", format!("{ratio} outside (0, 1)")));
    }
    let labels = manifest.labels();
    if labels.is_empty() {
        return Err(Error::validation("manifest", "has no entries to split"));
    }
    let mut keyed: Vec<(u64, String)> = labels
        .into_iter()
        .map(|l| (seed::stable_hash(&[&manifest.master_seed.to_le_bytes(), l.as_bytes()]), l))
        .collect();
    keyed.sort();
    // The small offset keeps products like 0.8 · 150 from rounding up past an integer.
    let n_train = ((ratio * keyed.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut assignment = SplitAssignment::default();
    for (i, (_, label)) in keyed.into_iter().enumerate() {
        if i < n_train {
            assignment.train_labels.insert(label);
        } else {
            assignment.test_labels.insert(label);
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub n_labels: usize,
    pub renders_per_label: usize,
    pub master_seed: u64,
    pub image_size: usize,
    pub split_ratio: f64,
    pub roughness_threshold: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            n_labels: 30,
            renders_per_label: 20,
            master_seed: 0,
            image_size: 64,
            split_ratio: DEFAULT_SPLIT_RATIO,
            roughness_threshold: light_sim::DEFAULT_ROUGHNESS_THRESHOLD,
        }
    }
}

/// The fixed 50-environment pool for a master seed.
pub fn environment_pool(master_seed: u64) -> Vec<EnvironmentLight> {
    let mut pool = Vec::new();
    for (class, count) in ENVIRONMENT_POOL {
        for _ in 0..count {
            let i = pool.len();
            let mut env = light_sim::make_environment(seed::mix_tagged(master_seed, "environment", i as u64), class);
            env.env_id = format!("env{i:02}-{class}");
            pool.push(env);
        }
    }
    pool
}

pub fn pair_id(label_id: &str, render: usize, renders_per_label: usize) -> String {
    let digits = renders_per_label.saturating_sub(1).max(1).to_string().len().max(3);
    format!("{label_id}_{render:0digits$}")
}

pub fn build_dataset(opts: &BuildOptions, out_dir: &Path) -> Result<DatasetManifest> {
    if opts.n_labels == 0 {
        return Err(Error::validation("n_labels", "must be at least 1"));
    }
    if opts.renders_per_label == 0 {
        return Err(Error::validation("renders_per_label", "must be at least 1"));
    }
    label_synth::validate_size("image_size", opts.image_size)?;
    if !(opts.split_ratio > 0.0 && opts.split_ratio < 1.0) {
        return Err(Error::validation("split_ratio", format!("{} outside (0, 1)", opts.split_ratio)));
    }

    let manifest_path = out_dir.join(MANIFEST_FILE);
    for dir in [out_dir.to_path_buf(), out_dir.join("lit"), out_dir.join("albedo")] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }

    let labels = sample_label_batch(opts.master_seed, opts.n_labels, opts.image_size, opts.image_size)?;
    let pool = environment_pool(opts.master_seed);
    let jobs: Vec<(usize, usize)> = (0..opts.n_labels)
        .flat_map(|l| (0..opts.renders_per_label).map(move |r| (l, r)))
        .collect();

    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .map(|&(l, r)| {
            let (spec, albedo) = &labels[l];
            let index = (l * opts.renders_per_label + r) as u64;
            let render_seed = seed::mix_tagged(opts.master_seed, "render", index);
            let pair = light_sim::render_pair((spec, albedo), &pool, render_seed, opts.roughness_threshold)?;
            let id = pair_id(&spec.label_id, r, opts.renders_per_label);
            let lit_path = format!("lit/{id}.png");
            let albedo_path = format!("albedo/{id}.png");
            pair.lit.save_png(&out_dir.join(&lit_path))?;
            pair.albedo.save_png(&out_dir.join(&albedo_path))?;
            Ok(ManifestEntry {
                pair_id: id,
                label_id: spec.label_id.clone(),
                lit_path,
                albedo_path,
                split: Split::Train,
                provenance: Provenance::Rendered(pair.provenance),
            })
        })
        .collect::<Result<_>>()?;

    let mut manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        master_seed: opts.master_seed,
        split_ratio: opts.split_ratio,
        entries,
    };
    let assignment = assign_split(&manifest, opts.split_ratio)?;
    if let Some(w) = assignment.warning() {
        log::warn!("{w}");
    }
    manifest.apply_split(&assignment, opts.split_ratio)?;
    manifest.save(&manifest_path)?;
    Ok(manifest)
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPair {
    pub lit: LitImage,
    pub albedo: AlbedoImage,
    pub entry: ManifestEntry,
}

impl Dataset {
    /// Reads `<root>/manifest.json` and checks that every referenced file exists.
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::validation(
                "data",
                format!("{} has no {MANIFEST_FILE}; it is not a complete dataset", root.display()),
            ));
        }
        let manifest = DatasetManifest::load(&path)?;
        let ds = Self {
            root: root.to_path_buf(),
            manifest,
        };
        for e in &ds.manifest.entries {
            for p in [&e.lit_path, &e.albedo_path] {
                if !ds.resolve(p).exists() {
                    return Err(Error::Pair {
                        pair_id: e.pair_id.clone(),
                        reason: format!("missing file {}", ds.resolve(p).display()),
                    });
                }
            }
        }
        Ok(ds)
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<LoadedPair> {
        let read = |path: &str| {
            LinearImage::load(&self.resolve(path)).map_err(|e| Error::Pair {
                pair_id: entry.pair_id.clone(),
                reason: e.to_string(),
            })
        };
        let lit = read(&entry.lit_path)?;
        let albedo = read(&entry.albedo_path)?;
        if lit.dims() != albedo.dims() {
            return Err(Error::Pair {
                pair_id: entry.pair_id.clone(),
                reason: format!(
                    "lit is {}x{} but albedo is {}x{}",
                    lit.width(),
                    lit.height(),
                    albedo.width(),
                    albedo.height()
                ),
            });
        }
        Ok(LoadedPair {
            lit,
            albedo,
            entry: entry.clone(),
        })
    }

    /// Pairs of one split in manifest order, or shuffled when a seed is given.
    pub fn load_pairs(&self, split: Split, shuffle: Option<u64>) -> impl Iterator<Item = Result<LoadedPair>> + '_ {
        let mut entries: Vec<&ManifestEntry> = self.manifest.entries_in(split).collect();
        if let Some(s) = shuffle {
            entries.shuffle(&mut seed::rng(s));
        }
        entries.into_iter().map(move |e| self.load_entry(e))
    }

    pub fn load_all(&self, split: Split) -> Result<Vec<LoadedPair>> {
        self.load_pairs(split, None).collect()
    }
}

fn image_names(dir: &Path) -> Result<BTreeSet<String>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = BTreeSet::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|x| x.to_str())
            .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()));
        if path.is_file() && is_image {
            names.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

/// File names present in every directory; errors if the sets differ.
pub fn matching_image_names(dirs: &[&Path]) -> Result<Vec<String>> {
    let sets = dirs.iter().map(|d| image_names(d)).collect::<Result<Vec<_>>>()?;
    let union: BTreeSet<&String> = sets.iter().flatten().collect();
    let mismatches: Vec<String> = union
        .iter()
        .filter_map(|name| {
            let missing: Vec<String> = dirs
                .iter()
                .zip(&sets)
                .filter(|(_, s)| !s.contains(*name))
                .map(|(d, _)| d.display().to_string())
                .collect();
            (!missing.is_empty()).then(|| format!("{name} (missing from {})", missing.join(", ")))
        })
        .collect();
    if !mismatches.is_empty() {
        let shown: Vec<&str> = mismatches.iter().take(10).map(String::as_str).collect();
        return Err(Error::validation(
            "filenames",
            format!("{} unmatched file(s): {}", mismatches.len(), shown.join("; ")),
        ));
    }
    let names: Vec<String> = sets.first().map(|s| s.iter().cloned().collect()).unwrap_or_default();
    if names.is_empty() {
        return Err(Error::validation("filenames", "no image files found"));
    }
    Ok(names)
}

/// Wraps a foreign pair collection; every pair goes to the test split.
pub fn import_external(lit_dir: &Path, albedo_dir: &Path, name: &str) -> Result<DatasetManifest> {
    let names = matching_image_names(&[lit_dir, albedo_dir])?;
    let lit_dir = fs::canonicalize(lit_dir).map_err(|e| Error::io(lit_dir, e))?;
    let albedo_dir = fs::canonicalize(albedo_dir).map_err(|e| Error::io(albedo_dir, e))?;
    let mut entries = Vec::with_capacity(names.len());
    let mut seen = HashSet::new();
    for file in names {
        let stem = Path::new(&file)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| file.clone());
        if !seen.insert(stem.clone()) {
            return Err(Error::validation("filenames", format!("stem {stem} occurs more than once")));
        }
        entries.push(ManifestEntry {
            pair_id: stem.clone(),
            label_id: stem,
            lit_path: lit_dir.join(&file).to_string_lossy().into_owned(),
            albedo_path: albedo_dir.join(&file).to_string_lossy().into_owned(),
            split: Split::Test,
            provenance: Provenance::External {
                dataset: name.to_string(),
            },
        });
    }
    Ok(DatasetManifest {
        version: MANIFEST_VERSION,
        master_seed: 0,
        split_ratio: 0.0,
        entries,
    })
}
