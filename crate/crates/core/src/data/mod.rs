//! Dataset discovery, loading and cross-validation folds.
//!
//! A dataset root holds `lf/` and `gt/`. Each light field is either a
//! micro-lens PNG `lf/<id>.png` (with its `<id>.txt` sidecar) or a view
//! directory `lf/<id>/`; its mask is `gt/<id>.png`.

pub mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lightfield::io::{read_gray_png, read_light_field, sidecar_path, LayoutKind};
use crate::lightfield::LightField;
use crate::metrics::GroundTruth;
use crate::tensor::ops;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub id: String,
    pub lf_path: PathBuf,
    pub gt_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    /// Sorted by id.
    pub entries: Vec<DatasetEntry>,
    pub layout_kind: LayoutKind,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    /// The entries at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> DatasetIndex {
        DatasetIndex {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
            layout_kind: self.layout_kind,
        }
    }

    /// One line per entry: `id<TAB>lf path<TAB>gt path`.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# layout {}\n", self.layout_kind.as_str());
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.id, e.lf_path.display(), e.gt_path.display()));
        }
        out
    }
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for item in rd {
        let p = item.map_err(|e| Error::io(dir, e))?.path();
        let hidden = p.file_name().and_then(|n| n.to_str()).is_none_or(|n| n.starts_with('.'));
        if !hidden {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn is_png(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn check_png(p: &Path) -> Result<()> {
    image::image_dimensions(p)
        .map(|_| ())
        .map_err(|e| Error::Format(format!("{}: {e}", p.display())))
}

/// Pairs `root/lf` with `root/gt` by stem.
pub fn ingest_dataset(root: &Path) -> Result<DatasetIndex> {
    let lf_dir = root.join("lf");
    let gt_dir = root.join("gt");
    for d in [&lf_dir, &gt_dir] {
        if !d.is_dir() {
            return Err(Error::Format(format!("{} is not a directory", d.display())));
        }
    }

    let mut lfs: BTreeMap<String, (PathBuf, LayoutKind)> = BTreeMap::new();
    for p in list_dir(&lf_dir)? {
        let kind = if p.is_dir() {
            LayoutKind::SaiDir
        } else if is_png(&p) {
            LayoutKind::Mla
        } else {
            continue;
        };
        let id = if kind == LayoutKind::SaiDir {
            p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string()
        } else {
            stem(&p)
        };
        if lfs.insert(id.clone(), (p, kind)).is_some() {
            return Err(Error::Format(format!("light field `{id}` appears twice")));
        }
    }
    let gts: BTreeMap<String, PathBuf> = list_dir(&gt_dir)?
        .into_iter()
        .filter(|p| is_png(p))
        .map(|p| (stem(&p), p))
        .collect();

    let mut orphans: Vec<String> = lfs
        .iter()
        .filter(|(id, _)| !gts.contains_key(*id))
        .map(|(_, (p, _))| p.display().to_string())
        .collect();
    orphans.extend(gts.iter().filter(|(id, _)| !lfs.contains_key(*id)).map(|(_, p)| p.display().to_string()));
    if !orphans.is_empty() {
        return Err(Error::Pairing(format!("unpaired files: {}", orphans.join(", "))));
    }
    if lfs.is_empty() {
        return Err(Error::Pairing(format!("no light fields under {}", lf_dir.display())));
    }

    let kinds: BTreeSet<&str> = lfs.values().map(|(_, k)| k.as_str()).collect();
    if kinds.len() > 1 {
        return Err(Error::Format(format!(
            "mixed light-field layouts ({}); one layout per dataset",
            kinds.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let layout_kind = lfs.values().next().map(|(_, k)| *k).unwrap_or(LayoutKind::Mla);

    let mut entries = Vec::with_capacity(lfs.len());
    for (id, (lf_path, kind)) in lfs {
        let gt_path = gts[&id].clone();
        check_png(&gt_path)?;
        match kind {
            LayoutKind::Mla => {
                check_png(&lf_path)?;
                let side = sidecar_path(&lf_path);
                if !side.is_file() {
                    return Err(Error::Format(format!("{} has no sidecar {}", lf_path.display(), side.display())));
                }
            }
            LayoutKind::SaiDir => {
                for p in list_dir(&lf_path)?.into_iter().filter(|p| is_png(p)) {
                    check_png(&p)?;
                }
            }
        }
        entries.push(DatasetEntry { id, lf_path, gt_path });
    }
    Ok(DatasetIndex { entries, layout_kind })
}

/// `scene_crop2` comes from source `scene`; other ids are their own source.
pub fn source_id(id: &str) -> &str {
    if let Some(pos) = id.rfind("_crop") {
        let tail = &id[pos + 5..];
        if !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) {
            return &id[..pos];
        }
    }
    id
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Grouped k-fold split over `ids`.
///
/// Sources are shuffled with `seed` and dealt round-robin, so per-fold
/// source counts differ by at most one and no source straddles two folds.
pub fn split_kfold(ids: &[String], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::dim(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        groups.entry(source_id(id)).or_default().push(i);
    }
    if groups.len() < k {
        return Err(Error::dim(format!(
            "{} sources cannot fill {k} folds",
            groups.len()
        )));
    }
    let mut sources: Vec<Vec<usize>> = groups.into_values().collect();
    sources.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tests = vec![Vec::new(); k];
    for (j, members) in sources.into_iter().enumerate() {
        tests[j % k].extend(members);
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let held: BTreeSet<usize> = test.iter().copied().collect();
            let train = (0..ids.len()).filter(|i| !held.contains(i)).collect();
            Fold { train, test }
        })
        .collect())
}

/// A loaded light field with its full-resolution mask.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub lf: LightField,
    pub gt: GroundTruth,
}

pub fn load_entry(entry: &DatasetEntry) -> Result<Sample> {
    let lf = read_light_field(&entry.lf_path)?;
    let gt = GroundTruth::from_tensor(&read_gray_png(&entry.gt_path)?)?;
    Ok(Sample { id: entry.id.clone(), lf, gt })
}

pub fn load_dataset(index: &DatasetIndex) -> Result<Vec<Sample>> {
    index.entries.iter().map(load_entry).collect()
}

/// Bilinear resize of a mask to `n × n`, re-thresholded at one half.
pub fn fit_ground_truth(gt: &GroundTruth, n: usize) -> Result<GroundTruth> {
    if gt.width == n && gt.height == n {
        return Ok(gt.clone());
    }
    GroundTruth::from_tensor(&ops::resize_bilinear(&gt.to_tensor(), n, n)?)
}

impl From<synth::SynthScene> for Sample {
    fn from(s: synth::SynthScene) -> Self {
        Sample { id: s.id, lf: s.lf, gt: s.gt }
    }
}
