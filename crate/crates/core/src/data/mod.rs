//! Dataset abstraction: the on-disk sample format, patient-level splits, and
//! schema validation. Synthetic generators live in `synth`.

pub mod synth;

use crate::error::{CsError, Result};
use crate::io_util;
use crate::metrics::ROIBox;
use crate::signal::{ComplexGrid, Domain};
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    FullFov,
    RoiRecon,
    Segmentation,
    Classification,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::FullFov => "full_fov",
            Task::RoiRecon => "roi_recon",
            Task::Segmentation => "segmentation",
            Task::Classification => "classification",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full_fov" => Ok(Task::FullFov),
            "roi_recon" => Ok(Task::RoiRecon),
            "segmentation" => Ok(Task::Segmentation),
            "classification" => Ok(Task::Classification),
            other => Err(CsError::Config(format!("unknown task '{other}'"))),
        }
    }
}

/// Measured k-space: single-coil grid or per-coil set with optional maps.
#[derive(Clone, Debug)]
pub enum KspaceData {
    Single(ComplexGrid),
    Multi(crate::signal::CoilSet),
}

impl KspaceData {
    pub fn num_coils(&self) -> usize {
        match self {
            KspaceData::Single(_) => 1,
            KspaceData::Multi(cs) => cs.num_coils(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            KspaceData::Single(g) => g.shape(),
            KspaceData::Multi(cs) => cs.shape(),
        }
    }

    pub fn coil_grids(&self) -> Vec<&ComplexGrid> {
        match self {
            KspaceData::Single(g) => vec![g],
            KspaceData::Multi(cs) => cs.coil_kspaces.iter().collect(),
        }
    }
}

/// One training example: full k-space, ground-truth magnitude image, and the
/// label fields required by the configured task.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub patient_id: String,
    pub kspace: KspaceData,
    pub target: Array2<f64>,
    pub roi: Option<ROIBox>,
    pub seg_map: Option<Array2<u8>>,
    pub seg_classes: Option<usize>,
    pub cls_label: Option<u8>,
}

impl Sample {
    pub fn shape(&self) -> (usize, usize) {
        self.target.dim()
    }

    /// One-hot (C, H, W) view of the segmentation map.
    pub fn seg_onehot(&self) -> Option<Array3<f64>> {
        let map = self.seg_map.as_ref()?;
        let c = self.seg_classes?;
        let (h, w) = map.dim();
        let mut out = Array3::zeros((c, h, w));
        for ((i, j), &cls) in map.indexed_iter() {
            out[[cls as usize, i, j]] = 1.0;
        }
        Some(out)
    }

    fn validate_for(&self, task: Task) -> Result<()> {
        let missing = match task {
            Task::FullFov => None,
            Task::RoiRecon => self.roi.is_none().then_some("roi"),
            Task::Segmentation => self.seg_map.is_none().then_some("seg_map"),
            Task::Classification => self.cls_label.is_none().then_some("cls_label"),
        };
        if let Some(field) = missing {
            return Err(CsError::Schema(format!(
                "sample '{}' is missing required label '{field}' for task {}",
                self.id,
                task.as_str()
            )));
        }
        Ok(())
    }
}

/// Patient-level split lists. Patients never cross splits.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    /// 60/20/20 patient-level split with a seeded shuffle.
    pub fn generate(patients: &[String], seed: u64) -> Self {
        let mut unique: Vec<String> = {
            let mut seen = HashSet::new();
            patients
                .iter()
                .filter(|p| seen.insert(p.as_str()))
                .cloned()
                .collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        unique.shuffle(&mut rng);
        let n = unique.len();
        let n_train = ((0.6 * n as f64).round() as usize).clamp(1, n.saturating_sub(2).max(1));
        let n_val = ((0.2 * n as f64).round() as usize).max(1).min(n - n_train - 1);
        let train = unique[..n_train].to_vec();
        let val = unique[n_train..n_train + n_val].to_vec();
        let test = unique[n_train + n_val..].to_vec();
        Self { train, val, test }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: HashSet<&str> = HashSet::new();
        for (name, list) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for p in list {
                if !seen.insert(p.as_str()) {
                    return Err(CsError::Integrity(format!(
                        "patient '{p}' appears in multiple splits (found again in {name})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task: Task,
    pub height: usize,
    pub width: usize,
    pub classes: Option<usize>,
    /// Generator identity + options snapshot; used by OOD checks.
    pub generator: String,
    pub sample_ids: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.meta.height, self.meta.width)
    }

    pub fn patients(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.patient_id.clone()).collect()
    }

    /// Indices of samples whose patient belongs to the given split list.
    pub fn split_indices(&self, split: &[String]) -> Vec<usize> {
        let set: HashSet<&str> = split.iter().map(|s| s.as_str()).collect();
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| set.contains(s.patient_id.as_str()))
            .map(|(i, _)| i)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// On-disk format: one directory per sample holding a TOML header and raw
// little-endian f32 payloads (complex grids interleave re/im, row-major).
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SampleHeader {
    height: usize,
    width: usize,
    coils: usize,
    patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roi: Option<ROIBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seg_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cls_label: Option<u8>,
    has_sensitivities: bool,
}

fn write_complex(path: &Path, grids: &[&ComplexGrid]) -> Result<()> {
    let it = grids
        .iter()
        .flat_map(|g| g.data.iter().flat_map(|v| [v.re, v.im]));
    io_util::write_f32_payload(path, it)
}

fn read_complex(path: &Path, coils: usize, h: usize, w: usize, domain: Domain) -> Result<Vec<ComplexGrid>> {
    let vals = io_util::read_f32_payload(path)?;
    io_util::expect_len(path, &vals, coils * h * w * 2)?;
    let mut out = Vec::with_capacity(coils);
    for c in 0..coils {
        let base = c * h * w * 2;
        let data = Array2::from_shape_fn((h, w), |(i, j)| {
            let k = base + (i * w + j) * 2;
            Complex64::new(vals[k], vals[k + 1])
        });
        out.push(ComplexGrid::new(data, domain));
    }
    Ok(out)
}

pub fn save_sample(dir: &Path, s: &Sample) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (h, w) = s.shape();
    let header = SampleHeader {
        height: h,
        width: w,
        coils: s.kspace.num_coils(),
        patient_id: s.patient_id.clone(),
        roi: s.roi,
        seg_classes: s.seg_classes,
        cls_label: s.cls_label,
        has_sensitivities: matches!(&s.kspace, KspaceData::Multi(cs) if cs.sensitivities.is_some()),
    };
    std::fs::write(
        dir.join("sample.toml"),
        toml::to_string(&header).map_err(|e| CsError::Schema(e.to_string()))?,
    )?;
    write_complex(&dir.join("kspace.f32"), &s.kspace.coil_grids())?;
    io_util::write_f32_payload(&dir.join("target.f32"), s.target.iter().copied())?;
    if let Some(seg) = &s.seg_map {
        io_util::write_f32_payload(&dir.join("seg.f32"), seg.iter().map(|&v| v as f64))?;
    }
    if let KspaceData::Multi(cs) = &s.kspace {
        if let Some(sens) = &cs.sensitivities {
            let refs: Vec<&ComplexGrid> = sens.iter().collect();
            write_complex(&dir.join("sens.f32"), &refs)?;
        }
    }
    Ok(())
}

pub fn load_sample(dir: &Path, id: &str) -> Result<Sample> {
    let header: SampleHeader = toml::from_str(&std::fs::read_to_string(dir.join("sample.toml"))?)
        .map_err(|e| CsError::Schema(format!("sample '{id}': {e}")))?;
    let (h, w) = (header.height, header.width);
    let coils = read_complex(&dir.join("kspace.f32"), header.coils, h, w, Domain::Kspace)?;
    let kspace = if header.coils == 1 && !header.has_sensitivities {
        KspaceData::Single(coils.into_iter().next().unwrap())
    } else {
        let sens = if header.has_sensitivities {
            Some(read_complex(&dir.join("sens.f32"), header.coils, h, w, Domain::Image)?)
        } else {
            None
        };
        KspaceData::Multi(crate::signal::CoilSet {
            coil_kspaces: coils,
            sensitivities: sens,
        })
    };
    let tpath = dir.join("target.f32");
    let tvals = io_util::read_f32_payload(&tpath)?;
    io_util::expect_len(&tpath, &tvals, h * w)?;
    let target = Array2::from_shape_vec((h, w), tvals).unwrap();
    let seg_map = if dir.join("seg.f32").exists() {
        let spath = dir.join("seg.f32");
        let svals = io_util::read_f32_payload(&spath)?;
        io_util::expect_len(&spath, &svals, h * w)?;
        Some(Array2::from_shape_vec((h, w), svals).unwrap().mapv(|v| v as u8))
    } else {
        None
    };
    Ok(Sample {
        id: id.to_string(),
        patient_id: header.patient_id,
        kspace,
        target,
        roi: header.roi,
        seg_map,
        seg_classes: header.seg_classes,
        cls_label: header.cls_label,
    })
}

pub fn save_dataset(root: &Path, ds: &Dataset, splits: &SplitManifest) -> Result<()> {
    std::fs::create_dir_all(root)?;
    std::fs::write(
        root.join("dataset.toml"),
        toml::to_string(&ds.meta).map_err(|e| CsError::Schema(e.to_string()))?,
    )?;
    std::fs::write(
        root.join("splits.toml"),
        toml::to_string(splits).map_err(|e| CsError::Schema(e.to_string()))?,
    )?;
    let samples_dir = root.join("samples");
    for s in &ds.samples {
        save_sample(&samples_dir.join(&s.id), s)?;
    }
    Ok(())
}

/// Load and validate a dataset: task-required labels present on every sample
/// and patient-disjoint splits.
pub fn load_dataset(root: &Path, task: Task) -> Result<(Dataset, SplitManifest)> {
    let meta: DatasetMeta = toml::from_str(&std::fs::read_to_string(root.join("dataset.toml"))?)
        .map_err(|e| CsError::Schema(format!("dataset.toml: {e}")))?;
    let splits: SplitManifest = toml::from_str(&std::fs::read_to_string(root.join("splits.toml"))?)
        .map_err(|e| CsError::Schema(format!("splits.toml: {e}")))?;
    splits.validate()?;
    let samples_dir = root.join("samples");
    let mut samples = Vec::with_capacity(meta.sample_ids.len());
    for id in &meta.sample_ids {
        let s = load_sample(&samples_dir.join(id), id)?;
        s.validate_for(task)?;
        samples.push(s);
    }
    let ds = Dataset { meta, samples };
    // every patient in the data must be covered by exactly one split
    let covered: HashSet<&str> = splits
        .train
        .iter()
        .chain(splits.val.iter())
        .chain(splits.test.iter())
        .map(|s| s.as_str())
        .collect();
    for s in &ds.samples {
        if !covered.contains(s.patient_id.as_str()) {
            return Err(CsError::Integrity(format!(
                "patient '{}' missing from split manifest",
                s.patient_id
            )));
        }
    }
    Ok((ds, splits))
}
