use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cv::{fold_assignment, fold_split};
use super::metrics::{box_iou_report, dice};
use crate::boxcorrect::correct_box_series;
use crate::boxgeom::BoxSeries;
use crate::error::{Error, Result};
use crate::patchclf::{train_classifier, ClassifierConfig};
use crate::patchgrid::build_patch_dataset;
use crate::volumes::{
    apply_normalization, compute_norm_stats, pixel_labeled_count_from_fraction, MaskVolume, Volume,
};
use crate::weakseg::{predict_mask, train_segmenter, ConstraintConfig, SegmenterConfig};

/// Volumes with their voxel labels, sorted by id.
#[derive(Debug, Clone)]
pub struct Dataset {
    volumes: Vec<Volume>,
    masks: Vec<MaskVolume>,
}

impl Dataset {
    pub fn new(volumes: Vec<Volume>, masks: Vec<MaskVolume>) -> Result<Self> {
        if volumes.len() != masks.len() {
            return Err(Error::Shape(format!("{} volumes but {} masks", volumes.len(), masks.len())));
        }
        let mut pairs: Vec<_> = volumes.into_iter().zip(masks).collect();
        pairs.sort_by(|a, b| a.0.id().cmp(b.0.id()));
        for (v, m) in &pairs {
            m.check_pairs_with(v)?;
        }
        if pairs.windows(2).any(|w| w[0].0.id() == w[1].0.id()) {
            return Err(Error::invalid("duplicate volume ids"));
        }
        let (volumes, masks) = pairs.into_iter().unzip();
        Ok(Self { volumes, masks })
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn volumes(&self) -> &[Volume] {
        &self.volumes
    }

    pub fn masks(&self) -> &[MaskVolume] {
        &self.masks
    }

    /// SHA-256 over ids, shapes, intensities and labels.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (v, m) in self.volumes.iter().zip(&self.masks) {
            h.update(v.id().as_bytes());
            for d in v.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.to_le_bytes());
            }
            h.update(m.data());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// Tight per-slice boxes from the voxel labels.
    Tight2d,
    /// The tight 3D box sliced along z.
    Nontight3d,
    /// Sliced 3D boxes after patch-classifier correction.
    Corrected,
}

impl Supervision {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tight2d => "tight2d",
            Self::Nontight3d => "nontight3d",
            Self::Corrected => "corrected",
        }
    }
}

impl fmt::Display for Supervision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Supervision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tight2d" => Ok(Self::Tight2d),
            "nontight3d" => Ok(Self::Nontight3d),
            "corrected" => Ok(Self::Corrected),
            _ => Err(Error::field("supervision", format!("unknown mode `{s}`"))),
        }
    }
}

/// How `correction_sizes` are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionUnit {
    /// Number of pixel-labeled training volumes.
    Images,
    /// Percentage of the training fold.
    Percent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub supervision: Vec<Supervision>,
    pub patch_sizes: Vec<usize>,
    pub correction_sizes: Vec<usize>,
    pub correction_unit: CorrectionUnit,
    pub folds: usize,
    /// Seeds the fold assignment and the pixel-labeled draws.
    pub seed: u64,
    /// When false, cells stop after box correction and report IoU only.
    pub segment: bool,
    pub classifier: ClassifierConfig,
    pub segmenter: SegmenterConfig,
    pub constraints: ConstraintConfig,
    /// Cells run concurrently on this many threads.
    pub jobs: usize,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self {
            supervision: vec![Supervision::Tight2d, Supervision::Nontight3d, Supervision::Corrected],
            patch_sizes: vec![16, 32],
            correction_sizes: vec![5, 10, 20],
            correction_unit: CorrectionUnit::Images,
            folds: 3,
            seed: 0,
            segment: true,
            classifier: ClassifierConfig::default(),
            segmenter: SegmenterConfig::default(),
            constraints: ConstraintConfig::default(),
            jobs: 1,
        }
    }
}

impl MatrixSpec {
    pub fn validate(&self) -> Result<()> {
        if self.supervision.is_empty() {
            return Err(Error::field("supervision", "at least one mode is required"));
        }
        if self.folds < 2 {
            return Err(Error::field("folds", "must be >= 2"));
        }
        if self.jobs == 0 {
            return Err(Error::field("jobs", "must be >= 1"));
        }
        if self.supervision.contains(&Supervision::Corrected) {
            if self.patch_sizes.is_empty() || self.correction_sizes.is_empty() {
                return Err(Error::field("patch_sizes", "corrected mode needs patch and subset sizes"));
            }
            if let Some(p) = self.patch_sizes.iter().find(|&&p| p < 4 || p % 2 != 0) {
                return Err(Error::field("patch_sizes", format!("{p} is not even and >= 4")));
            }
            if self.correction_sizes.contains(&0) {
                return Err(Error::field("correction_sizes", "must be >= 1"));
            }
        }
        let mut clf = self.classifier.clone();
        clf.input_size = self.patch_sizes.first().copied().unwrap_or(16);
        clf.validate()?;
        self.segmenter.validate()?;
        self.constraints.validate()
    }

    /// Every cell in report order: fold, then supervision, then p, then n.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for fold in 0..self.folds {
            for &supervision in &self.supervision {
                if supervision == Supervision::Corrected {
                    for &p in &self.patch_sizes {
                        for &n in &self.correction_sizes {
                            out.push(CellKey {
                                supervision,
                                p: Some(p),
                                n_correction: Some(n),
                                fold,
                            });
                        }
                    }
                } else {
                    out.push(CellKey {
                        supervision,
                        p: None,
                        n_correction: None,
                        fold,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub supervision: Supervision,
    pub p: Option<usize>,
    pub n_correction: Option<usize>,
    pub fold: usize,
}

/// One cell evaluated on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub supervision: Supervision,
    pub p: Option<usize>,
    pub n_correction: Option<usize>,
    pub fold: usize,
    /// Mean Dice over the fold's validation volumes.
    pub dice: Option<f64>,
    /// Mean slice IoU of the supervision boxes against tight boxes, over the
    /// validation volumes.
    pub iou: Option<f64>,
    pub mismatches: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: CellKey,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset_hash: String,
    pub volumes: usize,
    pub spec: MatrixSpec,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<CellFailure>,
    pub meta: Option<ReportMeta>,
}

/// Per-fold inputs shared by all cells of the fold.
struct FoldData {
    train: Vec<usize>,
    val: Vec<usize>,
    volumes: Vec<Volume>,
    norm_id: String,
    tight: Vec<BoxSeries>,
    sliced: Vec<BoxSeries>,
}

fn prepare_fold(ds: &Dataset, assignment: &[usize], fold: usize) -> Result<FoldData> {
    let (train, val) = fold_split(assignment, fold);
    let train_vols: Vec<Volume> = train.iter().map(|&i| ds.volumes[i].clone()).collect();
    let train_masks: Vec<MaskVolume> = train.iter().map(|&i| ds.masks[i].clone()).collect();
    let stats = compute_norm_stats(&train_vols, &train_masks)?;
    let volumes = ds.volumes.iter().map(|v| apply_normalization(v, &stats)).collect();
    let tight = ds.masks.iter().map(BoxSeries::tight_from_mask).collect();
    let sliced = ds
        .masks
        .iter()
        .map(|m| match BoxSeries::sliced_from_mask(m) {
            Ok(s) => s,
            Err(_) => BoxSeries::empty(m.id(), m.depth()),
        })
        .collect();
    Ok(FoldData {
        train,
        val,
        volumes,
        norm_id: stats.fingerprint(),
        tight,
        sliced,
    })
}

fn cell_seed(base: u64, fold: usize) -> u64 {
    base.wrapping_add(fold as u64)
}

/// The first `n` training indices of a seeded permutation; subsets for
/// growing `n` are nested.
fn pixel_labeled(train: &[usize], n: usize, seed: u64, fold: usize) -> Result<Vec<usize>> {
    if n > train.len() {
        return Err(Error::invalid(format!(
            "{n} pixel-labeled volumes requested from a training fold of {}",
            train.len()
        )));
    }
    let mut order = train.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cell_seed(seed ^ 0xc0ffee, fold)));
    order.truncate(n);
    order.sort_unstable();
    Ok(order)
}

fn run_cell(ds: &Dataset, spec: &MatrixSpec, fd: &FoldData, key: CellKey) -> Result<ReportRow> {
    let start = Instant::now();
    let mut supervision: Vec<BoxSeries> = match key.supervision {
        Supervision::Tight2d => fd.tight.clone(),
        Supervision::Nontight3d | Supervision::Corrected => fd.sliced.clone(),
    };
    if key.supervision == Supervision::Corrected {
        let p = key.p.expect("corrected cells carry p");
        let requested = key.n_correction.expect("corrected cells carry n");
        let n = match spec.correction_unit {
            CorrectionUnit::Images => requested,
            CorrectionUnit::Percent => pixel_labeled_count_from_fraction(fd.train.len(), requested as f64 / 100.0),
        };
        let labeled = pixel_labeled(&fd.train, n, spec.seed, key.fold)?;
        let vols: Vec<Volume> = labeled.iter().map(|&i| fd.volumes[i].clone()).collect();
        let masks: Vec<MaskVolume> = labeled.iter().map(|&i| ds.masks[i].clone()).collect();
        let series: Vec<BoxSeries> = labeled.iter().map(|&i| fd.sliced[i].clone()).collect();
        let patches = build_patch_dataset(&vols, &masks, &series, p)?;
        let cfg = ClassifierConfig {
            input_size: p,
            seed: cell_seed(spec.classifier.seed, key.fold),
            ..spec.classifier.clone()
        };
        let model = train_classifier(&patches, &cfg, &fd.norm_id)?;
        for &i in fd.train.iter().chain(&fd.val) {
            supervision[i] = correct_box_series(&model, &fd.volumes[i], &fd.sliced[i], p)?;
        }
    }

    let mut values = Vec::new();
    let mut mismatches = 0;
    for &i in &fd.val {
        let r = box_iou_report(&supervision[i], &fd.tight[i])?;
        values.extend(r.values);
        mismatches += r.mismatches;
    }
    let iou = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);

    let dice_mean = if spec.segment {
        let vols: Vec<Volume> = fd.train.iter().map(|&i| fd.volumes[i].clone()).collect();
        let series: Vec<BoxSeries> = fd.train.iter().map(|&i| supervision[i].clone()).collect();
        let cfg = SegmenterConfig {
            seed: cell_seed(spec.segmenter.seed, key.fold),
            ..spec.segmenter.clone()
        };
        let model = train_segmenter(&vols, &series, &cfg, &spec.constraints, None, &fd.norm_id)?;
        let mut total = 0.0;
        for &i in &fd.val {
            total += dice(&predict_mask(&model, &fd.volumes[i], 0.5)?, &ds.masks[i])?;
        }
        Some(total / fd.val.len() as f64)
    } else {
        None
    };

    Ok(ReportRow {
        supervision: key.supervision,
        p: key.p,
        n_correction: key.n_correction,
        fold: key.fold,
        dice: dice_mean,
        iou,
        mismatches,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs every cell of `spec` on `ds`. Cell failures are recorded in the
/// report and do not stop the run.
pub fn run_experiment_matrix(ds: &Dataset, spec: &MatrixSpec) -> Result<ExperimentReport> {
    run_experiment_matrix_with(ds, spec, |_, _| {})
}

/// As [`run_experiment_matrix`], calling `progress` after each cell.
pub fn run_experiment_matrix_with<F>(ds: &Dataset, spec: &MatrixSpec, progress: F) -> Result<ExperimentReport>
where
    F: Fn(&CellKey, &std::result::Result<ReportRow, String>) + Sync,
{
    spec.validate()?;
    let assignment = fold_assignment(ds.len(), spec.folds, spec.seed)?;
    let folds = (0..spec.folds)
        .map(|f| prepare_fold(ds, &assignment, f))
        .collect::<Result<Vec<_>>>()?;
    let cells = spec.cells();
    let results: Vec<Mutex<Option<std::result::Result<ReportRow, String>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        let Some(&key) = cells.get(k) else { break };
        let out = run_cell(ds, spec, &folds[key.fold], key).map_err(|e| e.to_string());
        progress(&key, &out);
        *results[k].lock().expect("result slot") = Some(out);
    };
    std::thread::scope(|s| {
        for _ in 1..spec.jobs.min(cells.len()).max(1) {
            s.spawn(worker);
        }
        worker();
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (key, slot) in cells.into_iter().zip(results) {
        match slot.into_inner().expect("result slot").expect("every cell ran") {
            Ok(row) => rows.push(row),
            Err(error) => failures.push(CellFailure { cell: key, error }),
        }
    }
    Ok(ExperimentReport {
        rows,
        failures,
        meta: Some(ReportMeta {
            dataset_hash: ds.hash(),
            volumes: ds.len(),
            spec: spec.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }),
    })
}
