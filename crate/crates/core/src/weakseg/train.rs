use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss_with_grad, ConstraintConfig, LossTerms, PredictionSlice};
use super::model::{ResUnet, SegmenterArch, INPUT_CHANNELS};
use crate::boxgeom::{Box2D, BoxSeries};
use crate::error::{Error, Result};
use crate::evalexp::dice;
use crate::nn::{self, Adam, Module, Tensor};
use crate::volumes::{make_25d_stack, MaskVolume, Volume};

const CHECKPOINT_KIND: &str = "segmenter";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub arch: SegmenterArch,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            arch: SegmenterArch::ResUnet,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 50,
            seed: 0,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::field("learning_rate", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::field("batch_size", "must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::field("epochs", "must be >= 1"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub t: f64,
    pub emptiness: f64,
    pub barrier: f64,
    pub total: f64,
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    pub net: ResUnet<f32>,
    pub config: SegmenterConfig,
    pub constraints: ConstraintConfig,
    pub norm_stats_id: String,
    pub log: Vec<EpochLog>,
}

/// Volumes and voxel masks scored after every epoch.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub volumes: &'a [Volume],
    pub masks: &'a [MaskVolume],
}

/// Stacks for slices `zs` of `v`, padded bottom/right by edge replication to
/// multiples of `m`.
fn input_batch(v: &Volume, zs: &[usize], m: usize) -> Result<Tensor<f32>> {
    let [_, rows, cols] = v.shape();
    let (pr, pc) = (rows.div_ceil(m) * m, cols.div_ceil(m) * m);
    let mut data = Vec::with_capacity(zs.len() * INPUT_CHANNELS * pr * pc);
    for &z in zs {
        let stack = make_25d_stack(v, z)?;
        for ch in 0..INPUT_CHANNELS {
            let plane = stack.channel(ch);
            for r in 0..pr {
                let row = &plane[r.min(rows - 1) * cols..][..cols];
                data.extend_from_slice(row);
                data.extend(std::iter::repeat(row[cols - 1]).take(pc - cols));
            }
        }
    }
    Ok(Tensor::from_vec([zs.len(), INPUT_CHANNELS, pr, pc], data))
}

fn sigmoid(x: f32) -> f64 {
    1.0 / (1.0 + (-(x as f64)).exp())
}

/// Probabilities of sample `n` cropped back to `rows × cols`.
fn crop_probs(logits: &Tensor<f32>, n: usize, rows: usize, cols: usize) -> Vec<f64> {
    let pc = logits.shape[3];
    let sample = logits.sample(n);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        out.extend(sample[r * pc..r * pc + cols].iter().map(|&x| sigmoid(x)));
    }
    out
}

struct SliceRef {
    volume: usize,
    z: usize,
    b: Option<Box2D>,
}

fn check_inputs(volumes: &[Volume], series: &[BoxSeries]) -> Result<()> {
    if volumes.len() != series.len() {
        return Err(Error::Shape(format!("{} volumes but {} box series", volumes.len(), series.len())));
    }
    let plane = volumes.first().map(|v| [v.shape()[1], v.shape()[2]]);
    for (v, s) in volumes.iter().zip(series) {
        if s.volume_id != v.id() {
            return Err(Error::Shape(format!("box series `{}` paired with `{}`", s.volume_id, v.id())));
        }
        let [d, r, c] = v.shape();
        s.check_fits(d, r, c)?;
        if Some([r, c]) != plane {
            return Err(Error::Shape("all training volumes must share the slice shape".into()));
        }
    }
    Ok(())
}

pub fn train_segmenter(
    volumes: &[Volume],
    series: &[BoxSeries],
    seg_cfg: &SegmenterConfig,
    constraints: &ConstraintConfig,
    validation: Option<Validation<'_>>,
    norm_stats_id: &str,
) -> Result<Segmenter> {
    seg_cfg.validate()?;
    constraints.validate()?;
    check_inputs(volumes, series)?;
    let slices: Vec<SliceRef> = volumes
        .iter()
        .enumerate()
        .flat_map(|(vi, v)| {
            (0..v.depth()).map(move |z| SliceRef {
                volume: vi,
                z,
                b: series[vi].entries[z],
            })
        })
        .collect();
    if !slices.iter().any(|s| s.b.is_some()) {
        return Err(Error::Training("no slice carries a box".into()));
    }
    let [_, rows, cols] = volumes[0].shape();

    let mut net = ResUnet::<f32>::new(&seg_cfg.arch.widths(), seg_cfg.seed);
    let m = net.size_multiple();
    let mut opt = Adam::new(seg_cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seg_cfg.seed ^ 0x5eed_0002);
    let mut order: Vec<usize> = (0..slices.len()).collect();
    let mut log = Vec::with_capacity(seg_cfg.epochs);
    for epoch in 0..seg_cfg.epochs {
        let t = constraints.t_at(epoch);
        order.shuffle(&mut rng);
        let mut sums = LossTerms::default();
        for chunk in order.chunks(seg_cfg.batch_size) {
            let bsz = chunk.len();
            let mut x = Tensor::zeros([bsz, INPUT_CHANNELS, rows.div_ceil(m) * m, cols.div_ceil(m) * m]);
            for (k, &si) in chunk.iter().enumerate() {
                let s = &slices[si];
                let one = input_batch(&volumes[s.volume], &[s.z], m)?;
                x.sample_mut(k).copy_from_slice(&one.data);
            }
            net.zero_grad();
            let (logits, cache) = net.forward_train(x);
            let mut dlogits = Tensor::zeros(logits.shape);
            let pc = logits.shape[3];
            for (k, &si) in chunk.iter().enumerate() {
                let probs = crop_probs(&logits, k, rows, cols);
                let pred = PredictionSlice::new(probs, rows, cols)?;
                let (terms, grad) = total_loss_with_grad(&pred, slices[si].b.as_ref(), constraints, t)?;
                if !terms.total.is_finite() {
                    return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
                }
                sums.emptiness += terms.emptiness;
                sums.barrier += terms.barrier;
                sums.total += terms.total;
                let out = dlogits.sample_mut(k);
                for r in 0..rows {
                    for c in 0..cols {
                        let s = pred.probs()[r * cols + c];
                        out[r * pc + c] = (grad[r * cols + c] * s * (1.0 - s) / bsz as f64) as f32;
                    }
                }
            }
            net.backward(cache, dlogits);
            opt.step(&mut net.params_mut());
        }
        let n = slices.len() as f64;
        let val_dice = match validation {
            Some(val) => Some(mean_dice(&net, val)?),
            None => None,
        };
        log.push(EpochLog {
            epoch,
            t,
            emptiness: sums.emptiness / n,
            barrier: sums.barrier / n,
            total: sums.total / n,
            val_dice,
        });
    }
    Ok(Segmenter {
        net,
        config: seg_cfg.clone(),
        constraints: constraints.clone(),
        norm_stats_id: norm_stats_id.to_string(),
        log,
    })
}

fn mean_dice(net: &ResUnet<f32>, val: Validation<'_>) -> Result<f64> {
    if val.volumes.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let mut total = 0.0;
    for (v, m) in val.volumes.iter().zip(val.masks) {
        total += dice(&threshold(v, &probabilities(net, v)?, 0.5)?, m)?;
    }
    Ok(total / val.volumes.len() as f64)
}

const INFER_BATCH: usize = 16;

fn probabilities(net: &ResUnet<f32>, volume: &Volume) -> Result<Vec<f32>> {
    let [depth, rows, cols] = volume.shape();
    let m = net.size_multiple();
    let mut out = Vec::with_capacity(volume.data().len());
    let zs: Vec<usize> = (0..depth).collect();
    for chunk in zs.chunks(INFER_BATCH) {
        let logits = net.forward(input_batch(volume, chunk, m)?);
        for k in 0..chunk.len() {
            out.extend(crop_probs(&logits, k, rows, cols).into_iter().map(|p| p as f32));
        }
    }
    Ok(out)
}

fn threshold(volume: &Volume, probs: &[f32], level: f32) -> Result<MaskVolume> {
    let data = probs.iter().map(|&p| (p > level) as u8).collect();
    MaskVolume::new(volume.id(), volume.shape(), volume.spacing(), data)
}

impl Segmenter {
    /// Foreground probability per voxel.
    pub fn predict_probabilities(&self, volume: &Volume) -> Result<Vec<f32>> {
        probabilities(&self.net, volume)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<nn::CheckpointMeta> {
        let config = serde_json::json!({
            "segmenter": self.config,
            "constraints": self.constraints,
            "log": self.log,
        });
        nn::write_checkpoint(path, CHECKPOINT_KIND, config, &self.norm_stats_id, &self.net.params())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta = nn::checkpoint::read_meta(path)?;
        let bad = |e: serde_json::Error| Error::Checkpoint(format!("bad segmenter config: {e}"));
        let config: SegmenterConfig = serde_json::from_value(meta.config["segmenter"].clone()).map_err(bad)?;
        let constraints = serde_json::from_value(meta.config["constraints"].clone()).map_err(bad)?;
        let log = serde_json::from_value(meta.config["log"].clone()).unwrap_or_default();
        let mut net = ResUnet::new(&config.arch.widths(), config.seed);
        nn::checkpoint::read_weights(path, &meta, CHECKPOINT_KIND, &mut net.params_mut())?;
        Ok(Self {
            net,
            config,
            constraints,
            norm_stats_id: meta.norm_stats_id,
            log,
        })
    }

    /// Writes the per-epoch log as CSV.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        w.write_record(["epoch", "t", "emptiness", "barrier", "total", "val_dice"])?;
        for row in &self.log {
            w.write_record([
                row.epoch.to_string(),
                row.t.to_string(),
                row.emptiness.to_string(),
                row.barrier.to_string(),
                row.total.to_string(),
                row.val_dice.map_or(String::new(), |d| d.to_string()),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Thresholded prediction (`p > level`) over every slice of `volume`.
pub fn predict_mask(model: &Segmenter, volume: &Volume, level: f32) -> Result<MaskVolume> {
    let probs = model.predict_probabilities(volume)?;
    threshold(volume, &probs, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumes::{apply_normalization, compute_norm_stats, generate_synthetic_dataset, SynthConfig};

    fn tiny_setup() -> (Vec<Volume>, Vec<MaskVolume>) {
        let cfg = SynthConfig {
            count: 3,
            shape: [16, 32, 32],
            seed: 3,
            ..Default::default()
        };
        let (vols, masks) = generate_synthetic_dataset(&cfg).unwrap();
        let stats = compute_norm_stats(&vols, &masks).unwrap();
        (vols.iter().map(|v| apply_normalization(v, &stats)).collect(), masks)
    }

    fn tiny_cfg(epochs: usize) -> SegmenterConfig {
        SegmenterConfig {
            arch: SegmenterArch::ResUnetSmall,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs,
            seed: 1,
        }
    }

    #[test]
    fn rejects_empty_supervision_and_mismatch() {
        let (vols, _) = tiny_setup();
        let empty: Vec<_> = vols.iter().map(|v| BoxSeries::empty(v.id(), v.depth())).collect();
        let cons = ConstraintConfig::default();
        assert!(train_segmenter(&vols, &empty, &tiny_cfg(1), &cons, None, "n").is_err());
        assert!(train_segmenter(&vols, &empty[..2], &tiny_cfg(1), &cons, None, "n").is_err());
        assert!(train_segmenter(&vols, &empty, &tiny_cfg(0), &cons, None, "n").is_err());
    }

    #[test]
    fn trains_deterministically_and_round_trips() {
        let (vols, masks) = tiny_setup();
        let series: Vec<_> = masks.iter().map(BoxSeries::tight_from_mask).collect();
        let cons = ConstraintConfig::default();
        let val = Validation {
            volumes: &vols[..1],
            masks: &masks[..1],
        };
        let a = train_segmenter(&vols, &series, &tiny_cfg(2), &cons, Some(val), "stats").unwrap();
        let b = train_segmenter(&vols, &series, &tiny_cfg(2), &cons, Some(val), "stats").unwrap();
        assert_eq!(a.log, b.log);
        assert!(a.log.iter().all(|r| r.total.is_finite()));
        assert_eq!(a.log[1].t, 5.5);

        let m1 = predict_mask(&a, &vols[0], 0.5).unwrap();
        assert_eq!(m1.shape(), vols[0].shape());
        assert_eq!(m1, predict_mask(&a, &vols[0], 0.5).unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.ckpt");
        a.save(&path).unwrap();
        let back = Segmenter::load(&path).unwrap();
        assert_eq!(back.log, a.log);
        assert_eq!(predict_mask(&back, &vols[0], 0.5).unwrap(), m1);

        let log = dir.path().join("log.csv");
        a.write_log(&log).unwrap();
        let text = std::fs::read_to_string(log).unwrap();
        assert!(text.starts_with("epoch,t,emptiness,barrier,total,val_dice\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn odd_slice_sizes_are_padded() {
        let v = Volume::new("odd", [2, 10, 14], [1.0; 3], vec![0.5; 280]).unwrap();
        let net = ResUnet::<f32>::new(&SegmenterArch::ResUnetSmall.widths(), 0);
        let x = input_batch(&v, &[0, 1], net.size_multiple()).unwrap();
        assert_eq!(x.shape, [2, 3, 12, 16]);
        assert_eq!(probabilities(&net, &v).unwrap().len(), 280);
    }
}
