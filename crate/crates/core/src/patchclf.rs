//! Patch classifier: a VGG-style network labeling `p×p` patches as object or
//! background, trained with softmax cross-entropy and Adam.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boxgeom::Box2D;
use crate::error::{Error, Result};
use crate::nn::{
    self, maxpool2, maxpool2_backward, relu, relu_backward, Adam, Conv2d, Linear, Module, Param,
    PoolIndex, Scalar, Tensor,
};
use crate::patchgrid::{build_grid, PatchGrid, PatchSample};
use crate::plane::Plane;

const CHECKPOINT_KIND: &str = "patch-classifier";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierArch {
    #[serde(rename = "vgg16")]
    Vgg16,
    #[serde(rename = "vgg-small")]
    VggSmall,
}

impl std::str::FromStr for ClassifierArch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vgg16" => Ok(Self::Vgg16),
            "vgg-small" => Ok(Self::VggSmall),
            _ => Err(Error::field("arch", format!("unknown classifier `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub arch: ClassifierArch,
    /// Patch side `p`.
    pub input_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            arch: ClassifierArch::Vgg16,
            input_size: 16,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 50,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
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
        if self.input_size < 4 || self.input_size % 2 != 0 {
            return Err(Error::field("input_size", "must be even and >= 4"));
        }
        Ok(())
    }
}

/// Conv widths per block and hidden fully connected widths.
fn layout(arch: ClassifierArch) -> (Vec<Vec<usize>>, Vec<usize>) {
    match arch {
        ClassifierArch::Vgg16 => (
            vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 512],
            ],
            vec![4096, 4096],
        ),
        ClassifierArch::VggSmall => (vec![vec![16, 16], vec![32, 32], vec![64, 64]], vec![128]),
    }
}

/// Convolution blocks, each followed by a 2×2 max-pool while the feature map
/// is still wider than one pixel, then a ReLU MLP ending in two logits.
#[derive(Debug, Clone)]
pub struct VggNet<T> {
    blocks: Vec<Vec<Conv2d<T>>>,
    pools: Vec<bool>,
    fcs: Vec<Linear<T>>,
}

struct Cache<T> {
    /// Input of every conv, in order.
    conv_in: Vec<Tensor<T>>,
    /// Post-ReLU output of every conv.
    conv_out: Vec<Tensor<T>>,
    pool_idx: Vec<Option<PoolIndex>>,
    fc_in: Vec<Tensor<T>>,
    fc_out: Vec<Tensor<T>>,
}

impl<T: Scalar> VggNet<T> {
    pub fn new(arch: ClassifierArch, p: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (widths, hidden) = layout(arch);
        let mut cin = 1;
        let mut side = p;
        let mut blocks = Vec::new();
        let mut pools = Vec::new();
        for (b, ws) in widths.iter().enumerate() {
            let mut convs = Vec::new();
            for (l, &w) in ws.iter().enumerate() {
                convs.push(Conv2d::new(&format!("block{b}.conv{l}"), cin, w, 3, &mut rng));
                cin = w;
            }
            blocks.push(convs);
            let pool = side >= 2;
            if pool {
                side /= 2;
            }
            pools.push(pool);
        }
        let mut fin = cin * side * side;
        let mut fcs = Vec::new();
        for (i, &h) in hidden.iter().enumerate() {
            fcs.push(Linear::new(&format!("fc{i}"), fin, h, &mut rng));
            fin = h;
        }
        fcs.push(Linear::new("head", fin, 2, &mut rng));
        Self { blocks, pools, fcs }
    }

    fn run(&self, x: Tensor<T>, keep: bool) -> (Tensor<T>, Option<Cache<T>>) {
        let mut cache = Cache {
            conv_in: Vec::new(),
            conv_out: Vec::new(),
            pool_idx: Vec::new(),
            fc_in: Vec::new(),
            fc_out: Vec::new(),
        };
        let mut h = x;
        for (convs, &pool) in self.blocks.iter().zip(&self.pools) {
            for conv in convs {
                let y = relu(conv.forward(&h));
                if keep {
                    cache.conv_in.push(std::mem::replace(&mut h, y.clone()));
                    cache.conv_out.push(y);
                } else {
                    h = y;
                }
            }
            if pool {
                let (y, idx) = maxpool2(&h);
                h = y;
                cache.pool_idx.push(keep.then_some(idx));
            } else {
                cache.pool_idx.push(None);
            }
        }
        let n = h.batch();
        let feat = h.sample_len();
        h.shape = [n, feat, 1, 1];
        let last = self.fcs.len() - 1;
        for (i, fc) in self.fcs.iter().enumerate() {
            let mut y = fc.forward(&h);
            if i < last {
                y = relu(y);
            }
            if keep {
                cache.fc_in.push(std::mem::replace(&mut h, y.clone()));
                cache.fc_out.push(y);
            } else {
                h = y;
            }
        }
        (h, keep.then_some(cache))
    }

    /// Logits `[n, 2, 1, 1]` for patches `[n, 1, p, p]`.
    pub fn forward(&self, x: Tensor<T>) -> Tensor<T> {
        self.run(x, false).0
    }

    /// Mean cross-entropy over the batch and the number of correct argmax
    /// predictions; accumulates parameter gradients.
    pub fn forward_backward(&mut self, x: Tensor<T>, labels: &[u8]) -> (f64, usize) {
        let (logits, cache) = self.run(x, true);
        let cache = cache.expect("cache requested");
        let (loss, dlogits) = cross_entropy(&logits, labels);
        let correct = logits
            .data
            .chunks_exact(2)
            .zip(labels)
            .filter(|(z, &y)| ((z[1] > z[0]) as u8) == y)
            .count();

        let mut g = dlogits;
        let last = self.fcs.len() - 1;
        for i in (0..self.fcs.len()).rev() {
            if i < last {
                g = relu_backward(&cache.fc_out[i], g);
            }
            g = self.fcs[i].backward(&cache.fc_in[i], &g, true).expect("dx requested");
        }
        let mut k = cache.conv_in.len();
        let [n, c, hh, ww] = cache.conv_out[k - 1].shape;
        g.shape = if *self.pools.last().unwrap() { [n, c, hh / 2, ww / 2] } else { [n, c, hh, ww] };
        for b in (0..self.blocks.len()).rev() {
            if let Some(idx) = &cache.pool_idx[b] {
                g = maxpool2_backward(idx, &g);
            }
            for l in (0..self.blocks[b].len()).rev() {
                k -= 1;
                g = relu_backward(&cache.conv_out[k], g);
                let need_dx = k > 0;
                match self.blocks[b][l].backward(&cache.conv_in[k], &g, need_dx) {
                    Some(dx) => g = dx,
                    None => debug_assert_eq!(k, 0),
                }
            }
        }
        (loss, correct)
    }
}

impl<T: Scalar> Module<T> for VggNet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let convs = self.blocks.iter().flatten().flat_map(|c| c.params());
        convs.chain(self.fcs.iter().flat_map(|f| f.params())).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let convs = self.blocks.iter_mut().flatten().flat_map(|c| c.params_mut());
        convs.chain(self.fcs.iter_mut().flat_map(|f| f.params_mut())).collect()
    }
}

/// Mean softmax cross-entropy over two logits and its gradient.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> (f64, Tensor<T>) {
    let n = logits.batch();
    assert_eq!(labels.len(), n);
    let mut grad = Tensor::zeros(logits.shape);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = [logits.data[2 * i].as_f64(), logits.data[2 * i + 1].as_f64()];
        let m = z[0].max(z[1]);
        let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
        loss += lse - z[y as usize];
        for c in 0..2 {
            let prob = (z[c] - lse).exp();
            let target = if c == y as usize { 1.0 } else { 0.0 };
            grad.data[2 * i + c] = T::from_f64((prob - target) / n as f64);
        }
    }
    (loss / n as f64, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Running training accuracy, measured on each batch before its update.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct PatchClassifier {
    pub net: VggNet<f32>,
    pub config: ClassifierConfig,
    pub norm_stats_id: String,
    pub history: Vec<EpochStats>,
}

fn batch_tensor(samples: &[&PatchSample], p: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(samples.len() * p * p);
    for s in samples {
        data.extend_from_slice(&s.pixels);
    }
    Tensor::from_vec([samples.len(), 1, p, p], data)
}

pub fn train_classifier(
    dataset: &[PatchSample],
    cfg: &ClassifierConfig,
    norm_stats_id: &str,
) -> Result<PatchClassifier> {
    cfg.validate()?;
    let p = cfg.input_size;
    if let Some(bad) = dataset.iter().find(|s| s.pixels.len() != p * p) {
        return Err(Error::Shape(format!(
            "patch from {} z={} has {} pixels, expected {}",
            bad.source.volume_id,
            bad.source.z,
            bad.pixels.len(),
            p * p
        )));
    }
    let positives = dataset.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == dataset.len() {
        return Err(Error::Training("patch dataset must contain both classes".into()));
    }

    let mut net = VggNet::<f32>::new(cfg.arch, p, cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct_sum = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PatchSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
            net.zero_grad();
            let (loss, correct) = net.forward_backward(batch_tensor(&batch, p), &labels);
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            correct_sum += correct;
            opt.step(&mut net.params_mut());
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / dataset.len() as f64,
            accuracy: correct_sum as f64 / dataset.len() as f64,
        });
    }
    Ok(PatchClassifier {
        net,
        config: cfg.clone(),
        norm_stats_id: norm_stats_id.to_string(),
        history,
    })
}

fn predict_batch(net: &VggNet<f32>, samples: &[&PatchSample], p: usize) -> Vec<u8> {
    argmax(&net.forward(batch_tensor(samples, p)))
}

fn argmax(logits: &Tensor<f32>) -> Vec<u8> {
    logits.data.chunks_exact(2).map(|z| (z[1] > z[0]) as u8).collect()
}

fn accuracy(net: &VggNet<f32>, dataset: &[PatchSample], p: usize) -> f64 {
    let mut correct = 0;
    for chunk in dataset.chunks(256) {
        let refs: Vec<&PatchSample> = chunk.iter().collect();
        let pred = predict_batch(net, &refs, p);
        correct += pred.iter().zip(chunk).filter(|(a, s)| **a == s.label).count();
    }
    correct as f64 / dataset.len() as f64
}

impl PatchClassifier {
    /// Labels for raw `p×p` patches, row-major and concatenated.
    pub fn classify(&self, patches: &[f32]) -> Result<Vec<u8>> {
        let p = self.config.input_size;
        if patches.len() % (p * p) != 0 {
            return Err(Error::Shape(format!("patch buffer is not a multiple of {p}x{p}")));
        }
        let n = patches.len() / (p * p);
        if n == 0 {
            return Ok(Vec::new());
        }
        Ok(argmax(&self.net.forward(Tensor::from_vec([n, 1, p, p], patches.to_vec()))))
    }

    pub fn accuracy_on(&self, dataset: &[PatchSample]) -> f64 {
        accuracy(&self.net, dataset, self.config.input_size)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<nn::CheckpointMeta> {
        let config = serde_json::json!({ "classifier": self.config, "history": self.history });
        nn::write_checkpoint(path, CHECKPOINT_KIND, config, &self.norm_stats_id, &self.net.params())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta = nn::checkpoint::read_meta(path)?;
        let config: ClassifierConfig = serde_json::from_value(meta.config["classifier"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad classifier config: {e}")))?;
        let history = serde_json::from_value(meta.config["history"].clone()).unwrap_or_default();
        let mut net = VggNet::new(config.arch, config.input_size, config.seed);
        nn::checkpoint::read_weights(path, &meta, CHECKPOINT_KIND, &mut net.params_mut())?;
        Ok(Self {
            net,
            config,
            norm_stats_id: meta.norm_stats_id,
            history,
        })
    }
}

/// Builds the grid over `crop` and labels every footprint with the model's
/// argmax.
pub fn predict_grid(
    model: &PatchClassifier,
    slice: Plane<'_, f32>,
    crop: Box2D,
    p: usize,
) -> Result<PatchGrid> {
    if model.config.input_size != p {
        return Err(Error::invalid(format!(
            "model expects {}x{} patches, got p = {p}",
            model.config.input_size, model.config.input_size
        )));
    }
    if !crop.fits_in(slice.rows(), slice.cols()) {
        return Err(Error::InvalidBox(format!(
            "crop {crop} outside {}x{} slice",
            slice.rows(),
            slice.cols()
        )));
    }
    let mut grid = build_grid(crop, p)?;
    let mut patches = Vec::with_capacity(grid.len() * p * p);
    for i in 0..grid.rows() {
        for j in 0..grid.cols() {
            patches.extend(grid.extract(slice, i, j));
        }
    }
    grid.set_labels(model.classify(&patches)?)?;
    Ok(grid)
}
