//! Residual UNet mapping a three-slice stack to one foreground logit per
//! pixel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, maxpool2, maxpool2_backward, relu, relu_backward, split_channels, upsample2,
    upsample2_backward, Conv2d, Module, Param, PoolIndex, Scalar, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmenterArch {
    #[serde(rename = "res-unet")]
    ResUnet,
    #[serde(rename = "res-unet-small")]
    ResUnetSmall,
}

impl SegmenterArch {
    /// Channel width per resolution level.
    pub fn widths(self) -> Vec<usize> {
        match self {
            Self::ResUnet => vec![64, 128, 256, 512, 1024],
            Self::ResUnetSmall => vec![8, 16, 32],
        }
    }
}

impl std::str::FromStr for SegmenterArch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "res-unet" => Ok(Self::ResUnet),
            "res-unet-small" => Ok(Self::ResUnetSmall),
            _ => Err(Error::field("arch", format!("unknown segmenter `{s}`"))),
        }
    }
}

/// `relu(conv(relu(conv(x))) + skip(x))`, with a 1×1 projection on the skip
/// path when the width changes.
#[derive(Debug, Clone)]
pub struct ResBlock<T> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    skip: Option<Conv2d<T>>,
}

struct BlockCache<T> {
    x: Tensor<T>,
    a: Tensor<T>,
    y: Tensor<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv1: Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, rng),
            conv2: Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, rng),
            skip: (cin != cout).then(|| Conv2d::new(&format!("{name}.skip"), cin, cout, 1, rng)),
        }
    }

    fn forward(&self, x: Tensor<T>) -> (Tensor<T>, BlockCache<T>) {
        let a = relu(self.conv1.forward(&x));
        let mut y = self.conv2.forward(&a);
        match &self.skip {
            Some(s) => y.add_assign(&s.forward(&x)),
            None => y.add_assign(&x),
        }
        let y = relu(y);
        (y.clone(), BlockCache { x, a, y })
    }

    fn backward(&mut self, cache: BlockCache<T>, dy: Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let g = relu_backward(&cache.y, dy);
        let da = self.conv2.backward(&cache.a, &g, true).expect("dx requested");
        let da = relu_backward(&cache.a, da);
        let dx_main = self.conv1.backward(&cache.x, &da, need_dx);
        let dx_skip = match &mut self.skip {
            Some(s) => s.backward(&cache.x, &g, need_dx),
            None => need_dx.then_some(g),
        };
        match (dx_main, dx_skip) {
            (Some(mut a), Some(b)) => {
                a.add_assign(&b);
                Some(a)
            }
            _ => None,
        }
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.conv1.params().into_iter().chain(self.conv2.params()).collect();
        if let Some(s) = &self.skip {
            v.extend(s.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> =
            self.conv1.params_mut().into_iter().chain(self.conv2.params_mut()).collect();
        if let Some(s) = &mut self.skip {
            v.extend(s.params_mut());
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct ResUnet<T> {
    enc: Vec<ResBlock<T>>,
    dec: Vec<ResBlock<T>>,
    head: Conv2d<T>,
    widths: Vec<usize>,
}

pub struct UnetCache<T> {
    enc: Vec<BlockCache<T>>,
    pools: Vec<PoolIndex>,
    dec: Vec<BlockCache<T>>,
    head_in: Tensor<T>,
}

pub const INPUT_CHANNELS: usize = 3;

impl<T: Scalar> ResUnet<T> {
    pub fn new(widths: &[usize], seed: u64) -> Self {
        assert!(!widths.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = Vec::new();
        let mut cin = INPUT_CHANNELS;
        for (i, &w) in widths.iter().enumerate() {
            enc.push(ResBlock::new(&format!("enc{i}"), cin, w, &mut rng));
            cin = w;
        }
        // dec[i] merges level i+1 back into level i
        let mut dec = Vec::new();
        for i in 0..widths.len() - 1 {
            dec.push(ResBlock::new(&format!("dec{i}"), widths[i + 1] + widths[i], widths[i], &mut rng));
        }
        let head = Conv2d::new("head", widths[0], 1, 1, &mut rng);
        Self {
            enc,
            dec,
            head,
            widths: widths.to_vec(),
        }
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.widths.len() - 1)
    }

    fn run(&self, x: Tensor<T>) -> (Tensor<T>, UnetCache<T>) {
        let levels = self.widths.len();
        let mut enc_caches = Vec::with_capacity(levels);
        let mut pools = Vec::new();
        let mut skips = Vec::new();
        let mut h = x;
        for (i, block) in self.enc.iter().enumerate() {
            let (y, c) = block.forward(h);
            enc_caches.push(c);
            if i + 1 < levels {
                let (p, idx) = maxpool2(&y);
                pools.push(idx);
                skips.push(y);
                h = p;
            } else {
                h = y;
            }
        }
        let mut dec_caches = Vec::with_capacity(levels - 1);
        for i in (0..levels - 1).rev() {
            let merged = concat_channels(&upsample2(&h), &skips[i]);
            let (y, c) = self.dec[i].forward(merged);
            dec_caches.push(c);
            h = y;
        }
        let logits = self.head.forward(&h);
        (
            logits,
            UnetCache {
                enc: enc_caches,
                pools,
                dec: dec_caches,
                head_in: h,
            },
        )
    }

    /// Logits `[n, 1, h, w]` for stacks `[n, 3, h, w]`.
    pub fn forward(&self, x: Tensor<T>) -> Tensor<T> {
        self.run(x).0
    }

    pub fn forward_train(&self, x: Tensor<T>) -> (Tensor<T>, UnetCache<T>) {
        self.run(x)
    }

    /// Accumulates parameter gradients from the logit gradient.
    pub fn backward(&mut self, cache: UnetCache<T>, dlogits: Tensor<T>) {
        let levels = self.widths.len();
        let UnetCache { mut enc, mut pools, dec, head_in } = cache;
        let mut g = self.head.backward(&head_in, &dlogits, true).expect("dx requested");
        // skip gradients per level, filled by the decoder
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..levels).map(|_| None).collect();
        // caches were pushed deepest first; unwind from level 0 upward
        for (i, c) in dec.into_iter().rev().enumerate() {
            let dm = self.dec[i].backward(c, g, true).expect("dx requested");
            let (dup, dskip) = split_channels(&dm, self.widths[i + 1]);
            skip_grads[i] = Some(dskip);
            g = upsample2_backward(&dup);
        }
        for i in (0..levels).rev() {
            let c = enc.pop().expect("one cache per level");
            if i + 1 < levels {
                let idx = pools.pop().expect("one pool per merged level");
                let mut d = maxpool2_backward(&idx, &g);
                d.add_assign(skip_grads[i].as_ref().expect("decoder visited level"));
                g = d;
            }
            match self.enc[i].backward(c, g, i > 0) {
                Some(dx) => g = dx,
                None => return,
            }
        }
    }
}

impl<T: Scalar> Module<T> for ResUnet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.enc.iter().flat_map(|b| b.params()).collect();
        v.extend(self.dec.iter().flat_map(|b| b.params()));
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.enc.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend(self.dec.iter_mut().flat_map(|b| b.params_mut()));
        v.extend(self.head.params_mut());
        v
    }
}
