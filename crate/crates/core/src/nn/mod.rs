//! Minimal CPU network layers with hand-written backward passes.
//!
//! Activations are dense `NCHW` tensors. Convolutions go through im2col and a
//! GEMM per chunk of samples, with the column buffer bounded and reused per
//! thread. Every layer is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks).

mod adam;
pub(crate) mod checkpoint;
mod layers;
mod scalar;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use layers::{
    concat_channels, maxpool2, maxpool2_backward, relu, relu_backward, split_channels, upsample2,
    upsample2_backward, Conv2d, Linear, PoolIndex,
};
pub use scalar::{gemm, Scalar};
pub use tensor::{Param, Tensor};

/// Anything holding trainable parameters.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}
