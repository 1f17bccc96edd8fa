//! Minimal differentiable numerical core: dense kernels, the gated-residual
//! projection head, the linear POI projector, AdamW, and the AETH1
//! checkpoint format. Training arithmetic is 64-bit throughout; checkpoints
//! are stored at 32-bit.

mod adamw;
mod checkpoint;
mod head;
mod tensor;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use checkpoint::{read_checkpoint, write_checkpoint, NamedTensor};
pub use head::{
    normalize_grad, AeProjectionHead, HeadCache, HeadGrads, PoiProjector, NORM_EPSILON,
};
pub use tensor::{
    axpy, check_finite, dot, matvec, matvec_t, outer_acc, pairwise_sum, Tensor2D,
};
