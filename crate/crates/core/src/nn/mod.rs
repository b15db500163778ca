//! Minimal dense-network substrate: matrices, MLPs with a layer tape,
//! reverse-mode gradients, Adam, and a finite-difference gradient checker.

mod adam;
mod checkpoint;
mod gradcheck;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, Section, SECTION_CODEBOOK, SECTION_MLP};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use matrix::{dot, matmul_nn, matmul_nt, matmul_tn_acc, squared_distance, DenseMatrix};
pub use mlp::{
    mlp_backward, mlp_backward_batch, mlp_forward, mlp_forward_batch, Activation, GradTape, Layer,
    MlpModel, ParamGrads,
};

pub(crate) use checkpoint::{take_f64, take_f64s, take_u32, write_f64, write_f64s};
