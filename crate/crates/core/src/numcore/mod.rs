//! Dense numerical core: tensors, encoder building blocks with their
//! backward passes, a counter-based RNG and finite-difference gradient checks.

mod gradcheck;
pub mod kernels;
pub(crate) mod ops;
mod rng;
mod tensor;

pub use gradcheck::{
    finite_diff_check, finite_diff_check_with, GradCheckOptions, GradCheckReport, ParamCheck,
    Parameter, ParameterSet, Stencil,
};
pub use ops::{
    dropout, dropout_mask, gelu, gelu_grad, layer_norm, layer_norm_rows,
    layer_norm_rows_backward, matmul, softmax_rows, softmax_rows_backward, LayerNormCache,
    LN_EPS,
};
pub use rng::SeededRng;
pub use tensor::Tensor;
