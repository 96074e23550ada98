//! Minimal deterministic dense-network engine.

mod adam;
mod fit;
mod gradcheck;
pub mod io;
mod loss;
mod net;

pub use adam::{adam_update, AdamState, TrainConfig};
pub use fit::{accuracy, fit_classifier, head_loss_grad, predict_labels, HeadLoss};
pub use gradcheck::{finite_difference_check, finite_difference_check_seeded, FULL_CHECK_LIMIT};
pub use loss::{
    binary_cross_entropy_batch, cross_entropy, cross_entropy_batch, entropy, gradient_reversal,
    neg_entropy_logit_grad, ovr_hinge_batch, softmax, triplet_loss, TripletLoss,
};
pub use net::{sigmoid, Activation, Backward, DenseLayer, DenseNet, Forward, Gradients, LayerGrad};

use ndarray::{Array2, ArrayView2};

/// Gathers the given rows of `x` into a new matrix.
pub fn gather_rows(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (mut dst, &r) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&x.row(r));
    }
    out
}

/// Deterministically mixes a base seed with a path of indices (splitmix64).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
