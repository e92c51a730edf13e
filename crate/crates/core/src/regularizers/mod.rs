//! In-loop corrections applied to sampler states.

mod antv;
mod spectral;

pub use antv::{antv_exact_gradient, antv_loss, antv_step, antv_weight, AntvConfig, AntvGradient};
pub use spectral::{
    band_limited, band_pass, bp_grad_step, bp_gradient, bp_loss, dft, dft_direct, idft, idft_real, BandSpec,
};
pub use rustfft::num_complex::Complex64;
