//! Discrete Fourier transform, symmetric band-pass mask and the band-pass
//! loss with its closed-form gradient.
//!
//! Transforms are unnormalized: `X_k = Σ_j x_j e^{−2πi jk/n}` and the inverse
//! carries the `1/n`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Inclusive band of frequency bins, in cycles per window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSpec {
    pub f_low: usize,
    pub f_high: usize,
}

impl Default for BandSpec {
    fn default() -> Self {
        Self { f_low: 1, f_high: 10 }
    }
}

impl BandSpec {
    pub fn new(f_low: usize, f_high: usize) -> Self {
        Self { f_low, f_high }
    }

    /// Every bin of a length-`n` transform.
    pub fn full(n: usize) -> Self {
        Self { f_low: 0, f_high: n / 2 }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.f_low >= self.f_high || self.f_high > n / 2 {
            return Err(Error::domain(format!(
                "band [{}, {}] invalid for window length {n}",
                self.f_low, self.f_high
            )));
        }
        Ok(())
    }

    /// Whether bin `k` of a length-`n` spectrum is kept.
    pub fn passes(&self, k: usize, n: usize) -> bool {
        let f = k.min(n - k);
        f >= self.f_low && f <= self.f_high
    }
}

/// Reference transform by direct `O(n²)` summation.
pub fn dft_direct(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (j, &v)| {
                // reduce jk mod n first so the phase stays small
                let phase = -2.0 * PI * ((j * k) % n) as f64 / n as f64;
                acc + Complex64::from_polar(v, phase)
            })
        })
        .collect()
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let plan = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    plan.process(buf);
}

/// Mixed-radix fast transform of a real series.
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if !buf.is_empty() {
        fft_in_place(&mut buf, false);
    }
    buf
}

/// Inverse transform including the `1/n` factor.
pub fn idft(spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    if buf.is_empty() {
        return buf;
    }
    fft_in_place(&mut buf, true);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Real part of the inverse transform.
pub fn idft_real(spectrum: &[Complex64]) -> Vec<f64> {
    idft(spectrum).into_iter().map(|c| c.re).collect()
}

/// Zeroes every bin whose frequency `min(k, n − k)` lies outside the band.
pub fn band_pass(spectrum: &[Complex64], band: &BandSpec) -> Vec<Complex64> {
    let n = spectrum.len();
    spectrum
        .iter()
        .enumerate()
        .map(|(k, &c)| if band.passes(k, n) { c } else { Complex64::new(0.0, 0.0) })
        .collect()
}

/// Time-domain band-limited version of `x`.
pub fn band_limited(x: &[f64], band: &BandSpec) -> Vec<f64> {
    idft_real(&band_pass(&dft(x), band))
}

/// `‖F(x_t) − BandPass(F(x_ref))‖²`, summed over all bins.
pub fn bp_loss(x_t: &[f64], x_ref: &[f64], band: &BandSpec) -> Result<f64> {
    check_len(x_t.len(), x_ref.len())?;
    let target = band_pass(&dft(x_ref), band);
    Ok(dft(x_t).iter().zip(&target).map(|(a, b)| (a - b).norm_sqr()).sum())
}

/// Gradient of [`bp_loss`] in `x_t`: `2n (x_t − ifft(BandPass(F(x_ref))))`.
pub fn bp_gradient(x_t: &[f64], x_ref: &[f64], band: &BandSpec) -> Result<Vec<f64>> {
    check_len(x_t.len(), x_ref.len())?;
    let n = x_t.len() as f64;
    let target = band_limited(x_ref, band);
    Ok(x_t.iter().zip(target).map(|(x, r)| 2.0 * n * (x - r)).collect())
}

/// One gradient step `x_t − rate · ∇L`.
pub fn bp_grad_step(x_t: &[f64], x_ref: &[f64], band: &BandSpec, rate: f64) -> Result<Vec<f64>> {
    let g = bp_gradient(x_t, x_ref, band)?;
    Ok(x_t.iter().zip(g).map(|(x, gi)| x - rate * gi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, seeded};

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol * b.norm().max(1.0)
    }

    #[test]
    fn dc_and_impulse_spectra() {
        let spec = dft(&[2.5; 4]);
        assert!(close(spec[0], Complex64::new(10.0, 0.0), 1e-12));
        for c in &spec[1..] {
            assert!(c.norm() < 1e-12);
        }
        let mut impulse = vec![0.0; 7];
        impulse[0] = 1.0;
        for c in dft(&impulse) {
            assert!(close(c, Complex64::new(1.0, 0.0), 1e-12));
        }
    }

    #[test]
    fn fast_path_matches_direct_sum() {
        let mut rng = seeded(5);
        let x = normal_vec(&mut rng, 60);
        let (fast, slow) = (dft(&x), dft_direct(&x));
        for (a, b) in fast.iter().zip(&slow) {
            assert!(close(*a, *b, 1e-9));
        }
        let back = idft_real(&fast);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn band_pass_properties() {
        let n = 24;
        let mut rng = seeded(9);
        let x = normal_vec(&mut rng, n);
        let spec = dft(&x);
        assert_eq!(band_pass(&spec, &BandSpec::full(n)), spec);

        let band = BandSpec::new(2, 5);
        let once = band_pass(&spec, &band);
        assert_eq!(band_pass(&once, &band), once);
        for c in idft(&once) {
            assert!(c.im.abs() < 1e-12);
        }

        let tone: Vec<f64> = (0..n).map(|j| (2.0 * PI * 3.0 * j as f64 / n as f64).cos()).collect();
        let tone_spec = dft(&tone);
        for (a, b) in band_pass(&tone_spec, &band).iter().zip(&tone_spec) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn dc_kept_only_from_zero() {
        assert!(BandSpec::new(0, 3).passes(0, 10));
        assert!(!BandSpec::new(1, 3).passes(0, 10));
        assert!(BandSpec::new(1, 3).passes(9, 10));
        assert!(BandSpec::new(1, 5).validate(10).is_ok());
        assert!(BandSpec::new(1, 6).validate(10).is_err());
        assert!(BandSpec::new(3, 3).validate(10).is_err());
    }

    #[test]
    fn loss_special_cases() {
        let n = 16;
        let band = BandSpec::new(1, 3);
        let inband: Vec<f64> = (0..n).map(|j| (2.0 * PI * 2.0 * j as f64 / n as f64).sin()).collect();
        assert!(bp_loss(&inband, &inband, &band).unwrap() < 1e-20);
        let outband: Vec<f64> = (0..n).map(|j| (2.0 * PI * 6.0 * j as f64 / n as f64).sin()).collect();
        assert!(bp_loss(&[0.0; 16], &outband, &band).unwrap() < 1e-20);
        assert!(bp_loss(&[0.0; 3], &outband, &band).is_err());
    }

    #[test]
    fn loss_equals_scaled_out_of_band_energy() {
        let n = 20;
        let band = BandSpec::new(1, 4);
        let mut rng = seeded(21);
        let x = normal_vec(&mut rng, n);
        let kept = band_limited(&x, &band);
        let energy: f64 = x.iter().zip(&kept).map(|(a, b)| (a - b).powi(2)).sum();
        let loss = bp_loss(&x, &x, &band).unwrap();
        assert!((loss - n as f64 * energy).abs() <= 1e-9 * loss);
    }

    #[test]
    fn gradient_step_behaviour() {
        let n = 16;
        let band = BandSpec::new(1, 5);
        let mut rng = seeded(4);
        let (x, r) = (normal_vec(&mut rng, n), normal_vec(&mut rng, n));

        let target = band_limited(&r, &band);
        assert_eq!(bp_grad_step(&target, &r, &band, 0.3).unwrap(), target);

        let landed = bp_grad_step(&x, &r, &band, 1.0 / (2.0 * n as f64)).unwrap();
        for (a, b) in landed.iter().zip(&target) {
            assert!((a - b).abs() < 1e-12);
        }

        let before = bp_loss(&x, &r, &band).unwrap();
        let after = bp_loss(&bp_grad_step(&x, &r, &band, 0.2 / (2.0 * n as f64)).unwrap(), &r, &band).unwrap();
        assert!(after < before);
    }
}
