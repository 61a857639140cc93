use num_complex::Complex;

use crate::error::{invalid, shape_err, Result};
use crate::raster::fft::ifft2_centered;
use crate::raster::{dft2, FloatRaster, Spectrum};

/// Closed-form per-frequency linear reconstructor.
///
/// Each bin solves the ridge problem `min_w Σ_k |w G_k - F_k|² + ε |w|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerLearner {
    height: usize,
    width: usize,
    eps: f64,
    gains: Vec<Complex<f64>>,
}

impl WienerLearner {
    /// Builds a learner from explicit DC-centered gains.
    pub fn from_gains(height: usize, width: usize, eps: f64, gains: Vec<Complex<f64>>) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(invalid(format!("ridge ε must be positive, got {eps}")));
        }
        if gains.len() != height * width {
            return Err(shape_err("wiener gains", [height, width], gains.len()));
        }
        if gains.iter().any(|g| !g.re.is_finite() || !g.im.is_finite()) {
            return Err(invalid("wiener gains must be finite"));
        }
        Ok(Self {
            height,
            width,
            eps,
            gains,
        })
    }

    pub fn fit(measurements: &[FloatRaster<f64>], targets: &[FloatRaster<f64>], eps: f64) -> Result<Self> {
        if measurements.is_empty() {
            return Err(invalid("wiener fit needs at least one training pair"));
        }
        if measurements.len() != targets.len() {
            return Err(shape_err("wiener pairs", measurements.len(), targets.len()));
        }
        let (h, w) = measurements[0].shape();
        let mut num = vec![Complex::new(0.0, 0.0); h * w];
        let mut den = vec![0.0; h * w];
        for (g, f) in measurements.iter().zip(targets) {
            g.require_same_shape(&measurements[0], "wiener measurement")?;
            f.require_same_shape(g, "wiener target")?;
            let (gs, fs) = (dft2(g)?, dft2(f)?);
            for (i, (a, b)) in gs.data().iter().zip(fs.data()).enumerate() {
                num[i] += a.conj() * b;
                den[i] += a.norm_sqr();
            }
        }
        let gains = num.iter().zip(&den).map(|(n, d)| n / (d + eps)).collect();
        Self::from_gains(h, w, eps, gains)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn gains(&self) -> &[Complex<f64>] {
        &self.gains
    }

    pub fn gain(&self, row: usize, col: usize) -> Complex<f64> {
        self.gains[row * self.width + col]
    }

    /// `w · dft2(g)` before the inverse transform.
    pub fn filtered_spectrum(&self, g: &FloatRaster<f64>) -> Result<Spectrum<f64>> {
        if g.shape() != (self.height, self.width) {
            return Err(shape_err("wiener apply", [self.height, self.width], [g.height(), g.width()]));
        }
        let mut s = dft2(g)?;
        for (z, w) in s.data_mut().iter_mut().zip(&self.gains) {
            *z *= w;
        }
        Ok(s)
    }

    /// Real part of `idft2(w · dft2(g))`.
    pub fn apply(&self, g: &FloatRaster<f64>) -> Result<FloatRaster<f64>> {
        let s = self.filtered_spectrum(g)?;
        let field = ifft2_centered(s.data(), self.height, self.width);
        FloatRaster::new(self.height, self.width, g.pitch(), field.into_iter().map(|c| c.re).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{dli_blur, dli_transfer, ForwardConfig};
    use crate::raster::frequency_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, rng: &mut ChaCha8Rng) -> FloatRaster<f64> {
        FloatRaster::from_fn(n, n, 1e-6, |_, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn identity_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gs: Vec<_> = (0..3).map(|_| noise(16, &mut rng)).collect();
        let w = WienerLearner::fit(&gs, &gs, 1e-12).unwrap();
        let spec_energy: Vec<f64> = {
            let mut e = vec![0.0; 256];
            for g in &gs {
                for (i, z) in dft2(g).unwrap().data().iter().enumerate() {
                    e[i] += z.norm_sqr();
                }
            }
            e
        };
        for (i, gain) in w.gains().iter().enumerate() {
            if spec_energy[i] > 1e-6 {
                assert!((gain - Complex::new(1.0, 0.0)).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn single_pair_scaled_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = noise(8, &mut rng);
        let f = g.map(|v| 2.0 * v).unwrap();
        let eps = 0.5;
        let w = WienerLearner::fit(&[g.clone()], &[f], eps).unwrap();
        for (z, gain) in dft2(&g).unwrap().data().iter().zip(w.gains()) {
            let p = z.norm_sqr();
            assert!((gain - Complex::new(2.0 * p / (p + eps), 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn recovers_inverse_blur_transfer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ForwardConfig::dli(32, ForwardConfig::DEFAULT_B, ForwardConfig::DEFAULT_DLI_PITCH).unwrap();
        let fs: Vec<_> = (0..4).map(|_| noise(32, &mut rng)).collect();
        let gs: Vec<_> = fs.iter().map(|f| dli_blur(f, &cfg).unwrap()).collect();
        let w = WienerLearner::fit(&gs, &fs, 1e-12).unwrap();
        let grid = frequency_grid(32).unwrap();
        let mut checked = 0;
        for r in 0..32 {
            for c in 0..32 {
                let t = dli_transfer(cfg.b, grid.u(c), grid.v(r));
                if t > 0.1 {
                    assert!((w.gain(r, c) - Complex::new(1.0 / t, 0.0)).norm() < 1e-3, "{r},{c}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 4);

        let held = dli_blur(&noise(32, &mut rng), &cfg).unwrap();
        let s = w.filtered_spectrum(&held).unwrap();
        let g = dft2(&held).unwrap();
        for i in 0..s.data().len() {
            assert!((s.data()[i] - w.gains()[i] * g.data()[i]).norm() < 1e-9);
        }
        let out = w.apply(&held).unwrap();
        let back = dft2(&out).unwrap();
        for i in 0..s.data().len() {
            assert!((back.data()[i] - s.data()[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn unit_and_zero_gains() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = noise(16, &mut rng);
        let one = WienerLearner::from_gains(16, 16, 1e-6, vec![Complex::new(1.0, 0.0); 256]).unwrap();
        assert!(one.apply(&g).unwrap().max_abs_diff(&g) < 1e-10);
        let zero = WienerLearner::from_gains(16, 16, 1e-6, vec![Complex::new(0.0, 0.0); 256]).unwrap();
        assert!(zero.apply(&g).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(one.apply(&noise(8, &mut rng)).is_err());
        assert!(WienerLearner::from_gains(16, 16, 0.0, vec![Complex::new(1.0, 0.0); 256]).is_err());
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(WienerLearner::fit(&[], &[], 1e-3).is_err());
        let (a, b) = (noise(8, &mut rng), noise(16, &mut rng));
        assert!(WienerLearner::fit(&[a.clone()], &[b], 1e-3).is_err());
        assert!(WienerLearner::fit(&[a.clone(), a.clone()], &[a], 1e-3).is_err());
    }

    #[test]
    fn fitted_gains_are_per_bin_minimizers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gs: Vec<_> = (0..3).map(|_| noise(8, &mut rng)).collect();
        let fs: Vec<_> = (0..3).map(|_| noise(8, &mut rng)).collect();
        let eps = 1e-2;
        let w = WienerLearner::fit(&gs, &fs, eps).unwrap();
        let gspec: Vec<_> = gs.iter().map(|g| dft2(g).unwrap()).collect();
        let fspec: Vec<_> = fs.iter().map(|f| dft2(f).unwrap()).collect();
        let objective = |i: usize, wi: Complex<f64>| {
            let data: f64 = gspec.iter().zip(&fspec).map(|(g, f)| (wi * g.data()[i] - f.data()[i]).norm_sqr()).sum();
            data + eps * wi.norm_sqr()
        };
        for i in 0..64 {
            let base = objective(i, w.gains()[i]);
            for d in [
                Complex::new(1e-3, 0.0),
                Complex::new(-1e-3, 0.0),
                Complex::new(0.0, 1e-3),
                Complex::new(0.0, -1e-3),
            ] {
                assert!(objective(i, w.gains()[i] + d) >= base);
            }
        }
    }
}
