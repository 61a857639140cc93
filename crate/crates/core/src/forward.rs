//! Forward simulators for the two imaging scenarios.
//!
//! Diffraction-limited imaging blurs with a `sinc²` point-spread function whose
//! transfer function is the separable triangle `tri(b u) tri(b v)`, a hard
//! cutoff at `1/b` cycles/pixel. Lensless phase imaging records the intensity
//! of a Fresnel-propagated unit-modulus field.

use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::raster::fft::{fft2_centered, ifft2_centered, real_part};
use crate::raster::{dft2, FloatRaster};
use crate::scalar::Real;

/// Largest negative excursion `dli_forward` may clamp to zero.
pub const DLI_CLAMP_LIMIT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardKind {
    Dli,
    Qpr,
}

impl ForwardKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ForwardKind::Dli => "dli",
            ForwardKind::Qpr => "qpr",
        }
    }
}

impl std::str::FromStr for ForwardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dli" => Ok(ForwardKind::Dli),
            "qpr" => Ok(ForwardKind::Qpr),
            other => Err(invalid(format!("unknown forward kind {other:?} (expected dli or qpr)"))),
        }
    }
}

/// Physical parameters of one imaging scenario.
///
/// Fields that do not apply to `kind` are carried but ignored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardConfig {
    pub kind: ForwardKind,
    /// Nominal resolving ability in pixels.
    pub b: f64,
    /// Wavelength, meters.
    pub lambda: f64,
    /// Propagation distance, meters.
    pub z: f64,
    /// Pixel pitch, meters.
    pub pitch: f64,
    pub n: usize,
}

impl ForwardConfig {
    pub const DEFAULT_B: f64 = 7.0;
    pub const DEFAULT_LAMBDA: f64 = 0.633e-6;
    pub const DEFAULT_Z: f64 = 50e-3;
    /// Pitch at which a 256-point grid satisfies the Fresnel sampling bound.
    pub const REFERENCE_QPR_PITCH: f64 = 12e-6;
    pub const DEFAULT_DLI_PITCH: f64 = 1e-6;

    pub fn dli(n: usize, b: f64, pitch: f64) -> Result<Self> {
        let cfg = Self {
            kind: ForwardKind::Dli,
            b,
            lambda: Self::DEFAULT_LAMBDA,
            z: Self::DEFAULT_Z,
            pitch,
            n,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn qpr(n: usize, lambda: f64, z: f64, pitch: f64) -> Result<Self> {
        let cfg = Self {
            kind: ForwardKind::Qpr,
            b: Self::DEFAULT_B,
            lambda,
            z,
            pitch,
            n,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Phase-imaging pitch that keeps `n * pitch²` equal to the 256-point,
    /// 12 µm reference, so the default wavelength and distance stay valid.
    pub fn default_qpr_pitch(n: usize) -> f64 {
        Self::REFERENCE_QPR_PITCH * (256.0 / n as f64).sqrt()
    }

    /// Upper bound on `|z|` for transfer-function propagation: `n pitch² / lambda`.
    pub fn z_limit(&self) -> f64 {
        self.n as f64 * self.pitch * self.pitch / self.lambda
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid(format!("grid size must be >= 2, got {}", self.n)));
        }
        if !(self.pitch.is_finite() && self.pitch > 0.0) {
            return Err(invalid(format!("pitch must be positive, got {}", self.pitch)));
        }
        match self.kind {
            ForwardKind::Dli => {
                if !(self.b.is_finite() && self.b >= 1.0) {
                    return Err(invalid(format!("resolving ability b must be >= 1, got {}", self.b)));
                }
            }
            ForwardKind::Qpr => {
                if !(self.lambda.is_finite() && self.lambda > 0.0) {
                    return Err(invalid(format!("wavelength must be positive, got {}", self.lambda)));
                }
                if !(self.z.is_finite() && self.z > 0.0) {
                    return Err(invalid(format!("distance must be positive, got {}", self.z)));
                }
                let z_max = self.z_limit();
                if self.z >= z_max {
                    return Err(Error::Sampling { z: self.z, z_max });
                }
            }
        }
        Ok(())
    }

    fn require(&self, kind: ForwardKind, img_n: (usize, usize)) -> Result<()> {
        if self.kind != kind {
            return Err(invalid(format!(
                "forward config is {} but {} was requested",
                self.kind.as_str(),
                kind.as_str()
            )));
        }
        self.validate()?;
        if img_n != (self.n, self.n) {
            return Err(crate::error::shape_err("forward model input", img_n, (self.n, self.n)));
        }
        Ok(())
    }
}

/// Triangle function `max(0, 1 - |t|)`.
#[inline]
pub fn tri(t: f64) -> f64 {
    (1.0 - t.abs()).max(0.0)
}

/// Separable 2-D triangle transfer function of the diffraction-limited system
/// at frequencies `(u, v)` in cycles/pixel.
#[inline]
pub fn dli_transfer(b: f64, u: f64, v: f64) -> f64 {
    tri(b * u) * tri(b * v)
}

/// Band-limited resampling of a DC-centered square spectrum from `n` to `m` bins
/// per axis over the same physical extent.
///
/// Bins keep their physical frequency. An even-length Nyquist bin is split
/// evenly between `±n/2` when growing, and the two halves are folded back when
/// shrinking, so `resample(resample(S, n+1), n) == S` exactly. Amplitudes are
/// rescaled so spatial sample values are preserved under the unitary DFT.
fn fourier_resample<T: Real>(spec: &[Complex<T>], n: usize, m: usize) -> Vec<Complex<T>> {
    let zero = Complex::new(T::zero(), T::zero());
    let (cn, cm) = ((n / 2) as isize, (m / 2) as isize);
    let lo = -(cn.min(cm));
    let hi_n = n as isize - 1 - cn;
    let hi_m = m as isize - 1 - cm;
    let hi = hi_n.min(hi_m);

    // Axis map: returns the list of (target index, weight) for a source index k.
    let half = T::of(0.5);
    let axis = |k: isize| -> Vec<(isize, T)> {
        if (lo..=hi).contains(&k) && !(m > n && n % 2 == 0 && k == -cn) {
            return vec![(k, T::one())];
        }
        if m > n && n % 2 == 0 && k == -cn {
            // Unpaired Nyquist bin: split across both signs.
            return vec![(-cn, half), (cn, half)];
        }
        if m < n && m % 2 == 0 && k.abs() == cm {
            // Fold both signs back into the target's unpaired Nyquist bin.
            return vec![(-cm, T::one())];
        }
        if (-cm..=hi_m).contains(&k) {
            return vec![(k, T::one())];
        }
        vec![]
    };

    let scale = T::of(m as f64 / n as f64);
    let mut out = vec![zero; m * m];
    for r in 0..n {
        let kr = r as isize - cn;
        let rows = axis(kr);
        if rows.is_empty() {
            continue;
        }
        for c in 0..n {
            let kc = c as isize - cn;
            let v = spec[r * n + c];
            for &(tr, wr) in &rows {
                for &(tc, wc) in &axis(kc) {
                    let idx = (tr + cm) as usize * m + (tc + cm) as usize;
                    out[idx] = out[idx] + v * (wr * wc * scale);
                }
            }
        }
    }
    out
}

/// Linear part of the diffraction-limited operator, without the final clamp.
///
/// The object is resampled to the odd `(n+1)`-point grid, multiplied by
/// `tri(b u) tri(b v)` there (frequencies in cycles per original pixel), and
/// resampled back to `n` points.
pub fn dli_blur<T: Real>(f: &FloatRaster<T>, cfg: &ForwardConfig) -> Result<FloatRaster<T>> {
    cfg.require(ForwardKind::Dli, f.shape())?;
    let n = cfg.n;
    let m = n + 1;
    let spec = dft2(f)?;
    let mut odd = fourier_resample(spec.data(), n, m);
    let cm = (m / 2) as isize;
    for r in 0..m {
        let v = (r as isize - cm) as f64 / n as f64;
        let tv = tri(cfg.b * v);
        for c in 0..m {
            let u = (c as isize - cm) as f64 / n as f64;
            odd[r * m + c] = odd[r * m + c] * T::of(tv * tri(cfg.b * u));
        }
    }
    let back = fourier_resample(&odd, m, n);
    real_part(ifft2_centered(&back, n, n), n, n, f.pitch())
}

/// Diffraction-limited measurement `g = f ⊗ sinc²(x/b, y/b)`.
///
/// Negative round-off is clamped to zero; a negative excursion larger than
/// [`DLI_CLAMP_LIMIT`] means the input left `[0, 1]` and is rejected.
pub fn dli_forward<T: Real>(f: &FloatRaster<T>, cfg: &ForwardConfig) -> Result<FloatRaster<T>> {
    let g = dli_blur(f, cfg)?;
    let worst = g.data().iter().copied().fold(T::zero(), T::min);
    if -worst.as_f64() > DLI_CLAMP_LIMIT {
        return Err(invalid(format!(
            "blurred output reaches {worst}; clamp would exceed {DLI_CLAMP_LIMIT:e} (object outside [0, 1]?)"
        )));
    }
    g.map(|v| v.max(T::zero()))
}

/// Fresnel transfer-function propagation of a square complex field by `z`
/// meters (negative `z` back-propagates).
pub fn fresnel_propagate<T: Real>(
    field: &[Complex<T>],
    n: usize,
    pitch: f64,
    lambda: f64,
    z: f64,
) -> Result<Vec<Complex<T>>> {
    if field.len() != n * n {
        return Err(crate::error::shape_err("fresnel field", field.len(), (n, n)));
    }
    let z_max = n as f64 * pitch * pitch / lambda;
    if z.abs() >= z_max {
        return Err(Error::Sampling { z: z.abs(), z_max });
    }
    let mut spec = fft2_centered(field, n, n);
    let c = (n / 2) as isize;
    let df = 1.0 / (n as f64 * pitch);
    for r in 0..n {
        let v = (r as isize - c) as f64 * df;
        for col in 0..n {
            let u = (col as isize - c) as f64 * df;
            let phase = -std::f64::consts::PI * lambda * z * (u * u + v * v);
            let h = Complex::new(T::of(phase.cos()), T::of(phase.sin()));
            let a = spec[r * n + col];
            spec[r * n + col] = Complex::new(a.re * h.re - a.im * h.im, a.re * h.im + a.im * h.re);
        }
    }
    Ok(ifft2_centered(&spec, n, n))
}

/// Intensity after propagating the phase object `exp(i phase)` by `cfg.z`.
pub fn qpr_forward<T: Real>(phase: &FloatRaster<T>, cfg: &ForwardConfig) -> Result<FloatRaster<T>> {
    cfg.require(ForwardKind::Qpr, phase.shape())?;
    let field: Vec<Complex<T>> = phase
        .data()
        .iter()
        .map(|&p| Complex::new(p.cos(), p.sin()))
        .collect();
    let out = fresnel_propagate(&field, cfg.n, cfg.pitch, cfg.lambda, cfg.z)?;
    phase.with_data(out.iter().map(|c| c.norm_sqr()).collect())
}

/// Background-normalized measurement `(g - background) / mean(background)`.
pub fn normalize_measurement<T: Real>(g: &FloatRaster<T>, background: &FloatRaster<T>) -> Result<FloatRaster<T>> {
    g.require_same_shape(background, "normalize_measurement")?;
    let mean = background.mean();
    if !(mean.as_f64() > 0.0) {
        return Err(invalid(format!("background mean must be positive, got {mean}")));
    }
    g.with_data(
        g.data()
            .iter()
            .zip(background.data())
            .map(|(&x, &bg)| (x - bg) / mean)
            .collect(),
    )
}

/// Simulates the configured measurement for one object.
pub fn simulate<T: Real>(f: &FloatRaster<T>, cfg: &ForwardConfig) -> Result<FloatRaster<T>> {
    match cfg.kind {
        ForwardKind::Dli => dli_forward(f, cfg),
        ForwardKind::Qpr => {
            let background = qpr_forward(&f.with_data(vec![T::zero(); f.len()])?, cfg)?;
            normalize_measurement(&qpr_forward(f, cfg)?, &background)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::frequency_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn dli64() -> ForwardConfig {
        ForwardConfig::dli(64, 7.0, 1e-6).unwrap()
    }

    fn qpr64() -> ForwardConfig {
        ForwardConfig::qpr(64, 0.633e-6, 50e-3, ForwardConfig::default_qpr_pitch(64)).unwrap()
    }

    fn uniform(n: usize, seed: u64) -> FloatRaster<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FloatRaster::from_fn(n, n, 1e-6, |_, _| rng.random::<f64>()).unwrap()
    }

    fn ac_power(img: &FloatRaster<f64>) -> f64 {
        let m = img.mean();
        img.data().iter().map(|v| (v - m).powi(2)).sum()
    }

    #[test]
    fn tri_values() {
        assert_eq!(tri(0.0), 1.0);
        assert_eq!(tri(1.0), 0.0);
        assert_eq!(tri(-1.0), 0.0);
        assert_eq!(tri(0.25), 0.75);
        assert_eq!(tri(-3.0), 0.0);
        assert_eq!(dli_transfer(7.0, 1.0 / 14.0, 0.0), 0.5);
    }

    #[test]
    fn resample_round_trip_is_exact() {
        for n in [6usize, 7, 16] {
            let img = uniform(n, n as u64);
            let s = dft2(&img).unwrap();
            let up = fourier_resample(s.data(), n, n + 1);
            let down = fourier_resample(&up, n + 1, n);
            for (a, b) in down.iter().zip(s.data()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_passes_unchanged() {
        let cfg = dli64();
        let img = FloatRaster::filled(64, 64, 1e-6, 0.42).unwrap();
        let g = dli_forward(&img, &cfg).unwrap();
        assert!(g.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn sinusoid_beyond_cutoff_is_removed() {
        let cfg = dli64();
        // 0.2 cycles/pixel is not on the 64-grid; use the nearest bin above 0.2 and 0.2 itself.
        for u in [0.2, 13.0 / 64.0] {
            let img = FloatRaster::from_fn(64, 64, 1e-6, |_, c| 0.5 + 0.5 * (2.0 * PI * u * c as f64).cos()).unwrap();
            let g = dli_blur(&img, &cfg).unwrap();
            if u == 13.0 / 64.0 {
                assert!(ac_power(&g) <= 1e-10 * ac_power(&img));
            } else {
                // Off-grid tone leaks into in-band bins through the periodic boundary; only
                // the bins beyond cutoff are required to vanish.
                let s = dft2(&g).unwrap();
                let grid = frequency_grid(64).unwrap();
                for r in 0..64 {
                    for c in 0..64 {
                        if (7.0 * grid.u(c)).abs().max((7.0 * grid.v(r)).abs()) >= 1.0 {
                            assert!(s.get(r, c).norm_sqr() < 1e-20);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn on_grid_sinusoid_matches_truncated_kernel_oracle() {
        let b = 7.0;
        let u0 = 4.0 / 64.0;
        // Oracle: sum_m sinc²(m/b) cos(2π u0 m) over a long truncated window,
        // normalized by the kernel's DC sum. Both are b * tri(b u) in the limit.
        let sinc = |x: f64| if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
        let mut num = 0.0;
        let mut den = 0.0;
        for m in -2_000_000i64..=2_000_000 {
            let k = sinc(m as f64 / b).powi(2);
            num += k * (2.0 * PI * u0 * m as f64).cos();
            den += k;
        }
        let oracle_gain = num / den;
        assert!((oracle_gain - tri(b * u0)).abs() < 1e-5, "{oracle_gain}");

        let cfg = dli64();
        let img = FloatRaster::from_fn(64, 64, 1e-6, |_, c| 0.5 + 0.25 * (2.0 * PI * u0 * c as f64).cos()).unwrap();
        let g = dli_forward(&img, &cfg).unwrap();
        for r in [0usize, 17, 63] {
            for c in 0..64 {
                let want = 0.5 + 0.25 * oracle_gain * (2.0 * PI * u0 * c as f64).cos();
                assert!((g.get(r, c) - want).abs() < 1e-5 * 0.25, "{} vs {want}", g.get(r, c));
            }
        }
    }

    #[test]
    fn hard_cutoff_on_noise_and_linearity() {
        let cfg = dli64();
        let x = uniform(64, 1);
        let y = uniform(64, 2);
        let sx = dft2(&x).unwrap();
        let sg = dft2(&dli_forward(&x, &cfg).unwrap()).unwrap();
        let grid = frequency_grid(64).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                if (7.0 * grid.u(c)).abs().max((7.0 * grid.v(r)).abs()) >= 1.0 {
                    let i = r * 64 + c;
                    assert!(sg.data()[i].norm_sqr() <= 1e-10 * sx.data()[i].norm_sqr());
                }
            }
        }
        let (a, c) = (0.3, -1.7);
        let lhs = dli_blur(&x.lincomb(a, &y, c).unwrap(), &cfg).unwrap();
        let rhs = dli_blur(&x, &cfg)
            .unwrap()
            .lincomb(a, &dli_blur(&y, &cfg).unwrap(), c)
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-8);
    }

    #[test]
    fn dli_rejects_kind_mismatch_and_negative_objects() {
        let img = uniform(64, 3);
        assert!(dli_forward(&img, &qpr64()).is_err());
        let neg = img.map(|v| v - 0.5).unwrap();
        assert!(dli_forward(&neg, &dli64()).is_err());
        assert!(dli_forward(&uniform(32, 3), &dli64()).is_err());
        assert!(ForwardConfig::dli(64, 0.5, 1e-6).is_err());
    }

    #[test]
    fn qpr_config_enforces_sampling() {
        let err = ForwardConfig::qpr(64, 0.633e-6, 50e-3, 12e-6).unwrap_err();
        match err {
            Error::Sampling { z, z_max } => {
                assert_eq!(z, 50e-3);
                assert!((z_max - 64.0 * 144e-12 / 0.633e-6).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        let ok = ForwardConfig::qpr(256, 0.633e-6, 50e-3, 12e-6).unwrap();
        assert!((ok.z_limit() - 0.0582).abs() < 1e-4);
        assert!(ForwardConfig::qpr(256, 0.633e-6, 50e-3, 10e-6).is_err());
        assert!((qpr64().z_limit() - ok.z_limit()).abs() < 1e-12);
    }

    #[test]
    fn zero_phase_gives_unit_intensity() {
        let cfg = qpr64();
        let g = qpr_forward(&FloatRaster::<f64>::zeros(64, 64, cfg.pitch).unwrap(), &cfg).unwrap();
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn qpr_energy_and_offset_invariance() {
        let cfg = qpr64();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phase = FloatRaster::from_fn(64, 64, cfg.pitch, |_, _| rng.random_range(0.0..PI)).unwrap();
        let g = qpr_forward(&phase, &cfg).unwrap();
        assert!((g.mean() - 1.0).abs() < 1e-9);
        assert!(g.data().iter().all(|&v| v >= 0.0));
        let shifted = qpr_forward(&phase.map(|v| v + 1.234).unwrap(), &cfg).unwrap();
        assert!(shifted.max_abs_diff(&g) < 1e-10);
    }

    #[test]
    fn grating_scrambles_frequencies() {
        let cfg = qpr64();
        let k0 = 4usize;
        let phase = FloatRaster::from_fn(64, 64, cfg.pitch, |_, c| {
            1.5 * (2.0 * PI * k0 as f64 * c as f64 / 64.0).sin()
        })
        .unwrap();
        let in_spec = dft2(&phase).unwrap();
        let g = qpr_forward(&phase, &cfg).unwrap();
        let s = dft2(&g).unwrap();
        let row = 32;
        let power = |spec: &crate::raster::Spectrum<f64>, k: usize| spec.get(row, 32 + k).norm_sqr();
        assert!(power(&in_spec, 2 * k0) < 1e-20);
        assert!(power(&s, 2 * k0) > 1e-3);
        assert!(power(&s, 3 * k0) > 1e-6 || power(&s, 4 * k0) > 1e-6);
    }

    #[test]
    fn propagate_forward_and_back() {
        let cfg = qpr64();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field: Vec<Complex<f64>> = (0..64 * 64)
            .map(|_| Complex::from_polar(rng.random_range(0.5..1.5), rng.random_range(-PI..PI)))
            .collect();
        let fwd = fresnel_propagate(&field, 64, cfg.pitch, cfg.lambda, cfg.z).unwrap();
        let back = fresnel_propagate(&fwd, 64, cfg.pitch, cfg.lambda, -cfg.z).unwrap();
        let worst = field.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-9);
        assert!(fresnel_propagate(&field, 64, cfg.pitch, cfg.lambda, -1.0).is_err());
    }

    #[test]
    fn transfer_function_matches_direct_chirp_convolution() {
        // Smooth compact object, well inside the grid; z just under the sampling bound
        // so both the transfer function and the sampled chirp are adequately resolved.
        let n = 64usize;
        let pitch = 1.0;
        let lambda = 1.0;
        let z = 0.9 * n as f64;
        let c0 = (n / 2) as f64;
        let field: Vec<Complex<f64>> = (0..n * n)
            .map(|i| {
                let (y, x) = ((i / n) as f64 - c0, (i % n) as f64 - c0);
                let amp = (-(x * x + y * y) / (2.0 * 5.0 * 5.0)).exp();
                Complex::from_polar(amp, 0.8 * (2.0 * PI * x / 16.0).sin())
            })
            .collect();
        let tf = fresnel_propagate(&field, n, pitch, lambda, z).unwrap();
        let pre = Complex::new(0.0, -1.0 / (lambda * z));
        let mut worst: f64 = 0.0;
        let mut peak: f64 = 0.0;
        for oy in 24..40 {
            for ox in 24..40 {
                let mut acc = Complex::new(0.0, 0.0);
                for sy in 0..n {
                    for sx in 0..n {
                        let s = field[sy * n + sx];
                        if s.norm() < 1e-14 {
                            continue;
                        }
                        let d2 = ((oy as f64 - sy as f64).powi(2) + (ox as f64 - sx as f64).powi(2)) * pitch * pitch;
                        acc += s * Complex::from_polar(1.0, PI * d2 / (lambda * z));
                    }
                }
                let direct = (acc * pre * pitch * pitch).norm_sqr();
                let ours = tf[oy * n + ox].norm_sqr();
                worst = worst.max((direct - ours).abs());
                peak = peak.max(ours);
            }
        }
        assert!(worst < 1e-2 * peak, "worst {worst} peak {peak}");
    }

    #[test]
    fn normalization_cases() {
        let cfg = qpr64();
        let bg = qpr_forward(&FloatRaster::<f64>::zeros(64, 64, cfg.pitch).unwrap(), &cfg).unwrap();
        let z = normalize_measurement(&bg, &bg).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let twice = normalize_measurement(&bg.map(|v| 2.0 * v).unwrap(), &bg).unwrap();
        assert!(twice.data().iter().all(|&v| (v - 1.0).abs() < 1e-10));

        let phase = FloatRaster::from_fn(64, 64, cfg.pitch, |_, c| (2.0 * PI * 3.0 * c as f64 / 64.0).sin()).unwrap();
        let g = qpr_forward(&phase, &cfg).unwrap();
        let norm = normalize_measurement(&g, &bg).unwrap();
        let hand = g.map(|v| (v - 1.0) / 1.0).unwrap();
        assert!(norm.max_abs_diff(&hand) < 1e-9);

        let zero_bg = FloatRaster::<f64>::zeros(64, 64, cfg.pitch).unwrap();
        assert!(normalize_measurement(&g, &zero_bg).is_err());
        let sim = simulate(&phase, &cfg).unwrap();
        assert!(sim.max_abs_diff(&norm) < 1e-12);
    }
}
