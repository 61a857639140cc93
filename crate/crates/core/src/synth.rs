//! Synthetic object ensembles with a power-law spectrum.
//!
//! Every object has spectral magnitude exactly `r^-a` (`a = 1` gives the
//! `1/r²` power law) with uniformly random, Hermitian-paired phases. Phases
//! come from the spectrum of real white noise, which is Hermitian by
//! construction, so the result is real without symmetrization passes.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::forward::ForwardKind;
use crate::raster::{dft2, frequency_grid, idft2, FloatRaster};

/// Zero-mean field on an `n x n` grid with `|F(r)| = r^-amplitude_exponent`.
pub fn power_law_field<R: Rng>(n: usize, amplitude_exponent: f64, rng: &mut R) -> Result<FloatRaster<f64>> {
    let noise = FloatRaster::from_fn(n, n, 1.0, |_, _| StandardNormal.sample(rng))?;
    let grid = frequency_grid(n)?;
    let mut spec = dft2(&noise)?;
    for r in 0..n {
        for c in 0..n {
            let rad = grid.radius(r, c);
            let z = spec.get(r, c);
            let v = if rad == 0.0 || z.norm() == 0.0 {
                Complex::new(0.0, 0.0)
            } else {
                z / z.norm() * rad.powf(-amplitude_exponent)
            };
            spec.set(r, c, v);
        }
    }
    idft2(&spec)
}

/// Affinely rescales `img` onto `[lo, hi]`.
pub fn rescale(img: &FloatRaster<f64>, lo: f64, hi: f64) -> Result<FloatRaster<f64>> {
    let (mn, mx) = img
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(mx > mn) {
        return Err(invalid("cannot rescale a constant image"));
    }
    img.map(|v| lo + (hi - lo) * (v - mn) / (mx - mn))
}

/// Parameters of a synthetic object set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectSpec {
    pub kind: ForwardKind,
    pub n: usize,
    pub pitch: f64,
    /// Upper end of the phase range for phase objects, radians.
    pub phi_max: f64,
}

/// Generates `count` objects; object `i` depends only on `(seed, i)`.
pub fn object_ensemble(spec: &ObjectSpec, count: usize, seed: u64) -> Result<Vec<FloatRaster<f64>>> {
    (0..count).map(|i| object(spec, seed, i)).collect()
}

pub fn object(spec: &ObjectSpec, seed: u64, index: usize) -> Result<FloatRaster<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let field = power_law_field(spec.n, 1.0, &mut rng)?;
    let hi = match spec.kind {
        ForwardKind::Dli => 1.0,
        ForwardKind::Qpr => spec.phi_max,
    };
    let scaled = rescale(&field, 0.0, hi)?;
    FloatRaster::new(spec.n, spec.n, spec.pitch, scaled.into_data())
}
