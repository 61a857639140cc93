//! Spectral pre-modulation of training targets and power-spectrum analysis.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{invalid, shape_err, Result};
use crate::raster::{dft2, frequency_grid, idft2, FloatRaster, FrequencyGrid};
use crate::scalar::Real;

/// Radial power-law filter `T(u, v) = r^p`, with `r` in cycles/pixel.
#[derive(Clone, Debug)]
pub struct ModulationFilter {
    p: f64,
    grid: FrequencyGrid,
}

impl ModulationFilter {
    pub fn new(n: usize, p: f64) -> Result<Self> {
        if !p.is_finite() {
            return Err(invalid(format!("modulation exponent must be finite, got {p}")));
        }
        Ok(Self {
            p,
            grid: frequency_grid(n)?,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Filter gain at bin `(row, col)`. DC is 1 for `p = 0` and 0 otherwise.
    pub fn gain(&self, row: usize, col: usize) -> f64 {
        if self.p == 0.0 {
            return 1.0;
        }
        let r = self.grid.radius(row, col);
        if r == 0.0 {
            0.0
        } else {
            r.powf(self.p)
        }
    }
}

/// Returns `f̃` with `F̃ = F · r^p`.
pub fn premodulate<T: Real>(f: &FloatRaster<T>, p: f64) -> Result<FloatRaster<T>> {
    if !(p >= 0.0) {
        return Err(invalid(format!("pre-modulation exponent must be >= 0, got {p} (use demodulate)")));
    }
    let n = f.require_square("premodulate")?;
    if p == 0.0 {
        return Ok(f.clone());
    }
    let filter = ModulationFilter::new(n, p)?;
    let mut spec = dft2(f)?;
    spec.scale_by(|r, c| T::of(filter.gain(r, c)));
    idft2(&spec)
}

/// Divides the spectrum by `r^p` off DC and leaves DC at zero.
pub fn demodulate<T: Real>(ftilde: &FloatRaster<T>, p: f64) -> Result<FloatRaster<T>> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(invalid(format!("demodulation exponent must be > 0, got {p}")));
    }
    let n = ftilde.require_square("demodulate")?;
    let filter = ModulationFilter::new(n, p)?;
    let mut spec = dft2(ftilde)?;
    spec.scale_by(|r, c| {
        let g = filter.gain(r, c);
        if g == 0.0 {
            T::zero()
        } else {
            T::of(1.0 / g)
        }
    });
    idft2(&spec)
}

/// Per-bin power map on a DC-centered grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerMap {
    pub n: usize,
    pub power: Vec<f64>,
}

impl PowerMap {
    pub fn new(n: usize, power: Vec<f64>) -> Result<Self> {
        if power.len() != n * n {
            return Err(shape_err("power map", power.len(), (n, n)));
        }
        Ok(Self { n, power })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.power[row * self.n + col]
    }

    pub fn mean(&self) -> f64 {
        self.power.iter().sum::<f64>() / self.power.len() as f64
    }
}

/// Mean of `|dft2(img)|²` across the ensemble.
pub fn ensemble_psd<T: Real>(images: &[FloatRaster<T>]) -> Result<PowerMap> {
    let first = images.first().ok_or_else(|| invalid("ensemble_psd needs at least one image"))?;
    let n = first.require_square("ensemble_psd")?;
    for img in images {
        img.require_same_shape(first, "ensemble_psd")?;
    }
    let maps: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| -> Result<Vec<f64>> {
            Ok(dft2(img)?.data().iter().map(|c| c.norm_sqr().as_f64()).collect())
        })
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; n * n];
    for m in &maps {
        for (a, v) in acc.iter_mut().zip(m) {
            *a += v;
        }
    }
    let k = images.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    PowerMap::new(n, acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileKind {
    Diagonal,
    Radial,
}

/// One-dimensional power profile, frequencies ascending in cycles/pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdProfile {
    pub kind: ProfileKind,
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl PsdProfile {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match self.kind {
            ProfileKind::Diagonal => s.push_str("# main diagonal (+u,+v) from DC toward the corner; freq = sqrt(2)*|u|\n"),
            ProfileKind::Radial => s.push_str("# radial average over integer-rounded bin radius\n"),
        }
        s.push_str("freq_cyc_per_px,power\n");
        for (f, p) in self.frequencies.iter().zip(&self.power) {
            s.push_str(&format!("{f:?},{p:?}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Main-diagonal profile from DC toward the `(+u, +v)` corner.
pub fn diagonal_cross_section(psd: &PowerMap) -> Result<PsdProfile> {
    let n = psd.n;
    if psd.power.len() != n * n {
        return Err(shape_err("diagonal_cross_section", psd.power.len(), "square map"));
    }
    let c = n / 2;
    let len = n - c;
    let frequencies = (0..len).map(|k| std::f64::consts::SQRT_2 * k as f64 / n as f64).collect();
    let power = (0..len).map(|k| psd.get(c + k, c + k)).collect();
    Ok(PsdProfile {
        kind: ProfileKind::Diagonal,
        frequencies,
        power,
    })
}

/// Radially averaged profile over bins grouped by rounded radius (in bins).
pub fn radial_profile(psd: &PowerMap) -> PsdProfile {
    let n = psd.n;
    let c = (n / 2) as f64;
    let max_r = ((c * c * 2.0).sqrt().round() as usize) + 1;
    let mut sum = vec![0.0; max_r + 1];
    let mut count = vec![0usize; max_r + 1];
    for r in 0..n {
        for col in 0..n {
            let rad = (r as f64 - c).hypot(col as f64 - c).round() as usize;
            sum[rad] += psd.get(r, col);
            count[rad] += 1;
        }
    }
    let mut frequencies = Vec::new();
    let mut power = Vec::new();
    for (rad, (&s, &k)) in sum.iter().zip(&count).enumerate() {
        if k > 0 {
            frequencies.push(rad as f64 / n as f64);
            power.push(s / k as f64);
        }
    }
    PsdProfile {
        kind: ProfileKind::Radial,
        frequencies,
        power,
    }
}

pub const DEFAULT_FIT_RANGE: (f64, f64) = (0.05, 0.45);

/// Least-squares slope of `log10 power` against `log10 r` over radial bins in
/// `[rmin, rmax]` cycles/pixel.
pub fn radial_slope_fit(psd: &PowerMap, rmin: f64, rmax: f64) -> Result<f64> {
    if !(0.0 < rmin && rmin < rmax && rmax <= 0.5) {
        return Err(invalid(format!("fit range must satisfy 0 < rmin < rmax <= 0.5, got [{rmin}, {rmax}]")));
    }
    let profile = radial_profile(psd);
    let pts: Vec<(f64, f64)> = profile
        .frequencies
        .iter()
        .zip(&profile.power)
        .filter(|(&f, &p)| f >= rmin && f <= rmax && p > 0.0)
        .map(|(&f, &p)| (f.log10(), p.log10()))
        .collect();
    if pts.len() < 4 {
        return Err(invalid(format!(
            "only {} radial bins fall in [{rmin}, {rmax}]; need at least 4",
            pts.len()
        )));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
