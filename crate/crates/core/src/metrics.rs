//! Correlation loss, image-quality metrics and histogram matching.

use std::fmt::Write as _;

use crate::error::{invalid, shape_err, Result};
use crate::raster::FloatRaster;
use crate::scalar::Real;

fn centered<T: Real>(x: &[T]) -> (Vec<T>, T) {
    let mean = x.iter().copied().sum::<T>() / T::of(x.len() as f64);
    let c: Vec<T> = x.iter().map(|&v| v - mean).collect();
    let norm = c.iter().map(|&v| v * v).sum::<T>().sqrt();
    // Rounding in the mean leaves a residue on constant input; treat it as zero.
    let scale = x.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let floor = T::epsilon() * T::of(4.0 * x.len() as f64) * scale;
    (c, if norm <= floor { T::zero() } else { norm })
}

fn check_pair<T>(fhat: &[T], f: &[T]) -> Result<()> {
    if fhat.len() != f.len() || fhat.is_empty() {
        return Err(shape_err("npcc", fhat.len(), f.len()));
    }
    Ok(())
}

/// Negative Pearson correlation `-cov(f̂, f) / (σ_f̂ σ_f)` of two flat images.
pub fn npcc_slice<T: Real>(fhat: &[T], f: &[T]) -> Result<T> {
    check_pair(fhat, f)?;
    let (a, na) = centered(fhat);
    let (b, nb) = centered(f);
    if na == T::zero() || nb == T::zero() {
        return Err(invalid("npcc is undefined for a zero-variance image"));
    }
    let dot: T = a.iter().zip(&b).map(|(&x, &y)| x * y).sum();
    Ok(-(dot / (na * nb)))
}

/// Gradient of [`npcc_slice`] with respect to `fhat`.
///
/// With `a = f̂ - mean(f̂)` and `b = f - mean(f)`:
/// `∂E/∂f̂ = -b/(|a||b|) + (a·b) a/(|a|³|b|)`, already zero-mean.
pub fn npcc_gradient_slice<T: Real>(fhat: &[T], f: &[T]) -> Result<(T, Vec<T>)> {
    check_pair(fhat, f)?;
    let (a, na) = centered(fhat);
    let (b, nb) = centered(f);
    if na == T::zero() || nb == T::zero() {
        return Err(invalid("npcc is undefined for a zero-variance image"));
    }
    let dot: T = a.iter().zip(&b).map(|(&x, &y)| x * y).sum();
    let inv = T::one() / (na * nb);
    let k = dot * inv / (na * na);
    let grad = a.iter().zip(&b).map(|(&x, &y)| k * x - y * inv).collect();
    Ok((-(dot * inv), grad))
}

pub fn npcc<T: Real>(fhat: &FloatRaster<T>, f: &FloatRaster<T>) -> Result<T> {
    fhat.require_same_shape(f, "npcc")?;
    npcc_slice(fhat.data(), f.data())
}

pub fn npcc_gradient<T: Real>(fhat: &FloatRaster<T>, f: &FloatRaster<T>) -> Result<FloatRaster<T>> {
    fhat.require_same_shape(f, "npcc_gradient")?;
    let (_, g) = npcc_gradient_slice(fhat.data(), f.data())?;
    fhat.with_data(g)
}

/// Batch loss: plain sum of per-image NPCC values.
pub fn batch_npcc<T: Real>(fhats: &[FloatRaster<T>], fs: &[FloatRaster<T>]) -> Result<T> {
    if fhats.len() != fs.len() {
        return Err(shape_err("batch_npcc", fhats.len(), fs.len()));
    }
    fhats.iter().zip(fs).map(|(a, b)| npcc(a, b)).sum()
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Maps `fhat` monotonically so its values are exactly the reference's values.
///
/// The `k`-th smallest pixel of `fhat` (ties in pixel order) receives the
/// `k`-th smallest reference value. A constant `fhat` maps to the reference
/// median.
pub fn histogram_match<T: Real>(fhat: &FloatRaster<T>, reference: &FloatRaster<T>) -> Result<FloatRaster<T>> {
    fhat.require_same_shape(reference, "histogram_match")?;
    let mut ref_sorted: Vec<f64> = reference.data().iter().map(|v| v.as_f64()).collect();
    ref_sorted.sort_by(f64::total_cmp);
    let first = fhat.data()[0];
    if fhat.data().iter().all(|&v| v == first) {
        let m = T::of(median_sorted(&ref_sorted));
        return fhat.with_data(vec![m; fhat.len()]);
    }
    let mut order: Vec<usize> = (0..fhat.len()).collect();
    order.sort_by(|&i, &j| fhat.data()[i].partial_cmp(&fhat.data()[j]).unwrap().then(i.cmp(&j)));
    let mut out = vec![T::zero(); fhat.len()];
    for (rank, &idx) in order.iter().enumerate() {
        out[idx] = T::of(ref_sorted[rank]);
    }
    fhat.with_data(out)
}

fn data_range<T: Real>(f: &FloatRaster<T>, range: Option<f64>) -> f64 {
    range.unwrap_or_else(|| {
        let (mn, mx) = f
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v.as_f64()), b.max(v.as_f64())));
        mx - mn
    })
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
pub fn psnr<T: Real>(fhat: &FloatRaster<T>, f: &FloatRaster<T>, range: Option<f64>) -> Result<f64> {
    fhat.require_same_shape(f, "psnr")?;
    let l = data_range(f, range);
    let mse = fhat
        .data()
        .iter()
        .zip(f.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / f.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (l * l / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub(crate) fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|t| *t /= s);
    w
}

/// Separable valid-mode Gaussian filtering.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|t| taps[t] * x[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|t| taps[t] * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// Structural similarity with an 11x11 Gaussian window (σ = 1.5), averaged
/// over all window positions that fit inside the image.
pub fn ssim<T: Real>(fhat: &FloatRaster<T>, f: &FloatRaster<T>, range: Option<f64>) -> Result<f64> {
    fhat.require_same_shape(f, "ssim")?;
    let (h, w) = f.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}")));
    }
    let l = data_range(f, range);
    let c1 = (SSIM_K1 * l).powi(2);
    let c2 = (SSIM_K2 * l).powi(2);
    let x: Vec<f64> = fhat.data().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = f.data().iter().map(|v| v.as_f64()).collect();
    let taps = gaussian_taps();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &taps);
    let my = filter_valid(&y, h, w, &taps);
    let sxx = filter_valid(&prod(&x, &x), h, w, &taps);
    let syy = filter_valid(&prod(&y, &y), h, w, &taps);
    let sxy = filter_valid(&prod(&x, &y), h, w, &taps);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (a, b) = (mx[i], my[i]);
        let vx = sxx[i] - a * a;
        let vy = syy[i] - b * b;
        let cxy = sxy[i] - a * b;
        total += ((2.0 * a * b + c1) * (2.0 * cxy + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// One row of a metric table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub image_id: String,
    pub npcc: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image metrics plus their ensemble means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push<T: Real>(&mut self, id: impl Into<String>, fhat: &FloatRaster<T>, f: &FloatRaster<T>) -> Result<()> {
        self.rows.push(MetricRow {
            image_id: id.into(),
            npcc: npcc(fhat, f)?.as_f64(),
            psnr_db: psnr(fhat, f, None)?,
            ssim: ssim(fhat, f, None)?,
        });
        Ok(())
    }

    pub fn mean(&self) -> MetricRow {
        let k = self.rows.len().max(1) as f64;
        MetricRow {
            image_id: "MEAN".into(),
            npcc: self.rows.iter().map(|r| r.npcc).sum::<f64>() / k,
            psnr_db: self.rows.iter().map(|r| r.psnr_db).sum::<f64>() / k,
            ssim: self.rows.iter().map(|r| r.ssim).sum::<f64>() / k,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,npcc,psnr_db,ssim\n");
        for r in self.rows.iter().chain(std::iter::once(&self.mean())) {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", r.image_id, r.npcc, r.psnr_db, r.ssim);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> FloatRaster<f64> {
        FloatRaster::from_fn(n, n, 1.0, |_, _| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn npcc_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = random(16, &mut rng);
        assert!((npcc(&f, &f).unwrap() + 1.0).abs() < 1e-12);
        let neg = f.map(|v| -v).unwrap();
        assert!((npcc(&neg, &f).unwrap() - 1.0).abs() < 1e-12);
        let aff = f.map(|v| 3.5 * v - 2.0).unwrap();
        assert!((npcc(&aff, &f).unwrap() + 1.0).abs() < 1e-12);
        let flat = FloatRaster::filled(16, 16, 1.0, 0.3).unwrap();
        assert!(npcc(&flat, &f).is_err());
        assert!(npcc_gradient(&f, &flat).is_err());
    }

    #[test]
    fn gradient_at_optimum_and_mean_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random(16, &mut rng);
        let g = npcc_gradient(&f, &f).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-10));
        let fhat = random(16, &mut rng);
        let g = npcc_gradient(&fhat, &f).unwrap();
        assert!(g.data().iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random(16, &mut rng);
        let fhat = random(16, &mut rng);
        let g = npcc_gradient(&fhat, &f).unwrap();
        let h = 1e-5;
        for i in (0..256).step_by(7) {
            let mut p = fhat.data().to_vec();
            p[i] += h;
            let mut m = fhat.data().to_vec();
            m[i] -= h;
            let fd = (npcc_slice(&p, f.data()).unwrap() - npcc_slice(&m, f.data()).unwrap()) / (2.0 * h);
            let an = g.data()[i];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-6), "{i}: {fd} vs {an}");
        }
    }

    #[test]
    fn histogram_match_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random(16, &mut rng);
        assert!(histogram_match(&r, &r).unwrap().max_abs_diff(&r) < 1e-9);
        let aff = r.map(|v| 0.2 * v + 5.0).unwrap();
        assert!(histogram_match(&aff, &r).unwrap().max_abs_diff(&r) < 1e-6);
        let flat = FloatRaster::filled(4, 4, 1.0, 9.0).unwrap();
        let rr = FloatRaster::from_fn(4, 4, 1.0, |a, b| (a * 4 + b) as f64).unwrap();
        let out = histogram_match(&flat, &rr).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.5));
    }

    #[test]
    fn histogram_match_ties_follow_pixel_order() {
        let fhat = FloatRaster::new(2, 2, 1.0, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let r = FloatRaster::new(2, 2, 1.0, vec![10.0, 30.0, 20.0, 40.0]).unwrap();
        let out = histogram_match(&fhat, &r).unwrap();
        assert_eq!(out.data(), &[20.0, 30.0, 10.0, 40.0]);
    }

    #[test]
    fn psnr_cases() {
        let f = FloatRaster::from_fn(16, 16, 1.0, |a, b| ((a + b) % 2) as f64).unwrap();
        let up = f.map(|v| v + 0.1).unwrap();
        assert!((psnr(&up, &f, Some(1.0)).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&up, &f, None).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&f, &f, None).unwrap(), f64::INFINITY);
    }

    /// Direct per-window evaluation with 2-D weights, independent of the
    /// separable filtering path.
    fn ssim_direct(x: &FloatRaster<f64>, y: &FloatRaster<f64>, l: f64) -> f64 {
        let (h, w) = x.shape();
        let g = gaussian_taps();
        let c1 = (0.01 * l).powi(2);
        let c2 = (0.03 * l).powi(2);
        let mut acc = 0.0;
        let mut count = 0;
        for r0 in 0..=h - 11 {
            for c0 in 0..=w - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i] * g[j];
                        mx += wt * x.get(r0 + i, c0 + j);
                        my += wt * y.get(r0 + i, c0 + j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i] * g[j];
                        let dx = x.get(r0 + i, c0 + j) - mx;
                        let dy = y.get(r0 + i, c0 + j) - my;
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cxy += wt * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let x = random(16, &mut rng);
            let y = random(16, &mut rng);
            let fast = ssim(&x, &y, Some(1.0)).unwrap();
            let slow = ssim_direct(&x, &y, 1.0);
            assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        }
        let x = random(16, &mut rng);
        assert!((ssim(&x, &x, None).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&random(8, &mut rng), &random(8, &mut rng), None).is_err());
    }

    #[test]
    fn report_csv() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rep = MetricReport::default();
        for i in 0..3 {
            let f = random(16, &mut rng);
            let g = random(16, &mut rng);
            rep.push(format!("{i:04}"), &g, &f).unwrap();
        }
        let csv = rep.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "image_id,npcc,psnr_db,ssim");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("MEAN,"));
        for r in &rep.rows {
            assert!((-1.0..=1.0).contains(&r.npcc) && (-1.0..=1.0).contains(&r.ssim));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn npcc_affine_and_symmetric(seed in any::<u64>(), a in 0.01f64..50.0, c in -10.0f64..10.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = random(8, &mut rng);
                let g = random(8, &mut rng);
                prop_assert!((npcc(&f.map(|v| a * v + c).unwrap(), &f).unwrap() + 1.0).abs() < 1e-12);
                prop_assert!((npcc(&f.map(|v| -a * v + c).unwrap(), &f).unwrap() - 1.0).abs() < 1e-12);
                prop_assert!((npcc(&f, &g).unwrap() - npcc(&g, &f).unwrap()).abs() < 1e-12);
            }

            #[test]
            fn matched_values_are_reference_multiset(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = random(8, &mut rng);
                let g = random(8, &mut rng);
                let m = histogram_match(&g, &f).unwrap();
                let mut a = m.data().to_vec();
                let mut b = f.data().to_vec();
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                prop_assert_eq!(a, b);
                // Ranking is preserved.
                for i in 0..64 {
                    for j in 0..64 {
                        if g.data()[i] < g.data()[j] {
                            prop_assert!(m.data()[i] <= m.data()[j]);
                        }
                    }
                }
            }

            #[test]
            fn matching_never_hurts_affine_pairs(seed in any::<u64>(), a in 0.01f64..5.0, c in -3.0f64..3.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let f = random(8, &mut rng);
                let fhat = f.map(|v| a * v + c).unwrap();
                let before = npcc(&fhat, &f).unwrap();
                let after = npcc(&histogram_match(&fhat, &f).unwrap(), &f).unwrap();
                prop_assert!(after <= before + 1e-9);
            }
        }
    }
}
