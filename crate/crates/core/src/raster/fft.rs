use num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use super::{FloatRaster, Spectrum};
use crate::error::{Error, Result};
use crate::scalar::Real;

fn transpose<T: Copy>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(src[r * cols + c]);
        }
    }
    out
}

/// Unitary 2-D FFT over a row-major buffer in natural (uncentered) order.
fn fft2_in_place<T: Real>(buf: &mut Vec<Complex<T>>, h: usize, w: usize, dir: FftDirection) {
    let mut planner = FftPlanner::<T>::new();
    planner.plan_fft(w, dir).process(buf);
    let mut t = transpose(buf, h, w);
    planner.plan_fft(h, dir).process(&mut t);
    *buf = transpose(&t, w, h);
    let scale = T::of(1.0 / ((h * w) as f64).sqrt());
    for c in buf.iter_mut() {
        *c = *c * scale;
    }
}

/// Forward unitary transform of a spatial field; output is DC-centered.
pub(crate) fn fft2_centered<T: Real>(field: &[Complex<T>], h: usize, w: usize) -> Vec<Complex<T>> {
    let mut buf = field.to_vec();
    fft2_in_place(&mut buf, h, w, FftDirection::Forward);
    let (ch, cw) = (h / 2, w / 2);
    let mut out = vec![Complex::new(T::zero(), T::zero()); h * w];
    for r in 0..h {
        let sr = (r + h - ch) % h;
        for c in 0..w {
            let sc = (c + w - cw) % w;
            out[r * w + c] = buf[sr * w + sc];
        }
    }
    out
}

/// Inverse unitary transform of a DC-centered spectrum back to a spatial field.
pub(crate) fn ifft2_centered<T: Real>(spec: &[Complex<T>], h: usize, w: usize) -> Vec<Complex<T>> {
    let (ch, cw) = (h / 2, w / 2);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
    for r in 0..h {
        let sr = (r + ch) % h;
        for c in 0..w {
            let sc = (c + cw) % w;
            buf[r * w + c] = spec[sr * w + sc];
        }
    }
    fft2_in_place(&mut buf, h, w, FftDirection::Inverse);
    buf
}

/// Unitary forward DFT with the DC bin moved to the grid center.
pub fn dft2<T: Real>(img: &FloatRaster<T>) -> Result<Spectrum<T>> {
    if let Some(index) = img.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "dft2 input", index });
    }
    let (h, w) = img.shape();
    let field: Vec<Complex<T>> = img.data().iter().map(|&v| Complex::new(v, T::zero())).collect();
    let data = fft2_centered(&field, h, w);
    Spectrum::new(h, w, 1.0 / (w as f64 * img.pitch()), 1.0 / (h as f64 * img.pitch()), data)
}

/// Inverse of [`dft2`]. Imaginary residue up to `T::IMAG_TOLERANCE` is dropped.
pub fn idft2<T: Real>(spec: &Spectrum<T>) -> Result<FloatRaster<T>> {
    let (h, w) = spec.shape();
    let field = ifft2_centered(spec.data(), h, w);
    real_part(field, h, w, spec.pitch())
}

pub(crate) fn real_part<T: Real>(field: Vec<Complex<T>>, h: usize, w: usize, pitch: f64) -> Result<FloatRaster<T>> {
    let residue = field.iter().map(|c| c.im.abs()).fold(T::zero(), T::max).as_f64();
    if residue > T::IMAG_TOLERANCE {
        return Err(Error::ImaginaryResidue {
            residue,
            tolerance: T::IMAG_TOLERANCE,
        });
    }
    FloatRaster::new(h, w, pitch, field.into_iter().map(|c| c.re).collect())
}
