//! Image and spectrum containers plus the frequency-grid convention.
//!
//! Every spectrum in the crate is DC-centered: bin `k` on an axis of length
//! `n` holds frequency `(k - n/2) / n` cycles/pixel. Uncentered layouts stay
//! inside [`fft`].

pub(crate) mod fft;
pub(crate) mod io;

pub use fft::{dft2, idft2};
pub use io::{
    decode_raster, encode_raster, read_png_luminance, read_raster, write_atomic, write_raster, FRAS_MAGIC, FRAS_VERSION,
    LUMA_WEIGHTS,
};

use num_complex::Complex;

use crate::error::{invalid, shape_err, Error, Result};
use crate::scalar::Real;

/// 2-D real image on a regular grid with a physical pixel pitch in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatRaster<T> {
    height: usize,
    width: usize,
    pitch: f64,
    data: Vec<T>,
}

impl<T: Real> FloatRaster<T> {
    pub fn new(height: usize, width: usize, pitch: f64, data: Vec<T>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(invalid(format!("raster must be at least 2x2, got {height}x{width}")));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(invalid(format!("pixel pitch must be positive, got {pitch}")));
        }
        if data.len() != height * width {
            return Err(shape_err("raster payload", (height, width), data.len()));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "raster", index });
        }
        Ok(Self {
            height,
            width,
            pitch,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, pitch: f64) -> Result<Self> {
        Self::new(height, width, pitch, vec![T::zero(); height * width])
    }

    pub fn filled(height: usize, width: usize, pitch: f64, value: T) -> Result<Self> {
        Self::new(height, width, pitch, vec![value; height * width])
    }

    /// Builds a raster by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(n_rows: usize, n_cols: usize, pitch: f64, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in 0..n_rows {
            for c in 0..n_cols {
                data.push(f(r, c));
            }
        }
        Self::new(n_rows, n_cols, pitch, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    /// Replaces the payload, keeping geometry; values are re-validated.
    pub fn with_data(&self, data: Vec<T>) -> Result<Self> {
        Self::new(self.height, self.width, self.pitch, data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn require_square(&self, context: &'static str) -> Result<usize> {
        if self.is_square() {
            Ok(self.height)
        } else {
            Err(shape_err(context, self.shape(), "square grid"))
        }
    }

    pub fn require_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(shape_err(context, self.shape(), other.shape()))
        }
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::of(self.data.len() as f64)
    }

    pub fn energy(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Converts the payload to another scalar type.
    pub fn cast<U: Real>(&self) -> FloatRaster<U> {
        FloatRaster {
            height: self.height,
            width: self.width,
            pitch: self.pitch,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.require_same_shape(other, "lincomb")?;
        self.with_data(self.data.iter().zip(&other.data).map(|(&x, &y)| a * x + b * y).collect())
    }
}

/// 2-D complex spectrum with DC at bin `(height/2, width/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    height: usize,
    width: usize,
    /// Cycles/meter per bin along columns.
    du: f64,
    /// Cycles/meter per bin along rows.
    dv: f64,
    data: Vec<Complex<T>>,
}

impl<T: Real> Spectrum<T> {
    pub fn new(height: usize, width: usize, du: f64, dv: f64, data: Vec<Complex<T>>) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(invalid(format!("spectrum must be at least 2x2, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(shape_err("spectrum payload", (height, width), data.len()));
        }
        if let Some(index) = data.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite { what: "spectrum", index });
        }
        Ok(Self {
            height,
            width,
            du,
            dv,
            data,
        })
    }

    /// All-zero spectrum matching the geometry of `like`.
    pub fn zeros_like(like: &FloatRaster<T>) -> Self {
        let (h, w) = like.shape();
        Self {
            height: h,
            width: w,
            du: 1.0 / (w as f64 * like.pitch()),
            dv: 1.0 / (h as f64 * like.pitch()),
            data: vec![Complex::new(T::zero(), T::zero()); h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn du(&self) -> f64 {
        self.du
    }

    pub fn dv(&self) -> f64 {
        self.dv
    }

    /// Pixel pitch of the spatial grid this spectrum describes.
    pub fn pitch(&self) -> f64 {
        1.0 / (self.du * self.width as f64)
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: Complex<T>) {
        self.data[row * self.width + col] = v;
    }

    /// Index of the DC bin as `(row, col)`.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn energy(&self) -> T {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Multiplies every bin by the real gain `gain(row, col)`.
    pub fn scale_by(&mut self, mut gain: impl FnMut(usize, usize) -> T) {
        let w = self.width;
        for (i, c) in self.data.iter_mut().enumerate() {
            *c = *c * gain(i / w, i % w);
        }
    }

    /// Largest deviation from conjugate symmetry `S(-k) = conj(S(k))`.
    ///
    /// Rows and columns holding an unpaired Nyquist bin (even lengths) are
    /// excluded.
    pub fn hermitian_defect(&self) -> T {
        let (h, w) = self.shape();
        let (cr, cc) = self.center();
        let mut worst = T::zero();
        for r in 0..h {
            if h % 2 == 0 && r == 0 {
                continue;
            }
            for c in 0..w {
                if w % 2 == 0 && c == 0 {
                    continue;
                }
                let mr = 2 * cr - r;
                let mc = 2 * cc - c;
                let d = (self.get(r, c) - self.get(mr, mc).conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }
}

/// DC-centered spatial-frequency axis for an `n`-point grid, in cycles/pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    n: usize,
    axis: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("frequency grid needs n >= 2, got {n}")));
        }
        let c = (n / 2) as f64;
        let axis = (0..n).map(|k| (k as f64 - c) / n as f64).collect();
        Ok(Self { n, axis })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    /// Horizontal frequency of column `col`.
    #[inline]
    pub fn u(&self, col: usize) -> f64 {
        self.axis[col]
    }

    /// Vertical frequency of row `row`.
    #[inline]
    pub fn v(&self, row: usize) -> f64 {
        self.axis[row]
    }

    #[inline]
    pub fn radius(&self, row: usize, col: usize) -> f64 {
        self.u(col).hypot(self.v(row))
    }

    pub fn center(&self) -> usize {
        self.n / 2
    }
}

/// Frequency grid for an `n x n` raster.
pub fn frequency_grid(n: usize) -> Result<FrequencyGrid> {
    FrequencyGrid::new(n)
}
