//! Resolution dot tests and ensemble PSD comparisons.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{invalid, shape_err, Result};
use crate::forward::simulate;
use crate::metrics::histogram_match;
use crate::pipeline::{PipelineCheckpoint, Reconstruction};
use crate::raster::io::write_atomic;
use crate::raster::FloatRaster;
use crate::spectral::{diagonal_cross_section, ensemble_psd, PsdProfile};

pub const DEFAULT_DOT_SPACING: usize = 5;
pub const DEFAULT_DOT_COUNT: usize = 2;
pub const RESOLVED_THRESHOLD: f64 = 0.8;
/// Half-width of the window searched around each nominal dot position.
pub const PEAK_SEARCH: usize = 2;

/// Single-pixel dots of amplitude 1 in one centered horizontal row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DotPattern {
    pub n: usize,
    pub spacing: usize,
    pub row: usize,
    pub cols: Vec<usize>,
}

impl DotPattern {
    pub fn new(n: usize, spacing: usize, count: usize) -> Result<Self> {
        if spacing < 2 {
            return Err(invalid(format!("dot spacing must be >= 2, got {spacing}")));
        }
        if count < 2 {
            return Err(invalid(format!("dot count must be >= 2, got {count}")));
        }
        let span = (count - 1) * spacing;
        let start = (n / 2).checked_sub(span / 2);
        match start {
            Some(s) if s >= PEAK_SEARCH && s + span + PEAK_SEARCH < n => Ok(Self {
                n,
                spacing,
                row: n / 2,
                cols: (0..count).map(|i| s + i * spacing).collect(),
            }),
            _ => Err(invalid(format!(
                "{count} dots at spacing {spacing} do not fit in a {n}-pixel row with {PEAK_SEARCH}-pixel margins"
            ))),
        }
    }

    pub fn count(&self) -> usize {
        self.cols.len()
    }

    pub fn raster(&self, pitch: f64) -> Result<FloatRaster<f64>> {
        let mut data = vec![0.0; self.n * self.n];
        for &c in &self.cols {
            data[self.row * self.n + c] = 1.0;
        }
        FloatRaster::new(self.n, self.n, pitch, data)
    }
}

pub fn make_dot_pattern(n: usize, spacing: usize, count: usize, pitch: f64) -> Result<(DotPattern, FloatRaster<f64>)> {
    let p = DotPattern::new(n, spacing, count)?;
    let r = p.raster(pitch)?;
    Ok((p, r))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolveResult {
    pub resolved: bool,
    /// Worst (largest) midpoint-to-smaller-peak ratio over adjacent pairs.
    pub dip_ratio: f64,
    pub profile: Vec<f64>,
    pub diagnostic: Option<String>,
}

/// Dip test along the dot row.
///
/// Each peak is the profile maximum within [`PEAK_SEARCH`] pixels of a dot;
/// the midpoint value is linearly interpolated for odd spacings.
pub fn resolve_test(recon: &FloatRaster<f64>, pattern: &DotPattern) -> Result<ResolveResult> {
    if recon.shape() != (pattern.n, pattern.n) {
        return Err(shape_err("resolve_test", recon.shape(), (pattern.n, pattern.n)));
    }
    let n = pattern.n;
    let profile: Vec<f64> = recon.data()[pattern.row * n..(pattern.row + 1) * n].to_vec();
    let scale = profile.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut peaks = Vec::with_capacity(pattern.count());
    for &c in &pattern.cols {
        let win = &profile[c - PEAK_SEARCH..=c + PEAK_SEARCH];
        let hi = win.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = win.iter().cloned().fold(f64::INFINITY, f64::min);
        if hi <= 0.0 || hi - lo <= 1e-12 * scale {
            return Ok(ResolveResult {
                resolved: false,
                dip_ratio: 1.0,
                profile,
                diagnostic: Some(format!("no positive peak within ±{PEAK_SEARCH} px of column {c}")),
            });
        }
        peaks.push(hi);
    }
    let mut dip = f64::NEG_INFINITY;
    for (i, w) in pattern.cols.windows(2).enumerate() {
        let a = (w[0] + w[1]) / 2;
        let mid = if (w[0] + w[1]) % 2 == 0 {
            profile[a]
        } else {
            0.5 * (profile[a] + profile[a + 1])
        };
        dip = dip.max(mid / peaks[i].min(peaks[i + 1]));
    }
    Ok(ResolveResult {
        resolved: dip <= RESOLVED_THRESHOLD,
        dip_ratio: dip,
        profile,
        diagnostic: None,
    })
}

/// Subtracts the median, so a background offset does not count as signal.
pub fn remove_baseline(img: &FloatRaster<f64>) -> Result<FloatRaster<f64>> {
    let mut sorted = img.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 0 {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    } else {
        sorted[m / 2]
    };
    img.map(|v| v - median)
}

pub const ENSEMBLE_NAMES: [&str; 5] = ["gt", "meas", "lf", "hf", "shat"];
pub const BAND_NAMES: [&str; 3] = ["low", "mid", "top"];

/// Diagonal PSD profiles of five ensembles and their banded log distances to
/// ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdComparison {
    pub freqs: Vec<f64>,
    /// Ordered as [`ENSEMBLE_NAMES`].
    pub profiles: Vec<Vec<f64>>,
    /// `distances[e][b]`: mean |log10 P_e - log10 P_gt| over band `b`.
    pub distances: Vec<[f64; 3]>,
}

const LOG_FLOOR: f64 = 1e-300;

/// Band of a diagonal frequency within thirds of `[0, √2/2]`.
pub fn band_of(freq: f64) -> usize {
    let top = 0.5 * std::f64::consts::SQRT_2;
    ((3.0 * freq / top) as usize).min(2)
}

/// Banded log distance between two profiles sharing `freqs`; DC is skipped.
pub fn band_distances(freqs: &[f64], x: &[f64], gt: &[f64]) -> [f64; 3] {
    let mut sum = [0.0; 3];
    let mut cnt = [0usize; 3];
    for ((&f, &a), &b) in freqs.iter().zip(x).zip(gt) {
        if f == 0.0 {
            continue;
        }
        let k = band_of(f);
        sum[k] += (a.max(LOG_FLOOR).log10() - b.max(LOG_FLOOR).log10()).abs();
        cnt[k] += 1;
    }
    std::array::from_fn(|k| if cnt[k] == 0 { 0.0 } else { sum[k] / cnt[k] as f64 })
}

pub fn compare_psd(ensembles: [&[FloatRaster<f64>]; 5]) -> Result<PsdComparison> {
    let count = ensembles[0].len();
    for e in &ensembles {
        if e.len() != count {
            return Err(shape_err("compare_psd ensemble sizes", count, e.len()));
        }
    }
    let profiles: Vec<PsdProfile> = ensembles
        .iter()
        .map(|e| ensemble_psd(e).and_then(|m| diagonal_cross_section(&m)))
        .collect::<Result<_>>()?;
    for p in &profiles[1..] {
        if p.frequencies != profiles[0].frequencies {
            return Err(shape_err("compare_psd profile length", profiles[0].len(), p.len()));
        }
    }
    let freqs = profiles[0].frequencies.clone();
    let distances = profiles
        .iter()
        .map(|p| band_distances(&freqs, &p.power, &profiles[0].power))
        .collect();
    Ok(PsdComparison {
        freqs,
        profiles: profiles.into_iter().map(|p| p.power).collect(),
        distances,
    })
}

impl PsdComparison {
    pub fn distance(&self, name: &str, band: usize) -> Option<f64> {
        ENSEMBLE_NAMES.iter().position(|&e| e == name).map(|i| self.distances[i][band])
    }

    /// `freq,gt,meas,lf,hf,shat` rows.
    pub fn to_csv(&self) -> String {
        let mut s = format!("freq,{}\n", ENSEMBLE_NAMES.join(","));
        for (i, f) in self.freqs.iter().enumerate() {
            let _ = write!(s, "{f}");
            for p in &self.profiles {
                let _ = write!(s, ",{}", p[i]);
            }
            s.push('\n');
        }
        s
    }

    /// `ensemble,low,mid,top` log distances.
    pub fn summary_csv(&self) -> String {
        let mut s = format!("ensemble,{}\n", BAND_NAMES.join(","));
        for (name, d) in ENSEMBLE_NAMES.iter().zip(&self.distances) {
            let _ = writeln!(s, "{name},{},{},{}", d[0], d[1], d[2]);
        }
        s
    }
}

/// One labelled dot-test outcome for `restest.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct RestestRow {
    pub stage: String,
    pub result: ResolveResult,
}

pub fn restest_csv(pattern: &DotPattern, rows: &[RestestRow]) -> String {
    let cols = pattern.cols.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
    let mut s = String::from("stage,n,spacing_px,dot_count,row,dot_cols,dip_ratio,resolved\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.stage,
            pattern.n,
            pattern.spacing,
            pattern.count(),
            pattern.row,
            cols,
            r.result.dip_ratio,
            r.result.resolved
        );
    }
    s
}

/// `col,<stage>...` dot-row cross sections.
pub fn profiles_csv(rows: &[RestestRow]) -> String {
    let names: Vec<&str> = rows.iter().map(|r| r.stage.as_str()).collect();
    let mut s = format!("col,{}\n", names.join(","));
    let len = rows.first().map_or(0, |r| r.result.profile.len());
    for i in 0..len {
        let _ = write!(s, "{i}");
        for r in rows {
            let _ = write!(s, ",{}", r.result.profile[i]);
        }
        s.push('\n');
    }
    s
}

const PALETTE: [[u8; 3]; 6] = [
    [0, 0, 0],
    [128, 128, 128],
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
];

/// Renders line series onto a white canvas with a frame; `log_y` plots log10.
pub fn plot_lines(series: &[(Vec<f64>, Vec<f64>)], log_y: bool, width: u32, height: u32) -> Result<image::RgbImage> {
    if width < 16 || height < 16 {
        return Err(invalid("plot canvas too small"));
    }
    let tf = |y: f64| if log_y { y.max(LOG_FLOOR).log10() } else { y };
    let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
    let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
    for (xs, ys) in series {
        for (&x, &y) in xs.iter().zip(ys) {
            let y = tf(y);
            if x.is_finite() && y.is_finite() {
                xr = (xr.0.min(x), xr.1.max(x));
                yr = (yr.0.min(y), yr.1.max(y));
            }
        }
    }
    if !(xr.1 > xr.0) {
        xr = (xr.0.min(0.0), xr.0.max(0.0) + 1.0);
    }
    if !(yr.1 > yr.0) {
        yr = (yr.0 - 0.5, yr.0 + 0.5);
    }
    let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
    let m = 8.0;
    let (w, h) = (width as f64 - 2.0 * m, height as f64 - 2.0 * m);
    for x in m as u32..width - m as u32 {
        img.put_pixel(x, m as u32, image::Rgb([0, 0, 0]));
        img.put_pixel(x, height - m as u32, image::Rgb([0, 0, 0]));
    }
    for y in m as u32..=height - m as u32 {
        img.put_pixel(m as u32, y, image::Rgb([0, 0, 0]));
        img.put_pixel(width - m as u32, y, image::Rgb([0, 0, 0]));
    }
    let to_px = |x: f64, y: f64| (m + w * (x - xr.0) / (xr.1 - xr.0), m + h * (1.0 - (tf(y) - yr.0) / (yr.1 - yr.0)));
    for (k, (xs, ys)) in series.iter().enumerate() {
        let color = image::Rgb(PALETTE[k % PALETTE.len()]);
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| to_px(x, y))
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let (px, py) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                let (px, py) = (px.round() as i64, py.round() as i64);
                if px >= 0 && py >= 0 && (px as u32) < width && (py as u32) < height {
                    img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
    }
    Ok(img)
}

/// Encodes a plot as PNG and writes it atomically.
pub fn write_plot(img: &image::RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Histogram-matches each reconstruction band to its ground truth, leaves the
/// measurements as they are, and compares the five ensembles.
pub fn compare_reconstructions(
    gt: &[FloatRaster<f64>],
    meas: &[FloatRaster<f64>],
    recons: &[Reconstruction],
) -> Result<PsdComparison> {
    if recons.len() != gt.len() {
        return Err(shape_err("compare_reconstructions", gt.len(), recons.len()));
    }
    let matched = |pick: fn(&Reconstruction) -> &FloatRaster<f64>| -> Result<Vec<FloatRaster<f64>>> {
        recons
            .par_iter()
            .zip(gt)
            .map(|(r, f)| histogram_match(pick(r), f))
            .collect()
    };
    let lf = matched(|r| &r.f_lf)?;
    let hf = matched(|r| &r.f_hf)?;
    let hat = matched(|r| &r.f_hat)?;
    compare_psd([gt, meas, &lf, &hf, &hat])
}

/// Dot test of every stage on the simulated measurement of `pattern`.
/// Network outputs are median-baselined first; the test itself is scale-free.
pub fn dot_test_stages(ck: &PipelineCheckpoint, pattern: &DotPattern) -> Result<Vec<RestestRow>> {
    let truth = pattern.raster(ck.forward.pitch)?;
    let g = simulate(&truth, &ck.forward)?;
    let r = ck.reconstruct(&g)?;
    let stages = [
        ("ground_truth", truth),
        ("measurement", g),
        ("f_lf", remove_baseline(&r.f_lf)?),
        ("f_hf", remove_baseline(&r.f_hf)?),
        ("f_hat", remove_baseline(&r.f_hat)?),
    ];
    stages
        .into_iter()
        .map(|(stage, img)| {
            Ok(RestestRow {
                stage: stage.to_string(),
                result: resolve_test(&img, pattern)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{dli_forward, ForwardConfig};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn default_pattern_layout() {
        let (p, r) = make_dot_pattern(64, 5, 2, 1e-6).unwrap();
        let nz: Vec<usize> = (0..r.len()).filter(|&i| r.data()[i] != 0.0).collect();
        assert_eq!(nz.len(), 2);
        assert_eq!(nz[1] - nz[0], 5);
        assert_eq!(r.data().iter().sum::<f64>(), 2.0);
        assert_eq!(p.row, 32);
        assert!(make_dot_pattern(64, 1, 2, 1e-6).is_err());
        assert!(make_dot_pattern(64, 5, 1, 1e-6).is_err());
        assert!(make_dot_pattern(16, 5, 4, 1e-6).is_err());
        assert!(make_dot_pattern(64, 5, 12, 1e-6).is_ok());
    }

    #[test]
    fn ground_truth_resolves_and_constant_does_not() {
        for d in 2..10 {
            let (p, r) = make_dot_pattern(64, d, 3, 1.0).unwrap();
            let res = resolve_test(&r, &p).unwrap();
            assert!(res.resolved && res.dip_ratio == 0.0, "D={d}");
        }
        let (p, _) = make_dot_pattern(64, 5, 2, 1.0).unwrap();
        let flat = FloatRaster::filled(64, 64, 1.0, 0.7).unwrap();
        let res = resolve_test(&flat, &p).unwrap();
        assert!(!res.resolved && res.diagnostic.is_some());
        assert!(resolve_test(&FloatRaster::zeros(32, 32, 1.0).unwrap(), &p).is_err());
    }

    /// Continuous-kernel oracle: sum of sinc²(x/b) bumps at the dot positions.
    fn sinc2_profile(x: f64, dots: &[f64], b: f64) -> f64 {
        let sinc = |t: f64| if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
        dots.iter().map(|&d| sinc((x - d) / b).powi(2)).sum()
    }

    #[test]
    fn blurred_pattern_is_unresolved() {
        let b = 7.0;
        let dots = [0.0, 5.0];
        let mid = sinc2_profile(2.5, &dots, b);
        let peak = (-20..=40)
            .map(|i| sinc2_profile(i as f64 * 0.05, &dots, b))
            .fold(0.0, f64::max);
        assert!(mid / peak >= 0.95, "oracle {}", mid / peak);

        let cfg = ForwardConfig::dli(64, b, 1e-6).unwrap();
        let (p, r) = make_dot_pattern(64, 5, 2, 1e-6).unwrap();
        let g = dli_forward(&r, &cfg).unwrap();
        let res = resolve_test(&g, &p).unwrap();
        assert!(!res.resolved && res.dip_ratio >= 0.95, "{}", res.dip_ratio);
    }

    #[test]
    fn psd_distances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let imgs: Vec<FloatRaster<f64>> = (0..3)
            .map(|_| FloatRaster::from_fn(16, 16, 1.0, |_, _| rng.random_range(0.0..1.0)).unwrap())
            .collect();
        let cmp = compare_psd([&imgs, &imgs, &imgs, &imgs, &imgs]).unwrap();
        assert!(cmp.distances.iter().all(|d| d.iter().all(|&x| x == 0.0)));
        assert_eq!(cmp.to_csv().lines().next().unwrap(), "freq,gt,meas,lf,hf,shat");
        assert_eq!(cmp.to_csv().lines().count(), 1 + 8);
        let scaled: Vec<_> = imgs.iter().map(|i| i.map(|v| 10.0 * v).unwrap()).collect();
        let cmp = compare_psd([&imgs, &scaled, &imgs, &imgs, &imgs]).unwrap();
        for b in 0..3 {
            assert!((cmp.distance("meas", b).unwrap() - 2.0).abs() < 1e-9);
        }
        assert!(compare_psd([&imgs, &imgs[..2], &imgs, &imgs, &imgs]).is_err());
        assert_eq!(band_of(0.0), 0);
        assert_eq!(band_of(0.5 * std::f64::consts::SQRT_2), 2);
    }

    #[test]
    fn baseline_and_csv() {
        let img = FloatRaster::from_fn(4, 4, 1.0, |r, c| (r * 4 + c) as f64).unwrap();
        let b = remove_baseline(&img).unwrap();
        assert_eq!(b.get(0, 0), -7.5);
        let (p, r) = make_dot_pattern(32, 4, 2, 1.0).unwrap();
        let rows = vec![RestestRow {
            stage: "gt".into(),
            result: resolve_test(&r, &p).unwrap(),
        }];
        let csv = restest_csv(&p, &rows);
        assert!(csv.ends_with("gt,32,4,2,16,14 18,0,true\n"), "{csv}");
        assert_eq!(profiles_csv(&rows).lines().count(), 33);
    }

    #[test]
    fn plot_renders() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 10f64.powf(-x)).collect();
        let img = plot_lines(&[(xs.clone(), ys), (xs, vec![1.0; 10])], true, 200, 120).unwrap();
        assert_eq!(img.dimensions(), (200, 120));
        assert!(img.pixels().any(|p| p.0 == PALETTE[1]));
        let dir = tempfile::tempdir().unwrap();
        write_plot(&img, dir.path().join("p.png")).unwrap();
        assert!(image::open(dir.path().join("p.png")).is_ok());
    }

    proptest! {
        #[test]
        fn deepening_the_valley_keeps_resolution(depth in 0.0f64..1.0, extra in 0.0f64..0.5, width in 0.6f64..1.6) {
            let (p, _) = make_dot_pattern(32, 6, 2, 1.0).unwrap();
            let build = |valley: f64| {
                FloatRaster::from_fn(32, 32, 1.0, |r, c| {
                    if r != p.row { return 0.0; }
                    let x = c as f64;
                    let bumps: f64 = p.cols.iter().map(|&d| (-(x - d as f64).powi(2) / (2.0 * width * width)).exp()).sum();
                    if c == (p.cols[0] + p.cols[1]) / 2 { bumps * (1.0 - valley) } else { bumps }
                }).unwrap()
            };
            let a = resolve_test(&build(depth), &p).unwrap();
            let b = resolve_test(&build((depth + extra).min(1.0)), &p).unwrap();
            prop_assert!(b.dip_ratio <= a.dip_ratio + 1e-12);
            prop_assert!(!a.resolved || b.resolved);
        }
    }
}
