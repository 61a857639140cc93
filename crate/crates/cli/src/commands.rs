use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use freqsynth::eval::{self, compare_reconstructions, dot_test_stages, plot_lines, write_plot, DotPattern};
use freqsynth::forward::{simulate, ForwardKind};
use freqsynth::manifest::{format_indices, parse_indices, Manifest};
use freqsynth::metrics::{histogram_match, MetricReport};
use freqsynth::pipeline::{train_pipeline, Dataset, PipelineCheckpoint, Reconstruction};
use freqsynth::raster::{read_png_luminance, read_raster, write_atomic, write_raster, LUMA_WEIGHTS};
use freqsynth::spectral::{ensemble_psd, premodulate, radial_slope_fit, DEFAULT_FIT_RANGE};
use freqsynth::synth::{object_ensemble, ObjectSpec};
use freqsynth::{Error, Raster};

use crate::config::RunConfig;

/// Failure classes mapped onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Missing(_)
            | Error::Invalid(_)
            | Error::Shape { .. }
            | Error::Sampling { .. }
            | Error::Format(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type Res<T = ()> = Result<T, CliError>;

pub const DATASET_DIR: &str = "dataset";
pub const MEASUREMENT_DIR: &str = "measurements";
pub const PREMOD_DIR: &str = "premod";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const RECON_DIR: &str = "recon";
pub const EVAL_DIR: &str = "eval";
pub const PSD_DIR: &str = "psd";
pub const RESTEST_DIR: &str = "restest";
pub const MANIFEST: &str = "manifest.txt";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
fn prepare_dir(dir: &Path, force: bool) -> Res {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(CliError::Validation(format!(
                    "output directory {} is not empty; pass --force to replace it",
                    dir.display()
                )));
            }
            std::fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn require_dir(dir: &Path) -> Res<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(CliError::Validation(format!("missing prerequisite: {}", path.display())));
    }
    Ok(Manifest::read(path)?)
}

fn series_name(prefix: &str, i: usize) -> String {
    format!("{prefix}_{i:04}.fras")
}

fn write_series(dir: &Path, prefix: &str, imgs: &[(usize, &Raster)]) -> Res {
    for (i, img) in imgs {
        write_raster(img, dir.join(series_name(prefix, *i)))?;
    }
    Ok(())
}

fn read_series(dir: &Path, prefix: &str, idx: &[usize]) -> Res<Vec<Raster>> {
    idx.par_iter()
        .map(|&i| read_raster::<f64>(dir.join(series_name(prefix, i))).map_err(CliError::from))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Res {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn check_kind(m: &Manifest, cfg: &RunConfig, what: &str) -> Res {
    let kind: ForwardKind = m.parsed("kind")?;
    let n: usize = m.parsed("n")?;
    if kind != cfg.kind || n != cfg.n {
        return Err(CliError::Validation(format!(
            "{what} was built for kind={} n={n}, config has kind={} n={}",
            kind.as_str(),
            cfg.kind.as_str(),
            cfg.n
        )));
    }
    Ok(())
}

fn all(count: usize) -> Vec<usize> {
    (0..count).collect()
}

fn check_grid(imgs: &[Raster], n: usize, what: &str) -> Res {
    for (i, img) in imgs.iter().enumerate() {
        if img.shape() != (n, n) {
            let (h, w) = img.shape();
            return Err(CliError::Validation(format!("{what} {i} is {h}x{w}; every raster must be {n}x{n}")));
        }
    }
    Ok(())
}

fn load_objects(cfg: &RunConfig) -> Res<Vec<Raster>> {
    let dir = cfg.out.join(DATASET_DIR);
    let m = require_dir(&dir)?;
    check_kind(&m, cfg, "dataset")?;
    let objects = read_series(&dir, "object", &all(m.parsed("count")?))?;
    check_grid(&objects, cfg.n, "object")?;
    Ok(objects)
}

fn load_dataset(cfg: &RunConfig) -> Res<Dataset> {
    let objects = load_objects(cfg)?;
    let dir = cfg.out.join(MEASUREMENT_DIR);
    let m = require_dir(&dir)?;
    check_kind(&m, cfg, "measurement set")?;
    let meas = read_series(&dir, "meas", &all(m.parsed("count")?))?;
    check_grid(&meas, cfg.n, "measurement")?;
    Ok(Dataset::new(objects, meas)?)
}

/// Ensemble radial PSD slope, when the images carry enough AC power to fit.
fn slope_of(imgs: &[Raster]) -> Option<f64> {
    let (lo, hi) = DEFAULT_FIT_RANGE;
    radial_slope_fit(&ensemble_psd(imgs).ok()?, lo, hi).ok()
}

pub fn gen_dataset(cfg: &RunConfig, force: bool) -> Res {
    let dir = cfg.out.join(DATASET_DIR);
    let mut m = Manifest::new();
    let objects = match &cfg.png_dir {
        Some(src) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(src)
                .map_err(|e| CliError::Validation(format!("missing prerequisite: {}: {e}", src.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(CliError::Validation(format!("no .png files in {}", src.display())));
            }
            let top = match cfg.kind {
                ForwardKind::Dli => 1.0,
                ForwardKind::Qpr => cfg.phi_max,
            };
            let mut out = Vec::with_capacity(files.len());
            for f in &files {
                let img = read_png_luminance(f, cfg.pitch)?;
                if img.shape() != (cfg.n, cfg.n) {
                    return Err(CliError::Validation(format!(
                        "{} is {}x{}, expected {n}x{n}",
                        f.display(),
                        img.width(),
                        img.height(),
                        n = cfg.n
                    )));
                }
                out.push(img.map(|v| v * top)?);
            }
            m.set("source", "png");
            m.set("png_dir", src.display());
            m.set(
                "luma_weights",
                LUMA_WEIGHTS.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            );
            out
        }
        None => {
            let spec = ObjectSpec {
                kind: cfg.kind,
                n: cfg.n,
                pitch: cfg.pitch,
                phi_max: cfg.phi_max,
            };
            m.set("source", "synthetic");
            m.set("spectrum", "magnitude r^-1, random Hermitian phases");
            object_ensemble(&spec, cfg.count, cfg.seed)?
        }
    };
    prepare_dir(&dir, force)?;
    m.set("kind", cfg.kind.as_str());
    m.set("n", cfg.n);
    m.set("pitch", cfg.pitch);
    m.set("count", objects.len());
    m.set("seed", cfg.seed);
    match cfg.kind {
        ForwardKind::Dli => m.set("value_range", "0,1"),
        ForwardKind::Qpr => m.set("phi_max", cfg.phi_max),
    }
    let indexed: Vec<(usize, &Raster)> = objects.iter().enumerate().collect();
    write_series(&dir, "object", &indexed)?;
    m.write(dir.join(MANIFEST))?;
    println!("wrote {} objects to {}", objects.len(), dir.display());
    if let Some(slope) = slope_of(&objects) {
        println!("radial PSD slope {slope:.3}");
    }
    Ok(())
}

pub fn simulate_cmd(cfg: &RunConfig, force: bool) -> Res {
    let objects = load_objects(cfg)?;
    let fwd = cfg.forward()?;
    let dir = cfg.out.join(MEASUREMENT_DIR);
    let meas: Vec<Raster> = objects
        .par_iter()
        .map(|f| simulate(f, &fwd).map_err(CliError::from))
        .collect::<Res<_>>()?;
    prepare_dir(&dir, force)?;
    let indexed: Vec<(usize, &Raster)> = meas.iter().enumerate().collect();
    write_series(&dir, "meas", &indexed)?;
    let mut m = Manifest::new();
    m.set("kind", cfg.kind.as_str());
    m.set("n", cfg.n);
    match cfg.kind {
        ForwardKind::Dli => m.set("b", fwd.b),
        ForwardKind::Qpr => {
            m.set("lambda", fwd.lambda);
            m.set("z", fwd.z);
            m.set("normalization", "(I - I_background) / mean(I_background)");
        }
    }
    m.set("pitch", fwd.pitch);
    m.set("count", meas.len());
    m.set("objects", Path::new("..").join(DATASET_DIR).display());
    for i in 0..meas.len() {
        m.set(&series_name("meas", i), series_name("object", i));
    }
    m.write(dir.join(MANIFEST))?;
    println!("wrote {} measurements to {}", meas.len(), dir.display());
    Ok(())
}

pub fn premod(cfg: &RunConfig, force: bool) -> Res {
    let objects = load_objects(cfg)?;
    let dir = cfg.out.join(PREMOD_DIR);
    let out: Vec<Raster> = objects
        .par_iter()
        .map(|f| premodulate(f, cfg.p).map_err(CliError::from))
        .collect::<Res<_>>()?;
    prepare_dir(&dir, force)?;
    let indexed: Vec<(usize, &Raster)> = out.iter().enumerate().collect();
    write_series(&dir, "premod", &indexed)?;
    let mut m = Manifest::new();
    m.set("kind", cfg.kind.as_str());
    m.set("n", cfg.n);
    m.set("p", cfg.p);
    m.set("count", out.len());
    m.write(dir.join(MANIFEST))?;
    if let (Some(before), Some(after)) = (slope_of(&objects), slope_of(&out)) {
        println!("radial PSD slope {before:.3} -> {after:.3} (p = {})", cfg.p);
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, force: bool) -> Res {
    let data = load_dataset(cfg)?;
    let dir = cfg.out.join(CHECKPOINT_DIR);
    if dir.exists() && std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?.next().is_some() && !force {
        return Err(CliError::Validation(format!(
            "output directory {} is not empty; pass --force to replace it",
            dir.display()
        )));
    }
    let ck = train_pipeline(&data, &cfg.forward()?, cfg.p, &cfg.train(), cfg.seed)?;
    prepare_dir(&dir, force)?;
    ck.save(&dir)?;
    for (name, c) in ["DNN-L", "DNN-H", "DNN-S"].iter().zip(&ck.curves) {
        if let Some(&(e, t, v)) = c.rows.last() {
            println!("{name}: epoch {e} train NPCC {t:.4} validation NPCC {v:.4}");
        }
    }
    println!("checkpoint written to {}", dir.display());
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig) -> Res<PipelineCheckpoint> {
    let dir = cfg.out.join(CHECKPOINT_DIR);
    require_dir(&dir)?;
    let ck = PipelineCheckpoint::load(&dir)?;
    if ck.forward.kind != cfg.kind || ck.n() != cfg.n {
        return Err(CliError::Validation(format!(
            "checkpoint was trained for kind={} n={}, config has kind={} n={}",
            ck.forward.kind.as_str(),
            ck.n(),
            cfg.kind.as_str(),
            cfg.n
        )));
    }
    Ok(ck)
}

const BANDS: [&str; 3] = ["lf", "hf", "hat"];

pub fn reconstruct(cfg: &RunConfig, force: bool) -> Res {
    let ck = load_checkpoint(cfg)?;
    let mdir = cfg.out.join(MEASUREMENT_DIR);
    require_dir(&mdir)?;
    let idx = ck.split.val.clone();
    let gs = read_series(&mdir, "meas", &idx)?;
    let recons: Vec<Reconstruction> = gs
        .par_iter()
        .map(|g| ck.reconstruct(g).map_err(CliError::from))
        .collect::<Res<_>>()?;
    let dir = cfg.out.join(RECON_DIR);
    prepare_dir(&dir, force)?;
    for (&i, r) in idx.iter().zip(&recons) {
        for (band, img) in BANDS.iter().zip([&r.f_lf, &r.f_hf, &r.f_hat]) {
            write_raster(img, dir.join(series_name(band, i)))?;
        }
    }
    let mut m = Manifest::new();
    m.set("kind", cfg.kind.as_str());
    m.set("n", cfg.n);
    m.set("indices", format_indices(&idx));
    m.set("checkpoint", Path::new("..").join(CHECKPOINT_DIR).display());
    m.write(dir.join(MANIFEST))?;
    println!("reconstructed {} held-out measurements into {}", idx.len(), dir.display());
    Ok(())
}

fn load_recons(cfg: &RunConfig) -> Res<(Vec<usize>, Vec<Reconstruction>)> {
    let dir = cfg.out.join(RECON_DIR);
    let m = require_dir(&dir)?;
    check_kind(&m, cfg, "reconstruction set")?;
    let idx = parse_indices(m.require("indices")?)?;
    let mut bands = Vec::new();
    for band in BANDS {
        bands.push(read_series(&dir, band, &idx)?);
    }
    let hat = bands.pop().unwrap();
    let hf = bands.pop().unwrap();
    let lf = bands.pop().unwrap();
    let recons = lf
        .into_iter()
        .zip(hf)
        .zip(hat)
        .map(|((f_lf, f_hf), f_hat)| Reconstruction { f_lf, f_hf, f_hat })
        .collect();
    Ok((idx, recons))
}

pub fn evaluate(cfg: &RunConfig, force: bool) -> Res {
    let (idx, recons) = load_recons(cfg)?;
    let ddir = cfg.out.join(DATASET_DIR);
    require_dir(&ddir)?;
    let gt = read_series(&ddir, "object", &idx)?;
    let dir = cfg.out.join(EVAL_DIR);
    prepare_dir(&dir, force)?;
    type Pick = fn(&Reconstruction) -> &Raster;
    let tables: [(&str, Pick, bool); 4] = [
        ("metrics.csv", |r| &r.f_hat, true),
        ("metrics_raw.csv", |r| &r.f_hat, false),
        ("metrics_lf.csv", |r| &r.f_lf, true),
        ("metrics_hf.csv", |r| &r.f_hf, true),
    ];
    for (file, pick, matched) in tables {
        let mut report = MetricReport::default();
        for ((&i, r), f) in idx.iter().zip(&recons).zip(&gt) {
            let img = if matched { histogram_match(pick(r), f)? } else { pick(r).clone() };
            report.push(format!("img_{i:04}"), &img, f)?;
        }
        write_text(&dir.join(file), &report.to_csv())?;
        if file == "metrics.csv" {
            let mean = report.mean();
            println!(
                "mean over {} images: NPCC {:.4} PSNR {:.2} dB SSIM {:.4}",
                idx.len(),
                mean.npcc,
                mean.psnr_db,
                mean.ssim
            );
        }
    }
    println!("metrics written to {}", dir.display());
    Ok(())
}

pub fn psd(cfg: &RunConfig, force: bool) -> Res {
    let (idx, recons) = load_recons(cfg)?;
    let ddir = cfg.out.join(DATASET_DIR);
    let mdir = cfg.out.join(MEASUREMENT_DIR);
    require_dir(&ddir)?;
    require_dir(&mdir)?;
    let gt = read_series(&ddir, "object", &idx)?;
    let meas = read_series(&mdir, "meas", &idx)?;
    let cmp = compare_reconstructions(&gt, &meas, &recons)?;
    let dir = cfg.out.join(PSD_DIR);
    prepare_dir(&dir, force)?;
    write_text(&dir.join("psd_compare.csv"), &cmp.to_csv())?;
    write_text(&dir.join("psd_summary.csv"), &cmp.summary_csv())?;
    let series: Vec<(Vec<f64>, Vec<f64>)> = cmp
        .profiles
        .iter()
        .map(|p| (cmp.freqs[1..].to_vec(), p[1..].to_vec()))
        .collect();
    let size = cfg.plot_size;
    write_plot(&plot_lines(&series, true, size, size * 3 / 4)?, dir.join("psd_compare.png"))?;
    let mut s = String::new();
    for (name, d) in eval::ENSEMBLE_NAMES.iter().zip(&cmp.distances).skip(1) {
        let _ = write!(s, " {name}={:.3}", d[2]);
    }
    println!("top-third log10 PSD distance to ground truth:{s}");
    Ok(())
}

pub fn restest(cfg: &RunConfig, force: bool) -> Res {
    let ck = load_checkpoint(cfg)?;
    let pattern = DotPattern::new(cfg.n, cfg.dot_spacing, cfg.dot_count)?;
    let rows = dot_test_stages(&ck, &pattern)?;
    let dir = cfg.out.join(RESTEST_DIR);
    prepare_dir(&dir, force)?;
    write_text(&dir.join("restest.csv"), &eval::restest_csv(&pattern, &rows))?;
    write_text(&dir.join("restest_profiles.csv"), &eval::profiles_csv(&rows))?;
    let xs: Vec<f64> = (0..cfg.n).map(|i| i as f64).collect();
    let series: Vec<(Vec<f64>, Vec<f64>)> = rows
        .iter()
        .map(|r| {
            let peak = r.result.profile.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
            (xs.clone(), r.result.profile.iter().map(|v| v / peak).collect())
        })
        .collect();
    let size = cfg.plot_size;
    write_plot(&plot_lines(&series, false, size, size * 3 / 4)?, dir.join("restest.png"))?;
    for r in &rows {
        println!(
            "{:<13} dip_ratio {:.4} {}",
            r.stage,
            r.result.dip_ratio,
            if r.result.resolved { "resolved" } else { "unresolved" }
        );
    }
    Ok(())
}
