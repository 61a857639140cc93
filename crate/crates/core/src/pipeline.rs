//! Three-network split-band training and inference.
//!
//! DNN-L learns `g -> f`, DNN-H learns `g -> premodulate(f, p)`, and DNN-S
//! maps `f̂_LF` to a correction whose sum with `f̂_HF` is scored against `f`.
//! All three are trained with the NPCC loss.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, shape_err, Error, Result};
use crate::forward::{ForwardConfig, ForwardKind};
use crate::learners::{adam_step, load_weights, save_weights, AdamConfig, AdamState, MicroUNet, MicroUNetConfig, Tensor};
use crate::manifest::{format_indices, parse_indices, Manifest};
use crate::metrics::npcc_slice;
use crate::raster::io::write_atomic;
use crate::raster::FloatRaster;
use crate::spectral::premodulate;

/// Objects `f` paired with their measurements `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub objects: Vec<FloatRaster<f64>>,
    pub measurements: Vec<FloatRaster<f64>>,
}

impl Dataset {
    pub fn new(objects: Vec<FloatRaster<f64>>, measurements: Vec<FloatRaster<f64>>) -> Result<Self> {
        if objects.len() != measurements.len() {
            return Err(shape_err("dataset pairs", objects.len(), measurements.len()));
        }
        if let Some(first) = objects.first() {
            let n = first.require_square("dataset object")?;
            for (f, g) in objects.iter().zip(&measurements) {
                if f.shape() != (n, n) || g.shape() != (n, n) {
                    return Err(shape_err("dataset image", (n, n), if f.shape() != (n, n) { f.shape() } else { g.shape() }));
                }
            }
        }
        Ok(Self { objects, measurements })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn n(&self) -> Option<usize> {
        self.objects.first().map(|f| f.height())
    }
}

/// Disjoint train/validation index sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Holds out a tenth of the images (at least one).
pub fn split_dataset(count: usize, seed: u64) -> Result<Split> {
    if count < 2 {
        return Err(invalid(format!("training needs at least 2 images, got {count}")));
    }
    let n_val = ((count as f64 / 10.0).round() as usize).max(1);
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut rng);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, val })
}

const SPLIT_STREAM: u64 = 11;
const SHUFFLE_STREAM: u64 = 12;
const STAGE1_SALT: u64 = 1;
const STAGE2_SALT: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Doubles every channel width.
    pub wide: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 10,
            adam: AdamConfig::default(),
            wide: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(invalid("epochs and batch size must be positive"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        Ok(())
    }

    pub fn network(&self, n: usize) -> MicroUNetConfig {
        let cfg = MicroUNetConfig::new(n);
        if self.wide {
            cfg.doubled()
        } else {
            cfg
        }
    }
}

/// Per-epoch mean training and validation NPCC.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<(usize, f64, f64)>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_npcc,val_npcc\n");
        for (e, t, v) in &self.rows {
            let _ = writeln!(s, "{e},{t},{v}");
        }
        s
    }

    pub fn train(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.1).collect()
    }

    pub fn last_val(&self) -> Option<f64> {
        self.rows.last().map(|r| r.2)
    }
}

/// Zero-mean, unit-deviation copy of `g` at network precision.
pub fn standardize(g: &FloatRaster<f64>) -> Vec<f32> {
    let n = g.len() as f64;
    let mean = g.data().iter().sum::<f64>() / n;
    let var = g.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    g.data().iter().map(|v| ((v - mean) / sd) as f32).collect()
}

fn to_f32(img: &FloatRaster<f64>) -> Vec<f32> {
    img.data().iter().map(|&v| v as f32).collect()
}

fn to_raster(v: &[f32], like: &FloatRaster<f64>) -> Result<FloatRaster<f64>> {
    like.with_data(v.iter().map(|&x| x as f64).collect())
}

struct Samples<'a> {
    inputs: &'a [Vec<f32>],
    offsets: Option<&'a [Vec<f32>]>,
    targets: &'a [Vec<f32>],
}

impl Samples<'_> {
    fn offset(&self, i: usize) -> Option<&[f32]> {
        self.offsets.map(|o| o[i].as_slice())
    }
}

fn validation_npcc(net: &MicroUNet<f32>, val: &Samples<'_>) -> Result<f64> {
    let losses = (0..val.inputs.len())
        .into_par_iter()
        .map(|i| {
            let mut y = net.predict(&val.inputs[i])?;
            if let Some(off) = val.offset(i) {
                y.iter_mut().zip(off).for_each(|(a, b)| *a += b);
            }
            npcc_slice(&y, &val.targets[i]).map(|l| l as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn train_network(
    name: &str,
    n: usize,
    train: &Samples<'_>,
    val: &Samples<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(MicroUNet<f32>, LossCurve)> {
    let mut net = MicroUNet::<f32>::new(cfg.network(n), seed)?;
    let mut state = AdamState::new(net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.inputs.len()).collect();
    let mut curve = LossCurve::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for (step, batch) in order.chunks(cfg.batch).enumerate() {
            let diverged = |detail: String| Error::Diverged {
                network: name.to_string(),
                epoch,
                step,
                detail,
            };
            let results: Vec<Result<(f32, Vec<Tensor<f32>>)>> = batch
                .par_iter()
                .map(|&i| {
                    net.npcc_loss_grad(&train.inputs[i], train.offset(i), &train.targets[i])
                        .map(|(l, g)| (l, g.into_params()))
                })
                .collect();
            // Fixed-order accumulation keeps the sum independent of scheduling.
            let mut grads = net.params().zeros_like();
            for r in results {
                let (loss, g) = r.map_err(|e| diverged(e.to_string()))?;
                if !loss.is_finite() {
                    return Err(diverged(format!("loss is {loss}")));
                }
                total += loss as f64;
                for (a, b) in grads.iter_mut().zip(&g) {
                    a.add_assign(b)?;
                }
            }
            let scale = 1.0 / batch.len() as f32;
            grads.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= scale));
            adam_step(net.params_mut(), &grads, &mut state, &cfg.adam).map_err(|e| match e {
                Error::NonFiniteGradient { layer } => diverged(format!("non-finite gradient in {layer}")),
                other => other,
            })?;
        }
        let train_npcc = total / train.inputs.len() as f64;
        let val_npcc = validation_npcc(&net, val)?;
        curve.rows.push((epoch, train_npcc, val_npcc));
    }
    Ok((net, curve))
}

fn gather(imgs: &[FloatRaster<f64>], idx: &[usize], f: impl Fn(&FloatRaster<f64>) -> Result<Vec<f32>> + Sync) -> Result<Vec<Vec<f32>>> {
    idx.par_iter().map(|&i| f(&imgs[i])).collect()
}

fn check_split(data: &Dataset, split: &Split) -> Result<usize> {
    let n = data.n().ok_or_else(|| invalid("empty dataset"))?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(invalid("train and validation splits must both be non-empty"));
    }
    if let Some(&i) = split.train.iter().chain(&split.val).find(|&&i| i >= data.len()) {
        return Err(invalid(format!("split index {i} out of range for {} images", data.len())));
    }
    if split.train.iter().any(|i| split.val.binary_search(i).is_ok()) {
        return Err(invalid("train and validation splits overlap"));
    }
    Ok(n)
}

/// Trained low- and high-band reconstructors.
#[derive(Clone, Debug)]
pub struct Stage1 {
    pub l: MicroUNet<f32>,
    pub h: MicroUNet<f32>,
    pub curve_l: LossCurve,
    pub curve_h: LossCurve,
}

/// Trains DNN-L and DNN-H with the same initialization and shuffling seed,
/// so `p = 0` yields identical networks.
pub fn train_stage1(data: &Dataset, split: &Split, p: f64, cfg: &TrainConfig, seed: u64) -> Result<Stage1> {
    cfg.validate()?;
    let n = check_split(data, split)?;
    if !(p >= 0.0 && p.is_finite()) {
        return Err(invalid(format!("modulation exponent must be >= 0, got {p}")));
    }
    let std_in = |g: &FloatRaster<f64>| Ok(standardize(g));
    let plain = |f: &FloatRaster<f64>| Ok(to_f32(f));
    let modulated = |f: &FloatRaster<f64>| premodulate(f, p).map(|m| to_f32(&m));
    let (tr_in, va_in) = (gather(&data.measurements, &split.train, std_in)?, gather(&data.measurements, &split.val, std_in)?);
    let run = |targets: &dyn Fn(&FloatRaster<f64>) -> Result<Vec<f32>>, name: &str| -> Result<(MicroUNet<f32>, LossCurve)> {
        let tr_t: Vec<Vec<f32>> = split.train.iter().map(|&i| targets(&data.objects[i])).collect::<Result<_>>()?;
        let va_t: Vec<Vec<f32>> = split.val.iter().map(|&i| targets(&data.objects[i])).collect::<Result<_>>()?;
        let train = Samples {
            inputs: &tr_in,
            offsets: None,
            targets: &tr_t,
        };
        let val = Samples {
            inputs: &va_in,
            offsets: None,
            targets: &va_t,
        };
        train_network(name, n, &train, &val, cfg, seed.wrapping_add(STAGE1_SALT))
    };
    let (l, h) = rayon::join(|| run(&plain, "DNN-L"), || run(&modulated, "DNN-H"));
    let ((l, curve_l), (h, curve_h)) = (l?, h?);
    Ok(Stage1 { l, h, curve_l, curve_h })
}

/// Low- and high-band outputs plus their synthesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub f_lf: FloatRaster<f64>,
    pub f_hf: FloatRaster<f64>,
    pub f_hat: FloatRaster<f64>,
}

fn band_outputs(l: &MicroUNet<f32>, h: &MicroUNet<f32>, g: &FloatRaster<f64>) -> Result<(Vec<f32>, Vec<f32>)> {
    let x = standardize(g);
    Ok((l.predict(&x)?, h.predict(&x)?))
}

/// Trains DNN-S on the stage-1 training split; `l` and `h` are only read.
pub fn train_stage2(
    data: &Dataset,
    split: &Split,
    l: &MicroUNet<f32>,
    h: &MicroUNet<f32>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(MicroUNet<f32>, LossCurve)> {
    cfg.validate()?;
    let n = check_split(data, split)?;
    if l.config().n != n || h.config().n != n {
        return Err(shape_err("stage-1 network size", (l.config().n, h.config().n), n));
    }
    let bands = |idx: &[usize]| -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
        let pairs: Vec<(Vec<f32>, Vec<f32>)> = idx
            .par_iter()
            .map(|&i| band_outputs(l, h, &data.measurements[i]))
            .collect::<Result<_>>()?;
        Ok(pairs.into_iter().unzip())
    };
    let (tr_lf, tr_hf) = bands(&split.train)?;
    let (va_lf, va_hf) = bands(&split.val)?;
    let tr_t: Vec<Vec<f32>> = split.train.iter().map(|&i| to_f32(&data.objects[i])).collect();
    let va_t: Vec<Vec<f32>> = split.val.iter().map(|&i| to_f32(&data.objects[i])).collect();
    let train = Samples {
        inputs: &tr_lf,
        offsets: Some(&tr_hf),
        targets: &tr_t,
    };
    let val = Samples {
        inputs: &va_lf,
        offsets: Some(&va_hf),
        targets: &va_t,
    };
    train_network("DNN-S", n, &train, &val, cfg, seed.wrapping_add(STAGE2_SALT))
}

/// Everything needed to rerun inference and audit a training run.
#[derive(Clone, Debug)]
pub struct PipelineCheckpoint {
    pub forward: ForwardConfig,
    pub p: f64,
    pub seed: u64,
    pub train: TrainConfig,
    pub split: Split,
    pub l: MicroUNet<f32>,
    pub h: MicroUNet<f32>,
    pub s: MicroUNet<f32>,
    pub curves: [LossCurve; 3],
}

pub const CHECKPOINT_FILES: [&str; 3] = ["L.lswt", "H.lswt", "S.lswt"];
pub const CURVE_FILES: [&str; 3] = ["loss_L.csv", "loss_H.csv", "loss_S.csv"];
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Runs both stages.
pub fn train_pipeline(data: &Dataset, forward: &ForwardConfig, p: f64, cfg: &TrainConfig, seed: u64) -> Result<PipelineCheckpoint> {
    forward.validate()?;
    if data.n() != Some(forward.n) {
        return Err(shape_err("dataset grid vs forward config", data.n(), forward.n));
    }
    let split = split_dataset(data.len(), seed)?;
    let st1 = train_stage1(data, &split, p, cfg, seed)?;
    let (s, curve_s) = train_stage2(data, &split, &st1.l, &st1.h, cfg, seed)?;
    Ok(PipelineCheckpoint {
        forward: *forward,
        p,
        seed,
        train: cfg.clone(),
        split,
        l: st1.l,
        h: st1.h,
        s,
        curves: [st1.curve_l, st1.curve_h, curve_s],
    })
}

impl PipelineCheckpoint {
    pub fn n(&self) -> usize {
        self.forward.n
    }

    /// `f̂ = S(f̂_LF) + f̂_HF` for one measurement.
    pub fn reconstruct(&self, g: &FloatRaster<f64>) -> Result<Reconstruction> {
        let n = self.n();
        if g.shape() != (n, n) {
            return Err(shape_err("reconstruct input", g.shape(), (n, n)));
        }
        let (lf, hf) = band_outputs(&self.l, &self.h, g)?;
        let mut hat = self.s.predict(&lf)?;
        hat.iter_mut().zip(&hf).for_each(|(a, b)| *a += b);
        Ok(Reconstruction {
            f_lf: to_raster(&lf, g)?,
            f_hf: to_raster(&hf, g)?,
            f_hat: to_raster(&hat, g)?,
        })
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        let f = &self.forward;
        m.set("kind", f.kind.as_str());
        m.set("n", f.n);
        match f.kind {
            ForwardKind::Dli => m.set("b", f.b),
            ForwardKind::Qpr => {
                m.set("lambda", f.lambda);
                m.set("z", f.z);
            }
        }
        m.set("pitch", f.pitch);
        m.set("p", self.p);
        m.set("seed", self.seed);
        m.set("epochs", self.train.epochs);
        m.set("batch", self.train.batch);
        m.set("lr", self.train.adam.lr);
        m.set("wide", self.train.wide);
        m.set("param_count", self.l.param_count());
        for (key, curve) in ["epochs_l", "epochs_h", "epochs_s"].iter().zip(&self.curves) {
            m.set(key, curve.rows.len());
        }
        m.set("train_indices", format_indices(&self.split.train));
        m.set("val_indices", format_indices(&self.split.val));
        m
    }

    /// Writes weights, loss curves and manifest into `dir` (created if needed).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for ((file, net), (curve_file, curve)) in CHECKPOINT_FILES
            .iter()
            .zip([&self.l, &self.h, &self.s])
            .zip(CURVE_FILES.iter().zip(&self.curves))
        {
            save_weights(net.params(), dir.join(file))?;
            write_atomic(&dir.join(curve_file), curve.to_csv().as_bytes())?;
        }
        self.manifest().write(dir.join(MANIFEST_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = Manifest::read(dir.join(MANIFEST_FILE))?;
        let kind: ForwardKind = m.parsed("kind")?;
        let n: usize = m.parsed("n")?;
        let pitch: f64 = m.parsed("pitch")?;
        let forward = match kind {
            ForwardKind::Dli => ForwardConfig::dli(n, m.parsed("b")?, pitch)?,
            ForwardKind::Qpr => ForwardConfig::qpr(n, m.parsed("lambda")?, m.parsed("z")?, pitch)?,
        };
        let train = TrainConfig {
            epochs: m.parsed("epochs")?,
            batch: m.parsed("batch")?,
            adam: AdamConfig {
                lr: m.parsed("lr")?,
                ..AdamConfig::default()
            },
            wide: m.parsed("wide")?,
        };
        let seed: u64 = m.parsed("seed")?;
        let mut nets = Vec::with_capacity(3);
        for file in CHECKPOINT_FILES {
            let mut net = MicroUNet::<f32>::new(train.network(n), 0)?;
            load_weights(net.params_mut(), dir.join(file))?;
            nets.push(net);
        }
        let expected: usize = m.parsed("param_count")?;
        if nets[0].param_count() != expected {
            return Err(invalid(format!(
                "checkpoint declares {expected} parameters, architecture has {}",
                nets[0].param_count()
            )));
        }
        let mut curves: [LossCurve; 3] = Default::default();
        for (c, file) in curves.iter_mut().zip(CURVE_FILES) {
            if let Ok(text) = std::fs::read_to_string(dir.join(file)) {
                *c = parse_curve(&text)?;
            }
        }
        let s = nets.pop().unwrap();
        let h = nets.pop().unwrap();
        let l = nets.pop().unwrap();
        Ok(Self {
            forward,
            p: m.parsed("p")?,
            seed,
            train,
            split: Split {
                train: parse_indices(m.require("train_indices")?)?,
                val: parse_indices(m.require("val_indices")?)?,
            },
            l,
            h,
            s,
            curves,
        })
    }
}

fn parse_curve(text: &str) -> Result<LossCurve> {
    let mut curve = LossCurve::default();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || invalid(format!("bad loss-curve row {line:?}"));
        if cols.len() != 3 {
            return Err(bad());
        }
        curve.rows.push((
            cols[0].parse().map_err(|_| bad())?,
            cols[1].parse().map_err(|_| bad())?,
            cols[2].parse().map_err(|_| bad())?,
        ));
    }
    Ok(curve)
}

/// Trailing moving average of width `window` (shorter at the start).
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
