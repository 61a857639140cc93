use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use freqsynth::forward::{ForwardConfig, ForwardKind};
use freqsynth::learners::AdamConfig;
use freqsynth::manifest::Manifest;
use freqsynth::pipeline::TrainConfig;

/// Every recognised key, in the order `print-config` emits them.
pub const KEYS: [&str; 19] = [
    "kind",
    "n",
    "b",
    "lambda",
    "z",
    "pitch",
    "phi_max",
    "p",
    "count",
    "epochs",
    "batch",
    "lr",
    "wide",
    "seed",
    "out",
    "png_dir",
    "dot_spacing",
    "dot_count",
    "plot_size",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kind: ForwardKind,
    pub n: usize,
    pub b: f64,
    pub lambda: f64,
    pub z: f64,
    pub pitch: f64,
    pub phi_max: f64,
    pub p: f64,
    pub count: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub wide: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub png_dir: Option<PathBuf>,
    pub dot_spacing: usize,
    pub dot_count: usize,
    pub plot_size: u32,
}

fn parse<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, String> {
    raw.parse()
        .map_err(|_| format!("config key {key:?}: cannot parse {raw:?}"))
}

impl RunConfig {
    /// Layers `file` (if any) and then `overrides` onto the defaults.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, String> {
        let mut raw = Manifest::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            raw = Manifest::parse(&text).map_err(|e| format!("config {}: {e}", path.display()))?;
        }
        for (k, v) in overrides {
            raw.set(k, v);
        }
        for (k, _) in raw.entries() {
            if !KEYS.contains(&k.as_str()) {
                return Err(format!("unknown config key {k:?}; known keys: {}", KEYS.join(", ")));
            }
        }
        let get = |k: &str| raw.get(k).map(str::trim).filter(|v| !v.is_empty());
        let kind: ForwardKind = match get("kind") {
            Some(v) => v.parse().map_err(|e: freqsynth::Error| e.to_string())?,
            None => ForwardKind::Dli,
        };
        let n: usize = get("n").map_or(Ok(64), |v| parse("n", v))?;
        let default_pitch = match kind {
            ForwardKind::Dli => ForwardConfig::DEFAULT_DLI_PITCH,
            ForwardKind::Qpr => ForwardConfig::default_qpr_pitch(n),
        };
        let default_p = match kind {
            ForwardKind::Dli => 1.5,
            ForwardKind::Qpr => 1.0,
        };
        let f = |k: &str, d: f64| get(k).map_or(Ok(d), |v| parse::<f64>(k, v));
        let u = |k: &str, d: usize| get(k).map_or(Ok(d), |v| parse::<usize>(k, v));
        let cfg = Self {
            kind,
            n,
            b: f("b", ForwardConfig::DEFAULT_B)?,
            lambda: f("lambda", ForwardConfig::DEFAULT_LAMBDA)?,
            z: f("z", ForwardConfig::DEFAULT_Z)?,
            pitch: f("pitch", default_pitch)?,
            phi_max: f("phi_max", std::f64::consts::PI)?,
            p: f("p", default_p)?,
            count: u("count", 200)?,
            epochs: u("epochs", 20)?,
            batch: u("batch", 10)?,
            lr: f("lr", AdamConfig::default().lr)?,
            wide: get("wide").map_or(Ok(false), |v| parse("wide", v))?,
            seed: get("seed").map_or(Ok(7), |v| parse("seed", v))?,
            out: PathBuf::from(get("out").unwrap_or("run")),
            png_dir: get("png_dir").map(PathBuf::from),
            dot_spacing: u("dot_spacing", freqsynth::eval::DEFAULT_DOT_SPACING)?,
            dot_count: u("dot_count", freqsynth::eval::DEFAULT_DOT_COUNT)?,
            plot_size: get("plot_size").map_or(Ok(480), |v| parse("plot_size", v))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.forward().map_err(|e| e.to_string())?;
        self.train().validate().map_err(|e| e.to_string())?;
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return Err(format!("p must be >= 0, got {}", self.p));
        }
        if !(self.phi_max > 0.0 && self.phi_max.is_finite()) {
            return Err(format!("phi_max must be positive, got {}", self.phi_max));
        }
        if self.count == 0 {
            return Err("count must be positive".into());
        }
        freqsynth::learners::MicroUNetConfig::new(self.n)
            .validate()
            .map_err(|e| e.to_string())?;
        freqsynth::eval::DotPattern::new(self.n, self.dot_spacing, self.dot_count).map_err(|e| e.to_string())?;
        if self.plot_size < 64 {
            return Err(format!("plot_size must be >= 64, got {}", self.plot_size));
        }
        Ok(())
    }

    pub fn forward(&self) -> freqsynth::Result<ForwardConfig> {
        match self.kind {
            ForwardKind::Dli => ForwardConfig::dli(self.n, self.b, self.pitch),
            ForwardKind::Qpr => ForwardConfig::qpr(self.n, self.lambda, self.z, self.pitch),
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            wide: self.wide,
        }
    }

    /// Fully expanded `key = value` text; feeding it back reproduces `self`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let png = self.png_dir.as_ref().map_or(String::new(), |p| p.display().to_string());
        let vals: [String; 19] = [
            self.kind.as_str().to_string(),
            self.n.to_string(),
            self.b.to_string(),
            self.lambda.to_string(),
            self.z.to_string(),
            self.pitch.to_string(),
            self.phi_max.to_string(),
            self.p.to_string(),
            self.count.to_string(),
            self.epochs.to_string(),
            self.batch.to_string(),
            self.lr.to_string(),
            self.wide.to_string(),
            self.seed.to_string(),
            self.out.display().to_string(),
            png,
            self.dot_spacing.to_string(),
            self.dot_count.to_string(),
            self.plot_size.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(vals) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
