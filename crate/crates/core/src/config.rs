//! Run configuration: a flat `key = value` file, defaults for every key.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::expander::ExpansionConfig;
use crate::model::Norm;
use crate::scale::{DimPolicy, ScaleFit};
use crate::trainer::{DwtScope, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Scale-aware growth, guided expansion, replay and distillation.
    #[default]
    Sage,
    /// Plain sequential training at a fixed dimension.
    Finetune,
    /// Same as finetune; the dimension is the experiment variable.
    FixedDim,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sage" => Ok(Self::Sage),
            "finetune" => Ok(Self::Finetune),
            "fixed-dim" | "fixed_dim" | "fixed" => Ok(Self::FixedDim),
            _ => Err(Error::Config(format!("unknown mode '{s}' (sage|finetune|fixed-dim)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sage => "sage",
            Self::Finetune => "finetune",
            Self::FixedDim => "fixed-dim",
        })
    }
}

/// Components that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablations {
    /// Scale estimation: start at `dim.initial`, grow by `policy.step`.
    pub se: bool,
    /// Difficulty sampling: uniform replay.
    pub ds: bool,
    /// Learned expansion: random suffix trained on replay.
    pub le: bool,
    /// Distillation: alpha forced to 0.
    pub di: bool,
}

impl Ablations {
    pub fn add(&mut self, flag: &str) -> Result<()> {
        match flag.trim().to_ascii_uppercase().as_str() {
            "SE" => self.se = true,
            "DS" => self.ds = true,
            "LE" => self.le = true,
            "DI" => self.di = true,
            "" => {}
            other => return Err(Error::Config(format!("unknown ablation '{other}' (SE|DS|LE|DI)"))),
        }
        Ok(())
    }

    pub fn parse_list(s: &str) -> Result<Self> {
        let mut a = Self::default();
        for part in s.split(',') {
            if !part.trim().eq_ignore_ascii_case("none") {
                a.add(part)?;
            }
        }
        Ok(a)
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.se, "SE"), (self.ds, "DS"), (self.le, "LE"), (self.di, "DI")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scale: ScaleFit,
    pub policy: DimPolicy,
    pub dim_initial: usize,
    pub replay_k: usize,
    /// `None` means every trained entity.
    pub replay_candidates: Option<usize>,
    pub expand_epochs: usize,
    pub expand_hidden: Option<usize>,
    /// `None` means `train.lr`.
    pub expand_lr: Option<f64>,
    pub train: TrainConfig,
    pub norm: Norm,
    pub seed: u64,
    pub mode: Mode,
    pub ablate: Ablations,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// 0 lets the thread pool decide.
    pub workers: usize,
    pub output_footprints: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scale: ScaleFit::default(),
            policy: DimPolicy::default(),
            dim_initial: 200,
            replay_k: 30,
            replay_candidates: None,
            expand_epochs: 1,
            expand_hidden: None,
            expand_lr: None,
            train: TrainConfig::default(),
            norm: Norm::L2,
            seed: 42,
            mode: Mode::Sage,
            ablate: Ablations::default(),
            data: None,
            out: None,
            workers: 0,
            output_footprints: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for {key}"))),
    }
}

fn parse_opt<T: FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>> {
    if value.eq_ignore_ascii_case(none) {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: fmt::Display>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

fn show_f64(x: f64) -> String {
    format!("{x:?}")
}

impl RunConfig {
    /// Every recognised key, in file order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "mode",
        "ablate",
        "data",
        "out",
        "workers",
        "dim.initial",
        "scale.a",
        "scale.b",
        "scale.band",
        "policy.r",
        "policy.step",
        "replay.k",
        "replay.candidates",
        "expand.epochs",
        "expand.hidden",
        "expand.lr",
        "train.lr",
        "train.margin",
        "train.alpha",
        "train.max_epochs",
        "train.patience",
        "train.eval_interval",
        "train.batch_size",
        "train.negatives",
        "train.norm",
        "train.filter_negatives",
        "train.dwt_scope",
        "output.footprints",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "ablate" => self.ablate = Ablations::parse_list(v)?,
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out" => self.out = (!v.is_empty()).then(|| PathBuf::from(v)),
            "workers" => self.workers = parse(key, v)?,
            "dim.initial" => self.dim_initial = parse(key, v)?,
            "scale.a" => self.scale.a = parse(key, v)?,
            "scale.b" => self.scale.b = parse(key, v)?,
            "scale.band" => self.scale.band = parse(key, v)?,
            "policy.r" => self.policy.r = parse(key, v)?,
            "policy.step" => self.policy.step = parse(key, v)?,
            "replay.k" => self.replay_k = parse(key, v)?,
            "replay.candidates" => self.replay_candidates = parse_opt(key, v, "all")?,
            "expand.epochs" => self.expand_epochs = parse(key, v)?,
            "expand.hidden" => self.expand_hidden = parse_opt(key, v, "none")?,
            "expand.lr" => self.expand_lr = parse_opt(key, v, "train")?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.margin" => self.train.margin = parse(key, v)?,
            "train.alpha" => self.train.alpha = parse(key, v)?,
            "train.max_epochs" => self.train.max_epochs = parse(key, v)?,
            "train.patience" => self.train.patience = parse(key, v)?,
            "train.eval_interval" => self.train.eval_interval = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.negatives" => self.train.negatives = parse(key, v)?,
            "train.norm" => self.norm = v.parse()?,
            "train.filter_negatives" => self.train.filter_negatives = parse_bool(key, v)?,
            "train.dwt_scope" => self.train.dwt_scope = v.parse::<DwtScope>()?,
            "output.footprints" => self.output_footprints = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "seed" => self.seed.to_string(),
            "mode" => self.mode.to_string(),
            "ablate" => self.ablate.to_string(),
            "data" => path(&self.data),
            "out" => path(&self.out),
            "workers" => self.workers.to_string(),
            "dim.initial" => self.dim_initial.to_string(),
            "scale.a" => show_f64(self.scale.a),
            "scale.b" => show_f64(self.scale.b),
            "scale.band" => show_f64(self.scale.band),
            "policy.r" => show_f64(self.policy.r),
            "policy.step" => self.policy.step.to_string(),
            "replay.k" => self.replay_k.to_string(),
            "replay.candidates" => show_opt(&self.replay_candidates, "all"),
            "expand.epochs" => self.expand_epochs.to_string(),
            "expand.hidden" => show_opt(&self.expand_hidden, "none"),
            "expand.lr" => self.expand_lr.map_or_else(|| "train".to_string(), show_f64),
            "train.lr" => show_f64(self.train.lr),
            "train.margin" => show_f64(self.train.margin),
            "train.alpha" => show_f64(self.train.alpha),
            "train.max_epochs" => self.train.max_epochs.to_string(),
            "train.patience" => self.train.patience.to_string(),
            "train.eval_interval" => self.train.eval_interval.to_string(),
            "train.batch_size" => self.train.batch_size.to_string(),
            "train.negatives" => self.train.negatives.to_string(),
            "train.norm" => self.norm.to_string(),
            "train.filter_negatives" => self.train.filter_negatives.to_string(),
            "train.dwt_scope" => self.train.dwt_scope.to_string(),
            "output.footprints" => self.output_footprints.to_string(),
            _ => return None,
        })
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&self.get(k).expect("every listed key has a value"));
            s.push('\n');
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        self.policy.validate()?;
        self.train.validate()?;
        if self.dim_initial == 0 {
            return Err(Error::Config("dim.initial must be >= 1".into()));
        }
        if self.expand_hidden == Some(0) || self.replay_candidates.is_some_and(|c| c < 2) {
            return Err(Error::Config("expand.hidden must be >= 1 and replay.candidates >= 2".into()));
        }
        if let Some(lr) = self.expand_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config("expand.lr must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn expansion(&self) -> ExpansionConfig {
        ExpansionConfig {
            margin: self.train.margin,
            epochs: self.expand_epochs,
            lr: self.expand_lr.unwrap_or(self.train.lr),
            batch_size: self.train.batch_size,
            negatives: self.train.negatives,
        }
    }
}
