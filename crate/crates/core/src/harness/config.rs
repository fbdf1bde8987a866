use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{BouncingBallsConfig, MOCAP_CHANNELS, MOCAP_FRAMES};
use crate::error::{Error, Result};
use crate::gsn::WalkbackConfig;
use crate::nn::{GradClipConfig, OptimizerConfig};
use crate::tensor::{Activation, NoiseConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dae,
    Gsn,
    Tgsn,
    UntiedGsn,
    RnnGsn,
    Sen,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Dae,
        ModelKind::Gsn,
        ModelKind::Tgsn,
        ModelKind::UntiedGsn,
        ModelKind::RnnGsn,
        ModelKind::Sen,
        ModelKind::Lstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dae => "dae",
            ModelKind::Gsn => "gsn",
            ModelKind::Tgsn => "tgsn",
            ModelKind::UntiedGsn => "untied_gsn",
            ModelKind::RnnGsn => "rnn_gsn",
            ModelKind::Sen => "sen",
            ModelKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }

    /// Models that predict the next frame.
    pub fn is_sequential(self) -> bool {
        !matches!(self, ModelKind::Dae | ModelKind::Gsn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Sequenced digits: IDX files under `path`, or synthetic glyphs.
    Mnist,
    Balls,
    /// Motion capture: a CSV at `path`, or a synthetic capture.
    Mocap,
    /// Small Gaussian blob images, for denoising smoke runs.
    Blobs,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| Error::Config(format!("unknown dataset {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub path: Option<String>,
    /// Synthetic digits per class (train); the test store has a quarter.
    pub per_class: usize,
    pub image_side: usize,
    pub test_cycles: usize,
    pub balls: BouncingBallsConfig,
    /// Fresh videos generated per training epoch.
    pub videos_per_epoch: usize,
    pub test_videos: usize,
    pub mocap_frames: usize,
    pub blob_side: usize,
    pub blob_count: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Blobs,
            path: None,
            per_class: 100,
            image_side: 28,
            test_cycles: 20,
            balls: BouncingBallsConfig::default(),
            videos_per_epoch: 100,
            test_videos: 20,
            mocap_frames: MOCAP_FRAMES,
            blob_side: 8,
            blob_count: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Name of the preset this config was built from, if any.
    pub preset: Option<String>,
    pub model: ModelKind,
    pub dataset: DatasetConfig,
    /// Hidden layer widths (GSN layers; LSTM layers for the baseline).
    pub layers: Vec<usize>,
    pub tied: bool,
    pub hidden_activation: Activation,
    pub visible_activation: Activation,
    pub noise: NoiseConfig,
    pub walkback: WalkbackConfig,
    /// Context window of the linear transition.
    pub window: usize,
    pub lstm_hidden: usize,
    pub levels: usize,
    pub sequential_walkbacks: usize,
    pub optimizer: OptimizerConfig,
    pub clip: Option<GradClipConfig>,
    pub epochs: usize,
    pub batch_size: usize,
    pub subsequence_length: usize,
    pub subsequence_stride: usize,
    pub seed: u64,
    /// Relative-improvement threshold that opens the transition warm-up gate.
    pub warmup_threshold: f64,
    /// Save a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: None,
            model: ModelKind::Dae,
            dataset: DatasetConfig::default(),
            layers: vec![32],
            tied: true,
            hidden_activation: Activation::Tanh,
            visible_activation: Activation::Sigmoid,
            noise: NoiseConfig::input_only(0.3),
            walkback: WalkbackConfig::fixed(1),
            window: 1,
            lstm_hidden: 0,
            levels: 1,
            sequential_walkbacks: 0,
            optimizer: OptimizerConfig::sgd(0.25, 0.5, 1.0),
            clip: None,
            epochs: 10,
            batch_size: 20,
            subsequence_length: 20,
            subsequence_stride: 20,
            seed: 1,
            warmup_threshold: 0.01,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Width of one frame of the configured dataset.
    pub fn visible_width(&self) -> usize {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Mnist => d.image_side * d.image_side,
            DatasetKind::Balls => d.balls.resolution * d.balls.resolution,
            DatasetKind::Mocap => MOCAP_CHANNELS,
            DatasetKind::Blobs => d.blob_side * d.blob_side,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers.is_empty() || self.layers.contains(&0) {
            return bad(format!("layers must be non-empty and positive, got {:?}", self.layers));
        }
        self.noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.walkback.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(c) = self.clip {
            if !(c.max_l2_norm > 0.0) {
                return bad(format!("clip norm must be positive, got {}", c.max_l2_norm));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.model.is_sequential() && (self.subsequence_length < 2 || self.subsequence_stride == 0) {
            return bad(format!(
                "subsequence length must be >= 2 and stride positive, got {}/{}",
                self.subsequence_length, self.subsequence_stride
            ));
        }
        if self.visible_width() == 0 {
            return bad("dataset frames have zero width".into());
        }
        let l = self.layers.len();
        match self.model {
            ModelKind::Dae if l != 1 || !self.tied => {
                return bad("dae needs exactly one tied hidden layer".into());
            }
            ModelKind::UntiedGsn if self.tied => return bad("untied_gsn needs tied = false".into()),
            ModelKind::UntiedGsn if self.walkback.k < 2 * l => {
                return bad(format!("untied_gsn needs walkback.k >= 2 x {l} layers, got {}", self.walkback.k));
            }
            ModelKind::Tgsn if self.window == 0 => return bad("tgsn window must be at least 1".into()),
            ModelKind::RnnGsn | ModelKind::Sen if self.lstm_hidden == 0 => {
                return bad("lstm_hidden must be positive".into());
            }
            ModelKind::Sen if self.levels == 0 => return bad("sen needs at least one level".into()),
            _ => {}
        }
        let unit = !matches!(self.dataset.kind, DatasetKind::Mocap);
        if unit != (self.visible_activation == Activation::Sigmoid) {
            return bad(format!(
                "visible activation {:?} does not suit dataset {:?}",
                self.visible_activation, self.dataset.kind
            ));
        }
        if self.dataset.kind == DatasetKind::Balls {
            self.dataset.balls.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(0.0..1.0).contains(&self.warmup_threshold) {
            return bad(format!("warmup_threshold {} outside [0, 1)", self.warmup_threshold));
        }
        Ok(())
    }
}

pub const PRESET_NAMES: [&str; 13] = [
    "tgsn-mnist",
    "untied-mnist",
    "rnngsn-mnist",
    "balls/lstm",
    "balls/untied_gsn",
    "balls/tgsn",
    "balls/rnn_gsn",
    "balls/sen",
    "mocap/lstm",
    "mocap/untied_gsn",
    "mocap/tgsn",
    "mocap/rnn_gsn",
    "mocap/sen",
];

fn mnist_base() -> TrainConfig {
    TrainConfig {
        model: ModelKind::Tgsn,
        dataset: DatasetConfig {
            kind: DatasetKind::Mnist,
            ..Default::default()
        },
        layers: vec![1500, 1500, 1500],
        noise: NoiseConfig::input_only(0.4).with_hidden_gaussian(0.0, 2.0),
        walkback: WalkbackConfig::fixed(6),
        optimizer: OptimizerConfig::sgd(0.25, 0.5, 0.995),
        epochs: 300,
        batch_size: 100,
        ..Default::default()
    }
}

fn video_base(kind: DatasetKind, model: ModelKind) -> TrainConfig {
    let (width, p, sigma, window, rnn) = match kind {
        DatasetKind::Mocap => (128, 0.1, 0.5, 3, 256),
        _ => (500, 0.2, 1.0, 4, 500),
    };
    let mut c = TrainConfig {
        model,
        dataset: DatasetConfig {
            kind,
            ..Default::default()
        },
        layers: vec![width, width],
        noise: NoiseConfig::input_only(p).with_hidden_gaussian(0.0, sigma),
        walkback: WalkbackConfig::fixed(4),
        visible_activation: if kind == DatasetKind::Mocap {
            Activation::Identity
        } else {
            Activation::Sigmoid
        },
        window,
        optimizer: OptimizerConfig::adam(0.001),
        clip: Some(GradClipConfig { max_l2_norm: 0.25 }),
        epochs: 100,
        batch_size: 10,
        subsequence_length: 100,
        subsequence_stride: if kind == DatasetKind::Mocap { 50 } else { 100 },
        ..Default::default()
    };
    match model {
        ModelKind::UntiedGsn => c.tied = false,
        ModelKind::RnnGsn => c.lstm_hidden = rnn,
        ModelKind::Sen => {
            c.lstm_hidden = width;
            c.levels = 2;
        }
        _ => {}
    }
    c
}

/// Shipped hyper-parameter presets.
pub fn preset(name: &str) -> Option<TrainConfig> {
    let mut c = match name {
        "tgsn-mnist" => mnist_base(),
        "untied-mnist" => TrainConfig {
            model: ModelKind::UntiedGsn,
            tied: false,
            ..mnist_base()
        },
        "rnngsn-mnist" => TrainConfig {
            model: ModelKind::RnnGsn,
            lstm_hidden: 3000,
            ..mnist_base()
        },
        _ => {
            let (ds, model) = name.split_once('/')?;
            let kind = match ds {
                "balls" => DatasetKind::Balls,
                "mocap" => DatasetKind::Mocap,
                _ => return None,
            };
            let model = ModelKind::parse(model).ok()?;
            if !model.is_sequential() {
                return None;
            }
            video_base(kind, model)
        }
    };
    c.preset = Some(name.to_string());
    Some(c)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Short names accepted by [`apply_override`].
const ALIASES: [(&str, &str); 4] = [
    ("walkbacks", "walkback.k"),
    ("lr", "optimizer.learning_rate"),
    ("noise_p", "noise.salt_pepper_p"),
    ("sigma", "noise.gauss_sigma"),
];

/// Sets a dotted `key=value` inside `cfg`. The value is read as JSON when
/// possible and as a string otherwise. Unknown keys are rejected.
pub fn apply_override(cfg: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let key = ALIASES.iter().find(|(a, _)| *a == key).map(|(_, k)| *k).unwrap_or(key);
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut slot = cfg;
    for (i, part) in parts.iter().enumerate() {
        if slot.is_null() {
            *slot = Value::Object(Default::default());
        }
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("key {key:?}: {:?} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        slot = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

/// Resolves a JSON config: the optional `preset` key selects the base, the
/// file's other keys are merged over it, then each override is applied.
/// The result is fully validated.
pub fn resolve_value(file: Value, overrides: &[String]) -> Result<TrainConfig> {
    let preset_name = file.get("preset").and_then(Value::as_str).map(str::to_string);
    let base = match &preset_name {
        Some(n) => preset(n).ok_or_else(|| Error::Config(format!("unknown preset {n:?}")))?,
        None => TrainConfig::default(),
    };
    let mut v = serde_json::to_value(&base)?;
    merge(&mut v, file);
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    let cfg: TrainConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path` (or, when no such file exists, a preset of that name) and
/// resolves it with [`resolve_value`].
pub fn resolve_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let file = match fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        Err(e) => {
            let name = path.to_string_lossy();
            if preset(&name).is_some() {
                serde_json::json!({ "preset": name })
            } else {
                return Err(Error::Config(format!("{}: {e}", path.display())));
            }
        }
    };
    resolve_value(file, overrides)
}
