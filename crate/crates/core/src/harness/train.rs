use std::fs;
use std::path::{Path, PathBuf};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::eval::{evaluate_bce, evaluate_mse};
use super::metrics::MetricsLog;
use super::model::{new_optimizers, Model};
use super::prepare::PreparedData;
use super::{ModelKind, TrainConfig};
use crate::data::{batch_timelines, shuffled_subsequences, ValueRange};
use crate::error::{Error, Result};
use crate::gsn::{dae_train_step, gsn_reconstruct_clean, gsn_train_step};
use crate::nn::OptimizerState;
use crate::seq::{
    lstm_baseline_train_step, rnngsn_train_step, sen_train_step, tgsn_em_epoch, tgsn_warmup_gate,
    untied_gsn_online_step, UntiedState,
};
use crate::tensor::{Matrix, RandomSource};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_ECHO: &str = "config.json";
pub const LATEST_CHECKPOINT: &str = "checkpoint.gsnc";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("checkpoint-{epoch:04}.gsnc")
}

/// Stream of the root seed used for model initialisation.
const INIT_STREAM: u64 = 1;
/// Stream used for shuffling and noise during training.
const TRAIN_STREAM: u64 = 2;

/// Losses logged for one finished epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train: Vec<(&'static str, f64)>,
    pub test: Vec<(&'static str, f64)>,
}

/// A training run: model, optimizer state, RNG, and the metrics logged so
/// far by this process.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizers: Vec<OptimizerState>,
    pub rng: RandomSource,
    /// Completed epochs.
    pub epoch: usize,
    pub metrics: MetricsLog,
    /// Per-epoch training reconstruction loss, read by the TGSN gate.
    pub history: Vec<f64>,
    pub data: PreparedData,
}

fn mean(total: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let root = RandomSource::new(config.seed);
        let model = Model::build(config, &mut root.fork(INIT_STREAM))?;
        let optimizers = new_optimizers(&model, config)?;
        Ok(Trainer {
            config: config.clone(),
            model,
            optimizers,
            rng: root.fork(TRAIN_STREAM),
            epoch: 0,
            metrics: MetricsLog::new(),
            history: Vec::new(),
            data: PreparedData::load(config)?,
        })
    }

    /// Rebuilds a run from a checkpoint. Metrics logged before the
    /// checkpoint are not restored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(&ck.config)?;
        let values = t
            .model
            .param_names()
            .iter()
            .map(|n| ck.get(&format!("param.{n}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        t.model.set_params(&values)?;
        let groups = t.model.optimizer_groups();
        t.optimizers = groups
            .iter()
            .map(|g| {
                let scalar = |name: &str| -> Result<f64> { Ok(ck.get(&format!("opt.{g}.{name}"))?.get(0, 0)) };
                let first: Vec<Matrix> = ck.with_prefix(&format!("opt.{g}.m.")).map(|(_, m)| m.clone()).collect();
                let second: Vec<Matrix> = ck.with_prefix(&format!("opt.{g}.v.")).map(|(_, m)| m.clone()).collect();
                OptimizerState::restore(
                    ck.config.optimizer,
                    scalar("epochs")? as u32,
                    scalar("steps")? as u64,
                    first,
                    second,
                )
            })
            .collect::<Result<_>>()?;
        t.rng = RandomSource::from_state(ck.rng);
        t.epoch = ck.epoch;
        t.history = ck.get("train.history")?.data().to_vec();
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut tensors: Vec<(String, Matrix)> = self
            .model
            .param_names()
            .into_iter()
            .zip(self.model.params())
            .map(|(n, m)| (format!("param.{n}"), m.clone()))
            .collect();
        for (g, opt) in self.model.optimizer_groups().iter().zip(&self.optimizers) {
            tensors.push((format!("opt.{g}.epochs"), Matrix::filled(1, 1, opt.epochs() as f64)));
            tensors.push((format!("opt.{g}.steps"), Matrix::filled(1, 1, opt.steps() as f64)));
            let (first, second) = opt.accumulators();
            for (i, m) in first.iter().enumerate() {
                tensors.push((format!("opt.{g}.m.{i:04}"), m.clone()));
            }
            for (i, m) in second.iter().enumerate() {
                tensors.push((format!("opt.{g}.v.{i:04}"), m.clone()));
            }
        }
        tensors.push(("train.history".into(), Matrix::row_vector(self.history.clone())));
        Ok(Checkpoint {
            tensors,
            config: self.config.clone(),
            rng: self.rng.state(),
            epoch: self.epoch,
        })
    }

    fn windows(&mut self, ds: &crate::data::SequenceDataset) -> Result<Vec<Vec<Matrix>>> {
        let c = &self.config;
        let w = shuffled_subsequences(ds, c.subsequence_length, c.subsequence_stride, &mut self.rng)?;
        if w.is_empty() {
            return Err(Error::Config(format!(
                "training sequences are shorter than subsequence_length {}",
                c.subsequence_length
            )));
        }
        batch_timelines(&w, c.batch_size)
    }

    fn static_batches(&mut self, ds: &crate::data::SequenceDataset) -> Result<Vec<Matrix>> {
        let mut rows: Vec<&[f64]> = ds.sequences.iter().flat_map(|s| (0..s.rows()).map(move |r| s.row(r))).collect();
        self.rng.shuffle(&mut rows);
        rows.chunks(self.config.batch_size)
            .map(|c| Matrix::from_vec(c.len(), ds.width, c.concat()))
            .collect()
    }

    fn train_losses(&mut self, ds: &crate::data::SequenceDataset) -> Result<Vec<(&'static str, f64)>> {
        let clip = self.config.clip;
        let threshold = self.config.warmup_threshold;
        match self.model.kind() {
            ModelKind::Dae | ModelKind::Gsn => {
                let batches = self.static_batches(ds)?;
                let mut total = 0.0;
                for b in &batches {
                    total += match &mut self.model {
                        Model::Dae(p) => dae_train_step(p, b, &mut self.optimizers[0], &mut self.rng)?,
                        Model::Gsn { params, walkback } => {
                            gsn_train_step(params, b, walkback, &mut self.optimizers[0], &mut self.rng)?
                        }
                        _ => unreachable!(),
                    };
                }
                Ok(vec![("loss", mean(total, batches.len()))])
            }
            ModelKind::Tgsn => {
                let timelines = self.windows(ds)?;
                let gate = tgsn_warmup_gate(&self.history, threshold);
                let Model::Tgsn(m) = &mut self.model else { unreachable!() };
                let (a, b) = self.optimizers.split_at_mut(1);
                let l = tgsn_em_epoch(m, &timelines, gate, &mut a[0], &mut b[0], clip, &mut self.rng)?;
                Ok(vec![
                    ("reconstruction", l.reconstruction),
                    ("prediction", l.prediction),
                    ("gate", if gate { 1.0 } else { 0.0 }),
                ])
            }
            ModelKind::UntiedGsn => {
                let timelines = self.windows(ds)?;
                let Model::Untied(m) = &mut self.model else { unreachable!() };
                let (mut total, mut count) = (0.0, 0);
                for tl in &timelines {
                    let mut state = UntiedState::new(m, tl[0].rows());
                    for x in tl {
                        let out = untied_gsn_online_step(m, x, &mut state, &mut self.optimizers[0], clip, &mut self.rng)?;
                        if let Some(l) = out.loss {
                            total += l;
                            count += 1;
                        }
                    }
                }
                Ok(vec![("loss", mean(total, count))])
            }
            ModelKind::RnnGsn => {
                let timelines = self.windows(ds)?;
                let Model::RnnGsn(m) = &mut self.model else { unreachable!() };
                let (mut rec, mut pred, mut n_rec, mut n_pred) = (0.0, 0.0, 0, 0);
                for tl in &timelines {
                    let mut state = m.initial_state(tl[0].rows());
                    for t in 0..tl.len() {
                        let s = rnngsn_train_step(m, &tl[t], tl.get(t + 1), &state, &mut self.optimizers[0], clip, &mut self.rng)?;
                        rec += s.reconstruction;
                        n_rec += 1;
                        if let Some(p) = s.prediction {
                            pred += p;
                            n_pred += 1;
                        }
                        state = s.state;
                    }
                }
                Ok(vec![("reconstruction", mean(rec, n_rec)), ("prediction", mean(pred, n_pred))])
            }
            ModelKind::Sen => {
                let timelines = self.windows(ds)?;
                let Model::Sen(s) = &mut self.model else { unreachable!() };
                let (mut rec, mut pred, mut n_rec, mut n_pred) = (0.0, 0.0, 0, 0);
                for tl in &timelines {
                    let mut states = s.initial_states(tl[0].rows());
                    for t in 0..tl.len() {
                        let l = sen_train_step(s, &tl[t], tl.get(t + 1), &states, &mut self.optimizers[0], clip, &mut self.rng)?;
                        rec += l.reconstruction.iter().sum::<f64>();
                        n_rec += 1;
                        if !l.prediction.is_empty() {
                            pred += l.prediction.iter().sum::<f64>();
                            n_pred += 1;
                        }
                        states = l.states;
                    }
                }
                Ok(vec![("reconstruction", mean(rec, n_rec)), ("prediction", mean(pred, n_pred))])
            }
            ModelKind::Lstm => {
                let timelines = self.windows(ds)?;
                let Model::Lstm(m) = &mut self.model else { unreachable!() };
                let mut total = 0.0;
                for tl in &timelines {
                    let s0 = m.initial_states(tl[0].rows());
                    total += lstm_baseline_train_step(m, tl, &s0, &mut self.optimizers[0], clip)?.0;
                }
                Ok(vec![("loss", mean(total, timelines.len()))])
            }
        }
    }

    /// Held-out metrics of the current parameters.
    pub fn evaluate(&self) -> Result<Vec<(&'static str, f64)>> {
        let unit = self.data.test.range == ValueRange::UnitInterval;
        let batch = self.config.batch_size;
        if !self.config.model.is_sequential() {
            let frames = self.data.test_frames()?;
            let (params, steps) = match &self.model {
                Model::Dae(p) => (p, 1),
                Model::Gsn { params, walkback } => (params, walkback.k.max(1)),
                _ => unreachable!(),
            };
            let (recon, _) = gsn_reconstruct_clean(params, &frames, steps)?;
            let (loss, _) = params.loss_kind().eval(&recon, &frames)?;
            return Ok(vec![("reconstruction", loss)]);
        }
        let seqs = self.data.test_sequences()?;
        let mut out = Vec::new();
        let mut pred = self.model.predictor();
        out.push(("mse", evaluate_mse(pred.as_mut(), &seqs, self.data.original_units.as_ref(), batch)?));
        if self.data.original_units.is_some() {
            out.push(("mse_standardized", evaluate_mse(pred.as_mut(), &seqs, None, batch)?));
        }
        if unit {
            out.push(("bce", evaluate_bce(pred.as_mut(), &seqs, &[1], batch)?[0]));
        }
        Ok(out)
    }

    /// Trains one epoch and logs its rows. A non-finite training loss flags
    /// the log and returns [`Error::Diverged`].
    pub fn train_epoch(&mut self) -> Result<EpochReport> {
        let ds = self.data.epoch(self.epoch)?;
        let train = self.train_losses(&ds)?;
        for opt in &mut self.optimizers {
            opt.end_epoch();
        }
        self.epoch += 1;
        let epoch = self.epoch;
        if let Some(&(name, _)) = train.iter().find(|(_, v)| !v.is_finite()) {
            for &(n, v) in &train {
                if n == name {
                    self.metrics.flag_diverged(epoch, "train", n, v)?;
                } else {
                    self.metrics.push(epoch, "train", n, v)?;
                }
            }
            return Err(Error::Diverged {
                epoch,
                metric: name.to_string(),
            });
        }
        self.history.push(train[0].1);
        for &(n, v) in &train {
            self.metrics.push(epoch, "train", n, v)?;
        }
        let test = self.evaluate()?;
        for &(n, v) in &test {
            if v.is_finite() {
                self.metrics.push(epoch, "test", n, v)?;
            } else {
                self.metrics.flag_diverged(epoch, "test", n, v)?;
                return Err(Error::Diverged {
                    epoch,
                    metric: n.to_string(),
                });
            }
        }
        Ok(EpochReport { epoch, train, test })
    }

    /// Trains until `config.epochs` epochs are complete. With `out`, the
    /// metrics file is appended after every epoch, checkpoints are written
    /// on the configured schedule, and the latest state is always saved at
    /// the end, including after divergence.
    pub fn run(&mut self, out: Option<&Path>) -> Result<()> {
        let every = self.config.checkpoint_every;
        while self.epoch < self.config.epochs {
            let logged = self.metrics.rows.len();
            let result = self.train_epoch();
            if let Some(dir) = out {
                self.metrics.append_rows(&dir.join(METRICS_FILE), logged)?;
                if result.is_err() || (every > 0 && self.epoch % every == 0) {
                    save_checkpoint(&dir.join(epoch_checkpoint_name(self.epoch)), &self.checkpoint()?)?;
                }
            }
            if let Err(e) = result {
                if let Some(dir) = out {
                    save_checkpoint(&dir.join(LATEST_CHECKPOINT), &self.checkpoint()?)?;
                }
                return Err(e);
            }
        }
        if let Some(dir) = out {
            save_checkpoint(&dir.join(LATEST_CHECKPOINT), &self.checkpoint()?)?;
        }
        Ok(())
    }
}

/// Writes the resolved config as pretty JSON.
pub fn write_config_echo(dir: &Path, cfg: &TrainConfig) -> Result<PathBuf> {
    let p = dir.join(CONFIG_ECHO);
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    fs::write(&p, text)?;
    Ok(p)
}

/// Full training run. With `out`, writes the config echo, metrics CSV and
/// checkpoints there.
pub fn train(cfg: &TrainConfig, out: Option<&Path>) -> Result<Trainer> {
    let mut t = Trainer::new(cfg)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_config_echo(dir, cfg)?;
        let m = dir.join(METRICS_FILE);
        if m.exists() {
            fs::remove_file(&m)?;
        }
    }
    t.run(out)?;
    Ok(t)
}

/// Continues the run saved at `checkpoint` up to `epochs` total epochs.
pub fn resume(checkpoint: &Path, epochs: Option<usize>, out: Option<&Path>) -> Result<Trainer> {
    let ck = load_checkpoint(checkpoint)?;
    let mut t = Trainer::from_checkpoint(&ck)?;
    if let Some(e) = epochs {
        t.config.epochs = e;
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_config_echo(dir, &t.config)?;
    }
    t.run(out)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{preset, DatasetKind};

    fn tiny(kind: ModelKind) -> TrainConfig {
        let mut c = preset("balls/tgsn").unwrap();
        c.model = kind;
        c.tied = kind != ModelKind::UntiedGsn;
        c.layers = if kind == ModelKind::Dae { vec![10] } else { vec![10, 8] };
        c.lstm_hidden = 6;
        c.dataset.balls.resolution = 6;
        c.dataset.balls.frames = 12;
        c.dataset.videos_per_epoch = 3;
        c.dataset.test_videos = 2;
        c.subsequence_length = 6;
        c.subsequence_stride = 6;
        c.batch_size = 4;
        c.epochs = 2;
        c
    }

    #[test]
    fn zero_epochs_leave_params() {
        let mut c = tiny(ModelKind::Tgsn);
        c.epochs = 0;
        let fresh = Trainer::new(&c).unwrap();
        let t = train(&c, None).unwrap();
        assert_eq!(t.model, fresh.model);
        assert!(t.metrics.rows.is_empty());
    }

    #[test]
    fn every_kind_trains_two_epochs() {
        for kind in ModelKind::ALL {
            let t = train(&tiny(kind), None).unwrap();
            assert_eq!(t.epoch, 2);
            assert!(t.metrics.rows.iter().all(|r| r.value.is_finite()), "{kind:?}");
            assert!(!t.metrics.series("train", if kind.is_sequential() && !matches!(kind, ModelKind::Lstm | ModelKind::UntiedGsn) { "reconstruction" } else { "loss" }).is_empty(), "{kind:?}");
        }
    }

    #[test]
    fn same_seed_same_csv() {
        let a = train(&tiny(ModelKind::RnnGsn), None).unwrap();
        let b = train(&tiny(ModelKind::RnnGsn), None).unwrap();
        assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    }

    #[test]
    fn resume_matches_uninterrupted() {
        for kind in [ModelKind::Tgsn, ModelKind::Lstm, ModelKind::UntiedGsn] {
            let mut c = tiny(kind);
            c.epochs = 3;
            let dir = tempfile::tempdir().unwrap();
            let full = train(&c, Some(dir.path())).unwrap();
            let mut c1 = c.clone();
            c1.epochs = 1;
            let d1 = tempfile::tempdir().unwrap();
            train(&c1, Some(d1.path())).unwrap();
            let resumed = resume(&d1.path().join(LATEST_CHECKPOINT), Some(3), Some(d1.path())).unwrap();
            assert_eq!(resumed.model, full.model, "{kind:?}");
            let ck = |d: &Path| fs::read(d.join(LATEST_CHECKPOINT)).unwrap();
            assert_eq!(ck(d1.path()), ck(dir.path()));
            assert_eq!(
                fs::read(d1.path().join(METRICS_FILE)).unwrap(),
                fs::read(dir.path().join(METRICS_FILE)).unwrap()
            );
        }
    }

    #[test]
    fn divergence_flags_and_stops() {
        let mut c = preset("mocap/lstm").unwrap();
        c.layers = vec![6];
        c.dataset.mocap_frames = 200;
        c.subsequence_length = 20;
        c.subsequence_stride = 20;
        c.optimizer = crate::nn::OptimizerConfig::sgd(1e10, 0.0, 1.0);
        c.clip = None;
        c.epochs = 200;
        let dir = tempfile::tempdir().unwrap();
        let err = train(&c, Some(dir.path())).err().unwrap();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
        let log = MetricsLog::parse_csv(&fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
        assert!(log.is_diverged());
        assert!(dir.path().join(LATEST_CHECKPOINT).exists());
    }

    #[test]
    fn dae_on_blobs_halves_bce() {
        let mut c = TrainConfig::default();
        c.dataset.kind = DatasetKind::Blobs;
        c.epochs = 200;
        c.layers = vec![32];
        let t = train(&c, None).unwrap();
        let losses = t.metrics.series("train", "loss");
        assert!(losses[losses.len() - 1] < 0.5 * losses[0], "{} vs {}", losses[losses.len() - 1], losses[0]);
    }

    #[test]
    fn mse_independent_of_eval_batch() {
        for kind in [ModelKind::Lstm, ModelKind::UntiedGsn, ModelKind::Sen, ModelKind::Tgsn] {
            let t = Trainer::new(&tiny(kind)).unwrap();
            let seqs = t.data.test_sequences().unwrap();
            let mut p = t.model.predictor();
            let a = evaluate_mse(p.as_mut(), &seqs, None, 1).unwrap();
            let b = evaluate_mse(p.as_mut(), &seqs, None, 3).unwrap();
            let c = evaluate_mse(p.as_mut(), &seqs, None, 100).unwrap();
            assert_eq!(a.to_bits(), b.to_bits(), "{kind:?}");
            assert_eq!(a.to_bits(), c.to_bits(), "{kind:?}");
        }
    }
}
