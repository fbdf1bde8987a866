use super::eval::Predictor;
use super::{ModelKind, TrainConfig};
use crate::error::{Error, Result};
use crate::gsn::{gsn_reconstruct_clean, gsn_sample_chain, GsnParams, WalkbackConfig};
use crate::nn::OptimizerState;
use crate::seq::{
    LstmBaseline, LstmPredictor, RnnGsnModel, RnnGsnPredictor, SenPredictor, SenStack, TgsnModel, TgsnPredictor,
    UntiedGsnModel, UntiedPredictor,
};
use crate::tensor::{Matrix, RandomSource};

/// Any trainable model, built from a [`TrainConfig`].
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Dae(GsnParams),
    Gsn { params: GsnParams, walkback: WalkbackConfig },
    Tgsn(TgsnModel),
    Untied(UntiedGsnModel),
    RnnGsn(RnnGsnModel),
    Sen(SenStack),
    Lstm(LstmBaseline),
}

impl Model {
    pub fn build(cfg: &TrainConfig, rng: &mut RandomSource) -> Result<Self> {
        cfg.validate()?;
        let visible = cfg.visible_width();
        let mut sizes = vec![visible];
        sizes.extend(&cfg.layers);
        let gsn = |tied: bool, rng: &mut RandomSource| {
            GsnParams::new(&sizes, tied, cfg.noise, cfg.hidden_activation, cfg.visible_activation, rng)
        };
        Ok(match cfg.model {
            ModelKind::Dae => Model::Dae(gsn(true, rng)?),
            ModelKind::Gsn => Model::Gsn {
                params: gsn(cfg.tied, rng)?,
                walkback: cfg.walkback,
            },
            ModelKind::Tgsn => Model::Tgsn(TgsnModel::new(gsn(cfg.tied, rng)?, cfg.window, cfg.walkback)?),
            ModelKind::UntiedGsn => Model::Untied(UntiedGsnModel::new(
                gsn(false, rng)?,
                cfg.walkback.k,
                cfg.sequential_walkbacks,
            )?),
            ModelKind::RnnGsn => {
                let g = gsn(cfg.tied, rng)?;
                Model::RnnGsn(RnnGsnModel::new(g, cfg.lstm_hidden, None, cfg.walkback, rng)?)
            }
            ModelKind::Sen => Model::Sen(SenStack::new(
                visible,
                &cfg.layers,
                cfg.lstm_hidden,
                cfg.levels,
                cfg.noise,
                cfg.visible_activation,
                cfg.walkback,
                rng,
            )?),
            ModelKind::Lstm => Model::Lstm(LstmBaseline::new(visible, &cfg.layers, cfg.visible_activation, rng)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Dae(_) => ModelKind::Dae,
            Model::Gsn { .. } => ModelKind::Gsn,
            Model::Tgsn(_) => ModelKind::Tgsn,
            Model::Untied(_) => ModelKind::UntiedGsn,
            Model::RnnGsn(_) => ModelKind::RnnGsn,
            Model::Sen(_) => ModelKind::Sen,
            Model::Lstm(_) => ModelKind::Lstm,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Model::Dae(p) | Model::Gsn { params: p, .. } => p.param_names(),
            Model::Tgsn(m) => {
                let mut n = m.gsn.param_names();
                n.extend(m.transition.param_names());
                n
            }
            Model::Untied(m) => m.gsn.param_names(),
            Model::RnnGsn(m) => m.param_names(),
            Model::Sen(s) => s.param_names(),
            Model::Lstm(m) => m.param_names(),
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        match self {
            Model::Dae(p) | Model::Gsn { params: p, .. } => p.params(),
            Model::Tgsn(m) => {
                let mut p = m.gsn.params();
                p.extend(m.transition.params());
                p
            }
            Model::Untied(m) => m.gsn.params(),
            Model::RnnGsn(m) => m.params(),
            Model::Sen(s) => s.params(),
            Model::Lstm(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Model::Dae(p) | Model::Gsn { params: p, .. } => p.params_mut(),
            Model::Tgsn(m) => {
                let mut p = m.gsn.params_mut();
                p.extend(m.transition.params_mut());
                p
            }
            Model::Untied(m) => m.gsn.params_mut(),
            Model::RnnGsn(m) => m.params_mut(),
            Model::Sen(s) => s.params_mut(),
            Model::Lstm(m) => m.params_mut(),
        }
    }

    /// Overwrites every parameter; shapes must match.
    pub fn set_params(&mut self, values: &[Matrix]) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "model has {} parameters, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (s, v) in slots.iter_mut().zip(values) {
            if s.shape() != v.shape() {
                return Err(Error::shape("set_params", v.shape(), s.shape()));
            }
            **s = v.clone();
        }
        Ok(())
    }

    /// Names of the optimizer groups the training loop keeps.
    pub fn optimizer_groups(&self) -> &'static [&'static str] {
        match self {
            Model::Tgsn(_) => &["gsn", "transition"],
            _ => &["main"],
        }
    }

    /// Deterministic next-frame predictor. Static models predict the next
    /// frame as the noise-free reconstruction of the current one.
    pub fn predictor(&self) -> Box<dyn Predictor + '_> {
        match self {
            Model::Dae(p) => Box::new(Reconstructor { params: p, steps: 1 }),
            Model::Gsn { params, walkback } => Box::new(Reconstructor {
                params,
                steps: walkback.k.max(1),
            }),
            Model::Tgsn(m) => Box::new(TgsnPredictor::new(m)),
            Model::Untied(m) => Box::new(UntiedPredictor::new(m)),
            Model::RnnGsn(m) => Box::new(RnnGsnPredictor::new(m)),
            Model::Sen(s) => Box::new(SenPredictor::new(s)),
            Model::Lstm(m) => Box::new(LstmPredictor::new(m)),
        }
    }

    /// `steps` generated frames. Static models run their noisy chain from
    /// the first seed frame; sequence models read the seed frames and then
    /// feed their own predictions back.
    pub fn sample(&self, seed: &[Matrix], steps: usize, rng: &mut RandomSource) -> Result<Vec<Matrix>> {
        let first = seed
            .first()
            .ok_or_else(|| Error::InvalidArgument("sampling needs at least one seed frame".into()))?;
        match self {
            Model::Dae(p) | Model::Gsn { params: p, .. } => gsn_sample_chain(p, first, steps, rng),
            _ => {
                let mut pred = self.predictor();
                let mut next = first.clone();
                for x in seed {
                    next = pred.observe(x)?;
                }
                let mut out = Vec::with_capacity(steps);
                for _ in 0..steps {
                    out.push(next.clone());
                    next = pred.observe(&next)?;
                }
                Ok(out)
            }
        }
    }
}

struct Reconstructor<'m> {
    params: &'m GsnParams,
    steps: usize,
}

impl Predictor for Reconstructor<'_> {
    fn reset(&mut self) {}

    fn observe_horizons(&mut self, x: &Matrix, depth: usize) -> Result<Vec<Matrix>> {
        super::eval::check_depth(depth, 1)?;
        Ok(vec![gsn_reconstruct_clean(self.params, x, self.steps)?.0])
    }
}

/// Fresh optimizer state per group of `model`.
pub fn new_optimizers(model: &Model, cfg: &TrainConfig) -> Result<Vec<OptimizerState>> {
    model
        .optimizer_groups()
        .iter()
        .map(|_| OptimizerState::new(cfg.optimizer))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::preset;

    #[test]
    fn every_kind_builds_small() {
        for kind in ModelKind::ALL {
            let mut cfg = preset("balls/tgsn").unwrap();
            cfg.model = kind;
            cfg.dataset.balls.resolution = 6;
            cfg.layers = vec![8, 6];
            cfg.lstm_hidden = 5;
            cfg.tied = kind != ModelKind::UntiedGsn;
            if kind == ModelKind::Dae {
                cfg.layers = vec![8];
            }
            let m = Model::build(&cfg, &mut RandomSource::new(3)).unwrap();
            assert_eq!(m.kind(), kind);
            assert_eq!(m.param_names().len(), m.params().len());
            let mut names = m.param_names();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), m.params().len(), "{kind:?} names unique");
            let x = Matrix::filled(2, 36, 0.5);
            let out = m.sample(&[x], 3, &mut RandomSource::new(1)).unwrap();
            assert_eq!(out.len(), 3);
            assert!(out.iter().all(|f| f.shape() == (2, 36) && f.is_finite()));
        }
    }

    #[test]
    fn set_params_round_trip() {
        let mut cfg = preset("balls/rnn_gsn").unwrap();
        cfg.dataset.balls.resolution = 5;
        cfg.layers = vec![4, 4];
        cfg.lstm_hidden = 3;
        let a = Model::build(&cfg, &mut RandomSource::new(1)).unwrap();
        let mut b = Model::build(&cfg, &mut RandomSource::new(2)).unwrap();
        assert_ne!(a, b);
        let vals: Vec<Matrix> = a.params().into_iter().cloned().collect();
        b.set_params(&vals).unwrap();
        assert_eq!(a, b);
        assert!(b.set_params(&vals[1..]).is_err());
    }
}
