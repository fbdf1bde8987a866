use crate::data::Standardization;
use crate::error::{Error, Result};
use crate::nn::clamp_prob;
use crate::seq::{LstmPredictor, RnnGsnPredictor, SenPredictor, TgsnPredictor, UntiedPredictor};
use crate::tensor::Matrix;

/// Teacher-forced next-frame predictor over a batch of parallel streams.
pub trait Predictor {
    /// Forgets all history.
    fn reset(&mut self);

    /// Largest horizon [`Predictor::observe_horizons`] supports.
    fn depth(&self) -> usize {
        1
    }

    /// Consumes `x_t`; returns predictions of `x_{t+1} … x_{t+depth}`.
    fn observe_horizons(&mut self, x: &Matrix, depth: usize) -> Result<Vec<Matrix>>;

    fn observe(&mut self, x: &Matrix) -> Result<Matrix> {
        Ok(self.observe_horizons(x, 1)?.remove(0))
    }
}

pub(crate) fn check_depth(depth: usize, max: usize) -> Result<()> {
    if depth == 0 || depth > max {
        return Err(Error::Horizon { horizon: depth, depth: max });
    }
    Ok(())
}

/// Predicts that nothing moves.
#[derive(Clone, Copy, Debug, Default)]
pub struct CopyLast;

impl Predictor for CopyLast {
    fn reset(&mut self) {}

    fn depth(&self) -> usize {
        usize::MAX
    }

    fn observe_horizons(&mut self, x: &Matrix, depth: usize) -> Result<Vec<Matrix>> {
        check_depth(depth, usize::MAX)?;
        Ok(vec![x.clone(); depth])
    }
}

macro_rules! one_step_predictor {
    ($($t:ident),*) => {$(
        impl Predictor for $t<'_> {
            fn reset(&mut self) {
                $t::reset(self)
            }

            fn observe_horizons(&mut self, x: &Matrix, depth: usize) -> Result<Vec<Matrix>> {
                check_depth(depth, 1)?;
                Ok(vec![$t::observe(self, x)?])
            }
        }
    )*};
}

one_step_predictor!(TgsnPredictor, RnnGsnPredictor, SenPredictor, LstmPredictor);

impl Predictor for UntiedPredictor<'_> {
    fn reset(&mut self) {
        UntiedPredictor::reset(self)
    }

    fn depth(&self) -> usize {
        UntiedPredictor::depth(self)
    }

    fn observe_horizons(&mut self, x: &Matrix, depth: usize) -> Result<Vec<Matrix>> {
        UntiedPredictor::observe_horizons(self, x, depth)
    }
}

/// Runs of consecutive equal-length sequences, at most `batch` per run.
fn groups(seqs: &[Matrix], batch: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if batch == 0 {
        return Err(Error::InvalidArgument("evaluation batch must be positive".into()));
    }
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=seqs.len() {
        if i == seqs.len() || i - start == batch || seqs[i].rows() != seqs[start].rows() {
            out.push(start..i);
            start = i;
        }
    }
    Ok(out)
}

fn stack_rows(seqs: &[Matrix], t: usize) -> Result<Matrix> {
    let rows: Vec<&[f64]> = seqs.iter().map(|s| s.row(t)).collect();
    Matrix::from_vec(rows.len(), seqs[0].cols(), rows.concat())
}

/// Frame-level mean squared error of horizon-1 predictions over `seqs`
/// (frames × width each), teacher-forced. With `original_units` the
/// predictions and targets are de-standardised first. Sequences are
/// processed `batch` at a time; the reduction runs per sequence in order,
/// so the result does not depend on `batch`.
pub fn evaluate_mse(
    predictor: &mut dyn Predictor,
    seqs: &[Matrix],
    original_units: Option<&Standardization>,
    batch: usize,
) -> Result<f64> {
    let mut per_seq = vec![0.0; seqs.len()];
    let mut count = 0usize;
    for g in groups(seqs, batch)? {
        let part = &seqs[g.clone()];
        predictor.reset();
        for t in 0..part[0].rows().saturating_sub(1) {
            let mut pred = predictor.observe(&stack_rows(part, t)?)?;
            let mut target = stack_rows(part, t + 1)?;
            if let Some(s) = original_units {
                pred = s.invert(&pred)?;
                target = s.invert(&target)?;
            }
            for (i, sse) in per_seq[g.clone()].iter_mut().enumerate() {
                *sse += pred.row(i).iter().zip(target.row(i)).map(|(p, y)| (p - y) * (p - y)).sum::<f64>();
            }
            count += part.len() * target.cols();
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("test sequences are too short to score".into()));
    }
    Ok(per_seq.iter().sum::<f64>() / count as f64)
}

/// Mean per-element binary cross-entropy of predictions `h` steps ahead,
/// one value per requested horizon.
pub fn evaluate_bce(
    predictor: &mut dyn Predictor,
    seqs: &[Matrix],
    horizons: &[usize],
    batch: usize,
) -> Result<Vec<f64>> {
    let max = horizons.iter().copied().max().ok_or_else(|| Error::InvalidArgument("no horizons".into()))?;
    for &h in horizons {
        check_depth(h, predictor.depth())?;
    }
    if seqs.iter().flat_map(|s| s.data()).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("binary cross-entropy needs frames in [0, 1]".into()));
    }
    let mut per_seq = vec![vec![0.0; horizons.len()]; seqs.len()];
    let mut counts = vec![0usize; horizons.len()];
    for g in groups(seqs, batch)? {
        let part = &seqs[g.clone()];
        let len = part[0].rows();
        predictor.reset();
        for t in 0..len.saturating_sub(1) {
            let preds = predictor.observe_horizons(&stack_rows(part, t)?, max)?;
            for (j, &h) in horizons.iter().enumerate() {
                if t + h >= len {
                    continue;
                }
                let target = stack_rows(part, t + h)?;
                for (i, acc) in per_seq[g.clone()].iter_mut().enumerate() {
                    acc[j] -= preds[h - 1]
                        .row(i)
                        .iter()
                        .zip(target.row(i))
                        .map(|(&p, &y)| {
                            let p = clamp_prob(p);
                            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
                        })
                        .sum::<f64>();
                }
                counts[j] += part.len() * target.cols();
            }
        }
    }
    (0..horizons.len())
        .map(|j| {
            if counts[j] == 0 {
                return Err(Error::InvalidArgument(format!(
                    "test sequences are too short for horizon {}",
                    horizons[j]
                )));
            }
            Ok(per_seq.iter().map(|s| s[j]).sum::<f64>() / counts[j] as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RandomSource;

    /// Knows the sequences and returns the true next frame.
    struct Oracle<'a> {
        seqs: &'a [Matrix],
        t: usize,
        group: usize,
    }

    impl Predictor for Oracle<'_> {
        fn reset(&mut self) {
            self.t = 0;
        }

        fn depth(&self) -> usize {
            3
        }

        fn observe_horizons(&mut self, x: &Matrix, depth: usize) -> Result<Vec<Matrix>> {
            let part = &self.seqs[self.group..self.group + x.rows()];
            let len = part[0].rows();
            let out = (1..=depth).map(|h| stack_rows(part, (self.t + h).min(len - 1))).collect();
            self.t += 1;
            if self.t == len - 1 {
                self.group += x.rows();
            }
            out
        }
    }

    struct Half;

    impl Predictor for Half {
        fn reset(&mut self) {}

        fn depth(&self) -> usize {
            6
        }

        fn observe_horizons(&mut self, x: &Matrix, depth: usize) -> Result<Vec<Matrix>> {
            Ok(vec![Matrix::filled(x.rows(), x.cols(), 0.5); depth])
        }
    }

    fn binary_seqs(n: usize, len: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = RandomSource::new(seed);
        (0..n)
            .map(|_| {
                let d = (0..len * 6).map(|_| if rng.uniform() < 0.5 { 0.0 } else { 1.0 }).collect();
                Matrix::from_vec(len, 6, d).unwrap()
            })
            .collect()
    }

    #[test]
    fn oracle_scores_zero() {
        let seqs = binary_seqs(5, 7, 1);
        let mse = evaluate_mse(&mut Oracle { seqs: &seqs, t: 0, group: 0 }, &seqs, None, 2).unwrap();
        assert_eq!(mse, 0.0);
        let bce = evaluate_bce(&mut Oracle { seqs: &seqs, t: 0, group: 0 }, &seqs, &[1, 3], 2).unwrap();
        assert!(bce.iter().all(|&b| b < 1e-6), "{bce:?}");
    }

    #[test]
    fn copy_last_on_constant_is_zero() {
        let seqs = vec![Matrix::filled(10, 4, 0.3); 3];
        assert_eq!(evaluate_mse(&mut CopyLast, &seqs, None, 2).unwrap(), 0.0);
    }

    #[test]
    fn half_predictor_gives_ln2() {
        let seqs = binary_seqs(3, 9, 2);
        let bce = evaluate_bce(&mut Half, &seqs, &[1, 6], 3).unwrap();
        assert_eq!(bce.len(), 2);
        for b in bce {
            assert!((b - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn horizon_beyond_depth_rejected() {
        let seqs = binary_seqs(1, 9, 2);
        assert!(matches!(
            evaluate_bce(&mut Half, &seqs, &[7], 1),
            Err(Error::Horizon { horizon: 7, depth: 6 })
        ));
    }

    #[test]
    fn empty_test_set_rejected() {
        assert!(evaluate_mse(&mut CopyLast, &[], None, 1).is_err());
    }

    #[test]
    fn copy_last_mse_by_hand() {
        let s = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        // Errors: (1, 0) then (0, 1) over 2 frames x 2 elements.
        assert_eq!(evaluate_mse(&mut CopyLast, &[s], None, 1).unwrap(), 0.5);
    }
}
