//! Autoregressive rollout training with backpropagation through time.

use ndarray::{s, Array4, Array5, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{loss_and_grad, LossConfig};
use super::model::{ForcingSequence, GridForecaster, StepCache};
use crate::data::GridStateSequence;
use crate::error::{Error, Result};
use crate::neural::layers::Adam;
#[cfg(test)]
use crate::neural::layers::Objective;

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    /// Training loss at every optimizer step.
    pub losses: Vec<f64>,
}

impl RolloutReport {
    /// Mean of the first and last `k` losses.
    pub fn moving_average_ends(&self, k: usize) -> (f64, f64) {
        let k = k.min(self.losses.len()).max(1);
        let head = self.losses[..k].iter().sum::<f64>() / k as f64;
        let tail = self.losses[self.losses.len() - k..].iter().sum::<f64>() / k as f64;
        (head, tail)
    }
}

/// One training batch: rollout start indices into a sequence.
pub(crate) struct RolloutBatch<'a> {
    pub data: &'a GridStateSequence,
    pub forcing: Option<&'a ForcingSequence>,
    pub starts: Vec<usize>,
    pub steps: usize,
}

impl RolloutBatch<'_> {
    fn states(&self, offset: isize) -> Array4<f64> {
        let views: Vec<_> = self
            .starts
            .iter()
            .map(|&t| self.data.state((t as isize + offset) as usize))
            .collect();
        ndarray::stack(Axis(0), &views)
            .expect("equal shapes")
            .mapv(f64::from)
    }

    fn forcing_at(&self, offset: usize) -> Option<Array4<f64>> {
        self.forcing.map(|f| {
            let views: Vec<_> = self
                .starts
                .iter()
                .map(|&t| f.data.index_axis(Axis(0), t + offset))
                .collect();
            ndarray::stack(Axis(0), &views).expect("equal shapes")
        })
    }

    /// `(batch, step, var, lat, lon)` targets.
    fn targets(&self) -> Array5<f64> {
        let per_step: Vec<Array4<f64>> =
            (1..=self.steps).map(|k| self.states(k as isize)).collect();
        let views: Vec<_> = per_step.iter().map(|a| a.view()).collect();
        ndarray::stack(Axis(1), &views).expect("equal shapes")
    }
}

/// Rollout loss and, on request, its gradient with respect to `params`.
pub(crate) fn rollout_loss(
    model: &GridForecaster,
    params: &[f64],
    batch: &RolloutBatch<'_>,
    loss: &LossConfig,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let mut prev = batch.states(-1);
    let mut cur = batch.states(0);
    let mut caches: Vec<StepCache> = Vec::with_capacity(batch.steps);
    let mut preds: Vec<Array4<f64>> = Vec::with_capacity(batch.steps);
    for k in 1..=batch.steps {
        let forcing = batch.forcing_at(k);
        let (next, cache) = model.step_forward(
            params,
            prev.view(),
            cur.view(),
            forcing.as_ref().map(|f| f.view()),
        );
        caches.push(cache);
        preds.push(next.clone());
        prev = std::mem::replace(&mut cur, next);
    }
    let views: Vec<_> = preds.iter().map(|a| a.view()).collect();
    let pred = ndarray::stack(Axis(1), &views).expect("equal shapes");
    let target = batch.targets();
    let (value, d_pred) = loss_and_grad(pred.view(), target.view(), loss, want_grad)?;
    let Some(d_pred) = d_pred else {
        return Ok((value, None));
    };
    let mut g = vec![0.0; params.len()];
    // d_state[k] is the gradient w.r.t. predicted state k (1-based).
    let mut d_state: Vec<Array4<f64>> = (0..=batch.steps)
        .map(|k| {
            if k == 0 {
                Array4::zeros(preds[0].raw_dim())
            } else {
                d_pred.index_axis(Axis(1), k - 1).to_owned()
            }
        })
        .collect();
    for k in (1..=batch.steps).rev() {
        let (d_prev, d_cur) =
            model.step_backward(params, &mut g, &caches[k - 1], d_state[k].view());
        // Inputs of step k are states k-2 and k-1; index 0 and below are data.
        if k >= 2 {
            d_state[k - 1] += &d_cur;
        }
        if k >= 3 {
            d_state[k - 2] += &d_prev;
        }
    }
    Ok((value, Some(g)))
}

/// Valid rollout start indices: a previous state must exist and the rollout
/// must end inside the sequence.
fn start_range(n_times: usize, steps: usize) -> Result<std::ops::Range<usize>> {
    if n_times < steps + 2 {
        return Err(Error::invalid(format!(
            "{n_times} states are too few for {steps}-step rollouts"
        )));
    }
    Ok(1..n_times - steps)
}

pub(crate) fn sample_starts(
    rng: &mut ChaCha8Rng,
    range: &std::ops::Range<usize>,
    n: usize,
) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(range.clone())).collect()
}

/// Adam on the weighted rollout loss with uniformly sampled start times.
pub fn rollout_train(
    model: &GridForecaster,
    data: &GridStateSequence,
    loss: &LossConfig,
    steps: usize,
    seed: u64,
) -> Result<(GridForecaster, RolloutReport)> {
    rollout_train_with_forcing(model, data, None, loss, steps, seed)
}

pub fn rollout_train_with_forcing(
    model: &GridForecaster,
    data: &GridStateSequence,
    forcing: Option<&ForcingSequence>,
    loss: &LossConfig,
    steps: usize,
    seed: u64,
) -> Result<(GridForecaster, RolloutReport)> {
    loss.validate()?;
    if data.spec().variables != model.spec.variables || loss.variables != model.spec.variables {
        return Err(Error::Shape("model, data and loss variables differ".into()));
    }
    if model.n_forcing() > 0 {
        let f = forcing.ok_or_else(|| {
            Error::invalid("model has forcing inputs but no forcing data was given")
        })?;
        model.check_forcing_names(f)?;
        if f.data.dim().0 != data.n_times() {
            return Err(Error::Shape(format!(
                "forcing has {} steps, data has {}",
                f.data.dim().0,
                data.n_times()
            )));
        }
    }
    let range = start_range(data.n_times(), loss.rollout_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x67726964);
    let mut out = model.clone();
    let mut adam = Adam::new(out.params.len(), out.config.learning_rate);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = RolloutBatch {
            data,
            forcing: forcing.filter(|_| model.n_forcing() > 0),
            starts: sample_starts(&mut rng, &range, out.config.batch_size),
            steps: loss.rollout_steps,
        };
        let (value, grad) = rollout_loss(&out, &out.params, &batch, loss, true)?;
        let grad = grad.expect("gradient requested");
        if !value.is_finite() {
            return Err(Error::NanLoss(format!("step {step}")));
        }
        if let Some(block) = out.layout().first_non_finite(&grad) {
            return Err(Error::NanLoss(format!(
                "step {step}, parameter block `{block}`"
            )));
        }
        let mut params = std::mem::take(&mut out.params);
        adam.step(&mut params, &grad);
        out.params = params;
        losses.push(value);
        if step % 500 == 0 {
            log::debug!("grid step {step}: loss {value:.6}");
        }
    }
    Ok((out, RolloutReport { losses }))
}

/// RMSE per lead over issue indices, averaged over cells and the listed
/// variables, for the model and for persistence.
pub fn rollout_rmse(
    model: &GridForecaster,
    data: &GridStateSequence,
    forcing: Option<&ForcingSequence>,
    issues: &[usize],
    leads: usize,
    variables: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut se_model = vec![0.0; leads];
    let mut se_persist = vec![0.0; leads];
    let mut count = 0usize;
    for &t0 in issues {
        if t0 + leads >= data.n_times() {
            return Err(Error::invalid(format!(
                "issue {t0} plus {leads} leads runs past the data"
            )));
        }
        let f = model.forecast_from(data, t0, leads, forcing)?;
        let now = data.state(t0);
        for (k, state) in f.iter().enumerate() {
            let truth = data.state(t0 + k + 1);
            for &v in variables {
                let p = state.slice(s![v, .., ..]);
                let t = truth.slice(s![v, .., ..]);
                let n = now.slice(s![v, .., ..]);
                for ((a, b), c) in p.iter().zip(t.iter()).zip(n.iter()) {
                    se_model[k] += (a - *b as f64).powi(2);
                    se_persist[k] += (*c as f64 - *b as f64).powi(2);
                }
            }
        }
        count += 1;
    }
    let denom = (count * variables.len() * data.spec().n_cells()).max(1) as f64;
    Ok((
        se_model.iter().map(|s| (s / denom).sqrt()).collect(),
        se_persist.iter().map(|s| (s / denom).sqrt()).collect(),
    ))
}

#[cfg(test)]
pub(crate) struct RolloutObjective<'a> {
    pub model: &'a GridForecaster,
    pub batch: RolloutBatch<'a>,
    pub loss: &'a LossConfig,
}

#[cfg(test)]
impl Objective for RolloutObjective<'_> {
    fn loss(&self, params: &[f64]) -> f64 {
        rollout_loss(self.model, params, &self.batch, self.loss, false)
            .expect("valid batch")
            .0
    }

    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (l, g) =
            rollout_loss(self.model, params, &self.batch, self.loss, true).expect("valid batch");
        (l, g.expect("gradient requested"))
    }
}
