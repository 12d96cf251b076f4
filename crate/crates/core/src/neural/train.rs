//! Sliding-window training with randomized interval conditioning.

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{masked_mse, Adam, Mode};
use super::scaler::Scaler;
use super::tide::{TideBatch, TideConfig, TideModel, TideShape, INTERVAL_SCALE};
use crate::error::{Error, Result};

/// One location's hourly target with aligned covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDataset {
    pub target: Vec<f64>,
    pub covariates: Array2<f64>,
    pub covariate_names: Vec<String>,
    pub statics: Vec<f64>,
}

impl SeriesDataset {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.nrows() != self.target.len() {
            return Err(Error::Shape(format!(
                "{} covariate rows for {} targets",
                self.covariates.nrows(),
                self.target.len()
            )));
        }
        if self.covariates.ncols() != self.covariate_names.len() {
            return Err(Error::Shape("covariate names do not match columns".into()));
        }
        if self
            .target
            .iter()
            .chain(self.covariates.iter())
            .chain(&self.statics)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("training dataset".into()));
        }
        Ok(())
    }

    /// Removes covariates that are constant over the training rows and
    /// returns their names.
    pub fn drop_constant_covariates(&mut self) -> Vec<String> {
        let train_end = Split::chronological(self.len()).train_end;
        if train_end == 0 {
            return Vec::new();
        }
        let drop = constant_columns(&self.covariates.slice(s![..train_end, ..]).to_owned());
        let keep: Vec<usize> = (0..self.covariate_names.len())
            .filter(|j| !drop.contains(j))
            .collect();
        let dropped = drop
            .iter()
            .map(|&j| self.covariate_names[j].clone())
            .collect();
        self.covariates = self.covariates.select(Axis(1), &keep);
        self.covariate_names = keep
            .iter()
            .map(|&j| self.covariate_names[j].clone())
            .collect();
        dropped
    }

    pub fn with_target(&self, target: Vec<f64>) -> Self {
        Self {
            target,
            ..self.clone()
        }
    }
}

/// Row boundaries of the chronological 70/15/15 split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub train_end: usize,
    pub validation_end: usize,
    pub len: usize,
}

impl Split {
    pub fn chronological(len: usize) -> Self {
        Self {
            train_end: len * 70 / 100,
            validation_end: len * 85 / 100,
            len,
        }
    }

    /// Forecast-start indices whose targets lie inside each period.
    pub fn windows(&self, lookback: usize, horizon: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let range = |from: usize, to: usize| -> Vec<usize> {
            let from = from.max(lookback);
            if to < horizon || from + horizon > to {
                Vec::new()
            } else {
                (from..=to - horizon).collect()
            }
        };
        (
            range(0, self.train_end),
            range(self.train_end, self.validation_end),
            range(self.validation_end, self.len),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
    pub loss_curve: Vec<EpochLoss>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Stalled,
    Stop,
}

/// Stops once the loss has failed to improve for `patience` consecutive
/// epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Progress {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            Progress::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                Progress::Stop
            } else {
                Progress::Stalled
            }
        }
    }
}

/// Normalized series in model units.
pub(crate) struct Prepared {
    pub y: Vec<f64>,
    pub x: Array2<f64>,
    pub statics: Vec<f64>,
}

impl Prepared {
    pub fn assemble(
        &self,
        starts: &[usize],
        intervals: &[usize],
        lookback: usize,
        horizon: usize,
    ) -> (TideBatch, Array2<f64>, Array2<f64>) {
        let b = starts.len();
        let t = lookback + horizon;
        let r = self.x.ncols();
        let y = Array2::from_shape_fn((b, lookback), |(i, j)| self.y[starts[i] - lookback + j]);
        let mut x = Array2::zeros((b * t, r));
        for (i, &s0) in starts.iter().enumerate() {
            x.slice_mut(s![i * t..(i + 1) * t, ..])
                .assign(&self.x.slice(s![s0 - lookback..s0 + horizon, ..]));
        }
        let n_static = self.statics.len() + 1;
        let statics = Array2::from_shape_fn((b, n_static), |(i, j)| {
            if j < self.statics.len() {
                self.statics[j]
            } else {
                intervals[i] as f64 / INTERVAL_SCALE
            }
        });
        let target = Array2::from_shape_fn((b, horizon), |(i, j)| self.y[starts[i] + j]);
        let mask = Array2::from_shape_fn(
            (b, horizon),
            |(i, j)| if j < intervals[i] { 1.0 } else { 0.0 },
        );
        (TideBatch { y, x, statics }, target, mask)
    }
}

pub(crate) fn prepare(
    data: &SeriesDataset,
    split: Split,
    threshold: f64,
) -> Result<(Prepared, Scaler, Scaler)> {
    let n_train = split.train_end;
    let (y_train, target_scaler) =
        Scaler::fit_series(&data.target[..n_train], "target", threshold)?;
    let mut y: Vec<f64> = data
        .target
        .iter()
        .map(|&v| target_scaler.scale(0, v))
        .collect();
    y[..n_train].copy_from_slice(&y_train);
    let (x_train, covariate_scaler) = if data.covariates.ncols() == 0 {
        (Array2::zeros((n_train, 0)), Scaler::identity(&[]))
    } else {
        Scaler::fit(
            data.covariates.slice(s![..n_train, ..]),
            &data.covariate_names,
            threshold,
        )?
    };
    let mut x = covariate_scaler.transform(data.covariates.view())?;
    x.slice_mut(s![..n_train, ..]).assign(&x_train);
    Ok((
        Prepared {
            y,
            x,
            statics: data.statics.clone(),
        },
        target_scaler,
        covariate_scaler,
    ))
}

fn validation_loss(model: &TideModel, prep: &Prepared, starts: &[usize]) -> f64 {
    let (l, h) = (model.config.lookback, model.config.horizon);
    let k = model.config.max_interval();
    let mut total = 0.0;
    let mut count = 0.0;
    for chunk in starts.chunks(256) {
        let intervals = vec![k; chunk.len()];
        let (batch, target, mask) = prep.assemble(chunk, &intervals, l, h);
        let (out, _) = model
            .net
            .forward(&model.params, &batch, &mut Mode::Inference);
        let (loss, _) = masked_mse(out.view(), target.view(), mask.view());
        let n = mask.sum();
        total += loss * n;
        count += n;
    }
    total / count
}

/// Trains one TiDE model on `data` with the chronological split. Each
/// training sample draws its interval uniformly from the configured set;
/// the loss covers the first `interval` horizon steps. Validation uses the
/// largest interval. Returns the best-validation parameters.
pub fn train_tide(data: &SeriesDataset, config: &TideConfig) -> Result<(TideModel, TrainReport)> {
    config.validate()?;
    data.validate()?;
    let (l, h) = (config.lookback, config.horizon);
    let split = Split::chronological(data.len());
    let (train, val, _) = split.windows(l, h);
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(format!(
            "series of {} steps is too short for lookback {l} and horizon {h}",
            data.len()
        )));
    }
    let shape = TideShape {
        n_covariates: data.covariates.ncols(),
        n_static: data.statics.len(),
    };
    let first = data.target[0];
    if data.target[..split.validation_end]
        .iter()
        .all(|&v| v == first)
    {
        return Ok(constant_model(data, config, shape, split, &val));
    }
    let (prep, target_scaler, covariate_scaler) = prepare(data, split, config.outlier_threshold)?;
    let mut model = TideModel::new(config.clone(), shape, target_scaler, covariate_scaler)?;
    let mut adam = Adam::new(model.params.len(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7469_6465);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.params.clone();
    let mut curve = Vec::new();
    let mut order = train.clone();
    let mut stopped_early = false;
    let mut grads = vec![0.0; model.params.len()];

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let intervals: Vec<usize> = chunk
                .iter()
                .map(|_| config.interval_set[rng.random_range(0..config.interval_set.len())])
                .collect();
            let (batch, target, mask) = prep.assemble(chunk, &intervals, l, h);
            let (out, cache) =
                model
                    .net
                    .forward(&model.params, &batch, &mut Mode::Training(&mut rng));
            let (loss, d) = masked_mse(out.view(), target.view(), mask.view());
            grads.fill(0.0);
            model.net.backward(&model.params, &mut grads, &cache, &d);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                let block = model
                    .net
                    .layout
                    .first_non_finite(&grads)
                    .or_else(|| model.net.layout.first_non_finite(&model.params))
                    .unwrap_or("output");
                return Err(Error::NanLoss(format!(
                    "epoch {epoch}, batch {bi}, parameter block `{block}`"
                )));
            }
            adam.step(&mut model.params, &grads);
            epoch_loss += loss * chunk.len() as f64;
        }
        let validation = validation_loss(&model, &prep, &val);
        if !validation.is_finite() {
            return Err(Error::NanLoss(format!("epoch {epoch}, validation")));
        }
        curve.push(EpochLoss {
            epoch,
            train: epoch_loss / train.len() as f64,
            validation,
        });
        log::debug!(
            "epoch {epoch}: train {:.6} validation {validation:.6}",
            epoch_loss / train.len() as f64
        );
        match stopper.observe(epoch, validation) {
            Progress::Improved => best.clone_from(&model.params),
            Progress::Stalled => {}
            Progress::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    model.params = best;
    Ok((
        model,
        TrainReport {
            epochs_run: curve.len(),
            best_epoch: stopper.best_epoch,
            best_validation_loss: stopper.best,
            stopped_early,
            loss_curve: curve,
        },
    ))
}

/// A constant training target leaves nothing to learn: all-zero parameters
/// output the scaler mean, which is the constant itself.
fn constant_model(
    data: &SeriesDataset,
    config: &TideConfig,
    shape: TideShape,
    split: Split,
    val: &[usize],
) -> (TideModel, TrainReport) {
    log::warn!("constant training target; returning the zero network");
    let target_scaler = Scaler {
        names: vec!["target".into()],
        means: vec![data.target[0]],
        stds: vec![1.0],
    };
    let covariate_scaler = if data.covariates.ncols() == 0 {
        Scaler::identity(&[])
    } else {
        Scaler::fit(
            data.covariates.slice(s![..split.train_end, ..]),
            &data.covariate_names,
            config.outlier_threshold,
        )
        .map(|(_, s)| s)
        .unwrap_or_else(|_| Scaler::identity(&data.covariate_names))
    };
    let mut model = TideModel::new(config.clone(), shape, target_scaler, covariate_scaler)
        .expect("validated config");
    model.params.fill(0.0);
    let prep = Prepared {
        y: data
            .target
            .iter()
            .map(|&v| model.target_scaler.scale(0, v))
            .collect(),
        x: model
            .covariate_scaler
            .transform(data.covariates.view())
            .expect("matching width"),
        statics: data.statics.clone(),
    };
    let validation = validation_loss(&model, &prep, val);
    (
        model,
        TrainReport {
            epochs_run: 0,
            best_epoch: 0,
            best_validation_loss: validation,
            stopped_early: false,
            loss_curve: Vec::new(),
        },
    )
}

/// Columns of `matrix` named by `wanted`, in that order.
pub fn select_columns(
    matrix: &Array2<f64>,
    names: &[String],
    wanted: &[String],
) -> Result<Array2<f64>> {
    let idx = wanted
        .iter()
        .map(|w| {
            names
                .iter()
                .position(|n| n == w)
                .ok_or_else(|| Error::MissingEntry(format!("covariate `{w}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(matrix.select(Axis(1), &idx))
}

/// Indices of columns holding a single value.
pub fn constant_columns(x: &Array2<f64>) -> Vec<usize> {
    x.axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, c)| {
            let first = c[0];
            c.iter().all(|&v| v == first)
        })
        .map(|(i, _)| i)
        .collect()
}
