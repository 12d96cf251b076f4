//! TiDE encoder-decoder with covariate projection, temporal decoder and a
//! global linear skip from the look-back window.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{Dense, Layout, Mode, ResidualBlock, ResidualCache};
use super::scaler::Scaler;
use crate::container::{config_echo, parse_config, ModelContainer, Section};
use crate::error::{Error, Result};

pub const HIDDEN_SIZES: [usize; 3] = [256, 512, 1024];
pub const LAYER_COUNTS: [usize; 3] = [1, 2, 3];
pub const DECODER_OUTPUT_DIMS: [usize; 4] = [4, 8, 16, 32];
pub const TEMPORAL_HIDDEN: [usize; 3] = [32, 64, 128];
pub const DROPOUTS: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.5];
pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-5, 1e-2);
pub const DEFAULT_INTERVALS: [usize; 4] = [6, 12, 24, 48];
/// Interval covariate value = interval / INTERVAL_SCALE.
pub const INTERVAL_SCALE: f64 = 48.0;
pub const MAX_HORIZON: usize = 48;
const REVIN_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TideConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub hidden_size: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub decoder_output_dim: usize,
    pub temporal_decoder_hidden: usize,
    /// Width of each projected covariate vector.
    pub covariate_proj_dim: usize,
    pub dropout: f64,
    pub layer_norm: bool,
    pub learning_rate: f64,
    pub revin: bool,
    pub interval_set: Vec<usize>,
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub outlier_threshold: f64,
}

impl Default for TideConfig {
    fn default() -> Self {
        Self {
            lookback: 48,
            horizon: 48,
            hidden_size: 256,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            decoder_output_dim: 8,
            temporal_decoder_hidden: 32,
            covariate_proj_dim: 4,
            dropout: 0.1,
            layer_norm: true,
            learning_rate: 1e-3,
            revin: false,
            interval_set: DEFAULT_INTERVALS.to_vec(),
            seed: 0,
            batch_size: 32,
            max_epochs: 100,
            patience: 20,
            outlier_threshold: 5.0,
        }
    }
}

impl TideConfig {
    /// Four residual blocks of 128 units in encoder and decoder, dropout 0.1,
    /// learning rate 1e-3. Sits outside the tuning ranges but is accepted
    /// by [`TideConfig::validate`].
    pub fn prose_preset() -> Self {
        Self {
            hidden_size: 128,
            n_encoder_layers: 4,
            n_decoder_layers: 4,
            dropout: 0.1,
            learning_rate: 1e-3,
            ..Self::default()
        }
    }

    fn is_prose_architecture(&self) -> bool {
        self.hidden_size == 128 && self.n_encoder_layers == 4 && self.n_decoder_layers == 4
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.is_prose_architecture() {
            if !HIDDEN_SIZES.contains(&self.hidden_size) {
                return bad(format!(
                    "hidden_size {} not in {HIDDEN_SIZES:?}",
                    self.hidden_size
                ));
            }
            if !LAYER_COUNTS.contains(&self.n_encoder_layers) {
                return bad(format!(
                    "n_encoder_layers {} not in {LAYER_COUNTS:?}",
                    self.n_encoder_layers
                ));
            }
            if !LAYER_COUNTS.contains(&self.n_decoder_layers) {
                return bad(format!(
                    "n_decoder_layers {} not in {LAYER_COUNTS:?}",
                    self.n_decoder_layers
                ));
            }
        }
        if !DECODER_OUTPUT_DIMS.contains(&self.decoder_output_dim) {
            return bad(format!(
                "decoder_output_dim {} not in {DECODER_OUTPUT_DIMS:?}",
                self.decoder_output_dim
            ));
        }
        if !TEMPORAL_HIDDEN.contains(&self.temporal_decoder_hidden) {
            return bad(format!(
                "temporal_decoder_hidden {} not in {TEMPORAL_HIDDEN:?}",
                self.temporal_decoder_hidden
            ));
        }
        if !DROPOUTS.contains(&self.dropout) {
            return bad(format!("dropout {} not in {DROPOUTS:?}", self.dropout));
        }
        let (lo, hi) = LEARNING_RATE_RANGE;
        if !(lo..=hi).contains(&self.learning_rate) {
            return bad(format!(
                "learning_rate {} outside [{lo}, {hi}]",
                self.learning_rate
            ));
        }
        if self.lookback == 0 || self.horizon == 0 || self.horizon > MAX_HORIZON {
            return bad(format!(
                "need lookback >= 1 and 1 <= horizon <= {MAX_HORIZON}, got {} and {}",
                self.lookback, self.horizon
            ));
        }
        if self.covariate_proj_dim == 0
            || self.batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
        {
            return bad(
                "covariate_proj_dim, batch_size, max_epochs and patience must be positive".into(),
            );
        }
        if self.interval_set.is_empty() {
            return bad("interval_set is empty".into());
        }
        let mut sorted = self.interval_set.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.interval_set.len()
            || sorted[0] == 0
            || *sorted.last().unwrap() > self.horizon
        {
            return bad(format!(
                "interval_set {:?} must hold distinct intervals in 1..={}",
                self.interval_set, self.horizon
            ));
        }
        if !(self.outlier_threshold > 0.0) {
            return bad("outlier_threshold must be positive".into());
        }
        Ok(())
    }

    pub fn max_interval(&self) -> usize {
        *self.interval_set.iter().max().expect("validated")
    }
}

/// Data-dependent widths fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TideShape {
    pub n_covariates: usize,
    /// Static attributes, not counting the interval covariate.
    pub n_static: usize,
}

/// One network input in model units. Rows of `x` are (sample, step) pairs,
/// sample-major, over the L + H window.
#[derive(Debug, Clone, PartialEq)]
pub struct TideBatch {
    pub y: Array2<f64>,
    pub x: Array2<f64>,
    pub statics: Array2<f64>,
}

impl TideBatch {
    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TideNet {
    pub lookback: usize,
    pub horizon: usize,
    pub proj_dim: usize,
    pub decoder_output_dim: usize,
    pub n_covariates: usize,
    pub n_static: usize,
    pub revin: bool,
    pub layout: Layout,
    pub projection: ResidualBlock,
    pub encoder: Vec<ResidualBlock>,
    pub decoder: Vec<ResidualBlock>,
    pub temporal: ResidualBlock,
    pub global: Dense,
}

pub struct TideCache {
    yn: Array2<f64>,
    sigma: Option<Array1<f64>>,
    projection: ResidualCache,
    encoder: Vec<ResidualCache>,
    decoder: Vec<ResidualCache>,
    temporal: ResidualCache,
}

/// Per-row standardization of the look-back window.
pub fn revin_normalize(y: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = y.ncols() as f64;
    let mean = y.mean_axis(Axis(1)).expect("non-empty");
    let centred = y - &mean.view().insert_axis(Axis(1));
    let sigma = (centred.mapv(|v| v * v).sum_axis(Axis(1)) / n).mapv(|v| (v + REVIN_EPS).sqrt());
    let yn = &centred / &sigma.view().insert_axis(Axis(1));
    (yn, mean, sigma)
}

pub fn revin_denormalize(
    out: &Array2<f64>,
    mean: &Array1<f64>,
    sigma: &Array1<f64>,
) -> Array2<f64> {
    out * &sigma.view().insert_axis(Axis(1)) + &mean.view().insert_axis(Axis(1))
}

impl TideNet {
    pub fn new(config: &TideConfig, shape: TideShape) -> Self {
        let (l, h, q) = (config.lookback, config.horizon, config.covariate_proj_dim);
        let hid = config.hidden_size;
        let pd = config.decoder_output_dim;
        let (ln, dr) = (config.layer_norm, config.dropout);
        let mut layout = Layout::default();
        let projection = ResidualBlock::new(
            &mut layout,
            "projection",
            shape.n_covariates,
            hid,
            q,
            ln,
            dr,
        );
        let enc_in = l + (l + h) * q + shape.n_static + 1;
        let encoder = (0..config.n_encoder_layers)
            .map(|i| {
                let input = if i == 0 { enc_in } else { hid };
                ResidualBlock::new(&mut layout, &format!("encoder{i}"), input, hid, hid, ln, dr)
            })
            .collect();
        let decoder = (0..config.n_decoder_layers)
            .map(|i| {
                let output = if i + 1 == config.n_decoder_layers {
                    pd * h
                } else {
                    hid
                };
                ResidualBlock::new(
                    &mut layout,
                    &format!("decoder{i}"),
                    hid,
                    hid,
                    output,
                    ln,
                    dr,
                )
            })
            .collect();
        // A one-wide layer norm would erase the output, so the temporal
        // decoder never normalizes.
        let temporal = ResidualBlock::new(
            &mut layout,
            "temporal",
            pd + q,
            config.temporal_decoder_hidden,
            1,
            false,
            dr,
        );
        let global = Dense::new(&mut layout, "global", l, h);
        Self {
            lookback: l,
            horizon: h,
            proj_dim: q,
            decoder_output_dim: pd,
            n_covariates: shape.n_covariates,
            n_static: shape.n_static + 1,
            revin: config.revin,
            layout,
            projection,
            encoder,
            decoder,
            temporal,
            global,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn check(&self, params: &[f64], batch: &TideBatch) -> Result<()> {
        let b = batch.len();
        let t = self.lookback + self.horizon;
        if params.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, network needs {}",
                params.len(),
                self.n_params()
            )));
        }
        if b == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if batch.y.ncols() != self.lookback {
            return Err(Error::Shape(format!(
                "history width {} != lookback {}",
                batch.y.ncols(),
                self.lookback
            )));
        }
        if batch.x.dim() != (b * t, self.n_covariates) {
            return Err(Error::Shape(format!(
                "covariates {:?} != expected ({}, {})",
                batch.x.dim(),
                b * t,
                self.n_covariates
            )));
        }
        if batch.statics.dim() != (b, self.n_static) {
            return Err(Error::Shape(format!(
                "static attributes {:?} != expected ({b}, {})",
                batch.statics.dim(),
                self.n_static
            )));
        }
        Ok(())
    }

    /// Output has one row per sample and one column per horizon step.
    pub fn forward(
        &self,
        p: &[f64],
        batch: &TideBatch,
        mode: &mut Mode,
    ) -> (Array2<f64>, TideCache) {
        let b = batch.len();
        let (l, h, q, pd) = (
            self.lookback,
            self.horizon,
            self.proj_dim,
            self.decoder_output_dim,
        );
        let t = l + h;
        let (yn, stats) = if self.revin {
            let (yn, mean, sigma) = revin_normalize(&batch.y);
            (yn, Some((mean, sigma)))
        } else {
            (batch.y.clone(), None)
        };

        let (proj, projection) = self.projection.forward(p, batch.x.clone(), mode);
        let flat = proj.to_shape((b, t * q)).expect("contiguous");
        let mut e = concatenate![Axis(1), yn.view(), flat.view(), batch.statics.view()];
        let mut encoder = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            let (y, c) = block.forward(p, e, mode);
            encoder.push(c);
            e = y;
        }
        let mut decoder = Vec::with_capacity(self.decoder.len());
        for block in &self.decoder {
            let (y, c) = block.forward(p, e, mode);
            decoder.push(c);
            e = y;
        }
        let d = e
            .to_shape((b * h, pd))
            .expect("decoder output width")
            .into_owned();
        let future = Array2::from_shape_fn((b * h, q), |(r, c)| proj[[(r / h) * t + l + r % h, c]]);
        let td_in = concatenate![Axis(1), d.view(), future.view()];
        let (td, temporal) = self.temporal.forward(p, td_in, mode);
        let mut out = td
            .to_shape((b, h))
            .expect("one output per step")
            .into_owned();
        out += &self.global.forward(p, yn.view());
        let sigma = match stats {
            Some((mean, sigma)) => {
                out = revin_denormalize(&out, &mean, &sigma);
                Some(sigma)
            }
            None => None,
        };
        (
            out,
            TideCache {
                yn,
                sigma,
                projection,
                encoder,
                decoder,
                temporal,
            },
        )
    }

    /// Accumulates dL/dparams into `g` given dL/d(output).
    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &TideCache, d_out: &Array2<f64>) {
        let b = d_out.nrows();
        let (l, h, q, pd) = (
            self.lookback,
            self.horizon,
            self.proj_dim,
            self.decoder_output_dim,
        );
        let t = l + h;
        let mut dn = d_out.clone();
        if let Some(sigma) = &cache.sigma {
            dn *= &sigma.view().insert_axis(Axis(1));
        }
        self.global
            .backward(p, g, cache.yn.view(), dn.view(), false);
        let dtd = dn.to_shape((b * h, 1)).expect("reshape").into_owned();
        let dtd_in = self
            .temporal
            .backward(p, g, &cache.temporal, dtd, true)
            .expect("requested");
        let mut de = dtd_in
            .slice(s![.., ..pd])
            .to_shape((b, h * pd))
            .expect("reshape")
            .into_owned();
        for (block, c) in self.decoder.iter().zip(&cache.decoder).rev() {
            de = block.backward(p, g, c, de, true).expect("requested");
        }
        for (block, c) in self.encoder.iter().zip(&cache.encoder).rev() {
            de = block.backward(p, g, c, de, true).expect("requested");
        }
        let mut dproj = de
            .slice(s![.., l..l + t * q])
            .to_shape((b * t, q))
            .expect("reshape")
            .into_owned();
        let dfuture = dtd_in.slice(s![.., pd..]);
        for (r, src) in dfuture.outer_iter().enumerate() {
            let mut dst = dproj.row_mut((r / h) * t + l + r % h);
            dst += &src;
        }
        self.projection
            .backward(p, g, &cache.projection, dproj, false);
    }
}

/// Validated inference-mode forward pass.
pub fn tide_forward(net: &TideNet, params: &[f64], batch: &TideBatch) -> Result<Array2<f64>> {
    net.check(params, batch)?;
    Ok(net.forward(params, batch, &mut Mode::Inference).0)
}

/// Raw-unit inputs for one forecast. Covariate row `i` belongs to the time
/// step `history.len() - lookback + i`; at least `lookback + horizon` rows
/// are needed for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTask {
    pub history: Vec<f64>,
    pub covariates: Array2<f64>,
    pub statics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TideModel {
    pub config: TideConfig,
    pub shape: TideShape,
    pub net: TideNet,
    pub params: Vec<f64>,
    pub target_scaler: Scaler,
    pub covariate_scaler: Scaler,
}

#[derive(Serialize, Deserialize)]
struct ModelEcho {
    tide: TideConfig,
    shape: TideShape,
    covariate_names: Vec<String>,
}

impl TideModel {
    pub fn new(
        config: TideConfig,
        shape: TideShape,
        target_scaler: Scaler,
        covariate_scaler: Scaler,
    ) -> Result<Self> {
        config.validate()?;
        if covariate_scaler.len() != shape.n_covariates || target_scaler.len() != 1 {
            return Err(Error::Shape("scalers do not match the model shape".into()));
        }
        let net = TideNet::new(&config, shape);
        let params = net.layout.initialize(config.seed);
        Ok(Self {
            config,
            shape,
            net,
            params,
            target_scaler,
            covariate_scaler,
        })
    }

    fn check_task(&self, task: &ForecastTask, offset: usize) -> Result<()> {
        let (l, h) = (self.config.lookback, self.config.horizon);
        if task.history.len() < l {
            return Err(Error::Shape(format!(
                "history has {} values, lookback is {l}",
                task.history.len()
            )));
        }
        if task.covariates.ncols() != self.shape.n_covariates {
            return Err(Error::Shape(format!(
                "task has {} covariates, model expects {}",
                task.covariates.ncols(),
                self.shape.n_covariates
            )));
        }
        if task.covariates.nrows() < offset + l + h {
            return Err(Error::Shape(format!(
                "covariates cover {} steps, need {}",
                task.covariates.nrows(),
                offset + l + h
            )));
        }
        if task.statics.len() != self.shape.n_static {
            return Err(Error::Shape(format!(
                "task has {} static attributes, model expects {}",
                task.statics.len(),
                self.shape.n_static
            )));
        }
        if task.history.iter().any(|v| !v.is_finite())
            || task.covariates.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("forecast task".into()));
        }
        Ok(())
    }

    /// Model-unit batch of one sample for the window whose look-back ends at
    /// the end of `history` and whose covariates start at row `offset`.
    pub fn task_batch(
        &self,
        history: &[f64],
        task: &ForecastTask,
        offset: usize,
        interval: usize,
    ) -> Result<TideBatch> {
        let (l, h) = (self.config.lookback, self.config.horizon);
        let y = Array2::from_shape_fn((1, l), |(_, i)| {
            self.target_scaler.scale(0, history[history.len() - l + i])
        });
        let x = self
            .covariate_scaler
            .transform(task.covariates.slice(s![offset..offset + l + h, ..]))?;
        let mut statics: Vec<f64> = task.statics.clone();
        statics.push(interval as f64 / INTERVAL_SCALE);
        let statics = Array2::from_shape_vec((1, statics.len()), statics).expect("row");
        Ok(TideBatch { y, x, statics })
    }

    /// H raw-unit predictions following the end of `task.history`,
    /// conditioned on `interval`.
    pub fn forecast(&self, task: &ForecastTask, interval: usize) -> Result<Vec<f64>> {
        self.check_task(task, 0)?;
        self.forecast_from(&task.history, task, 0, interval)
    }

    pub(crate) fn forecast_from(
        &self,
        history: &[f64],
        task: &ForecastTask,
        offset: usize,
        interval: usize,
    ) -> Result<Vec<f64>> {
        self.check_task(task, offset)?;
        let batch = self.task_batch(history, task, offset, interval)?;
        let out = tide_forward(&self.net, &self.params, &batch)?;
        Ok(out
            .iter()
            .map(|&v| self.target_scaler.unscale(0, v))
            .collect())
    }

    pub fn to_sections(&self, prefix: &str) -> Vec<Section> {
        let echo = ModelEcho {
            tide: self.config.clone(),
            shape: self.shape,
            covariate_names: self.covariate_scaler.names.clone(),
        };
        vec![
            Section::new(
                format!("{prefix}net"),
                config_echo(&echo),
                self.params.clone(),
            ),
            Section::new(
                format!("{prefix}target_scaler"),
                "",
                self.target_scaler.to_params(),
            ),
            Section::new(
                format!("{prefix}covariate_scaler"),
                "",
                self.covariate_scaler.to_params(),
            ),
        ]
    }

    pub fn from_sections(container: &ModelContainer, prefix: &str) -> Result<Self> {
        let net = container.section(&format!("{prefix}net"))?;
        let echo: ModelEcho = parse_config(net)?;
        let target_scaler = Scaler::from_params(
            vec!["target".into()],
            &container.section(&format!("{prefix}target_scaler"))?.params,
        )?;
        let covariate_scaler = Scaler::from_params(
            echo.covariate_names,
            &container
                .section(&format!("{prefix}covariate_scaler"))?
                .params,
        )?;
        let mut model = Self::new(echo.tide, echo.shape, target_scaler, covariate_scaler)?;
        if net.params.len() != model.params.len() {
            return Err(Error::PayloadLength {
                expected: model.params.len(),
                found: net.params.len(),
            });
        }
        model.params.clone_from(&net.params);
        Ok(model)
    }

    pub fn to_container(&self) -> ModelContainer {
        let mut c = ModelContainer::new("tide");
        for s in self.to_sections("") {
            c.push(s);
        }
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_kind("tide")?;
        Self::from_sections(c, "")
    }
}

/// Loss closure over a fixed batch for gradient checking.
pub struct TideObjective<'a> {
    pub net: &'a TideNet,
    pub batch: &'a TideBatch,
    pub target: &'a Array2<f64>,
    pub mask: &'a Array2<f64>,
}

impl super::layers::Objective for TideObjective<'_> {
    fn loss(&self, p: &[f64]) -> f64 {
        let (out, _) = self.net.forward(p, self.batch, &mut Mode::Inference);
        super::layers::masked_mse(out.view(), self.target.view(), self.mask.view()).0
    }

    fn loss_and_grad(&self, p: &[f64]) -> (f64, Vec<f64>) {
        let (out, cache) = self.net.forward(p, self.batch, &mut Mode::Inference);
        let (loss, d) = super::layers::masked_mse(out.view(), self.target.view(), self.mask.view());
        let mut g = vec![0.0; p.len()];
        self.net.backward(p, &mut g, &cache, &d);
        (loss, g)
    }
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients of the MSE over `samples` parameters. Dropout is ignored.
pub fn gradient_check(
    net: &TideNet,
    params: &[f64],
    batch: &TideBatch,
    target: ArrayView2<f64>,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    net.check(params, batch)?;
    if target.dim() != (batch.len(), net.horizon) {
        return Err(Error::Shape(format!(
            "target {:?} != ({}, {})",
            target.dim(),
            batch.len(),
            net.horizon
        )));
    }
    let target = target.to_owned();
    let mask = Array2::ones(target.raw_dim());
    let objective = TideObjective {
        net,
        batch,
        target: &target,
        mask: &mask,
    };
    Ok(
        super::layers::gradient_check(&objective, params, Some(&net.layout), samples, seed)
            .max_relative_error,
    )
}
