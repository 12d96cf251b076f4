//! Per-cell shared MLP over a 3x3 stencil of the two most recent states,
//! predicting a residual update of the centre cell.

use ndarray::{s, Array2, Array3, Array4, ArrayView3, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::container::{config_echo, parse_config, ModelContainer, Section};
use crate::data::{GridSpec, GridStateSequence};
use crate::error::{Error, Result};
use crate::neural::layers::{mat, mat_mut, row, row_mut, Block, Dense, Init, Layout};

pub const STENCIL: usize = 9;
/// Static per-cell features: latitude, longitude, land mask.
pub const N_STATIC: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridModelConfig {
    pub hidden_size: usize,
    /// Hidden tanh layers, at least one.
    pub hidden_layers: usize,
    pub learning_rate: f64,
    /// Rollouts per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GridModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            hidden_layers: 2,
            learning_rate: 1e-3,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl GridModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.hidden_layers == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "hidden_size, hidden_layers and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Forcing fields aligned with a state sequence: `data[t]` is used when
/// predicting state `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSequence {
    pub names: Vec<String>,
    /// `(time, forcing, lat, lon)`.
    pub data: Array4<f64>,
}

impl ForcingSequence {
    /// Forcing taken from variables of a state sequence.
    pub fn from_variables(
        seq: &GridStateSequence,
        variables: &[&str],
        prefix: &str,
    ) -> Result<Self> {
        let idx = variables
            .iter()
            .map(|v| {
                seq.spec()
                    .variable_index(v)
                    .ok_or_else(|| Error::MissingEntry(format!("grid variable `{v}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            names: variables.iter().map(|v| format!("{prefix}{v}")).collect(),
            data: seq.data().select(Axis(1), &idx).mapv(f64::from),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GridNet {
    pub layout: Layout,
    pub state_in: Block,
    pub forcing_in: Block,
    pub bias_in: Block,
    pub hidden: Vec<Dense>,
    pub out: Dense,
}

impl GridNet {
    fn new(n_vars: usize, n_forcing: usize, config: &GridModelConfig) -> Self {
        let mut layout = Layout::default();
        let n_state = 2 * STENCIL * n_vars + N_STATIC;
        let h = config.hidden_size;
        let fan_in = n_state + n_forcing;
        let state_in = layout.add("in.state", n_state, h, Init::FanIn(fan_in));
        let forcing_in = layout.add("in.forcing", n_forcing, h, Init::Zeros);
        let bias_in = layout.add("in.b", 1, h, Init::Zeros);
        let hidden = (1..config.hidden_layers)
            .map(|k| Dense::new(&mut layout, &format!("hidden{k}"), h, h))
            .collect();
        let out = Dense::new(&mut layout, "out", h, n_vars);
        Self {
            layout,
            state_in,
            forcing_in,
            bias_in,
            hidden,
            out,
        }
    }
}

/// Activations kept for the reverse pass of one step.
pub(crate) struct StepCache {
    features: Array2<f64>,
    forcing: Option<Array2<f64>>,
    /// Post-tanh activation of each hidden layer.
    acts: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridForecaster {
    pub config: GridModelConfig,
    pub spec: GridSpec,
    pub forcing_names: Vec<String>,
    pub state_means: Vec<f64>,
    pub state_stds: Vec<f64>,
    /// Scale of the residual output per variable.
    pub diff_stds: Vec<f64>,
    pub forcing_means: Vec<f64>,
    pub forcing_stds: Vec<f64>,
    /// Placeholder land mask, one value per cell.
    pub land_mask: Vec<f64>,
    pub params: Vec<f64>,
    net: GridNet,
}

#[derive(Serialize, Deserialize)]
struct GridEcho {
    config: GridModelConfig,
    spec: GridSpec,
    forcing_names: Vec<String>,
    state_means: Vec<f64>,
    state_stds: Vec<f64>,
    diff_stds: Vec<f64>,
    forcing_means: Vec<f64>,
    forcing_stds: Vec<f64>,
    land_mask: Vec<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl GridForecaster {
    /// Fresh model with normalization statistics from `training`.
    pub fn new(config: GridModelConfig, training: &GridStateSequence) -> Result<Self> {
        config.validate()?;
        if training.n_times() < 3 {
            return Err(Error::invalid(
                "grid training data needs at least 3 time steps",
            ));
        }
        let spec = training.spec().clone();
        let d = training.data();
        let nv = spec.n_vars();
        let mut state_means = Vec::with_capacity(nv);
        let mut state_stds = Vec::with_capacity(nv);
        let mut diff_stds = Vec::with_capacity(nv);
        for v in 0..nv {
            let field = d.index_axis(Axis(1), v);
            let (m, sd) = mean_std(field.iter().map(|&x| x as f64));
            let diffs = &field.slice(s![1.., .., ..]).mapv(f64::from)
                - &field.slice(s![..-1, .., ..]).mapv(f64::from);
            let (_, dsd) = mean_std(diffs.iter().copied());
            if !(sd > 0.0) || !(dsd > 0.0) {
                return Err(Error::ZeroVariance(spec.variables[v].clone()));
            }
            state_means.push(m);
            state_stds.push(sd);
            diff_stds.push(dsd);
        }
        let net = GridNet::new(nv, 0, &config);
        let params = net.layout.initialize(config.seed);
        Ok(Self {
            land_mask: vec![0.0; spec.n_cells()],
            config,
            spec,
            forcing_names: Vec::new(),
            state_means,
            state_stds,
            diff_stds,
            forcing_means: Vec::new(),
            forcing_stds: Vec::new(),
            params,
            net,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.spec.n_vars()
    }

    pub fn n_forcing(&self) -> usize {
        self.forcing_names.len()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn layout(&self) -> &Layout {
        &self.net.layout
    }

    /// Same model with every parameter zero: the persistence forecaster.
    pub fn zeroed(&self) -> Self {
        Self {
            params: vec![0.0; self.params.len()],
            ..self.clone()
        }
    }

    /// Sets the forcing normalization from data; call before training the
    /// forcing weights.
    pub fn fit_forcing_normalization(&mut self, forcing: &ForcingSequence) -> Result<()> {
        self.check_forcing_names(forcing)?;
        for f in 0..self.n_forcing() {
            let (m, sd) = mean_std(forcing.data.index_axis(Axis(1), f).iter().copied());
            self.forcing_means[f] = m;
            self.forcing_stds[f] = if sd > 0.0 { sd } else { 1.0 };
        }
        Ok(())
    }

    pub(crate) fn check_forcing_names(&self, forcing: &ForcingSequence) -> Result<()> {
        if forcing.names != self.forcing_names {
            return Err(Error::Shape(format!(
                "forcing {:?} does not match model forcing {:?}",
                forcing.names, self.forcing_names
            )));
        }
        let (_, nf, ny, nx) = forcing.data.dim();
        if nf != self.n_forcing() || ny != self.spec.n_lat || nx != self.spec.n_lon {
            return Err(Error::Shape(format!(
                "forcing array {:?}",
                forcing.data.shape()
            )));
        }
        Ok(())
    }

    fn static_features(&self, i: usize, j: usize) -> [f64; N_STATIC] {
        let half_lat = 0.5 * (self.spec.n_lat - 1) as f64;
        let half_lon = 0.5 * (self.spec.n_lon - 1) as f64;
        [
            (i as f64 - half_lat) / half_lat.max(1.0),
            (j as f64 - half_lon) / half_lon.max(1.0),
            self.land_mask[i * self.spec.n_lon + j],
        ]
    }

    fn check_state(&self, x: &ArrayView4<f64>) -> Result<()> {
        let (_, nv, ny, nx) = x.dim();
        if nv != self.n_vars() || ny != self.spec.n_lat || nx != self.spec.n_lon {
            return Err(Error::Shape(format!(
                "state batch {:?} does not fit {} variables on a {}x{} grid",
                x.shape(),
                self.n_vars(),
                self.spec.n_lat,
                self.spec.n_lon
            )));
        }
        Ok(())
    }

    /// Network input rows, one per (batch, cell): normalized stencils of the
    /// current then previous state, followed by the static features.
    fn features(&self, prev: ArrayView4<f64>, cur: ArrayView4<f64>) -> Array2<f64> {
        let (nb, nv, ny, nx) = cur.dim();
        let width = 2 * STENCIL * nv + N_STATIC;
        let mut f = Array2::zeros((nb * ny * nx, width));
        for b in 0..nb {
            for i in 0..ny {
                for j in 0..nx {
                    let r = (b * ny + i) * nx + j;
                    let mut row = f.row_mut(r);
                    for (level, x) in [cur, prev].iter().enumerate() {
                        for (k, (ci, cj)) in stencil(i, j, ny, nx).into_iter().enumerate() {
                            for v in 0..nv {
                                row[(level * STENCIL + k) * nv + v] =
                                    (x[[b, v, ci, cj]] - self.state_means[v]) / self.state_stds[v];
                            }
                        }
                    }
                    for (k, s) in self.static_features(i, j).into_iter().enumerate() {
                        row[2 * STENCIL * nv + k] = s;
                    }
                }
            }
        }
        f
    }

    fn forcing_rows(&self, forcing: ArrayView4<f64>) -> Array2<f64> {
        let (nb, nf, ny, nx) = forcing.dim();
        Array2::from_shape_fn((nb * ny * nx, nf), |(r, f)| {
            let (b, c) = (r / (ny * nx), r % (ny * nx));
            (forcing[[b, f, c / nx, c % nx]] - self.forcing_means[f]) / self.forcing_stds[f]
        })
    }

    /// One autoregressive step for a batch: `(batch, var, lat, lon)` in,
    /// the next state out.
    pub(crate) fn step_forward(
        &self,
        params: &[f64],
        prev: ArrayView4<f64>,
        cur: ArrayView4<f64>,
        forcing: Option<ArrayView4<f64>>,
    ) -> (Array4<f64>, StepCache) {
        let net = &self.net;
        let features = self.features(prev, cur);
        let mut z = features.dot(&mat(params, net.state_in));
        z += &row(params, net.bias_in);
        let forcing = match forcing {
            Some(f) if self.n_forcing() > 0 => {
                let rows = self.forcing_rows(f);
                z += &rows.dot(&mat(params, net.forcing_in));
                Some(rows)
            }
            _ => None,
        };
        let mut acts = vec![z.mapv(f64::tanh)];
        for layer in &net.hidden {
            let z = layer.forward(params, acts.last().expect("one layer").view());
            acts.push(z.mapv(f64::tanh));
        }
        let out = net
            .out
            .forward(params, acts.last().expect("one layer").view());
        let (nb, nv, ny, nx) = cur.dim();
        let mut next = cur.to_owned();
        for b in 0..nb {
            for i in 0..ny {
                for j in 0..nx {
                    let r = (b * ny + i) * nx + j;
                    for v in 0..nv {
                        next[[b, v, i, j]] += out[[r, v]] * self.diff_stds[v];
                    }
                }
            }
        }
        (
            next,
            StepCache {
                features,
                forcing,
                acts,
            },
        )
    }

    /// Reverse pass of one step. Accumulates parameter gradients into `g`
    /// and returns gradients with respect to `(prev, cur)`.
    pub(crate) fn step_backward(
        &self,
        params: &[f64],
        g: &mut [f64],
        cache: &StepCache,
        d_next: ArrayView4<f64>,
    ) -> (Array4<f64>, Array4<f64>) {
        let net = &self.net;
        let (nb, nv, ny, nx) = d_next.dim();
        let d_out = Array2::from_shape_fn((nb * ny * nx, nv), |(r, v)| {
            let (b, c) = (r / (ny * nx), r % (ny * nx));
            d_next[[b, v, c / nx, c % nx]] * self.diff_stds[v]
        });
        let last = cache.acts.last().expect("one layer");
        let mut d_act = net
            .out
            .backward(params, g, last.view(), d_out.view(), true)
            .expect("want input");
        for (k, layer) in net.hidden.iter().enumerate().rev() {
            let act = &cache.acts[k + 1];
            let dz = &d_act * &act.mapv(|a| 1.0 - a * a);
            d_act = layer
                .backward(params, g, cache.acts[k].view(), dz.view(), true)
                .expect("want input");
        }
        let dz = &d_act * &cache.acts[0].mapv(|a| 1.0 - a * a);
        ndarray::linalg::general_mat_mul(
            1.0,
            &cache.features.t(),
            &dz,
            1.0,
            &mut mat_mut(g, net.state_in),
        );
        if let Some(f) = &cache.forcing {
            ndarray::linalg::general_mat_mul(
                1.0,
                &f.t(),
                &dz,
                1.0,
                &mut mat_mut(g, net.forcing_in),
            );
        }
        row_mut(g, net.bias_in).scaled_add(1.0, &dz.sum_axis(Axis(0)));
        let d_features = dz.dot(&mat(params, net.state_in).t());
        let mut d_cur = d_next.to_owned();
        let mut d_prev = Array4::zeros(d_next.raw_dim());
        for b in 0..nb {
            for i in 0..ny {
                for j in 0..nx {
                    let r = (b * ny + i) * nx + j;
                    for (k, (ci, cj)) in stencil(i, j, ny, nx).into_iter().enumerate() {
                        for v in 0..nv {
                            let inv = 1.0 / self.state_stds[v];
                            d_cur[[b, v, ci, cj]] += d_features[[r, k * nv + v]] * inv;
                            d_prev[[b, v, ci, cj]] += d_features[[r, (STENCIL + k) * nv + v]] * inv;
                        }
                    }
                }
            }
        }
        (d_prev, d_cur)
    }

    /// Rolls forward `steps` states from `(prev, cur)`. `forcing[k]`, when
    /// given, is the forcing at the time of the `k`-th predicted state.
    pub fn rollout(
        &self,
        prev: ArrayView3<f64>,
        cur: ArrayView3<f64>,
        steps: usize,
        forcing: Option<&[Array3<f64>]>,
    ) -> Result<Vec<Array3<f64>>> {
        let mut prev4 = prev.insert_axis(Axis(0)).to_owned();
        let mut cur4 = cur.insert_axis(Axis(0)).to_owned();
        self.check_state(&prev4.view())?;
        self.check_state(&cur4.view())?;
        if self.n_forcing() > 0 && forcing.is_none_or(|f| f.len() < steps) {
            return Err(Error::Shape(format!(
                "model needs {} forcing fields for {steps} steps",
                self.n_forcing()
            )));
        }
        let mut out = Vec::with_capacity(steps);
        for k in 0..steps {
            let f4 = forcing
                .filter(|_| self.n_forcing() > 0)
                .map(|f| f[k].view().insert_axis(Axis(0)));
            if let Some(f) = &f4 {
                let d = f.dim();
                if d.1 != self.n_forcing() || d.2 != self.spec.n_lat || d.3 != self.spec.n_lon {
                    return Err(Error::Shape(format!("forcing field {:?}", f.shape())));
                }
            }
            let (next, _) = self.step_forward(&self.params, prev4.view(), cur4.view(), f4);
            out.push(next.index_axis(Axis(0), 0).to_owned());
            prev4 = std::mem::replace(&mut cur4, next);
        }
        Ok(out)
    }

    /// Forecast of states `t0 + 1 ..= t0 + steps` from the sequence states
    /// at `t0 - 1` and `t0`.
    pub fn forecast_from(
        &self,
        seq: &GridStateSequence,
        t0: usize,
        steps: usize,
        forcing: Option<&ForcingSequence>,
    ) -> Result<Vec<Array3<f64>>> {
        if t0 == 0 || t0 >= seq.n_times() {
            return Err(Error::invalid(format!(
                "issue index {t0} needs a previous state"
            )));
        }
        let fields = match forcing {
            Some(f) if self.n_forcing() > 0 => {
                self.check_forcing_names(f)?;
                if t0 + steps >= f.data.dim().0 {
                    return Err(Error::Shape(format!(
                        "forcing ends before step {}",
                        t0 + steps
                    )));
                }
                Some(
                    (1..=steps)
                        .map(|k| f.data.index_axis(Axis(0), t0 + k).to_owned())
                        .collect::<Vec<_>>(),
                )
            }
            _ => None,
        };
        let prev = seq.state(t0 - 1).mapv(f64::from);
        let cur = seq.state(t0).mapv(f64::from);
        self.rollout(prev.view(), cur.view(), steps, fields.as_deref())
    }

    pub fn to_container(&self) -> ModelContainer {
        let echo = GridEcho {
            config: self.config.clone(),
            spec: self.spec.clone(),
            forcing_names: self.forcing_names.clone(),
            state_means: self.state_means.clone(),
            state_stds: self.state_stds.clone(),
            diff_stds: self.diff_stds.clone(),
            forcing_means: self.forcing_means.clone(),
            forcing_stds: self.forcing_stds.clone(),
            land_mask: self.land_mask.clone(),
        };
        let mut c = ModelContainer::new("gridcaster");
        c.push(Section::new(
            "gridcaster",
            config_echo(&echo),
            self.params.clone(),
        ));
        c
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        c.expect_kind("gridcaster")?;
        let section = c.section("gridcaster")?;
        let e: GridEcho = parse_config(section)?;
        e.config.validate()?;
        e.spec.validate()?;
        let nv = e.spec.n_vars();
        let nf = e.forcing_names.len();
        let lens = [e.state_means.len(), e.state_stds.len(), e.diff_stds.len()];
        if lens.iter().any(|&l| l != nv)
            || e.forcing_means.len() != nf
            || e.forcing_stds.len() != nf
        {
            return Err(Error::Shape(
                "gridcaster statistics do not match its variables".into(),
            ));
        }
        if e.land_mask.len() != e.spec.n_cells() {
            return Err(Error::Shape("land mask does not match the grid".into()));
        }
        let net = GridNet::new(nv, nf, &e.config);
        if section.params.len() != net.layout.len() {
            return Err(Error::Shape(format!(
                "gridcaster has {} parameters, layout needs {}",
                section.params.len(),
                net.layout.len()
            )));
        }
        Ok(Self {
            config: e.config,
            spec: e.spec,
            forcing_names: e.forcing_names,
            state_means: e.state_means,
            state_stds: e.state_stds,
            diff_stds: e.diff_stds,
            forcing_means: e.forcing_means,
            forcing_stds: e.forcing_stds,
            land_mask: e.land_mask,
            params: section.params.clone(),
            net,
        })
    }
}

/// Edge-clamped 3x3 neighbourhood, row-major from the north-west corner.
fn stencil(i: usize, j: usize, ny: usize, nx: usize) -> [(usize, usize); STENCIL] {
    let mut out = [(0, 0); STENCIL];
    let mut k = 0;
    for di in [-1i64, 0, 1] {
        for dj in [-1i64, 0, 1] {
            let ci = (i as i64 + di).clamp(0, ny as i64 - 1) as usize;
            let cj = (j as i64 + dj).clamp(0, nx as i64 - 1) as usize;
            out[k] = (ci, cj);
            k += 1;
        }
    }
    out
}

/// Widens the input layer with zero-initialized weights for new forcing
/// covariates; outputs are unchanged until those weights are trained.
pub fn add_forcing_inputs(model: &GridForecaster, names: &[&str]) -> Result<GridForecaster> {
    if names.is_empty() {
        return Ok(model.clone());
    }
    let mut seen: std::collections::BTreeSet<&str> =
        model.forcing_names.iter().map(String::as_str).collect();
    seen.extend(model.spec.variables.iter().map(String::as_str));
    for n in names {
        if !seen.insert(n) {
            return Err(Error::invalid(format!(
                "forcing input `{n}` already present"
            )));
        }
    }
    let old = &model.net;
    let nf_old = model.n_forcing();
    let nf = nf_old + names.len();
    let net = GridNet::new(model.n_vars(), nf, &model.config);
    let mut params = vec![0.0; net.layout.len()];
    for ((name, src), (_, dst)) in old.layout.blocks().zip(net.layout.blocks()) {
        if name == "in.forcing" {
            // Old rows first, new rows stay zero.
            params[dst.offset..dst.offset + src.len()].copy_from_slice(&model.params[src.range()]);
        } else {
            params[dst.range()].copy_from_slice(&model.params[src.range()]);
        }
    }
    let mut out = GridForecaster {
        net,
        params,
        ..model.clone()
    };
    out.forcing_names
        .extend(names.iter().map(|n| n.to_string()));
    out.forcing_means.resize(nf, 0.0);
    out.forcing_stds.resize(nf, 1.0);
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ingestion::{generate_grid, SyntheticScenario};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_grid(seed: u64, hours: usize) -> GridStateSequence {
        let mut s = SyntheticScenario::new(seed, hours);
        s.wind.n_lat = 5;
        s.wind.n_lon = 6;
        generate_grid(&s).unwrap()
    }

    pub(crate) fn small_model(seq: &GridStateSequence) -> GridForecaster {
        GridForecaster::new(
            GridModelConfig {
                hidden_size: 8,
                hidden_layers: 2,
                ..GridModelConfig::default()
            },
            seq,
        )
        .unwrap()
    }

    #[test]
    fn zero_parameters_are_persistence() {
        let seq = small_grid(1, 24 * 6);
        let m = small_model(&seq).zeroed();
        let out = m.forecast_from(&seq, 3, 4, None).unwrap();
        let cur = seq.state(3).mapv(f64::from);
        for f in &out {
            assert_eq!(f, &cur);
        }
    }

    #[test]
    fn output_shape_matches_state() {
        let seq = small_grid(2, 24 * 6);
        let m = small_model(&seq);
        let out = m.forecast_from(&seq, 5, 3, None).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].dim(), (4, 5, 6));
        assert!(m.forecast_from(&seq, 0, 1, None).is_err());
    }

    #[test]
    fn stencil_clamps_at_edges() {
        let s = stencil(0, 0, 3, 3);
        assert_eq!(s[0], (0, 0));
        assert_eq!(s[4], (0, 0));
        assert_eq!(s[8], (1, 1));
        let s = stencil(2, 1, 3, 3);
        assert_eq!(s[7], (2, 1));
    }

    #[test]
    fn forcing_with_zero_weights_is_bit_identical() {
        let seq = small_grid(3, 24 * 6);
        let m = small_model(&seq);
        let ext = add_forcing_inputs(&m, &["hres_u10", "hres_v10"]).unwrap();
        assert_eq!(ext.n_forcing(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let forcing: Vec<Array3<f64>> = (0..3)
            .map(|_| Array3::from_shape_fn((2, 5, 6), |_| rng.random_range(-50.0..50.0)))
            .collect();
        let prev = seq.state(1).mapv(f64::from);
        let cur = seq.state(2).mapv(f64::from);
        let a = m.rollout(prev.view(), cur.view(), 3, None).unwrap();
        let b = ext
            .rollout(prev.view(), cur.view(), 3, Some(&forcing))
            .unwrap();
        assert_eq!(a, b);
        assert!(ext.rollout(prev.view(), cur.view(), 3, None).is_err());
    }

    #[test]
    fn forcing_names_are_checked() {
        let seq = small_grid(4, 48);
        let m = small_model(&seq);
        assert_eq!(add_forcing_inputs(&m, &[]).unwrap(), m);
        assert!(add_forcing_inputs(&m, &["a", "a"]).is_err());
        assert!(add_forcing_inputs(&m, &["u10"]).is_err());
        let ext = add_forcing_inputs(&m, &["a"]).unwrap();
        assert!(add_forcing_inputs(&ext, &["a"]).is_err());
        let ext2 = add_forcing_inputs(&ext, &["b"]).unwrap();
        assert_eq!(ext2.forcing_names, vec!["a", "b"]);
    }

    #[test]
    fn container_round_trip() {
        let seq = small_grid(5, 48);
        let m = add_forcing_inputs(&small_model(&seq), &["f"]).unwrap();
        let back = GridForecaster::from_container(
            &ModelContainer::decode(&m.to_container().encode()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, m);
    }
}
