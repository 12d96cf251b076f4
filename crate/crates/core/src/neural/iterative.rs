//! Randomized iterative forecasting: roll the model forward along chains of
//! intervals that sum to the target lead and average the trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tide::{ForecastTask, TideModel};
use crate::error::{Error, Result};

/// `reachable[n]` is true when `n` is a sum of intervals (with repetition).
fn reachability(intervals: &[usize], up_to: usize) -> Vec<bool> {
    let mut reachable = vec![false; up_to + 1];
    reachable[0] = true;
    for n in 1..=up_to {
        reachable[n] = intervals.iter().any(|&k| k <= n && reachable[n - k]);
    }
    reachable
}

/// Leads in `1..=up_to` expressible as sums of `intervals`.
pub fn feasible_leads(intervals: &[usize], up_to: usize) -> Vec<usize> {
    reachability(intervals, up_to)
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &r)| r)
        .map(|(n, _)| n)
        .collect()
}

/// A homogeneous chain (one interval repeated) when some interval divides
/// the lead, chosen uniformly among the divisors; otherwise a mixed chain
/// built step by step from intervals that keep the remainder reachable.
pub fn sample_chain(intervals: &[usize], lead: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let reachable = reachability(intervals, lead);
    if lead == 0 || !reachable[lead] {
        return Err(Error::UnreachableLead {
            lead,
            intervals: intervals.to_vec(),
            feasible: feasible_leads(intervals, lead.max(*intervals.iter().max().unwrap_or(&1))),
        });
    }
    let mut sorted = intervals.to_vec();
    sorted.sort_unstable();
    let divisors: Vec<usize> = sorted.iter().copied().filter(|k| lead % k == 0).collect();
    if !divisors.is_empty() {
        let k = divisors[rng.random_range(0..divisors.len())];
        return Ok(vec![k; lead / k]);
    }
    let mut chain = Vec::new();
    let mut rem = lead;
    while rem > 0 {
        let options: Vec<usize> = sorted
            .iter()
            .copied()
            .filter(|&k| k <= rem && reachable[rem - k])
            .collect();
        let k = options[rng.random_range(0..options.len())];
        chain.push(k);
        rem -= k;
    }
    Ok(chain)
}

/// Raw-unit trajectory of length `sum(chain)` obtained by feeding the first
/// `k` predictions of each step back into the look-back window.
pub fn predict_chain(model: &TideModel, task: &ForecastTask, chain: &[usize]) -> Result<Vec<f64>> {
    let h = model.config.horizon;
    if let Some(&k) = chain.iter().find(|&&k| k == 0 || k > h) {
        return Err(Error::invalid(format!("chain step {k} outside 1..={h}")));
    }
    let mut history = task.history.clone();
    let mut trajectory = Vec::with_capacity(chain.iter().sum());
    let mut offset = 0;
    for &k in chain {
        let out = model.forecast_from(&history, task, offset, k)?;
        history.extend_from_slice(&out[..k]);
        trajectory.extend_from_slice(&out[..k]);
        offset += k;
    }
    Ok(trajectory)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeForecast {
    /// Mean over chains for leads 1..=lead.
    pub mean: Vec<f64>,
    pub chains: Vec<Vec<usize>>,
    pub per_chain: Vec<Vec<f64>>,
}

impl IterativeForecast {
    pub fn at_lead(&self) -> f64 {
        *self.mean.last().expect("lead >= 1")
    }
}

pub fn average_chains(
    model: &TideModel,
    task: &ForecastTask,
    chains: Vec<Vec<usize>>,
) -> Result<IterativeForecast> {
    if chains.is_empty() {
        return Err(Error::invalid("at least one chain is required"));
    }
    let per_chain = chains
        .iter()
        .map(|c| predict_chain(model, task, c))
        .collect::<Result<Vec<_>>>()?;
    let lead = per_chain[0].len();
    if per_chain.iter().any(|p| p.len() != lead) {
        return Err(Error::invalid("chains have different total leads"));
    }
    let n = per_chain.len() as f64;
    let mean = (0..lead)
        .map(|i| per_chain.iter().map(|p| p[i]).sum::<f64>() / n)
        .collect();
    Ok(IterativeForecast {
        mean,
        chains,
        per_chain,
    })
}

/// Samples `n_chains` interval chains summing to `lead` from the model's
/// interval set and averages their trajectories.
pub fn randomized_iterative_predict(
    model: &TideModel,
    task: &ForecastTask,
    lead: usize,
    n_chains: usize,
    seed: u64,
) -> Result<IterativeForecast> {
    if n_chains == 0 {
        return Err(Error::invalid("n_chains must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chains = (0..n_chains)
        .map(|_| sample_chain(&model.config.interval_set, lead, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    average_chains(model, task, chains)
}

/// Covariate rows a task needs to roll out to `lead`.
pub fn required_covariate_rows(model: &TideModel, lead: usize) -> usize {
    model.config.lookback + lead + model.config.horizon
}
