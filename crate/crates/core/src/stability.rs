//! Stability selection: repeated estimation on within-environment
//! subsamples, keeping the edges that survive a selection-frequency
//! threshold. Bounds the expected number of false selections through
//! the per-run retention budget.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::pipeline::{estimate, Edge, EstimateConfig};
use crate::scatter::{Environment, MultiEnvDataset};

#[derive(Debug, Clone)]
pub struct StabilityConfig {
    /// Bound on the expected number of falsely selected edges; sets the
    /// per-run retention budget unless `q` overrides it.
    pub ev_bound: f64,
    /// Selection-frequency threshold in (0.5, 1].
    pub pi_thr: f64,
    pub n_subsamples: usize,
    /// Fraction of each environment's rows drawn (without replacement)
    /// per run, in (0, 1).
    pub subsample_fraction: f64,
    /// Edges retained per run; derived from `ev_bound` when absent.
    pub q: Option<usize>,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            ev_bound: 2.0,
            pi_thr: 0.75,
            n_subsamples: 100,
            subsample_fraction: 0.5,
            q: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StabilityResult {
    /// Per-edge retention rate over the runs that produced a graph;
    /// entry (i, j) is the edge j -> i, diagonal zero.
    pub frequencies: DMatrix<f64>,
    /// Edges with frequency >= `pi_thr`, sorted by (from, to), carrying
    /// the frequency as weight.
    pub selected: Vec<Edge>,
    pub q_used: usize,
    /// Runs whose estimate failed or came back empty.
    pub n_failed: usize,
    pub n_runs: usize,
}

/// Retention budget from the false-selection bound
/// `E(V) <= q^2 / ((2*pi_thr - 1) * p*(p-1))`, solved for the largest q
/// that keeps the bound at `ev_bound`, never below one.
fn derive_q(ev_bound: f64, pi_thr: f64, p: usize) -> usize {
    let total = (p * (p - 1)) as f64;
    let q = (ev_bound * (2.0 * pi_thr - 1.0) * total).sqrt().floor() as usize;
    q.max(1)
}

fn top_q_edges(b_hat: &DMatrix<f64>, q: usize) -> Vec<(usize, usize)> {
    let p = b_hat.nrows();
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(p * (p - 1));
    for i in 0..p {
        for j in 0..p {
            let w = b_hat[(i, j)].abs();
            if i != j && w > 0.0 {
                entries.push((i, j, w));
            }
        }
    }
    // Largest magnitude first; ties broken by (row, column) so runs are
    // reproducible.
    entries.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    entries.truncate(q);
    entries.into_iter().map(|(i, j, _)| (i, j)).collect()
}

/// Repeatedly subsamples each environment, re-estimates, and retains the
/// `q` strongest edges per run. Run `r` draws from stream `r` of a
/// generator keyed by the seed, so the frequency matrix does not depend
/// on execution order.
pub fn stability_select(
    dataset: &MultiEnvDataset,
    config: &StabilityConfig,
    est_config: &EstimateConfig,
) -> Result<StabilityResult> {
    if !(config.pi_thr > 0.5 && config.pi_thr <= 1.0) {
        return Err(Error::ContractViolation(
            "selection threshold must lie in (0.5, 1]".into(),
        ));
    }
    if config.n_subsamples < 2 {
        return Err(Error::ContractViolation(
            "need at least 2 subsample runs".into(),
        ));
    }
    if !(config.subsample_fraction > 0.0 && config.subsample_fraction < 1.0) {
        return Err(Error::ContractViolation(
            "subsample fraction must lie in (0, 1)".into(),
        ));
    }
    if !(config.ev_bound > 0.0) {
        return Err(Error::ContractViolation(
            "false-selection bound must be positive".into(),
        ));
    }
    let p = dataset.p();
    let keep: Vec<usize> = dataset
        .environments
        .iter()
        .map(|e| (config.subsample_fraction * e.data.nrows() as f64).floor() as usize)
        .collect();
    if let Some((j, _)) = keep.iter().enumerate().find(|(_, &k)| k < 2) {
        return Err(Error::InsufficientData {
            needed: (2.0 / config.subsample_fraction).ceil() as usize,
            got: dataset.environments[j].data.nrows(),
        });
    }
    let q_used = config.q.unwrap_or_else(|| derive_q(config.ev_bound, config.pi_thr, p));

    let runs: Vec<Option<Vec<(usize, usize)>>> = par::map_indexed(config.n_subsamples, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(r as u64);
        let envs: Vec<Environment> = dataset
            .environments
            .iter()
            .zip(&keep)
            .map(|(env, &k)| {
                let rows = rand::seq::index::sample(&mut rng, env.data.nrows(), k);
                let mut data = DMatrix::zeros(k, p);
                for (out, src) in rows.iter().enumerate() {
                    data.row_mut(out).copy_from(&env.data.row(src));
                }
                Environment {
                    label: env.label.clone(),
                    data,
                }
            })
            .collect();
        let sub = MultiEnvDataset::new(envs).ok()?;
        let est = estimate(&sub, est_config).ok()?;
        if est.empty {
            return None;
        }
        Some(top_q_edges(&est.b_hat, q_used))
    });

    let n_runs = runs.len();
    let n_failed = runs.iter().filter(|r| r.is_none()).count();
    if 2 * n_failed > n_runs {
        return Err(Error::StabilityFailed {
            failed: n_failed,
            runs: n_runs,
        });
    }
    let n_ok = (n_runs - n_failed) as f64;
    let mut frequencies = DMatrix::zeros(p, p);
    for run in runs.into_iter().flatten() {
        for (i, j) in run {
            frequencies[(i, j)] += 1.0;
        }
    }
    frequencies /= n_ok;
    let mut selected = Vec::new();
    for from in 0..p {
        for to in 0..p {
            if from != to && frequencies[(to, from)] >= config.pi_thr {
                selected.push(Edge {
                    from,
                    to,
                    weight: frequencies[(to, from)],
                });
            }
        }
    }
    Ok(StabilityResult {
        frequencies,
        selected,
        q_used,
        n_failed,
        n_runs,
    })
}
