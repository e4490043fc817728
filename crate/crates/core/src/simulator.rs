//! Synthetic equilibrium data from a known cyclic network under shift
//! interventions, plus structural scoring of estimates against the
//! generating graph.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feasibility::{cycle_product_exact, validate_connectivity, DEFAULT_EXACT_LIMIT};
use crate::par;
use crate::pipeline::Edge;
use crate::scatter::{Environment, MultiEnvDataset};

/// Stream index reserved for confounder loadings; per-environment data
/// streams use the environment index, so they never collide with it.
const GAMMA_STREAM: u64 = u64::MAX;

const MAX_RANDOM_ATTEMPTS: usize = 200;

#[derive(Debug, Clone)]
pub struct GroundTruthModel {
    /// Generating connectivity; entry (i, j) is the direct effect of
    /// variable j on variable i. Zero diagonal, every cycle product < 1.
    pub b: DMatrix<f64>,
    /// When set, noise is a rank-one confounder instead of independent
    /// per-variable noise.
    pub hidden: bool,
    /// Confounder loadings, drawn once per model; used only when
    /// `hidden`.
    pub gamma: DVector<f64>,
    pub seed: u64,
}

/// How to build the generating connectivity matrix.
#[derive(Debug, Clone)]
pub enum NetworkSpec {
    /// Explicit `(from, to, weight)` edges.
    Edges(Vec<(usize, usize, f64)>),
    /// `n_edges` distinct directed edges placed uniformly at random with
    /// weights of random sign and magnitude in `[weight_lo, weight_hi]`,
    /// redrawn until every cycle product is below one.
    Random {
        n_edges: usize,
        weight_lo: f64,
        weight_hi: f64,
    },
}

#[derive(Debug, Clone)]
pub struct InterventionSpec {
    /// Mean of the exponential strength draw; zero disables the shifts
    /// entirely.
    pub m_i: f64,
    /// Shifted variables; `None` means all of them.
    pub targets: Option<Vec<usize>>,
    /// Redraw the strength for every observation instead of once per
    /// (environment, variable) pair.
    pub beta_per_observation: bool,
}

impl InterventionSpec {
    pub fn all_targets(m_i: f64) -> Self {
        Self {
            m_i,
            targets: None,
            beta_per_observation: false,
        }
    }
}

/// Per-environment generation record for debugging and ground-truth
/// bookkeeping: the realized strengths and the exact shift and noise
/// terms behind every observation.
#[derive(Debug, Clone)]
pub struct EnvTrace {
    pub label: String,
    /// Realized intervention strength per variable. With per-observation
    /// strengths this holds the first observation's draw.
    pub betas: DVector<f64>,
    pub shifts: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// Directed-edge disagreements: extra edges plus missing edges.
    pub shd: usize,
    /// Fraction of predicted edges that are real; absent when nothing
    /// was predicted.
    pub precision: Option<f64>,
    /// Fraction of real edges recovered; 1 when there are none.
    pub recall: f64,
    pub threshold: f64,
}

fn uniform_0_1<R: Rng>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Standard normal via Box-Muller; consumes exactly two uniforms.
fn draw_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1 = 1.0 - uniform_0_1(rng);
    let u2 = uniform_0_1(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard Laplace via inverse CDF; consumes exactly one uniform.
fn draw_laplace<R: Rng>(rng: &mut R) -> f64 {
    let v = uniform_0_1(rng) - 0.5;
    -v.signum() * (1.0 - 2.0 * v.abs()).max(f64::MIN_POSITIVE).ln()
}

fn draw_gamma_loadings(p: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GAMMA_STREAM);
    DVector::from_fn(p, |_, _| draw_normal(&mut rng))
}

fn validate_model_matrix(b: &DMatrix<f64>) -> Result<()> {
    validate_connectivity(b)?;
    let p = b.nrows();
    if p > DEFAULT_EXACT_LIMIT {
        let report = crate::feasibility::cycle_product_feasible(b)?;
        if !report.feasible || report.borderline {
            return Err(Error::GenerationFailed(
                "a cycle product reaches one".into(),
            ));
        }
    } else {
        let report = cycle_product_exact(b, DEFAULT_EXACT_LIMIT)?;
        if !report.feasible || report.borderline {
            return Err(Error::GenerationFailed(format!(
                "largest cycle product {} is not below one",
                report.exact_value.unwrap_or(f64::NAN)
            )));
        }
    }
    if (DMatrix::identity(p, p) - b).try_inverse().is_none() {
        return Err(Error::GenerationFailed(
            "equilibrium transform is singular".into(),
        ));
    }
    Ok(())
}

impl GroundTruthModel {
    /// Wraps an explicit connectivity matrix, verifying the cycle
    /// condition and equilibrium invertibility.
    pub fn new(b: DMatrix<f64>, hidden: bool, seed: u64) -> Result<Self> {
        validate_model_matrix(&b)?;
        let gamma = draw_gamma_loadings(b.nrows(), seed);
        Ok(Self {
            b,
            hidden,
            gamma,
            seed,
        })
    }

    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    /// Nonzero entries as directed edges, sorted by (from, to).
    pub fn edge_list(&self) -> Vec<Edge> {
        let p = self.p();
        let mut edges = Vec::new();
        for from in 0..p {
            for to in 0..p {
                if from != to && self.b[(to, from)] != 0.0 {
                    edges.push(Edge {
                        from,
                        to,
                        weight: self.b[(to, from)],
                    });
                }
            }
        }
        edges
    }
}

/// The committed ten-variable benchmark graph: a three-cycle, a
/// two-cycle, two chain tails, and a separate weak two-edge chain whose
/// last edge is the unique smallest coefficient. Largest cycle product
/// is 0.3.
pub fn reference_network(hidden: bool, seed: u64) -> GroundTruthModel {
    let edges = vec![
        (0, 1, 0.7),
        (1, 2, -0.6),
        (2, 0, 0.5),
        (2, 3, 0.8),
        (3, 4, 0.6),
        (4, 3, -0.5),
        (4, 5, 0.55),
        (5, 6, -0.7),
        (7, 8, 0.65),
        (8, 9, 0.35),
    ];
    generate_network(10, &NetworkSpec::Edges(edges), hidden, seed)
        .expect("the committed benchmark graph is valid")
}

fn matrix_from_edges(p: usize, edges: &[(usize, usize, f64)]) -> Result<DMatrix<f64>> {
    let mut b = DMatrix::zeros(p, p);
    for &(from, to, w) in edges {
        if from >= p || to >= p {
            return Err(Error::GenerationFailed(format!(
                "edge ({from}, {to}) is out of range for {p} variables"
            )));
        }
        if from == to {
            return Err(Error::GenerationFailed(format!(
                "self-loop on variable {from}"
            )));
        }
        if !w.is_finite() || w == 0.0 {
            return Err(Error::GenerationFailed(format!(
                "edge ({from}, {to}) has invalid weight {w}"
            )));
        }
        if b[(to, from)] != 0.0 {
            return Err(Error::GenerationFailed(format!(
                "duplicate edge ({from}, {to})"
            )));
        }
        b[(to, from)] = w;
    }
    Ok(b)
}

/// Builds a validated generating model. Explicit edges are checked once;
/// random graphs are redrawn a bounded number of times until the cycle
/// condition holds.
pub fn generate_network(
    p: usize,
    spec: &NetworkSpec,
    hidden: bool,
    seed: u64,
) -> Result<GroundTruthModel> {
    if p < 2 {
        return Err(Error::ShapeError(format!(
            "need at least 2 variables, got {p}"
        )));
    }
    match spec {
        NetworkSpec::Edges(edges) => {
            let b = matrix_from_edges(p, edges)?;
            GroundTruthModel::new(b, hidden, seed)
        }
        NetworkSpec::Random {
            n_edges,
            weight_lo,
            weight_hi,
        } => {
            if !(0.0 < *weight_lo && weight_lo <= weight_hi) || !weight_hi.is_finite() {
                return Err(Error::ContractViolation(
                    "weight range must satisfy 0 < lo <= hi".into(),
                ));
            }
            if *n_edges > p * (p - 1) {
                return Err(Error::GenerationFailed(format!(
                    "{n_edges} edges do not fit in {p} variables"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(GAMMA_STREAM - 1);
            let slots: Vec<(usize, usize)> = (0..p)
                .flat_map(|i| (0..p).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .collect();
            for _ in 0..MAX_RANDOM_ATTEMPTS {
                let chosen = rand::seq::index::sample(&mut rng, slots.len(), *n_edges);
                let mut b = DMatrix::zeros(p, p);
                for idx in chosen.iter() {
                    let (from, to) = slots[idx];
                    let mag = weight_lo + (weight_hi - weight_lo) * uniform_0_1(&mut rng);
                    let sign = if uniform_0_1(&mut rng) < 0.5 { -1.0 } else { 1.0 };
                    b[(to, from)] = sign * mag;
                }
                if validate_model_matrix(&b).is_ok() {
                    let gamma = draw_gamma_loadings(p, seed);
                    return Ok(GroundTruthModel {
                        b,
                        hidden,
                        gamma,
                        seed,
                    });
                }
            }
            Err(Error::GenerationFailed(format!(
                "no feasible graph in {MAX_RANDOM_ATTEMPTS} attempts"
            )))
        }
    }
}

fn validate_targets(targets: &Option<Vec<usize>>, p: usize) -> Result<Vec<bool>> {
    let mut mask = vec![targets.is_none(); p];
    if let Some(list) = targets {
        for &t in list {
            if t >= p {
                return Err(Error::ContractViolation(format!(
                    "target {t} is out of range for {p} variables"
                )));
            }
            if mask[t] {
                return Err(Error::ContractViolation(format!("duplicate target {t}")));
            }
            mask[t] = true;
        }
    }
    Ok(mask)
}

/// Draws equilibrium observations for every environment and keeps the
/// generation record. Environment `j` uses stream `j` of a ChaCha
/// generator keyed by `seed`, so results do not depend on execution
/// order or on how many environments are requested.
///
/// Per observation the stream is consumed in a fixed order: optional
/// per-observation strengths, one standard normal per variable for the
/// shift, then the noise draws. Strength uniforms are consumed even when
/// `m_i` is zero or a variable is untargeted, so changing those settings
/// never shifts the remaining draws.
pub fn simulate_full(
    model: &GroundTruthModel,
    spec: &InterventionSpec,
    n_per_env: &[usize],
    seed: u64,
) -> Result<(MultiEnvDataset, Vec<EnvTrace>)> {
    if !(spec.m_i >= 0.0 && spec.m_i.is_finite()) {
        return Err(Error::ContractViolation(
            "intervention mean must be finite and nonnegative".into(),
        ));
    }
    if n_per_env.is_empty() {
        return Err(Error::ContractViolation(
            "need at least one environment".into(),
        ));
    }
    if let Some(&bad) = n_per_env.iter().find(|&&n| n == 0) {
        return Err(Error::InsufficientData { needed: 1, got: bad });
    }
    let p = model.p();
    let mask = validate_targets(&spec.targets, p)?;
    let transform = (DMatrix::identity(p, p) - &model.b)
        .try_inverse()
        .ok_or_else(|| Error::NumericalBreakdown("equilibrium transform is singular".into()))?;

    let sizes: Vec<usize> = n_per_env.to_vec();
    let results: Vec<(Environment, EnvTrace)> = par::map_indexed(sizes.len(), |j| {
        let n = sizes[j];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let draw_beta = |rng: &mut ChaCha8Rng, k: usize| {
            let u = 1.0 - uniform_0_1(rng);
            if spec.m_i > 0.0 && mask[k] {
                -spec.m_i * u.ln()
            } else {
                0.0
            }
        };
        let mut betas = DVector::zeros(p);
        if !spec.beta_per_observation {
            for k in 0..p {
                betas[k] = draw_beta(&mut rng, k);
            }
        }
        let mut shifts = DMatrix::zeros(n, p);
        let mut noise = DMatrix::zeros(n, p);
        for i in 0..n {
            if spec.beta_per_observation {
                for k in 0..p {
                    let b = draw_beta(&mut rng, k);
                    if i == 0 {
                        betas[k] = b;
                    }
                    shifts[(i, k)] = b;
                }
                for k in 0..p {
                    shifts[(i, k)] *= draw_normal(&mut rng);
                }
            } else {
                for k in 0..p {
                    shifts[(i, k)] = betas[k] * draw_normal(&mut rng);
                }
            }
            if model.hidden {
                let w = draw_laplace(&mut rng);
                for k in 0..p {
                    noise[(i, k)] = model.gamma[k] * w;
                }
            } else {
                for k in 0..p {
                    noise[(i, k)] = draw_laplace(&mut rng);
                }
            }
        }
        let data = (&shifts + &noise) * transform.transpose();
        let label = format!("e{j}");
        (
            Environment {
                label: label.clone(),
                data,
            },
            EnvTrace {
                label,
                betas,
                shifts,
                noise,
            },
        )
    });
    let mut envs = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    for (env, trace) in results {
        envs.push(env);
        traces.push(trace);
    }
    Ok((MultiEnvDataset::new(envs)?, traces))
}

/// Like [`simulate_full`] but keeps only the dataset.
pub fn simulate(
    model: &GroundTruthModel,
    spec: &InterventionSpec,
    n_per_env: &[usize],
    seed: u64,
) -> Result<MultiEnvDataset> {
    simulate_full(model, spec, n_per_env, seed).map(|(ds, _)| ds)
}

/// Compares the thresholded estimate against the generating graph,
/// counting directed-edge disagreements.
pub fn score(b_hat: &DMatrix<f64>, model: &GroundTruthModel, threshold: f64) -> Result<ScoreReport> {
    let p = model.p();
    if b_hat.nrows() != p || b_hat.ncols() != p {
        return Err(Error::ShapeError(format!(
            "estimate is {}x{}, truth has {p} variables",
            b_hat.nrows(),
            b_hat.ncols()
        )));
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::ContractViolation(
            "threshold must be a nonnegative number".into(),
        ));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut missed = 0usize;
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let predicted = b_hat[(i, j)].abs() > threshold;
            let real = model.b[(i, j)] != 0.0;
            match (predicted, real) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => missed += 1,
                (false, false) => {}
            }
        }
    }
    let precision = if tp + fp > 0 {
        Some(tp as f64 / (tp + fp) as f64)
    } else {
        None
    };
    let recall = if tp + missed > 0 {
        tp as f64 / (tp + missed) as f64
    } else {
        1.0
    };
    Ok(ScoreReport {
        shd: fp + missed,
        precision,
        recall,
        threshold,
    })
}
