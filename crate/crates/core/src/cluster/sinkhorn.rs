use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Default)]
pub enum MarginalMode {
    /// Equipartition: rows `1/K`, columns `1/B`.
    #[default]
    Uniform,
    /// Caller-supplied row marginal (length `K`, summing to 1); columns `1/B`.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    /// Row/column sweeps in fixed mode; the sweep cap in convergence mode.
    pub iterations: usize,
    pub marginal_mode: MarginalMode,
    /// When set, stop as soon as the row-marginal deviation drops below it.
    pub tolerance: Option<f64>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.005,
            iterations: 10,
            marginal_mode: MarginalMode::Uniform,
            tolerance: None,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.iterations == 0 {
            return Err(Error::config("sinkhorn iterations must be >= 1"));
        }
        Ok(())
    }

    /// Ten sweeps at `ε = 20/K`, the regularizer scaled to the prototype count.
    pub fn for_prototypes(k: usize) -> Self {
        Self {
            epsilon: 20.0 / k.max(1) as f64,
            ..Default::default()
        }
    }

    /// Sweeps until the row deviation falls below `tolerance`.
    pub fn converged(epsilon: f64, tolerance: f64, max_iterations: usize) -> Self {
        Self {
            epsilon,
            iterations: max_iterations,
            marginal_mode: MarginalMode::Uniform,
            tolerance: Some(tolerance),
        }
    }
}

/// Transport plan `Q` (`K × B`) with its target marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    pub q: Tensor,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    /// `⟨Q, −scores⟩`.
    pub transport_cost: f64,
    pub iterations_run: usize,
}

impl AssignmentMatrix {
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.q.dims()[0])
            .map(|i| self.q.row(i).iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let (k, b) = (self.q.dims()[0], self.q.dims()[1]);
        let mut s = vec![0.0; b];
        for i in 0..k {
            for (acc, v) in s.iter_mut().zip(self.q.row(i)) {
                *acc += v;
            }
        }
        s
    }

    pub fn row_deviation(&self) -> f64 {
        max_deviation(&self.row_sums(), &self.row_marginal)
    }

    pub fn col_deviation(&self) -> f64 {
        max_deviation(&self.col_sums(), &self.col_marginal)
    }

    /// Columns rescaled to sum to one: per-column assignment distributions.
    pub fn column_distributions(&self) -> Tensor {
        let mut out = self.q.clone();
        let b = self.q.dims()[1];
        let sums = self.col_sums();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v /= sums[i % b];
        }
        out
    }
}

fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest exponent span the scaling-form kernel handles without underflow.
const MAX_LINEAR_SPAN: f64 = 600.0;

/// Entropic OT assignment `Q* = Diag(u)·exp(scores/ε)·Diag(v)`.
///
/// Each sweep renormalizes rows then columns, so the column marginals hold to
/// rounding error on exit while the rows converge with the sweep count. The
/// kernel is shifted by its per-column maximum; when the remaining exponent
/// span is too wide for `f64` the solver runs fully in log space.
pub fn sinkhorn_assign(scores: &Tensor, cfg: &SinkhornConfig) -> Result<AssignmentMatrix> {
    cfg.validate()?;
    if scores.rank() != 2 || scores.dims()[0] == 0 || scores.dims()[1] == 0 {
        return Err(Error::shape(format!(
            "scores must be a non-empty K×B matrix, got {:?}",
            scores.dims()
        )));
    }
    if scores.data().iter().any(|v| v.is_nan()) {
        return Err(Error::contract("NaN in sinkhorn scores"));
    }
    if !scores.is_finite() {
        return Err(Error::contract("infinite value in sinkhorn scores"));
    }
    let (k, b) = (scores.dims()[0], scores.dims()[1]);
    let row_marginal = match &cfg.marginal_mode {
        MarginalMode::Uniform => vec![1.0 / k as f64; k],
        MarginalMode::Custom(r) => {
            if r.len() != k {
                return Err(Error::shape(format!(
                    "row marginal of length {} for K={k}",
                    r.len()
                )));
            }
            let s: f64 = r.iter().sum();
            if r.iter().any(|&v| !(v > 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::contract(
                    "custom row marginal must be positive and sum to 1",
                ));
            }
            r.clone()
        }
    };
    let col_marginal = vec![1.0 / b as f64; b];

    let inv_eps = 1.0 / cfg.epsilon;
    let mut col_max = vec![f64::NEG_INFINITY; b];
    let mut col_min = vec![f64::INFINITY; b];
    for i in 0..k {
        for (j, &s) in scores.row(i).iter().enumerate() {
            col_max[j] = col_max[j].max(s);
            col_min[j] = col_min[j].min(s);
        }
    }
    let span = col_max
        .iter()
        .zip(&col_min)
        .map(|(a, c)| (a - c) * inv_eps)
        .fold(0.0, f64::max);

    let (q, iterations_run) = if span < MAX_LINEAR_SPAN {
        solve_scaling(scores, &col_max, inv_eps, &row_marginal, &col_marginal, cfg)
    } else {
        solve_log(scores, &col_max, inv_eps, &row_marginal, &col_marginal, cfg)
    };
    let transport_cost = -q
        .data()
        .iter()
        .zip(scores.data())
        .map(|(a, s)| a * s)
        .sum::<f64>();
    Ok(AssignmentMatrix {
        q,
        row_marginal,
        col_marginal,
        transport_cost,
        iterations_run,
    })
}

fn solve_scaling(
    scores: &Tensor,
    col_max: &[f64],
    inv_eps: f64,
    r: &[f64],
    c: &[f64],
    cfg: &SinkhornConfig,
) -> (Tensor, usize) {
    let (k, b) = (scores.dims()[0], scores.dims()[1]);
    let mut q = scores.clone();
    for i in 0..k {
        let row = &mut q.data_mut()[i * b..(i + 1) * b];
        for (v, &m) in row.iter_mut().zip(col_max) {
            *v = ((*v - m) * inv_eps).exp();
        }
    }
    let mut col = vec![0.0; b];
    let mut run = 0;
    for it in 0..cfg.iterations {
        run = it + 1;
        if let Some(tol) = cfg.tolerance {
            // rows are the only side off-target after a column sweep
            if it > 0 && row_deviation(&q, r) < tol {
                run = it;
                break;
            }
        }
        for (i, &ri) in r.iter().enumerate() {
            let row = &mut q.data_mut()[i * b..(i + 1) * b];
            let s: f64 = row.iter().sum();
            let f = ri / s;
            row.iter_mut().for_each(|v| *v *= f);
        }
        col.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..k {
            for (acc, v) in col.iter_mut().zip(&q.data()[i * b..(i + 1) * b]) {
                *acc += v;
            }
        }
        for (cj, &target) in col.iter_mut().zip(c) {
            *cj = target / *cj;
        }
        for i in 0..k {
            for (v, f) in q.data_mut()[i * b..(i + 1) * b].iter_mut().zip(&col) {
                *v *= f;
            }
        }
    }
    (q, run)
}

fn row_deviation(q: &Tensor, r: &[f64]) -> f64 {
    r.iter()
        .enumerate()
        .map(|(i, &ri)| (q.row(i).iter().sum::<f64>() - ri).abs())
        .fold(0.0, f64::max)
}

fn logsumexp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn solve_log(
    scores: &Tensor,
    col_max: &[f64],
    inv_eps: f64,
    r: &[f64],
    c: &[f64],
    cfg: &SinkhornConfig,
) -> (Tensor, usize) {
    let (k, b) = (scores.dims()[0], scores.dims()[1]);
    let s = scores.data();
    let log_r: Vec<f64> = r.iter().map(|v| v.ln()).collect();
    let log_c: Vec<f64> = c.iter().map(|v| v.ln()).collect();
    let mut log_u = vec![0.0; k];
    let mut log_v: Vec<f64> = col_max.iter().map(|m| -m * inv_eps).collect();
    let plan = |log_u: &[f64], log_v: &[f64]| -> Tensor {
        let mut q = vec![0.0; k * b];
        for i in 0..k {
            for j in 0..b {
                q[i * b + j] = (s[i * b + j] * inv_eps + log_u[i] + log_v[j]).exp();
            }
        }
        Tensor::new(vec![k, b], q).expect("plan dims")
    };
    let mut run = 0;
    for it in 0..cfg.iterations {
        run = it + 1;
        if let Some(tol) = cfg.tolerance {
            if it > 0 && row_deviation(&plan(&log_u, &log_v), r) < tol {
                run = it;
                break;
            }
        }
        for i in 0..k {
            let lse = logsumexp((0..b).map(|j| s[i * b + j] * inv_eps + log_v[j]));
            log_u[i] = log_r[i] - lse;
        }
        for j in 0..b {
            let lse = logsumexp((0..k).map(|i| s[i * b + j] * inv_eps + log_u[i]));
            log_v[j] = log_c[j] - lse;
        }
    }
    (plan(&log_u, &log_v), run)
}
