//! LoRA parameterisation `θ = θ₀ + s·B·A` over synthetic least-squares clients.
//!
//! Client `i` owns `f_i(θ) = ‖Z_i θ − Y_i‖²_F / (2 n_i)`; the global objective is
//! the unweighted client mean. Block gradients follow from the chain rule
//! through the product: `∇_A = s·Bᵀ G`, `∇_B = s·G Aᵀ` with `G = ∇_θ f`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_config, invalid_input, Result};
use crate::numerics::{solve_spd, Matrix, RngStream};
use crate::scalar::Scalar;

/// Relative size of the per-client full-rank perturbation added to each target.
pub const TARGET_PERTURBATION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub d_out: usize,
    pub d_in: usize,
    pub r: usize,
}

impl ModelDims {
    pub fn new(d_out: usize, d_in: usize, r: usize) -> Result<Self> {
        let dims = Self { d_out, d_in, r };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r > self.d_out.min(self.d_in) {
            return Err(invalid_config(format!(
                "rank r={} must satisfy 1 <= r <= min(d_out={}, d_in={})",
                self.r, self.d_out, self.d_in
            )));
        }
        Ok(())
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            d_out: 16,
            d_in: 12,
            r: 4,
        }
    }
}

/// One client's adapter: `A` is `r × d_in`, `B` is `d_out × r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors<S: Scalar = f64> {
    pub a: Matrix<S>,
    pub b: Matrix<S>,
    pub scale: S,
}

impl<S: Scalar> LoraFactors<S> {
    pub fn new(a: Matrix<S>, b: Matrix<S>, scale: S) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(invalid_input(format!(
                "B is {}x{} but A is {}x{}",
                b.rows(),
                b.cols(),
                a.rows(),
                a.cols()
            )));
        }
        if !(scale > S::zero()) {
            return Err(invalid_input("LoRA scale must be positive"));
        }
        Ok(Self { a, b, scale })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_out: self.b.rows(),
            d_in: self.a.cols(),
            r: self.a.rows(),
        }
    }

    /// `s·B·A`.
    pub fn delta(&self) -> Matrix<S> {
        (&self.b * &self.a).scale(self.scale)
    }
}

/// A client's least-squares data, with its second moments cached so full-batch
/// gradients cost `O(d_out² d_in)` instead of `O(n d_out d_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientTask<S: Scalar = f64> {
    pub client_id: usize,
    z: Matrix<S>,
    y: Matrix<S>,
    /// `ZᵀZ / n`.
    zz: Matrix<S>,
    /// `ZᵀY / n`.
    zy: Matrix<S>,
}

impl<S: Scalar> ClientTask<S> {
    /// `z` is the `n × d_out` design, `y` the `n × d_in` targets.
    pub fn new(client_id: usize, z: Matrix<S>, y: Matrix<S>) -> Result<Self> {
        if z.rows() != y.rows() {
            return Err(invalid_input(format!("Z has {} rows but Y has {}", z.rows(), y.rows())));
        }
        if !z.is_finite() || !y.is_finite() {
            return Err(invalid_input("task data must be finite"));
        }
        let inv_n = S::one() / S::of_usize(z.rows());
        let zz = z.tr_matmul(&z)?.scale(inv_n);
        let zy = z.tr_matmul(&y)?.scale(inv_n);
        Ok(Self {
            client_id,
            z,
            y,
            zz,
            zy,
        })
    }

    pub fn n(&self) -> usize {
        self.z.rows()
    }

    pub fn z(&self) -> &Matrix<S> {
        &self.z
    }

    pub fn y(&self) -> &Matrix<S> {
        &self.y
    }

    fn check_theta(&self, theta: &Matrix<S>) -> Result<()> {
        if theta.shape() != (self.z.cols(), self.y.cols()) {
            return Err(invalid_input(format!(
                "theta is {}x{}, task expects {}x{}",
                theta.rows(),
                theta.cols(),
                self.z.cols(),
                self.y.cols()
            )));
        }
        Ok(())
    }

    /// Restriction to the given sample rows.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self::new(self.client_id, self.z.select_rows(rows), self.y.select_rows(rows))
            .expect("a row subset of valid data is valid")
    }
}

/// Per-client mixture weights over `k` component tasks plus a spread scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneityProfile {
    pub skew: Vec<Vec<f64>>,
    pub delta: f64,
}

impl HeterogeneityProfile {
    /// Splits `m` clients 3:3:4 over `[0.9, 0.1]`, `[0.1, 0.9]`, `[0.5, 0.5]`.
    pub fn binary(m: usize, delta: f64) -> Self {
        let group = 3 * m / 10;
        let skew = (0..m)
            .map(|i| {
                if i < group {
                    vec![0.9, 0.1]
                } else if i < 2 * group {
                    vec![0.1, 0.9]
                } else {
                    vec![0.5, 0.5]
                }
            })
            .collect();
        Self { skew, delta }
    }

    /// Splits `m` clients 4:3:3 over the three one-hot-ish vectors `0.9 / 0.05 / 0.05`.
    pub fn three_way(m: usize, delta: f64) -> Self {
        let first = m - 2 * (3 * m / 10);
        let second = first + 3 * m / 10;
        let skew = (0..m)
            .map(|i| {
                if i < first {
                    vec![0.9, 0.05, 0.05]
                } else if i < second {
                    vec![0.05, 0.9, 0.05]
                } else {
                    vec![0.05, 0.05, 0.9]
                }
            })
            .collect();
        Self { skew, delta }
    }

    /// Every client draws the same mixture of two components.
    pub fn uniform(m: usize, delta: f64) -> Self {
        Self {
            skew: vec![vec![0.5, 0.5]; m],
            delta,
        }
    }

    pub fn k_components(&self) -> usize {
        self.skew.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k_components();
        if k == 0 || k > 4 {
            return Err(invalid_config(format!(
                "heterogeneity needs between 1 and 4 components, got {k}"
            )));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(invalid_config(format!(
                "delta={} must be a finite nonnegative number",
                self.delta
            )));
        }
        for (i, w) in self.skew.iter().enumerate() {
            if w.len() != k {
                return Err(invalid_config(format!(
                    "skew row {i} has {} entries, expected {k}",
                    w.len()
                )));
            }
            if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid_config(format!("skew row {i} is not a probability vector")));
            }
        }
        Ok(())
    }
}

/// `θ₀ + s·B·A`.
pub fn compose<S: Scalar>(theta0: &Matrix<S>, f: &LoraFactors<S>) -> Result<Matrix<S>> {
    let ba = f.b.matmul(&f.a)?;
    theta0.try_add(&ba.scale(f.scale))
}

/// `‖Zθ − Y‖²_F / (2n)`.
pub fn local_objective<S: Scalar>(task: &ClientTask<S>, theta: &Matrix<S>) -> Result<S> {
    task.check_theta(theta)?;
    let r = (&task.z * theta).try_sub(&task.y)?;
    Ok(r.frobenius_sq() / (S::two() * S::of_usize(task.n())))
}

/// `Zᵀ(Zθ − Y) / n`.
pub fn grad_theta<S: Scalar>(task: &ClientTask<S>, theta: &Matrix<S>) -> Result<Matrix<S>> {
    task.check_theta(theta)?;
    task.zz.matmul(theta)?.try_sub(&task.zy)
}

/// `(∇_A, ∇_B)` of `f ∘ compose`.
pub fn grad_blocks<S: Scalar>(
    task: &ClientTask<S>,
    theta0: &Matrix<S>,
    f: &LoraFactors<S>,
) -> Result<(Matrix<S>, Matrix<S>)> {
    let g = grad_theta(task, &compose(theta0, f)?)?;
    let ga = f.b.tr_matmul(&g)?.scale(f.scale);
    let gb = g.matmul(&f.a.transpose())?.scale(f.scale);
    Ok((ga, gb))
}

/// Block gradients on a uniformly sampled minibatch (without replacement).
/// A full batch reproduces [`grad_blocks`] exactly and draws nothing.
pub fn stochastic_grad_blocks<S: Scalar>(
    task: &ClientTask<S>,
    theta0: &Matrix<S>,
    f: &LoraFactors<S>,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<(Matrix<S>, Matrix<S>)> {
    let n = task.n();
    if batch_size == 0 || batch_size > n {
        return Err(invalid_config(format!(
            "batch_size={batch_size} must lie in [1, n={n}]"
        )));
    }
    if batch_size == n {
        return grad_blocks(task, theta0, f);
    }
    let rows = rng.sample_indices(n, batch_size);
    grad_blocks(&task.subset(&rows), theta0, f)
}

/// `F(θ) = (1/m) Σ f_i(θ)`.
pub fn global_objective<S: Scalar>(tasks: &[ClientTask<S>], theta: &Matrix<S>) -> Result<S> {
    let total = tasks.iter().map(|t| local_objective(t, theta)).sum::<Result<S>>()?;
    Ok(total / S::of_usize(tasks.len()))
}

/// `∇F(θ)`.
pub fn global_grad<S: Scalar>(tasks: &[ClientTask<S>], theta: &Matrix<S>) -> Result<Matrix<S>> {
    let mut acc = Matrix::zeros(theta.rows(), theta.cols());
    for t in tasks {
        acc.axpy(S::one(), &grad_theta(t, theta)?);
    }
    Ok(acc.scale(S::one() / S::of_usize(tasks.len())))
}

/// Exact minimiser of `F` over unconstrained matrices (normal equations).
pub fn least_squares_optimum<S: Scalar>(tasks: &[ClientTask<S>]) -> Result<Matrix<S>> {
    GlobalQuadratic::from_tasks(tasks)?.minimizer()
}

/// `F` written as `½⟨θ, Hθ⟩ − ⟨θ, Q⟩ + c`, so evaluating it costs one small product.
#[derive(Debug, Clone)]
pub struct GlobalQuadratic<S: Scalar = f64> {
    /// `(1/m) Σ Z_iᵀ Z_i / n_i`.
    pub h: Matrix<S>,
    /// `(1/m) Σ Z_iᵀ Y_i / n_i`.
    pub q: Matrix<S>,
    /// `(1/m) Σ ‖Y_i‖² / (2 n_i)`.
    pub c: S,
}

impl<S: Scalar> GlobalQuadratic<S> {
    pub fn from_tasks(tasks: &[ClientTask<S>]) -> Result<Self> {
        let first = tasks.first().ok_or_else(|| invalid_input("no tasks"))?;
        let (d_out, d_in) = (first.z.cols(), first.y.cols());
        let mut h = Matrix::zeros(d_out, d_out);
        let mut q = Matrix::zeros(d_out, d_in);
        let mut c = S::zero();
        let m = S::of_usize(tasks.len());
        for t in tasks {
            let w = S::one() / m;
            h.axpy(w, &t.zz);
            q.axpy(w, &t.zy);
            c += w * t.y.frobenius_sq() * S::half() / S::of_usize(t.n());
        }
        Ok(Self { h, q, c })
    }

    pub fn value(&self, theta: &Matrix<S>) -> S {
        let h_theta = &self.h * theta;
        S::half() * theta.dot(&h_theta) - theta.dot(&self.q) + self.c
    }

    pub fn grad(&self, theta: &Matrix<S>) -> Matrix<S> {
        &(&self.h * theta) - &self.q
    }

    /// Unconstrained minimiser `H⁻¹ Q`.
    pub fn minimizer(&self) -> Result<Matrix<S>> {
        solve_spd(&self.h, &self.q)
    }
}

/// Generated federation: shared base model, client tasks and the global optimum.
#[derive(Debug, Clone)]
pub struct TaskSet<S: Scalar = f64> {
    pub theta0: Matrix<S>,
    pub tasks: Vec<ClientTask<S>>,
    /// Client targets `Θ_i`, kept for diagnostics.
    pub targets: Vec<Matrix<S>>,
    pub theta_star_ref: Matrix<S>,
}

/// Draws `k` rank-`r` components around a shared shift, mixes them per client
/// according to `profile.skew`, and samples Gaussian designs.
///
/// Component `c` is `θ₀ + B_c A_c` with `B_c = B̂ + δ·B̃_c` and `A_c = Â + δ·Ã_c`,
/// so `δ = 0` collapses every component onto one task.
pub fn generate_tasks<S: Scalar>(
    dims: ModelDims,
    m: usize,
    profile: &HeterogeneityProfile,
    n_per_client: usize,
    rng: &RngStream,
) -> Result<TaskSet<S>> {
    dims.validate()?;
    profile.validate()?;
    if profile.skew.len() != m {
        return Err(invalid_config(format!(
            "heterogeneity profile lists {} clients but m={m}",
            profile.skew.len()
        )));
    }
    if n_per_client == 0 {
        return Err(invalid_config("n_per_client must be positive"));
    }
    let ModelDims { d_out, d_in, r } = dims;
    // Both factors get unit-order spectral norm, which keeps the A- and B-block
    // curvatures comparable at the optimum.
    let a_std = 1.0 / (d_in as f64).sqrt();
    let b_std = 1.0 / (d_out as f64).sqrt();
    let delta = profile.delta;

    let theta0: Matrix<S> = rng.child("theta0", 0).gaussian_matrix(d_out, d_in, a_std);
    let mut shared = rng.child("component-shared", 0);
    let b_shared: Matrix<S> = shared.gaussian_matrix(d_out, r, b_std);
    let a_shared: Matrix<S> = shared.gaussian_matrix(r, d_in, a_std);

    let components: Vec<Matrix<S>> = (0..profile.k_components())
        .map(|c| {
            let mut s = rng.child("component", c as u64);
            let mut b = b_shared.clone();
            b.axpy(S::of(delta), &s.gaussian_matrix(d_out, r, b_std));
            let mut a = a_shared.clone();
            a.axpy(S::of(delta), &s.gaussian_matrix(r, d_in, a_std));
            &b * &a
        })
        .collect();

    let mut tasks = Vec::with_capacity(m);
    let mut targets = Vec::with_capacity(m);
    for (i, weights) in profile.skew.iter().enumerate() {
        let mut s = rng.child("client", i as u64);
        let mut target = theta0.clone();
        for (w, comp) in weights.iter().zip(&components) {
            target.axpy(S::of(*w), comp);
        }
        let noise: Matrix<S> = s.gaussian_matrix(d_out, d_in, a_std);
        target.axpy(S::of(delta * TARGET_PERTURBATION), &noise);
        let z: Matrix<S> = s.gaussian_matrix(n_per_client, d_out, 1.0);
        let y = &z * &target;
        tasks.push(ClientTask::new(i, z, y)?);
        targets.push(target);
    }
    let theta_star_ref = least_squares_optimum(&tasks)?;
    Ok(TaskSet {
        theta0,
        tasks,
        targets,
        theta_star_ref,
    })
}

/// Standard LoRA start: `A ~ N(0, 1/d_in)`, `B = 0`.
pub fn init_factors<S: Scalar>(dims: ModelDims, scale: f64, rng: &RngStream) -> LoraFactors<S> {
    let a = rng
        .child("init", 0)
        .gaussian_matrix(dims.r, dims.d_in, 1.0 / (dims.d_in as f64).sqrt());
    LoraFactors {
        a,
        b: Matrix::zeros(dims.d_out, dims.r),
        scale: S::of(scale),
    }
}
