//! Consensus and optimisation diagnostics over a set of client factors.
//!
//! The averaged update splits exactly as `W̄ = s·B̄Ā + C` with
//! `C = (s/m) Σ (B_i − B̄)(A_i − Ā)`, which every recorded round checks.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};
use crate::lora::{GlobalQuadratic, LoraFactors};
use crate::numerics::Matrix;
use crate::protocol::Phase;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusSnapshot {
    pub round: u64,
    /// `(1/m) Σ ‖A_i − Ā‖²_F`.
    pub delta_a_sq: f64,
    pub delta_b_sq: f64,
    pub cross_norm: f64,
    /// `‖W̄ − s·B̄Ā − C‖_F`.
    pub decomposition_residual: f64,
    /// `‖W̄‖_F`, the scale the residual is judged against.
    pub avg_update_norm: f64,
    /// `s·‖Δ_A‖·‖Δ_B‖ − ‖C‖_F`.
    pub bound_slack: f64,
}

impl ConsensusSnapshot {
    pub fn relative_residual(&self) -> f64 {
        self.decomposition_residual / self.avg_update_norm.max(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub phase: Phase,
    pub snapshot: ConsensusSnapshot,
    /// `F(θ̄)` with `θ̄ = θ₀ + W̄`.
    pub f_avg_model: f64,
    pub grad_norm_sq: f64,
    /// `(1/m) Σ_i F(θ_i)`: each client's own model on the global objective.
    pub mean_client_loss: f64,
    /// `(1/m) Σ_i f_i(θ_i)`: each client's model on its own data.
    pub mean_local_loss: f64,
    /// `‖W_t − J‖₂` of the round's mixing matrix.
    pub rho_realized: f64,
}

fn first<S: Scalar, F: AsRef<LoraFactors<S>>>(states: &[F]) -> Result<&LoraFactors<S>> {
    states
        .first()
        .map(AsRef::as_ref)
        .ok_or_else(|| invalid_input("need at least one client"))
}

/// `(Ā, B̄)`.
pub fn block_means<S: Scalar, F: AsRef<LoraFactors<S>>>(states: &[F]) -> Result<(Matrix<S>, Matrix<S>)> {
    first(states)?;
    let a = Matrix::mean_of(states.iter().map(|s| &s.as_ref().a))?;
    let b = Matrix::mean_of(states.iter().map(|s| &s.as_ref().b))?;
    Ok((a, b))
}

/// `((1/m) Σ ‖A_i − Ā‖², (1/m) Σ ‖B_i − B̄‖²)`.
pub fn block_disagreement<S: Scalar, F: AsRef<LoraFactors<S>>>(states: &[F]) -> Result<(S, S)> {
    let (a_bar, b_bar) = block_means(states)?;
    let m = S::of_usize(states.len());
    let mut da = S::zero();
    let mut db = S::zero();
    for s in states {
        let f = s.as_ref();
        da += f.a.try_sub(&a_bar)?.frobenius_sq();
        db += f.b.try_sub(&b_bar)?.frobenius_sq();
    }
    Ok((da / m, db / m))
}

/// `C = (s/m) Σ (B_i − B̄)(A_i − Ā)`.
pub fn cross_term<S: Scalar, F: AsRef<LoraFactors<S>>>(states: &[F]) -> Result<Matrix<S>> {
    let scale = first(states)?.scale;
    let (a_bar, b_bar) = block_means(states)?;
    let mut c = Matrix::zeros(b_bar.rows(), a_bar.cols());
    for s in states {
        let f = s.as_ref();
        c.axpy(S::one(), &f.b.try_sub(&b_bar)?.matmul(&f.a.try_sub(&a_bar)?)?);
    }
    Ok(c.scale(scale / S::of_usize(states.len())))
}

/// `W̄ = (s/m) Σ B_i A_i`, the update carried by the averaged model.
pub fn averaged_update<S: Scalar, F: AsRef<LoraFactors<S>>>(states: &[F]) -> Result<Matrix<S>> {
    let scale = first(states)?.scale;
    let mut w = Matrix::zeros(first(states)?.b.rows(), first(states)?.a.cols());
    for s in states {
        let f = s.as_ref();
        w.axpy(S::one(), &f.b.matmul(&f.a)?);
    }
    Ok(w.scale(scale / S::of_usize(states.len())))
}

/// `s·B̄Ā`, the update the product of averages would give.
pub fn product_of_means<S: Scalar, F: AsRef<LoraFactors<S>>>(states: &[F]) -> Result<Matrix<S>> {
    let scale = first(states)?.scale;
    let (a_bar, b_bar) = block_means(states)?;
    Ok(b_bar.matmul(&a_bar)?.scale(scale))
}

/// `‖W̄ − s·B̄Ā − C‖_F`; zero up to round-off.
pub fn decomposition_residual<S: Scalar, F: AsRef<LoraFactors<S>>>(states: &[F]) -> Result<S> {
    let w = averaged_update(states)?;
    let r = w.try_sub(&product_of_means(states)?)?.try_sub(&cross_term(states)?)?;
    Ok(r.frobenius())
}

pub fn snapshot<S: Scalar, F: AsRef<LoraFactors<S>>>(states: &[F], round: u64) -> Result<ConsensusSnapshot> {
    let scale = first(states)?.scale;
    let (da, db) = block_disagreement(states)?;
    let c = cross_term(states)?;
    let w = averaged_update(states)?;
    let residual = w.try_sub(&product_of_means(states)?)?.try_sub(&c)?.frobenius();
    let cross_norm = c.frobenius();
    Ok(ConsensusSnapshot {
        round,
        delta_a_sq: da.as_f64(),
        delta_b_sq: db.as_f64(),
        cross_norm: cross_norm.as_f64(),
        decomposition_residual: residual.as_f64(),
        avg_update_norm: w.frobenius().as_f64(),
        bound_slack: (scale * da.sqrt() * db.sqrt() - cross_norm).as_f64(),
    })
}

/// `θ̄ = θ₀ + W̄`.
pub fn averaged_model<S: Scalar, F: AsRef<LoraFactors<S>>>(states: &[F], theta0: &Matrix<S>) -> Result<Matrix<S>> {
    theta0.try_add(&averaged_update(states)?)
}

/// `(F(θ̄), ‖∇F(θ̄)‖²)`.
pub fn avg_model_stats<S: Scalar, F: AsRef<LoraFactors<S>>>(
    states: &[F],
    theta0: &Matrix<S>,
    quad: &GlobalQuadratic<S>,
) -> Result<(S, S)> {
    let theta = averaged_model(states, theta0)?;
    Ok((quad.value(&theta), quad.grad(&theta).frobenius_sq()))
}

/// `(1/m) Σ_i F(θ₀ + s·B_i A_i)`.
pub fn mean_client_loss<S: Scalar, F: AsRef<LoraFactors<S>>>(
    states: &[F],
    theta0: &Matrix<S>,
    quad: &GlobalQuadratic<S>,
) -> Result<S> {
    first(states)?;
    let mut total = S::zero();
    for s in states {
        total += quad.value(&crate::lora::compose(theta0, s.as_ref())?);
    }
    Ok(total / S::of_usize(states.len()))
}

/// Mean of `‖C‖_F` over one length-`T` cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleMean {
    pub cycle: u64,
    pub phase: Phase,
    pub mean_cross_norm: f64,
    pub n_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleAverages {
    pub cycles: Vec<CycleMean>,
    /// Set when the last cycle was incomplete and left out.
    pub dropped_partial: bool,
}

impl CycleAverages {
    /// Mean over cycles whose phase matches, or over all cycles for `None`.
    pub fn mean(&self, phase: Option<Phase>) -> Option<f64> {
        let xs: Vec<f64> = self
            .cycles
            .iter()
            .filter(|c| phase.is_none_or(|p| c.phase == p))
            .map(|c| c.mean_cross_norm)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Groups records into cycles `[kT, (k+1)T)` by round index. A cycle counts as
/// complete when its last round `(k+1)T − 1` was reached by the trajectory.
pub fn cycle_average_cross(records: &[RoundRecord], t_interval: u64) -> Result<CycleAverages> {
    if t_interval == 0 {
        return Err(invalid_input("cycle length must be at least 1"));
    }
    let last_round = records.last().ok_or_else(|| invalid_input("empty trajectory"))?.round;
    let complete = (last_round + 1) / t_interval;
    if complete < 2 {
        return Err(invalid_input(format!(
            "trajectory covers {complete} full cycles of length {t_interval}; need at least 2"
        )));
    }
    let mut cycles: Vec<CycleMean> = Vec::new();
    let mut dropped_partial = false;
    for rec in records {
        let k = rec.round / t_interval;
        if k >= complete {
            dropped_partial = true;
            continue;
        }
        match cycles.last_mut() {
            Some(c) if c.cycle == k => {
                c.mean_cross_norm += rec.snapshot.cross_norm;
                c.n_records += 1;
            }
            _ => cycles.push(CycleMean {
                cycle: k,
                phase: rec.phase,
                mean_cross_norm: rec.snapshot.cross_norm,
                n_records: 1,
            }),
        }
    }
    for c in &mut cycles {
        c.mean_cross_norm /= c.n_records as f64;
    }
    Ok(CycleAverages {
        cycles,
        dropped_partial,
    })
}
