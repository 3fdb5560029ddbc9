//! Per-robot discrete-time Kalman filter.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::linalg::{inverse2, symmetrize2, MAX_CONDITION};
use crate::model::AgentModel;

/// Predicted and corrected estimate of one robot's position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    /// `x̂_{k|k−1}`
    pub x_pred: Vector2<f64>,
    /// `P_{k|k−1}`
    pub p_pred: Matrix2<f64>,
    /// `x̂_{k|k}`
    pub x_corr: Vector2<f64>,
    /// `P_{k|k}`
    pub p_corr: Matrix2<f64>,
    /// Kalman gain `K_k` of the last update.
    pub gain: Matrix2<f64>,
}

impl KalmanState {
    /// State before the first measurement: the prior is loaded as the
    /// prediction `x̂_{0|−1} = x̄₀`, `P_{0|−1} = X₀`.
    pub fn prior(model: &AgentModel) -> Self {
        KalmanState {
            x_pred: model.x0_mean,
            p_pred: model.x0_cov,
            x_corr: model.x0_mean,
            p_corr: model.x0_cov,
            gain: Matrix2::zeros(),
        }
    }
}

/// Time update: `x̂⁻ = A x̂ + B u`, `P⁻ = A P Aᵀ + W`.
pub fn predict(state: &KalmanState, model: &AgentModel, u_prev: &Vector2<f64>) -> KalmanState {
    KalmanState {
        x_pred: model.a * state.x_corr + model.b * u_prev,
        p_pred: symmetrize2(&(model.a * state.p_corr * model.a.transpose() + model.w)),
        ..*state
    }
}

/// Residual `y − C x̂_{k|k−1}`.
pub fn innovation(state: &KalmanState, model: &AgentModel, y: &Vector2<f64>) -> Vector2<f64> {
    y - model.c * state.x_pred
}

/// Measurement update with `K = P⁻Cᵀ(C P⁻ Cᵀ + V)⁻¹` and the simple covariance
/// form `P = (I − K C) P⁻`, symmetrized.
pub fn update(state: &KalmanState, model: &AgentModel, y: &Vector2<f64>) -> Result<KalmanState> {
    if state.p_pred == Matrix2::zeros() {
        return Ok(KalmanState {
            x_corr: state.x_pred,
            p_corr: Matrix2::zeros(),
            gain: Matrix2::zeros(),
            ..*state
        });
    }
    let s = model.c * state.p_pred * model.c.transpose() + model.v;
    let s_inv = inverse2(&s)
        .ok_or_else(|| Error::numerical("kalman update", "innovation covariance is singular"))?;
    let cond = s.norm() * s_inv.norm();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::numerical(
            "kalman update",
            format!("innovation covariance condition number {cond:e} exceeds {MAX_CONDITION:e}"),
        ));
    }
    let gain = state.p_pred * model.c.transpose() * s_inv;
    let x_corr = state.x_pred + gain * innovation(state, model, y);
    let p_corr = symmetrize2(&((Matrix2::identity() - gain * model.c) * state.p_pred));
    Ok(KalmanState {
        x_corr,
        p_corr,
        gain,
        ..*state
    })
}

/// One filter cycle. At `k = 0` only the update runs (against the prior).
pub fn step(
    state: &KalmanState,
    model: &AgentModel,
    k: usize,
    u_prev: &Vector2<f64>,
    y: &Vector2<f64>,
) -> Result<KalmanState> {
    let predicted = if k == 0 {
        *state
    } else {
        predict(state, model, u_prev)
    };
    update(&predicted, model, y)
}

/// Covariances and gains of one robot's filter over a horizon. The
/// recursion does not depend on measurements, so it is computed once.
#[derive(Debug, Clone)]
pub struct CovarianceHistory {
    pub p_pred: Vec<Matrix2<f64>>,
    pub p_corr: Vec<Matrix2<f64>>,
    pub gain: Vec<Matrix2<f64>>,
}

impl CovarianceHistory {
    /// Steps `0..=last`.
    pub fn compute(model: &AgentModel, last: usize) -> Result<Self> {
        let mut st = KalmanState::prior(model);
        let mut h = CovarianceHistory {
            p_pred: Vec::with_capacity(last + 1),
            p_corr: Vec::with_capacity(last + 1),
            gain: Vec::with_capacity(last + 1),
        };
        for k in 0..=last {
            st = step(&st, model, k, &Vector2::zeros(), &model.x0_mean)
                .map_err(|e| e.with_context(format!("step {k}")))?;
            h.p_pred.push(st.p_pred);
            h.p_corr.push(st.p_corr);
            h.gain.push(st.gain);
        }
        Ok(h)
    }
}
