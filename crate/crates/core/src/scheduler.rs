//! Event-triggered transmission policies and transmission-rate accounting.
//!
//! A policy sees the corrected estimate `x̂_{k|k}` once per step and decides
//! whether to broadcast it. The triggering error is `e_k = x̂_{k|k} − x̂_{τ|τ}`,
//! the gap between the current estimate and the last broadcast one. Step 0
//! always broadcasts so every register is defined before the first control.

use std::fmt;

use crate::error::{Error, Result};

/// Trigger rule and its thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerKind {
    /// Transmit when `k mod period = 0`.
    TimeTriggered { period: usize },
    /// `‖e‖² ≥ β`.
    SendOnDelta { beta: f64 },
    /// `‖e‖² ≥ α‖x̂‖²` (Tabuada-type).
    Relative { alpha: f64 },
    /// `‖e‖² ≥ α‖x̂‖² + β`.
    Mixed { alpha: f64, beta: f64 },
    /// `Σ_{j=τ}^{k} ‖e_j‖‖x̂_j‖ ≥ γ Σ_{j=τ}^{k} ‖x̂_j‖²`.
    Integral { gamma: f64 },
}

impl TriggerKind {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| {
            Error::config(
                format!("trigger.{name}"),
                format!("must be finite and ≥ 0, got {v}"),
            )
        };
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(bad(name, v))
            }
        };
        match *self {
            TriggerKind::TimeTriggered { period } => {
                if period == 0 {
                    return Err(Error::config("trigger.period", "must be ≥ 1"));
                }
                Ok(())
            }
            TriggerKind::SendOnDelta { beta } => check("beta", beta),
            TriggerKind::Relative { alpha } => check("alpha", alpha),
            TriggerKind::Mixed { alpha, beta } => {
                check("alpha", alpha)?;
                check("beta", beta)
            }
            TriggerKind::Integral { gamma } => check("gamma", gamma),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TriggerKind::TimeTriggered { .. } => "time-triggered",
            TriggerKind::SendOnDelta { .. } => "send-on-delta",
            TriggerKind::Relative { .. } => "relative",
            TriggerKind::Mixed { .. } => "mixed",
            TriggerKind::Integral { .. } => "integral",
        }
    }

    fn same_variant(&self, other: &TriggerKind) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            TriggerKind::TimeTriggered { period } => write!(f, "time-triggered:period={period}"),
            TriggerKind::SendOnDelta { beta } => write!(f, "send-on-delta:beta={beta:e}"),
            TriggerKind::Relative { alpha } => write!(f, "relative:alpha={alpha}"),
            TriggerKind::Mixed { alpha, beta } => write!(f, "mixed:alpha={alpha},beta={beta:e}"),
            TriggerKind::Integral { gamma } => write!(f, "integral:gamma={gamma}"),
        }
    }
}

/// Thresholds that take effect from `from_step` onward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChange {
    pub from_step: usize,
    pub kind: TriggerKind,
}

/// Per-agent (or per-axis) trigger state.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerPolicy {
    base: TriggerKind,
    schedule: Vec<ThresholdChange>,
    tau: Option<usize>,
    last_broadcast: Vec<f64>,
    integral_lhs: f64,
    integral_rhs: f64,
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

impl TriggerPolicy {
    pub fn new(kind: TriggerKind) -> Result<Self> {
        Self::with_schedule(kind, Vec::new())
    }

    /// Piecewise-constant thresholds. Every change must keep the trigger
    /// variant of `kind`.
    pub fn with_schedule(kind: TriggerKind, mut schedule: Vec<ThresholdChange>) -> Result<Self> {
        kind.validate()?;
        for (i, c) in schedule.iter().enumerate() {
            if !c.kind.same_variant(&kind) {
                return Err(Error::config(
                    format!("trigger.schedule[{i}]"),
                    format!("{} change on a {} trigger", c.kind.name(), kind.name()),
                ));
            }
            c.kind.validate()?;
        }
        schedule.sort_by_key(|c| c.from_step);
        Ok(TriggerPolicy {
            base: kind,
            schedule,
            tau: None,
            last_broadcast: Vec::new(),
            integral_lhs: 0.0,
            integral_rhs: 0.0,
        })
    }

    /// Thresholds in force at step `k`.
    pub fn kind_at(&self, k: usize) -> TriggerKind {
        self.schedule
            .iter()
            .rev()
            .find(|c| c.from_step <= k)
            .map_or(self.base, |c| c.kind)
    }

    pub fn kind(&self) -> TriggerKind {
        self.base
    }

    /// Step of the last transmission, `None` before step 0.
    pub fn tau(&self) -> Option<usize> {
        self.tau
    }

    /// Last broadcast estimate `x̂_{τ|τ}`. Empty before the first decision.
    pub fn broadcast_register(&self) -> &[f64] {
        &self.last_broadcast
    }

    /// Current integral-window sums `(Σ‖e‖‖x̂‖, Σ‖x̂‖²)`.
    pub fn integral_sums(&self) -> (f64, f64) {
        (self.integral_lhs, self.integral_rhs)
    }

    /// Decide whether to broadcast `x_hat` at step `k`. The comparison is
    /// `≥`, so a tie transmits.
    pub fn decide(&mut self, k: usize, x_hat: &[f64]) -> Result<bool> {
        match self.tau {
            Some(t) if k <= t => {
                return Err(Error::Logic(format!(
                    "trigger evaluated at step {k} after a decision at step {t}"
                )))
            }
            Some(_) if x_hat.len() != self.last_broadcast.len() => {
                return Err(Error::Logic("estimate dimension changed".into()))
            }
            _ => {}
        }
        let transmit = match self.tau {
            None => true,
            Some(_) => self.condition(k, x_hat),
        };
        if transmit {
            self.tau = Some(k);
            self.last_broadcast = x_hat.to_vec();
            // the window restarts at τ = k, whose own term has e = 0
            self.integral_lhs = 0.0;
            self.integral_rhs = norm_sq(x_hat);
        }
        Ok(transmit)
    }

    fn condition(&mut self, k: usize, x_hat: &[f64]) -> bool {
        let err_sq: f64 = x_hat
            .iter()
            .zip(&self.last_broadcast)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let x_sq = norm_sq(x_hat);
        match self.kind_at(k) {
            TriggerKind::TimeTriggered { period } => k % period == 0,
            TriggerKind::SendOnDelta { beta } => err_sq >= beta,
            TriggerKind::Relative { alpha } => err_sq >= alpha * x_sq,
            TriggerKind::Mixed { alpha, beta } => err_sq >= alpha * x_sq + beta,
            TriggerKind::Integral { gamma } => {
                self.integral_lhs += err_sq.sqrt() * x_sq.sqrt();
                self.integral_rhs += x_sq;
                self.integral_lhs >= gamma * self.integral_rhs
            }
        }
    }
}

/// Transmission indicators `σ_k` per channel (an agent, or an agent axis).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransmissionLog {
    bits: Vec<Vec<bool>>,
}

impl TransmissionLog {
    pub fn new(channels: usize) -> Self {
        TransmissionLog {
            bits: vec![Vec::new(); channels],
        }
    }

    pub fn from_bits(bits: Vec<Vec<bool>>) -> Self {
        TransmissionLog { bits }
    }

    pub fn record(&mut self, channel: usize, sigma: bool) {
        self.bits[channel].push(sigma);
    }

    pub fn bits(&self, channel: usize) -> &[bool] {
        &self.bits[channel]
    }

    pub fn channels(&self) -> usize {
        self.bits.len()
    }

    pub fn count(&self, channel: usize) -> usize {
        self.bits[channel].iter().filter(|&&b| b).count()
    }
}

/// Finite-horizon average `(1/T) Σ_k σ_k`.
pub fn transmission_rate(log: &TransmissionLog, channel: usize) -> Result<f64> {
    let bits = log
        .bits
        .get(channel)
        .ok_or_else(|| Error::Logic(format!("no transmission channel {channel}")))?;
    if bits.is_empty() {
        return Err(Error::Logic("transmission log is empty".into()));
    }
    Ok(log.count(channel) as f64 / bits.len() as f64)
}
