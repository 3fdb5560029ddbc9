//! Finite-horizon consensus gain synthesis and the per-robot control law.
//!
//! Gains come from the backward Riccati recursion on the stacked consensus
//! error, where the graph Laplacian enters through the input matrix `ℒ⊗B`.
//! The unconstrained gain is projected onto its block diagonal so each robot
//! only needs its own 2×2 block and its neighbours' broadcast registers:
//!
//! ```text
//! u^i = −L_k^{(i)} Σ_{j∈N_i} a_ij (x̂^i_{τ|τ} − x̂^j_{τ|τ})
//! ```
//!
//! Stacked, the deployed law is `ū = −L_bd (ℒ⊗I₂) x̂`. Besides the Riccati
//! value matrices `Σ_k`, the schedule carries the exact cost-to-go `Π_k` of
//! this deployed law, which is what the closed-form cost prediction uses.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::estimator::CovarianceHistory;
use crate::linalg::{
    self, block, block_diag, project_block_diagonal, quad_form, spd_solve, symmetrize,
};
use crate::model::{AgentModel, Graph};
use crate::sim::SimTrace;

/// Per-robot quadratic weights and the horizon `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: Vec<Matrix2<f64>>,
    pub qm: Vec<Matrix2<f64>>,
    pub r: Vec<Matrix2<f64>>,
    pub horizon: usize,
}

impl CostWeights {
    pub fn uniform(
        agents: usize,
        q: Matrix2<f64>,
        qm: Matrix2<f64>,
        r: Matrix2<f64>,
        horizon: usize,
    ) -> Self {
        CostWeights {
            q: vec![q; agents],
            qm: vec![qm; agents],
            r: vec![r; agents],
            horizon,
        }
    }

    pub fn agents(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("weights.horizon", "must be ≥ 1"));
        }
        let n = self.agents();
        if self.qm.len() != n || self.r.len() != n {
            return Err(Error::config(
                "weights",
                "per-agent weight lists differ in length",
            ));
        }
        let check = |name: &str, m: &Matrix2<f64>, definite: bool| -> Result<()> {
            if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
                return Err(Error::config(format!("weights.{name}"), "not symmetric"));
            }
            let ev = m.symmetric_eigenvalues();
            let lo = ev.min();
            if definite && !(lo > 0.0) {
                return Err(Error::config(
                    format!("weights.{name}"),
                    "must be positive definite",
                ));
            }
            if !definite && lo < -1e-12 * m.abs().max().max(1.0) {
                return Err(Error::config(
                    format!("weights.{name}"),
                    "must be positive semi-definite",
                ));
            }
            Ok(())
        };
        for i in 0..n {
            check("Q", &self.q[i], false)?;
            check("QM", &self.qm[i], false)?;
            check("R", &self.r[i], true)?;
        }
        Ok(())
    }

    pub fn stacked_q(&self) -> DMatrix<f64> {
        block_diag(&self.q)
    }

    pub fn stacked_qm(&self) -> DMatrix<f64> {
        block_diag(&self.qm)
    }

    pub fn stacked_r(&self) -> DMatrix<f64> {
        block_diag(&self.r)
    }

    /// All weights multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let s = |v: &[Matrix2<f64>]| v.iter().map(|m| m * c).collect();
        CostWeights {
            q: s(&self.q),
            qm: s(&self.qm),
            r: s(&self.r),
            horizon: self.horizon,
        }
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        CostWeights {
            horizon,
            ..self.clone()
        }
    }
}

/// Stacked team matrices: `a = blkdiag(A^i)`, `b = blkdiag(B^i)` and the
/// coupling `ℒ ⊗ I₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub coupling: DMatrix<f64>,
}

impl StackedSystem {
    pub fn new(models: &[AgentModel], graph: &Graph) -> Self {
        Self::from_coupling(models, &graph.laplacian_matrix())
    }

    /// Any N×N coupling in place of the Laplacian (e.g. `[1]` for the scalar
    /// surrogate).
    pub fn from_coupling(models: &[AgentModel], coupling: &DMatrix<f64>) -> Self {
        let a: Vec<_> = models.iter().map(|m| m.a).collect();
        let b: Vec<_> = models.iter().map(|m| m.b).collect();
        StackedSystem {
            a: block_diag(&a),
            b: block_diag(&b),
            coupling: linalg::kron(coupling, &DMatrix::identity(2, 2)),
        }
    }

    pub fn agents(&self) -> usize {
        self.a.nrows() / 2
    }

    /// Input matrix of the Riccati model, `ℒ⊗B`.
    pub fn input_matrix(&self) -> DMatrix<f64> {
        &self.coupling * &self.b
    }

    /// `(I⊗A) − (ℒ⊗B) L`.
    pub fn theorem_closed_loop(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - self.input_matrix() * gain
    }

    /// Stacked feedback realised by the neighbour-difference law, `L (ℒ⊗I)`.
    pub fn deployed_feedback(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        gain * &self.coupling
    }

    /// Closed loop of the deployed law, `(I⊗A) − (I⊗B) L (ℒ⊗I)`.
    pub fn deployed_closed_loop(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a - &self.b * self.deployed_feedback(gain)
    }

    /// How a stacked triggering error `ē` enters the next estimate,
    /// `(I⊗B) L (ℒ⊗I)`.
    pub fn trigger_input(&self, gain: &DMatrix<f64>) -> DMatrix<f64> {
        &self.b * self.deployed_feedback(gain)
    }
}

/// Output of [`riccati_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    /// `Σ_0 … Σ_M`.
    pub sigma: Vec<DMatrix<f64>>,
    /// Block-diagonal gains `L_0 … L_{M−1}` used by the robots.
    pub gains: Vec<DMatrix<f64>>,
    /// Gains before projection.
    pub unconstrained: Vec<DMatrix<f64>>,
    /// Frobenius norm of the off-diagonal blocks removed at each step.
    pub projection_gap: Vec<f64>,
    /// Cost-to-go `Π_0 … Π_M` of the deployed law.
    pub cost_to_go: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// Agent `i`'s block `L_k^{(i)}`.
    pub fn agent_gain(&self, k: usize, agent: usize) -> Matrix2<f64> {
        block(&self.gains[k], agent, agent)
    }
}

/// Backward Riccati recursion with terminal condition `Σ_M = Q̄_M`:
///
/// ```text
/// L_k = [R̄ + (ℒ⊗B)ᵀ Σ_{k+1} (ℒ⊗B)]⁻¹ (ℒ⊗B)ᵀ Σ_{k+1} (I⊗A)
/// Σ_k = (I⊗A − (ℒ⊗B)L_k)ᵀ Σ_{k+1} (I⊗A − (ℒ⊗B)L_k) + L_kᵀ R̄ L_k + Q̄
/// ```
///
/// `ℒ` is fixed, so the expectations around the Laplacian terms are the
/// terms themselves. `L_k` in the second line is the block-diagonal
/// projection of the first.
pub fn riccati_backward(weights: &CostWeights, system: &StackedSystem) -> Result<GainSchedule> {
    weights.validate()?;
    let n2 = system.a.nrows();
    if weights.agents() * 2 != n2
        || system.b.shape() != (n2, n2)
        || system.coupling.shape() != (n2, n2)
    {
        return Err(Error::config(
            "weights",
            "dimensions do not match the team size",
        ));
    }
    let m = weights.horizon;
    let q = weights.stacked_q();
    let r = weights.stacked_r();
    let h = system.input_matrix();
    let ht = h.transpose();

    let mut sigma = vec![DMatrix::zeros(n2, n2); m + 1];
    let mut cost_to_go = vec![DMatrix::zeros(n2, n2); m + 1];
    let mut gains = vec![DMatrix::zeros(n2, n2); m];
    let mut unconstrained = vec![DMatrix::zeros(n2, n2); m];
    let mut gap = vec![0.0; m];
    sigma[m] = weights.stacked_qm();
    cost_to_go[m] = sigma[m].clone();

    for k in (0..m).rev() {
        let next = &sigma[k + 1];
        let bracket = &r + &ht * next * &h;
        let rhs = &ht * next * &system.a;
        let full = spd_solve(&bracket, &rhs, &format!("riccati step {k}"))?;
        let (bd, removed) = project_block_diagonal(&full);

        let acl = system.theorem_closed_loop(&bd);
        sigma[k] = symmetrize(&(acl.transpose() * next * &acl + bd.transpose() * &r * &bd + &q));

        let dep = system.deployed_closed_loop(&bd);
        let fb = system.deployed_feedback(&bd);
        cost_to_go[k] = symmetrize(
            &(dep.transpose() * &cost_to_go[k + 1] * &dep + fb.transpose() * &r * &fb + &q),
        );

        if full.iter().chain(sigma[k].iter()).any(|x| !x.is_finite()) {
            return Err(Error::numerical(
                format!("riccati step {k}"),
                "non-finite gain or value",
            ));
        }
        unconstrained[k] = full;
        gains[k] = bd;
        gap[k] = removed;
    }
    Ok(GainSchedule {
        sigma,
        gains,
        unconstrained,
        projection_gap: gap,
        cost_to_go,
    })
}

/// `ε̂ = x̂ − 1_N ⊗ x₀`, always recomputed from the stacked estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusError {
    pub eps: DVector<f64>,
    pub reference: Vector2<f64>,
}

impl ConsensusError {
    pub fn new(estimates: &[Vector2<f64>], reference: Vector2<f64>) -> Self {
        let eps = DVector::from_iterator(
            2 * estimates.len(),
            estimates.iter().flat_map(|x| {
                let d = x - reference;
                [d[0], d[1]]
            }),
        );
        ConsensusError { eps, reference }
    }

    /// Component orthogonal to `1_N ⊗ ℝ²`.
    pub fn disagreement(&self) -> DVector<f64> {
        let n = self.eps.len() / 2;
        linalg::disagreement_projector(n) * &self.eps
    }
}

/// `u^i = −L^{(i)} Σ_j a_ij (own − register_j)` over the supplied neighbour
/// registers.
pub fn consensus_input(
    agent: usize,
    gain: &Matrix2<f64>,
    own_register: &Vector2<f64>,
    neighbors: &[(usize, Vector2<f64>)],
    graph: &Graph,
) -> Vector2<f64> {
    let adj = &graph.adjacency()[agent];
    let sum = neighbors.iter().fold(Vector2::zeros(), |acc, (j, reg)| {
        acc + (own_register - reg) * f64::from(adj[*j])
    });
    -(gain * sum)
}

/// Realised cost of one robot,
/// `J^i = ε̂_Mᵀ Q_M ε̂_M + Σ_{k<M} (ε̂_kᵀ Q ε̂_k + u_kᵀ R u_k)`.
pub fn performance_index(trace: &SimTrace, weights: &CostWeights, agent: usize) -> Result<f64> {
    let m = weights.horizon;
    if trace.horizon() < m {
        return Err(Error::Logic(format!(
            "trace has {} control steps, horizon is {m}",
            trace.horizon()
        )));
    }
    let (q, qm, r) = (weights.q[agent], weights.qm[agent], weights.r[agent]);
    let mut total = linalg::CompensatedSum::default();
    for k in 0..m {
        let rec = &trace.steps[k].agents[agent];
        let u = rec.control.unwrap_or_else(Vector2::zeros);
        total.add(rec.eps.dot(&(q * rec.eps)) + u.dot(&(r * u)));
    }
    let eps_m = trace.steps[m].agents[agent].eps;
    total.add(eps_m.dot(&(qm * eps_m)));
    Ok(total.value())
}

/// Inputs for the closed-form cost and the stability bound.
#[derive(Debug, Clone, Copy)]
pub struct NoiseTerms<'a> {
    pub models: &'a [AgentModel],
    pub covariance: &'a [CovarianceHistory],
    /// `E{ēᵀē}` for steps `0..M`.
    pub trigger_moment: Option<&'a [f64]>,
}

/// Stacked per-step filter matrices.
#[derive(Debug, Clone)]
pub(crate) struct StackedNoise {
    pub c: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl<'a> NoiseTerms<'a> {
    pub(crate) fn stacked(&self) -> StackedNoise {
        StackedNoise {
            c: block_diag(&self.models.iter().map(|m| m.c).collect::<Vec<_>>()),
            w: block_diag(&self.models.iter().map(|m| m.w).collect::<Vec<_>>()),
            v: block_diag(&self.models.iter().map(|m| m.v).collect::<Vec<_>>()),
        }
    }

    pub(crate) fn kalman_gain(&self, k: usize) -> DMatrix<f64> {
        block_diag(
            &self
                .covariance
                .iter()
                .map(|h| h.gain[k])
                .collect::<Vec<_>>(),
        )
    }

    pub(crate) fn p_corr(&self, k: usize) -> DMatrix<f64> {
        block_diag(
            &self
                .covariance
                .iter()
                .map(|h| h.p_corr[k])
                .collect::<Vec<_>>(),
        )
    }

    fn check(&self, horizon: usize) -> Result<&'a [f64]> {
        if self.covariance.len() != self.models.len() {
            return Err(Error::Logic(
                "one covariance history per agent is required".into(),
            ));
        }
        if self.covariance.iter().any(|h| h.gain.len() < horizon + 1) {
            return Err(Error::Logic(
                "covariance history shorter than the horizon".into(),
            ));
        }
        match self.trigger_moment {
            Some(t) if t.len() >= horizon => Ok(t),
            Some(_) => Err(Error::Logic(
                "triggering-error moments shorter than the horizon".into(),
            )),
            None => Err(Error::Logic(
                "triggering-error second moments are missing".into(),
            )),
        }
    }
}

/// The four trace contributions injected between steps `k` and `k+1`,
/// weighted by `value_next` (Σ_{k+1} or Π_{k+1}).
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct TraceTerms {
    pub estimation: f64,
    pub measurement: f64,
    pub process: f64,
    pub triggering: f64,
}

impl TraceTerms {
    pub fn total(&self) -> f64 {
        self.estimation + self.measurement + self.process + self.triggering
    }
}

pub(crate) fn trace_terms(
    value_next: &DMatrix<f64>,
    system: &StackedSystem,
    gain_k: &DMatrix<f64>,
    stacked: &StackedNoise,
    noise: &NoiseTerms<'_>,
    trigger_moment: f64,
    k: usize,
) -> TraceTerms {
    let kg = noise.kalman_gain(k + 1);
    let core = kg.transpose() * value_next * &kg;
    let ca = &stacked.c * &system.a;
    let me = system.trigger_input(gain_k);
    TraceTerms {
        estimation: (ca.transpose() * &core * &ca * noise.p_corr(k)).trace(),
        measurement: (&core * &stacked.v).trace(),
        process: (stacked.c.transpose() * &core * &stacked.c * &stacked.w).trace(),
        triggering: (me.transpose() * value_next * &me).trace() * trigger_moment,
    }
}

/// Closed-form expected cost of the deployed law in Bellman form,
/// `E{ε̂_0ᵀ Π_0 ε̂_0} + Σ_k (estimation + measurement + process + triggering)`.
pub fn predicted_cost(
    schedule: &GainSchedule,
    system: &StackedSystem,
    eps0: &ConsensusError,
    noise: &NoiseTerms<'_>,
) -> Result<f64> {
    let m = schedule.horizon();
    let moments = noise.check(m)?;
    let stacked = noise.stacked();
    let k0 = noise.kalman_gain(0);
    let x0_cov = block_diag(&noise.models.iter().map(|md| md.x0_cov).collect::<Vec<_>>());
    let cov0 = &k0 * (&stacked.c * x0_cov * stacked.c.transpose() + &stacked.v) * k0.transpose();

    let mut total = linalg::CompensatedSum::default();
    total.add(quad_form(&schedule.cost_to_go[0], &eps0.eps));
    total.add((&schedule.cost_to_go[0] * cov0).trace());
    for k in 0..m {
        let t = trace_terms(
            &schedule.cost_to_go[k + 1],
            system,
            &schedule.gains[k],
            &stacked,
            noise,
            moments[k],
            k,
        );
        total.add(t.total());
    }
    Ok(total.value())
}
