//! Per-robot stochastic linear dynamics, the communication graph, seeded
//! Gaussian noise, and the unicycle wheel-speed adapter.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, psd_lower_factor};

/// Discrete-time planar position model of one robot:
/// `x⁺ = A x + B u + w`, `y = C x + v`, `x₀ ~ N(x0_mean, x0_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub a: Matrix2<f64>,
    pub b: Matrix2<f64>,
    pub c: Matrix2<f64>,
    /// Process-noise covariance `W` (m²).
    pub w: Matrix2<f64>,
    /// Measurement-noise covariance `V` (m²).
    pub v: Matrix2<f64>,
    pub x0_mean: Vector2<f64>,
    /// Initial-state covariance `X₀` (m²).
    pub x0_cov: Matrix2<f64>,
}

impl AgentModel {
    /// Single-integrator position model: `A = I`, `B = dt·I`, `C = I`.
    pub fn single_integrator(dt: f64, w: f64, v: f64, x0_mean: Vector2<f64>) -> Self {
        AgentModel {
            a: Matrix2::identity(),
            b: Matrix2::identity() * dt,
            c: Matrix2::identity(),
            w: Matrix2::identity() * w,
            v: Matrix2::identity() * v,
            x0_mean,
            x0_cov: Matrix2::zeros(),
        }
    }

    /// Check finiteness and the covariance invariants. `V` may be singular
    /// only in noise-free set-ups; the filter rejects it otherwise.
    pub fn validate(&self, path: &str) -> Result<()> {
        let all = [self.a, self.b, self.c, self.w, self.v, self.x0_cov];
        if all.iter().any(|m| m.iter().any(|x| !x.is_finite()))
            || self.x0_mean.iter().any(|x| !x.is_finite())
        {
            return Err(Error::config(path, "non-finite model entry"));
        }
        for (name, m) in [("W", &self.w), ("V", &self.v), ("X0", &self.x0_cov)] {
            let asym = (m - m.transpose()).abs().max();
            if asym > 1e-12 * m.abs().max().max(1.0) {
                return Err(Error::config(format!("{path}.{name}"), "not symmetric"));
            }
            psd_lower_factor(&DMatrix::from_column_slice(2, 2, m.as_slice())).map_err(|_| {
                Error::config(format!("{path}.{name}"), "not positive semi-definite")
            })?;
        }
        Ok(())
    }
}

/// Returns `A x + B u + w`.
pub fn step_dynamics(
    model: &AgentModel,
    x: &Vector2<f64>,
    u: &Vector2<f64>,
    w: &Vector2<f64>,
) -> Vector2<f64> {
    model.a * x + model.b * u + w
}

/// Returns `C x + v`.
pub fn measure(model: &AgentModel, x: &Vector2<f64>, v: &Vector2<f64>) -> Vector2<f64> {
    model.c * x + v
}

/// Communication topology with 0/1 adjacency and its Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<u8>>,
    laplacian: Vec<Vec<i64>>,
}

impl Graph {
    pub fn from_adjacency(adjacency: Vec<Vec<u8>>) -> Result<Self> {
        let laplacian = laplacian_from_adjacency(&adjacency)?;
        Ok(Graph {
            adjacency,
            laplacian,
        })
    }

    pub fn complete(n: usize) -> Self {
        let adj = (0..n)
            .map(|i| (0..n).map(|j| u8::from(i != j)).collect())
            .collect();
        Graph::from_adjacency(adj).expect("complete graph is valid")
    }

    pub fn path(n: usize) -> Self {
        let adj = (0..n)
            .map(|i| (0..n).map(|j| u8::from(i.abs_diff(j) == 1)).collect())
            .collect();
        Graph::from_adjacency(adj).expect("path graph is valid")
    }

    pub fn ring(n: usize) -> Self {
        let adj = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| u8::from(i != j && ((i + 1) % n == j || (j + 1) % n == i)))
                    .collect()
            })
            .collect();
        Graph::from_adjacency(adj).expect("ring graph is valid")
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn adjacency(&self) -> &[Vec<u8>] {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &[Vec<i64>] {
        &self.laplacian
    }

    pub fn laplacian_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.laplacian[i][j] as f64)
    }

    /// Indices `j` with `a_ij = 1`, ascending.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i]
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == 1)
            .map(|(j, _)| j)
    }

    /// Weak connectivity of the underlying undirected graph.
    pub fn is_connected(&self) -> bool {
        let n = self.len();
        if n <= 1 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && (self.adjacency[i][j] == 1 || self.adjacency[j][i] == 1) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// `l_ii = Σ_j a_ij`, `l_ij = −a_ij`. Integer arithmetic, so row sums are
/// exactly zero.
pub fn laplacian_from_adjacency(adjacency: &[Vec<u8>]) -> Result<Vec<Vec<i64>>> {
    let n = adjacency.len();
    let mut lap = vec![vec![0i64; n]; n];
    for (i, row) in adjacency.iter().enumerate() {
        if row.len() != n {
            return Err(Error::config(
                format!("graph.adjacency[{i}]"),
                format!("row has {} entries, expected {n}", row.len()),
            ));
        }
        for (j, &a) in row.iter().enumerate() {
            if a > 1 {
                return Err(Error::config(
                    format!("graph.adjacency[{i}][{j}]"),
                    "entries must be 0 or 1",
                ));
            }
            if i == j {
                if a != 0 {
                    return Err(Error::config(
                        format!("graph.adjacency[{i}][{i}]"),
                        "diagonal must be zero",
                    ));
                }
                continue;
            }
            lap[i][j] = -i64::from(a);
            lap[i][i] += i64::from(a);
        }
    }
    Ok(lap)
}

/// Noise role of a stream; each agent owns one stream per role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseRole {
    InitialState = 0,
    Process = 1,
    Measurement = 2,
}

/// Seeded standard-normal stream. `(seed, trial, stream)` fully determines
/// the sequence: ChaCha20 keyed by seed and trial, with the stream id in the
/// cipher's stream-selection word.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha20Rng,
}

impl NoiseSource {
    pub fn new(seed: u64, trial: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&trial.to_le_bytes());
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(stream);
        NoiseSource { rng }
    }

    pub fn for_agent(seed: u64, trial: u64, agent: usize, role: NoiseRole) -> Self {
        NoiseSource::new(seed, trial, agent as u64 * 3 + role as u64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Draw `mean + G z` with `G Gᵀ = cov` and `z` standard normal.
pub fn sample_gaussian(
    source: &mut NoiseSource,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::config("covariance", "dimension mismatch with mean"));
    }
    let g = psd_lower_factor(cov)?;
    let z = DVector::from_fn(n, |_, _| source.standard_normal());
    Ok(mean + g * z)
}

/// Two-dimensional convenience wrapper around [`sample_gaussian`] with a
/// precomputed factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler2 {
    factor: Matrix2<f64>,
    zero: bool,
}

impl GaussianSampler2 {
    pub fn new(cov: &Matrix2<f64>) -> Result<Self> {
        let g = psd_lower_factor(&DMatrix::from_column_slice(2, 2, cov.as_slice()))?;
        let factor = Matrix2::from_column_slice(g.as_slice());
        Ok(GaussianSampler2 {
            zero: factor.iter().all(|&x| x == 0.0),
            factor,
        })
    }

    /// Always consumes two normals so streams stay aligned across configs.
    pub fn draw(&self, source: &mut NoiseSource) -> Vector2<f64> {
        let z = Vector2::new(source.standard_normal(), source.standard_normal());
        if self.zero {
            Vector2::zeros()
        } else {
            self.factor * z
        }
    }
}

/// Differential-drive pose used to turn planar velocity commands into wheel
/// speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicyclePose {
    pub x: f64,
    pub y: f64,
    /// Heading in (−π, π], counter-clockwise from +X.
    pub theta: f64,
    pub wheel_base: f64,
    pub wheel_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelCommand {
    /// Right wheel rim speed (m/s).
    pub right: f64,
    /// Left wheel rim speed (m/s).
    pub left: f64,
    pub linear: f64,
    pub angular: f64,
}

impl WheelCommand {
    pub fn right_rate(&self, pose: &UnicyclePose) -> f64 {
        self.right / pose.wheel_radius
    }

    pub fn left_rate(&self, pose: &UnicyclePose) -> f64 {
        self.left / pose.wheel_radius
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

/// Invert the decoupled-axes kinematics `Ẋ = v cos θ`, `Ẏ = v sin θ`: drive at
/// `v = ‖u‖` while turning toward `atan2(u_Y, u_X)` at a rate clamped to
/// `omega_max`, then integrate the pose over `dt`.
pub fn unicycle_wheel_speeds(
    pose: &UnicyclePose,
    u: &Vector2<f64>,
    dt: f64,
    omega_max: f64,
) -> Result<(WheelCommand, UnicyclePose)> {
    if !(dt > 0.0) || !(pose.wheel_base > 0.0) || !(pose.wheel_radius > 0.0) {
        return Err(Error::config(
            "unicycle",
            "dt, wheel_base and wheel_radius must be positive",
        ));
    }
    let linear = u.norm();
    let angular = if linear == 0.0 {
        0.0
    } else {
        let desired = u[1].atan2(u[0]);
        (wrap_angle(desired - pose.theta) / dt).clamp(-omega_max, omega_max)
    };
    let half_track = angular * pose.wheel_base / 2.0;
    let cmd = WheelCommand {
        right: linear + half_track,
        left: linear - half_track,
        linear,
        angular,
    };
    let mid = pose.theta + angular * dt / 2.0;
    let next = UnicyclePose {
        x: pose.x + linear * mid.cos() * dt,
        y: pose.y + linear * mid.sin() * dt,
        theta: wrap_angle(pose.theta + angular * dt),
        ..*pose
    };
    Ok((cmd, next))
}

/// Stacked noise covariances and output map for a team.
pub fn stacked(models: &[AgentModel], pick: impl Fn(&AgentModel) -> Matrix2<f64>) -> DMatrix<f64> {
    let blocks: Vec<_> = models.iter().map(pick).collect();
    linalg::block_diag(&blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_model() -> AgentModel {
        AgentModel {
            a: Matrix2::identity(),
            b: Matrix2::identity(),
            c: Matrix2::identity(),
            w: Matrix2::zeros(),
            v: Matrix2::identity() * 1e-4,
            x0_mean: Vector2::zeros(),
            x0_cov: Matrix2::zeros(),
        }
    }

    #[test]
    fn dynamics_examples() {
        let m = identity_model();
        let x = step_dynamics(
            &m,
            &Vector2::new(0.2, -0.1),
            &Vector2::zeros(),
            &Vector2::zeros(),
        );
        assert_eq!(x, Vector2::new(0.2, -0.1));
        let x = step_dynamics(
            &m,
            &Vector2::zeros(),
            &Vector2::new(0.1, -0.2),
            &Vector2::new(0.01, 0.0),
        );
        assert_relative_eq!(x, Vector2::new(0.11, -0.2), epsilon = 1e-15);
        let shear = AgentModel {
            a: Matrix2::new(1.0, 0.1, 0.0, 1.0),
            ..m
        };
        let x = step_dynamics(
            &shear,
            &Vector2::new(1.0, 1.0),
            &Vector2::zeros(),
            &Vector2::zeros(),
        );
        assert_relative_eq!(x, Vector2::new(1.1, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn measurement_examples() {
        let m = identity_model();
        assert_eq!(
            measure(&m, &Vector2::new(0.5, 0.5), &Vector2::zeros()),
            Vector2::new(0.5, 0.5)
        );
        assert_relative_eq!(
            measure(&m, &Vector2::new(0.5, 0.5), &Vector2::new(0.01, -0.01)),
            Vector2::new(0.51, 0.49),
            epsilon = 1e-15
        );
        let partial = AgentModel {
            c: Matrix2::new(1.0, 0.0, 0.0, 0.0),
            ..m
        };
        assert_eq!(
            measure(&partial, &Vector2::new(2.0, 3.0), &Vector2::zeros()),
            Vector2::new(2.0, 0.0)
        );
    }

    #[test]
    fn laplacian_examples() {
        let l = laplacian_from_adjacency(&[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(l, vec![vec![1, -1], vec![-1, 1]]);
        let k4 = Graph::complete(4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(k4.laplacian()[i][j], if i == j { 3 } else { -1 });
            }
        }
        let p3 = Graph::path(3);
        assert_eq!(
            p3.laplacian(),
            &[vec![1, -1, 0], vec![-1, 2, -1], vec![0, -1, 1]]
        );
    }

    #[test]
    fn laplacian_rejects_bad_adjacency() {
        assert!(laplacian_from_adjacency(&[vec![1, 0], vec![0, 0]]).is_err());
        assert!(laplacian_from_adjacency(&[vec![0, 2], vec![1, 0]]).is_err());
        assert!(laplacian_from_adjacency(&[vec![0, 1], vec![1]]).is_err());
    }

    #[test]
    fn connected_graphs_have_single_zero_eigenvalue() {
        for g in [
            Graph::complete(4),
            Graph::path(5),
            Graph::ring(6),
            Graph::complete(2),
        ] {
            assert!(g.is_connected());
            let ev = linalg::sym_eigenvalues(&g.laplacian_matrix());
            let largest = ev.last().unwrap().abs();
            let zeros = ev.iter().filter(|e| e.abs() <= 1e-9 * largest).count();
            assert_eq!(zeros, 1);
        }
        let split = Graph::from_adjacency(vec![
            vec![0, 1, 0, 0],
            vec![1, 0, 0, 0],
            vec![0, 0, 0, 1],
            vec![0, 0, 1, 0],
        ])
        .unwrap();
        assert!(!split.is_connected());
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let mut src = NoiseSource::new(99, 0, 1);
        let mean = DVector::from_vec(vec![0.3, -0.2]);
        let s = sample_gaussian(&mut src, &mean, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(s, mean);
    }

    #[test]
    fn sampling_is_deterministic_and_streams_differ() {
        let draw = |seed, stream| {
            let mut src = NoiseSource::new(seed, 0, stream);
            (0..16).map(|_| src.standard_normal()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5, 0), draw(5, 0));
        assert_ne!(draw(5, 0), draw(5, 1));
        assert_ne!(draw(5, 0), draw(6, 0));
    }

    #[test]
    fn sample_covariance_matches_request() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 0.04]));
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let mut src = NoiseSource::new(2024, 0, 7);
        let n = 100_000;
        let draws: Vec<_> = (0..n)
            .map(|_| sample_gaussian(&mut src, &mean, &cov).unwrap())
            .collect();
        let mu = draws.iter().fold(DVector::zeros(2), |acc, d| acc + d) / n as f64;
        for i in 0..2 {
            let sigma = cov[(i, i)].sqrt();
            assert!((mu[i] - mean[i]).abs() < 5.0 * sigma / (n as f64).sqrt());
        }
        let mut sc = DMatrix::<f64>::zeros(2, 2);
        for d in &draws {
            let e = d - &mu;
            sc += &e * e.transpose();
        }
        sc /= (n - 1) as f64;
        for i in 0..2 {
            for j in 0..2 {
                let scale = (cov[(i, i)] * cov[(j, j)]).sqrt();
                assert!(
                    (sc[(i, j)] - cov[(i, j)]).abs() < 0.1 * scale,
                    "{i}{j}: {}",
                    sc[(i, j)]
                );
            }
        }
    }

    fn pose(theta: f64) -> UnicyclePose {
        UnicyclePose {
            x: 0.0,
            y: 0.0,
            theta,
            wheel_base: 0.1,
            wheel_radius: 0.016,
        }
    }

    #[test]
    fn unicycle_zero_command_does_not_move() {
        let p = pose(0.7);
        let (cmd, next) = unicycle_wheel_speeds(&p, &Vector2::zeros(), 0.1, PI).unwrap();
        assert_eq!((cmd.right, cmd.left), (0.0, 0.0));
        assert_eq!(next, p);
    }

    #[test]
    fn unicycle_aligned_heading_drives_straight() {
        let (cmd, _) =
            unicycle_wheel_speeds(&pose(0.0), &Vector2::new(0.1, 0.0), 0.1, 1e6).unwrap();
        assert_eq!(cmd.angular, 0.0);
        assert_relative_eq!(cmd.right, 0.1);
        assert_relative_eq!(cmd.left, 0.1);
    }

    #[test]
    fn unicycle_turn_rate_is_clamped() {
        let (cmd, next) =
            unicycle_wheel_speeds(&pose(0.0), &Vector2::new(0.0, 0.1), 0.1, PI).unwrap();
        assert_relative_eq!(cmd.angular, PI);
        assert_relative_eq!(cmd.right, 0.1 + PI * 0.05, epsilon = 1e-15);
        assert_relative_eq!(cmd.left, 0.1 - PI * 0.05, epsilon = 1e-15);
        assert_relative_eq!(next.theta, PI * 0.1, epsilon = 1e-15);
    }

    #[test]
    fn unicycle_rejects_bad_preconditions() {
        assert!(unicycle_wheel_speeds(&pose(0.0), &Vector2::new(1.0, 0.0), 0.0, PI).is_err());
        let mut p = pose(0.0);
        p.wheel_base = 0.0;
        assert!(unicycle_wheel_speeds(&p, &Vector2::new(1.0, 0.0), 0.1, PI).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.25), 0.25);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn laplacian_rows_sum_to_zero(n in 1usize..8, bits in proptest::collection::vec(any::<bool>(), 64)) {
                let adj: Vec<Vec<u8>> = (0..n)
                    .map(|i| (0..n).map(|j| u8::from(i != j && bits[(i * 8 + j) % 64])).collect())
                    .collect();
                let lap = laplacian_from_adjacency(&adj).unwrap();
                for (i, row) in lap.iter().enumerate() {
                    prop_assert_eq!(row.iter().sum::<i64>(), 0);
                    for j in 0..n {
                        if i != j {
                            prop_assert_eq!(row[j], -i64::from(adj[i][j]));
                        }
                    }
                }
            }

            #[test]
            fn aligned_unicycle_recovers_linear_displacement(
                theta in -3.1f64..3.1, speed in 0.001f64..0.5, dt in 0.01f64..0.2
            ) {
                let p = UnicyclePose { x: 0.3, y: -0.1, theta, wheel_base: 0.1, wheel_radius: 0.02 };
                let u = Vector2::new(speed * theta.cos(), speed * theta.sin());
                let (_, next) = unicycle_wheel_speeds(&p, &u, dt, f64::INFINITY).unwrap();
                prop_assert!((next.x - p.x - u[0] * dt).abs() < 1e-9);
                prop_assert!((next.y - p.y - u[1] * dt).abs() < 1e-9);
            }

            #[test]
            fn dynamics_are_pure(x0 in -1.0f64..1.0, x1 in -1.0f64..1.0, u0 in -1.0f64..1.0) {
                let m = identity_model();
                let x = Vector2::new(x0, x1);
                let u = Vector2::new(u0, -u0);
                prop_assert_eq!(step_dynamics(&m, &x, &u, &Vector2::zeros()),
                                step_dynamics(&m, &x, &u, &Vector2::zeros()));
                prop_assert_eq!(measure(&m, &x, &u), measure(&m, &x, &u));
            }
        }
    }
}
