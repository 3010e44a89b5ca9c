//! Random linear systems, noise sequences, closed-loop simulation and
//! seeded trajectory datasets.
//!
//! A trajectory is produced by drawing a fresh system `(A, B)` entrywise
//! from truncated normals, a fresh Gaussian noise sequence, and rolling
//! `x(t+1) = A x(t) + B K x(t) + w(t)` forward from `x(0) = 0`.

use crate::error::{dim_err, param_err, Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows};
use crate::rng::{domain, substream, StreamRng};
use crate::scalar::Scalar;
use crate::truncnorm::TruncatedNormal;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// The generative model behind `(A, B, w)`: per-entry truncated normals
/// for the system matrices and independent zero-mean Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemSpec", into = "SystemSpec")]
pub struct SystemDistribution {
    pub dim_x: usize,
    pub dim_u: usize,
    pub mean_a: DMatrix<f64>,
    pub mean_b: DMatrix<f64>,
    pub std_a: DMatrix<f64>,
    pub std_b: DMatrix<f64>,
    pub bounds_a: (f64, f64),
    pub bounds_b: (f64, f64),
    pub noise_std: DVector<f64>,
    /// Sub-Gaussian parameter of each noise entry.
    pub sigma_w: f64,
}

/// Row-major file representation of [`SystemDistribution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub dim_x: usize,
    pub dim_u: usize,
    pub mean_a: Vec<Vec<f64>>,
    pub mean_b: Vec<Vec<f64>>,
    pub std_a: Vec<Vec<f64>>,
    pub std_b: Vec<Vec<f64>>,
    pub bounds_a: [f64; 2],
    pub bounds_b: [f64; 2],
    pub noise_std: Vec<f64>,
    pub sigma_w: f64,
}

impl TryFrom<SystemSpec> for SystemDistribution {
    type Error = Error;

    fn try_from(s: SystemSpec) -> Result<Self> {
        let dist = SystemDistribution {
            dim_x: s.dim_x,
            dim_u: s.dim_u,
            mean_a: matrix_from_rows(&s.mean_a, "mean_a")?,
            mean_b: matrix_from_rows(&s.mean_b, "mean_b")?,
            std_a: matrix_from_rows(&s.std_a, "std_a")?,
            std_b: matrix_from_rows(&s.std_b, "std_b")?,
            bounds_a: (s.bounds_a[0], s.bounds_a[1]),
            bounds_b: (s.bounds_b[0], s.bounds_b[1]),
            noise_std: DVector::from_vec(s.noise_std),
            sigma_w: s.sigma_w,
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl From<SystemDistribution> for SystemSpec {
    fn from(d: SystemDistribution) -> Self {
        SystemSpec {
            dim_x: d.dim_x,
            dim_u: d.dim_u,
            mean_a: matrix_to_rows(&d.mean_a),
            mean_b: matrix_to_rows(&d.mean_b),
            std_a: matrix_to_rows(&d.std_a),
            std_b: matrix_to_rows(&d.std_b),
            bounds_a: [d.bounds_a.0, d.bounds_a.1],
            bounds_b: [d.bounds_b.0, d.bounds_b.1],
            noise_std: d.noise_std.iter().copied().collect(),
            sigma_w: d.sigma_w,
        }
    }
}

/// The constants the bounds need from the data-generating process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConstants {
    pub rho_a: f64,
    pub rho_b: f64,
    pub sigma_w: f64,
    pub dim_x: usize,
}

impl SystemDistribution {
    pub fn validate(&self) -> Result<()> {
        let (dx, du) = (self.dim_x, self.dim_u);
        if dx == 0 || du == 0 {
            return Err(param_err("dim_x and dim_u must be positive"));
        }
        let shape = |m: &DMatrix<f64>, r: usize, c: usize, what: &str| {
            if m.shape() != (r, c) {
                Err(dim_err(format!("{what} is {:?}, expected ({r}, {c})", m.shape())))
            } else {
                Ok(())
            }
        };
        shape(&self.mean_a, dx, dx, "mean_a")?;
        shape(&self.std_a, dx, dx, "std_a")?;
        shape(&self.mean_b, dx, du, "mean_b")?;
        shape(&self.std_b, dx, du, "std_b")?;
        if self.noise_std.len() != dx {
            return Err(dim_err(format!(
                "noise_std has {} entries, expected {dx}",
                self.noise_std.len()
            )));
        }
        let (a1, a2) = self.bounds_a;
        let (b1, b2) = self.bounds_b;
        if !(a1 <= a2) || !(b1 <= b2) {
            return Err(param_err("truncation bounds must satisfy lower <= upper"));
        }
        if self.mean_a.iter().any(|&v| v < a1 || v > a2) {
            return Err(param_err(format!("mean_a entries must lie in [{a1}, {a2}]")));
        }
        if self.mean_b.iter().any(|&v| v < b1 || v > b2) {
            return Err(param_err(format!("mean_b entries must lie in [{b1}, {b2}]")));
        }
        if self
            .std_a
            .iter()
            .chain(self.std_b.iter())
            .chain(self.noise_std.iter())
            .any(|&s| !(s >= 0.0) || !s.is_finite())
        {
            return Err(param_err("standard deviations must be finite and nonnegative"));
        }
        if !(self.sigma_w > 0.0) {
            return Err(param_err("sigma_w must be positive"));
        }
        if self.noise_std.iter().any(|&s| s > self.sigma_w) {
            return Err(param_err(
                "every noise standard deviation must be at most sigma_w",
            ));
        }
        Ok(())
    }

    pub fn constants(&self) -> SystemConstants {
        let (a1, a2) = self.bounds_a;
        let (b1, b2) = self.bounds_b;
        SystemConstants {
            rho_a: a1.abs().max(a2.abs()),
            rho_b: b1.abs().max(b2.abs()),
            sigma_w: self.sigma_w,
            dim_x: self.dim_x,
        }
    }

    /// `Σ_w = diag(noise_std²)`.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.noise_std.map(|s| s * s))
    }

    /// True when `(A, B)` is deterministic, i.e. every system std is zero.
    pub fn is_deterministic(&self) -> bool {
        self.std_a.iter().chain(self.std_b.iter()).all(|&s| s == 0.0)
    }

    /// Draws `(A, B)` entrywise (row-major, `A` first) by inverse-CDF
    /// truncated-normal sampling; one uniform per entry.
    pub fn sample_system<R: Rng + ?Sized>(&self, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
        let a = sample_truncated_matrix(&self.mean_a, &self.std_a, self.bounds_a, rng);
        let b = sample_truncated_matrix(&self.mean_b, &self.std_b, self.bounds_b, rng);
        (a, b)
    }

    /// Draws `w(0)..w(T-1)`.
    pub fn sample_noise<R: Rng + ?Sized>(&self, horizon: usize, rng: &mut R) -> Vec<DVector<f64>> {
        (0..horizon)
            .map(|_| {
                DVector::from_iterator(
                    self.dim_x,
                    self.noise_std.iter().map(|&s| {
                        let z: f64 = rng.sample(StandardNormal);
                        s * z
                    }),
                )
            })
            .collect()
    }

    /// One complete draw of the data-generating process for gain `k`.
    pub fn draw_trajectory<R: Rng + ?Sized>(
        &self,
        k: &DMatrix<f64>,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Trajectory<f64>> {
        let (a, b) = self.sample_system(rng);
        let w = self.sample_noise(horizon, rng);
        simulate(&a, &b, k, &w)
    }
}

fn sample_truncated_matrix<R: Rng + ?Sized>(
    mean: &DMatrix<f64>,
    std: &DMatrix<f64>,
    bounds: (f64, f64),
    rng: &mut R,
) -> DMatrix<f64> {
    let (r, c) = mean.shape();
    let mut out = DMatrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            let tn = TruncatedNormal {
                mu: mean[(i, j)],
                sigma: std[(i, j)],
                lower: bounds.0,
                upper: bounds.1,
            };
            out[(i, j)] = tn.sample(rng);
        }
    }
    out
}

/// States `x(1)..x(T)` of one closed-loop run; `x(0) = 0` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S: Scalar> {
    pub states: Vec<DVector<S>>,
    pub controller: DMatrix<S>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// `x(t)` for `t = 0..=T`, materializing the zero initial state.
    pub fn state(&self, t: usize) -> DVector<S> {
        if t == 0 {
            DVector::zeros(self.controller.ncols())
        } else {
            self.states[t - 1].clone()
        }
    }

    /// `Σ_{t=1}^T ‖x(t)‖²`.
    pub fn sum_squared_norms(&self) -> S {
        self.states
            .iter()
            .fold(S::zero(), |acc, x| acc + x.norm_squared())
    }
}

/// Rolls `x(t+1) = A x(t) + B K x(t) + w(t)` forward from `x(0) = 0` for
/// `T = noise.len()` steps.
pub fn simulate<S: Scalar>(
    a: &DMatrix<S>,
    b: &DMatrix<S>,
    k: &DMatrix<S>,
    noise: &[DVector<S>],
) -> Result<Trajectory<S>> {
    let dx = a.nrows();
    if a.ncols() != dx {
        return Err(dim_err("A must be square"));
    }
    if b.nrows() != dx {
        return Err(dim_err(format!("B has {} rows, expected {dx}", b.nrows())));
    }
    if k.shape() != (b.ncols(), dx) {
        return Err(dim_err(format!(
            "K is {:?}, expected ({}, {dx})",
            k.shape(),
            b.ncols()
        )));
    }
    if let Some(w) = noise.iter().find(|w| w.len() != dx) {
        return Err(dim_err(format!("noise vector of length {}, expected {dx}", w.len())));
    }
    let m = a + b * k;
    let mut x = DVector::<S>::zeros(dx);
    let mut states = Vec::with_capacity(noise.len());
    for w in noise {
        let mut next = w.clone();
        next.gemv(S::one(), &m, &x, S::one());
        states.push(next.clone());
        x = next;
    }
    Ok(Trajectory {
        states,
        controller: k.clone(),
    })
}

/// Training trajectories grouped by controller index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub horizon: usize,
    pub per_controller: BTreeMap<usize, Vec<Trajectory<f64>>>,
}

impl Dataset {
    /// Trajectories per controller (equal for every controller).
    pub fn n(&self) -> usize {
        self.per_controller.values().next().map_or(0, Vec::len)
    }

    pub fn num_controllers(&self) -> usize {
        self.per_controller.len()
    }

    pub fn trajectories(&self, controller: usize) -> Option<&[Trajectory<f64>]> {
        self.per_controller.get(&controller).map(Vec::as_slice)
    }

    /// Flat columnar dump: `controller_index, trajectory_index, t, x_1..x_dx`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let dx = self
            .per_controller
            .values()
            .flat_map(|v| v.first())
            .map(|t| t.controller.ncols())
            .next()
            .unwrap_or(0);
        let mut header = String::from("controller_index,trajectory_index,t");
        for i in 1..=dx {
            header.push_str(&format!(",x_{i}"));
        }
        writeln!(out, "{header}")?;
        for (j, trajs) in &self.per_controller {
            for (i, traj) in trajs.iter().enumerate() {
                for (t, x) in traj.states.iter().enumerate() {
                    let mut line = format!("{j},{i},{}", t + 1);
                    for v in x.iter() {
                        line.push(',');
                        line.push_str(&crate::output::fmt_num(*v));
                    }
                    writeln!(out, "{line}")?;
                }
            }
        }
        Ok(())
    }
}

/// Per-trajectory random stream for controller `j`, trajectory `i`.
pub fn trajectory_rng(seed: u64, stream_domain: u64, controller: usize, trajectory: usize) -> StreamRng {
    substream(seed, stream_domain, controller as u64, trajectory as u64)
}

/// Generates `n` trajectories for every controller, each from an
/// independent `(A, B, W)` draw. Controller `j` in the list is keyed as
/// index `j`.
pub fn generate_dataset(
    dist: &SystemDistribution,
    controllers: &[DMatrix<f64>],
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    let indexed: Vec<(usize, &DMatrix<f64>)> = controllers.iter().enumerate().collect();
    generate_dataset_indexed(dist, &indexed, n, horizon, seed, domain::TRAIN)
}

/// Like [`generate_dataset`] but with explicit controller indices. The
/// trajectories of controller `j` depend only on `(seed, stream_domain, j)`,
/// never on where `j` sits in the list.
pub fn generate_dataset_indexed(
    dist: &SystemDistribution,
    controllers: &[(usize, &DMatrix<f64>)],
    n: usize,
    horizon: usize,
    seed: u64,
    stream_domain: u64,
) -> Result<Dataset> {
    if n == 0 || horizon == 0 {
        return Err(param_err("n and T must be at least 1"));
    }
    for (_, k) in controllers {
        if k.shape() != (dist.dim_u, dist.dim_x) {
            return Err(dim_err(format!(
                "controller is {:?}, expected ({}, {})",
                k.shape(),
                dist.dim_u,
                dist.dim_x
            )));
        }
    }
    let blocks: Vec<(usize, Vec<Trajectory<f64>>)> = controllers
        .par_iter()
        .map(|&(j, k)| {
            let trajs = (0..n)
                .map(|i| {
                    let mut rng = trajectory_rng(seed, stream_domain, j, i);
                    dist.draw_trajectory(k, horizon, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((j, trajs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per_controller = BTreeMap::new();
    for (j, trajs) in blocks {
        if per_controller.insert(j, trajs).is_some() {
            return Err(param_err(format!("duplicate controller index {j}")));
        }
    }
    Ok(Dataset {
        horizon,
        per_controller,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    pub(crate) fn small_dist() -> SystemDistribution {
        SystemDistribution {
            dim_x: 2,
            dim_u: 1,
            mean_a: DMatrix::from_row_slice(2, 2, &[0.2, -0.1, 0.1, 0.25]),
            mean_b: DMatrix::from_row_slice(2, 1, &[0.1, 0.2]),
            std_a: DMatrix::from_element(2, 2, 0.05),
            std_b: DMatrix::from_element(2, 1, 0.05),
            bounds_a: (-0.3, 0.3),
            bounds_b: (-0.3, 0.3),
            noise_std: DVector::from_vec(vec![0.4, 0.5]),
            sigma_w: 0.5,
        }
    }

    #[test]
    fn zero_std_gives_the_mean_system() {
        let mut d = small_dist();
        d.std_a.fill(0.0);
        d.std_b.fill(0.0);
        let mut rng = substream(1, 0, 0, 0);
        let (a, b) = d.sample_system(&mut rng);
        assert_eq!(a, d.mean_a);
        assert_eq!(b, d.mean_b);
        assert!(d.is_deterministic());
    }

    #[test]
    fn zero_noise_std_gives_zero_noise() {
        let mut d = small_dist();
        d.noise_std.fill(0.0);
        let mut rng = substream(1, 0, 0, 0);
        assert!(d.sample_noise(5, &mut rng).iter().all(|w| w.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn hand_recursion_scalar_case() {
        let w = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)];
        let traj = simulate(&scalar(0.5), &scalar(1.0), &scalar(0.2), &w).unwrap();
        assert_eq!(traj.horizon(), 2);
        assert!((traj.states[0][0] - 1.0).abs() < 1e-15);
        assert!((traj.states[1][0] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_keeps_the_state_at_rest() {
        let w = vec![DVector::zeros(2); 7];
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, -0.2, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let k = DMatrix::from_row_slice(1, 2, &[0.4, -2.0]);
        let traj = simulate(&a, &b, &k, &w).unwrap();
        assert!(traj.states.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn dimension_errors_are_reported() {
        let w = vec![DVector::zeros(2)];
        let a = DMatrix::<f64>::zeros(2, 2);
        let b = DMatrix::<f64>::zeros(2, 1);
        let bad_k = DMatrix::<f64>::zeros(2, 2);
        assert!(matches!(simulate(&a, &b, &bad_k, &w), Err(Error::Dimension(_))));
        let bad_w = vec![DVector::zeros(3)];
        let k = DMatrix::<f64>::zeros(1, 2);
        assert!(matches!(simulate(&a, &b, &k, &bad_w), Err(Error::Dimension(_))));
    }

    #[test]
    fn simulate_in_single_precision() {
        let w = vec![DVector::from_element(1, 1.0_f32), DVector::from_element(1, 1.0_f32)];
        let one = |v: f32| DMatrix::from_element(1, 1, v);
        let traj = simulate(&one(0.5), &one(1.0), &one(0.2), &w).unwrap();
        assert!((traj.states[1][0] - 1.7).abs() < 1e-6);
    }

    #[test]
    fn validation_rejects_inconsistent_configs() {
        let mut d = small_dist();
        d.mean_a[(0, 0)] = 0.5;
        assert!(d.validate().is_err());
        let mut d = small_dist();
        d.noise_std[1] = 0.6;
        assert!(d.validate().is_err());
        let mut d = small_dist();
        d.std_b[(0, 0)] = -0.1;
        assert!(d.validate().is_err());
        let mut d = small_dist();
        d.mean_b = DMatrix::zeros(3, 1);
        assert!(matches!(d.validate(), Err(Error::Dimension(_))));
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let d = small_dist();
        let ks: Vec<_> = (0..25)
            .map(|i| DMatrix::from_row_slice(1, 2, &[0.01 * i as f64, -0.3]))
            .collect();
        let ds = generate_dataset(&d, &ks, 10, 20, 99).unwrap();
        assert_eq!(ds.num_controllers(), 25);
        assert_eq!(ds.n(), 10);
        let total: usize = ds.per_controller.values().map(Vec::len).sum();
        assert_eq!(total, 250);
        assert!(ds
            .per_controller
            .values()
            .flatten()
            .all(|t| t.horizon() == 20));
        let again = generate_dataset(&d, &ks, 10, 20, 99).unwrap();
        assert_eq!(ds, again);
        let other = generate_dataset(&d, &ks, 10, 20, 100).unwrap();
        assert_ne!(ds, other);
    }

    #[test]
    fn permuting_controllers_permutes_blocks() {
        let d = small_dist();
        let ks: Vec<_> = (0..4)
            .map(|i| DMatrix::from_row_slice(1, 2, &[0.1 * i as f64, -0.2]))
            .collect();
        let forward: Vec<_> = ks.iter().enumerate().collect();
        let mut reversed = forward.clone();
        reversed.reverse();
        let a = generate_dataset_indexed(&d, &forward, 3, 5, 11, domain::TRAIN).unwrap();
        let b = generate_dataset_indexed(&d, &reversed, 3, 5, 11, domain::TRAIN).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_dump_has_one_row_per_state() {
        let d = small_dist();
        let ks = vec![DMatrix::from_row_slice(1, 2, &[0.0, 0.0])];
        let ds = generate_dataset(&d, &ks, 2, 3, 1).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "controller_index,trajectory_index,t,x_1,x_2");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[1].starts_with("0,0,1,"));
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let d = small_dist();
        let text = toml::to_string(&d).unwrap();
        let back: SystemDistribution = toml::from_str(&text).unwrap();
        assert_eq!(back, d);
    }
}
