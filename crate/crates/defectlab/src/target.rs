//! Registry of concrete target manifolds `N` in `R^m` with their exceptional
//! sets `X`, retractions `rho`, safe radius `delta0 = dist(N, X)`, and loop
//! classification into `pi_1(N)`.
//!
//! Registered targets:
//! * `circle` — `N = S^1` in `R^2`, `X = {0}`, radial retraction, `pi_1 = Z`.
//! * `sphere3` — `N = S^2` in `R^3`, `X = {0}`, radial retraction; defects
//!   are points of codimension 3 (no loop classification: `pi_1(S^2) = 0`).
//! * `rp2q` — `N = RP^2` embedded as unit uniaxial Q-tensors in the 5-space
//!   of traceless symmetric 3x3 matrices; `X` is the locus where the two
//!   leading eigenvalues tie (the nearest-uniaxial projection is undefined
//!   there); `pi_1 = Z/2`.

use crate::coeff::{CoefficientGroup, GroupElement};
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("unknown target name {0:?} (expected circle, sphere3, or rp2q)")]
    UnknownName(String),
    #[error("point has {got} coordinates, target lives in R^{want}")]
    AmbientMismatch { got: usize, want: usize },
    #[error("input within {dist:.3e} of the exceptional set; retraction undefined")]
    DegenerateInput { dist: f64 },
    #[error("sample {index} is not on the target manifold (off by {off:.3e})")]
    NotOnTarget { index: usize, off: f64 },
    #[error("consecutive samples {segment} and {next} exceed the safe step; subdivide")]
    RefineNeeded { segment: usize, next: usize },
    #[error("loop needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{0}")]
    Unsupported(String),
}

/// Exactly representable in f64: the frozen `dist(N, X)` for the `rp2q`
/// target. A unit uniaxial Q has eigenvalues `(sqrt(2/3), -1/sqrt 6,
/// -1/sqrt 6)`, and the Frobenius distance to the nearest two-leading-
/// eigenvalue tie is `(lambda_1 - lambda_2)/sqrt 2 = sqrt(3)/2`.
pub const RP2Q_DELTA0: f64 = 0.866_025_403_784_438_6;

/// A registered target manifold with its five evaluators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetManifold {
    Circle,
    /// `S^{k-1}` in `R^k`; only k = 3 is registered by name, but the radial
    /// evaluators are uniform in k.
    Sphere(usize),
    Rp2q,
}

impl TargetManifold {
    pub fn by_name(name: &str) -> Result<Self, TargetError> {
        match name {
            "circle" => Ok(TargetManifold::Circle),
            "sphere3" => Ok(TargetManifold::Sphere(3)),
            "rp2q" => Ok(TargetManifold::Rp2q),
            other => Err(TargetError::UnknownName(other.to_string())),
        }
    }

    pub fn name(&self) -> String {
        match self {
            TargetManifold::Circle => "circle".into(),
            TargetManifold::Sphere(3) => "sphere3".into(),
            TargetManifold::Sphere(k) => format!("sphere{k}"),
            TargetManifold::Rp2q => "rp2q".into(),
        }
    }

    /// Ambient dimension m of the embedding space.
    pub fn ambient_dim(&self) -> usize {
        match self {
            TargetManifold::Circle => 2,
            TargetManifold::Sphere(k) => *k,
            TargetManifold::Rp2q => 5,
        }
    }

    /// Codimension k of the singular set a generic field produces: defects of
    /// an R^m-valued field over this target have dimension d - k.
    pub fn codimension(&self) -> usize {
        match self {
            TargetManifold::Circle => 2,
            TargetManifold::Sphere(k) => *k,
            TargetManifold::Rp2q => 2,
        }
    }

    /// `pi_{k-1}(N)`: Z for circle and spheres, Z/2 for RP^2.
    pub fn group(&self) -> CoefficientGroup {
        match self {
            TargetManifold::Circle | TargetManifold::Sphere(_) => CoefficientGroup::integers(),
            TargetManifold::Rp2q => CoefficientGroup::cyclic(2).expect("2 >= 2"),
        }
    }

    /// Safe radius `delta0 = dist(N, X)`.
    pub fn delta0(&self) -> f64 {
        match self {
            TargetManifold::Circle | TargetManifold::Sphere(_) => 1.0,
            TargetManifold::Rp2q => RP2Q_DELTA0,
        }
    }

    fn check_ambient(&self, z: &[f64]) -> Result<(), TargetError> {
        if z.len() != self.ambient_dim() {
            return Err(TargetError::AmbientMismatch { got: z.len(), want: self.ambient_dim() });
        }
        Ok(())
    }

    /// Distance to the exceptional set X. Exact for circle/sphere (`|z|`);
    /// for rp2q it is `(lambda_1 - lambda_2)/sqrt 2`, the exact Frobenius
    /// distance to the two-leading-eigenvalue tie locus.
    pub fn dist_to_x(&self, z: &[f64]) -> Result<f64, TargetError> {
        self.check_ambient(z)?;
        match self {
            TargetManifold::Circle | TargetManifold::Sphere(_) => Ok(norm(z)),
            TargetManifold::Rp2q => {
                let (vals, _) = eigen_sorted(&q_matrix(z));
                Ok((vals[0] - vals[1]) / std::f64::consts::SQRT_2)
            }
        }
    }

    /// Retraction onto N; errors within 1e-10 of X (caller resamples its
    /// offset y). Idempotent to 1e-12.
    pub fn retract(&self, z: &[f64]) -> Result<Vec<f64>, TargetError> {
        self.check_ambient(z)?;
        let dist = self.dist_to_x(z)?;
        if dist <= 1e-10 {
            return Err(TargetError::DegenerateInput { dist });
        }
        match self {
            TargetManifold::Circle | TargetManifold::Sphere(_) => {
                let n = norm(z);
                Ok(z.iter().map(|&x| x / n).collect())
            }
            TargetManifold::Rp2q => {
                let (_, vecs) = eigen_sorted(&q_matrix(z));
                Ok(uniaxial_q(&vecs[0]))
            }
        }
    }

    /// Is z on N (within tol)? Used to recognize N-valued sample fields.
    pub fn on_manifold(&self, z: &[f64], tol: f64) -> bool {
        if self.check_ambient(z).is_err() {
            return false;
        }
        match self {
            TargetManifold::Circle | TargetManifold::Sphere(_) => (norm(z) - 1.0).abs() <= tol,
            TargetManifold::Rp2q => {
                if (norm(z) - 1.0).abs() > tol {
                    return false;
                }
                // unit uniaxial: retraction is (near-)identity
                match self.retract(z) {
                    Ok(r) => dist(z, &r) <= tol * 4.0,
                    Err(_) => false,
                }
            }
        }
    }

    /// Classify a closed loop of on-manifold samples (cyclically: the last
    /// sample connects back to the first) into `pi_1(N)`.
    ///
    /// * circle: winding number = (sum of principal-value angle increments) /
    ///   2 pi, exact integer; safe step: every increment < pi/2 in absolute
    ///   value.
    /// * rp2q: Z/2 class by sign continuation of the director lift to S^2;
    ///   the class is 1 iff the product of director dot products around the
    ///   cycle is negative (each sample's arbitrary eigenvector sign appears
    ///   twice and cancels); safe step: lifted gap < pi/2.
    pub fn classify_loop(&self, samples: &[Vec<f64>]) -> Result<GroupElement, TargetError> {
        if samples.len() < 3 {
            return Err(TargetError::TooFewSamples(samples.len()));
        }
        match self {
            TargetManifold::Circle | TargetManifold::Sphere(2) => {
                let group = self.group();
                let n = samples.len();
                let mut total = 0.0;
                for i in 0..n {
                    let a = &samples[i];
                    let b = &samples[(i + 1) % n];
                    for (idx, s) in [(i, a), ((i + 1) % n, b)] {
                        if (norm(s) - 1.0).abs() > 1e-6 {
                            return Err(TargetError::NotOnTarget {
                                index: idx,
                                off: (norm(s) - 1.0).abs(),
                            });
                        }
                    }
                    let cross = a[0] * b[1] - a[1] * b[0];
                    let dot = a[0] * b[0] + a[1] * b[1];
                    let inc = cross.atan2(dot);
                    if inc.abs() >= std::f64::consts::FRAC_PI_2 {
                        return Err(TargetError::RefineNeeded { segment: i, next: (i + 1) % n });
                    }
                    total += inc;
                }
                let winding = (total / (2.0 * std::f64::consts::PI)).round();
                debug_assert!(
                    (total / (2.0 * std::f64::consts::PI) - winding).abs() < 1e-6,
                    "closed loop increments must sum to a multiple of 2 pi"
                );
                Ok(group.scalar(winding as i64))
            }
            TargetManifold::Sphere(k) => Err(TargetError::Unsupported(format!(
                "loop classification into pi_1(S^{}) is trivial; defects of the \
                 sphere{k} target are located by the preimage backend",
                k - 1
            ))),
            TargetManifold::Rp2q => {
                let group = self.group();
                let n = samples.len();
                let mut directors = Vec::with_capacity(n);
                for (i, s) in samples.iter().enumerate() {
                    if !self.on_manifold(s, 1e-6) {
                        return Err(TargetError::NotOnTarget { index: i, off: (norm(s) - 1.0).abs() });
                    }
                    let (_, vecs) = eigen_sorted(&q_matrix(s));
                    directors.push(vecs[0]);
                }
                let mut negative = false;
                for i in 0..n {
                    let d = directors[i].dot(&directors[(i + 1) % n]);
                    // |d| = cos(line angle); the lift is ambiguous at pi/2
                    if d.abs() < 0.02 {
                        return Err(TargetError::RefineNeeded { segment: i, next: (i + 1) % n });
                    }
                    negative ^= d < 0.0;
                }
                Ok(group.scalar(if negative { 1 } else { 0 }))
            }
        }
    }

    /// Geodesic midpoint on N of two on-manifold points: spherical midpoint
    /// for circle/sphere, line-aligned director midpoint for rp2q. Errors if
    /// the points are (near-)antipodal, where the midpoint is ambiguous.
    pub fn geodesic_midpoint(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>, TargetError> {
        self.check_ambient(a)?;
        self.check_ambient(b)?;
        match self {
            TargetManifold::Circle | TargetManifold::Sphere(_) => {
                let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect();
                let n = norm(&mid);
                if n <= 1e-10 {
                    return Err(TargetError::DegenerateInput { dist: n });
                }
                Ok(mid.iter().map(|&x| x / n).collect())
            }
            TargetManifold::Rp2q => {
                let (_, va) = eigen_sorted(&q_matrix(a));
                let (_, vb) = eigen_sorted(&q_matrix(b));
                let mut nb = vb[0];
                let d = va[0].dot(&nb);
                if d.abs() < 1e-10 {
                    return Err(TargetError::DegenerateInput { dist: d.abs() });
                }
                if d < 0.0 {
                    nb = -nb;
                }
                let mid = (va[0] + nb).normalize();
                Ok(uniaxial_q(&mid))
            }
        }
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Orthonormal basis of traceless symmetric 3x3 matrices under the Frobenius
/// inner product; `q_matrix`/`q_coords` convert between R^5 and matrices.
fn basis() -> [Matrix3<f64>; 5] {
    let s6 = 6.0f64.sqrt();
    let s2 = std::f64::consts::SQRT_2;
    [
        Matrix3::new(-1.0 / s6, 0.0, 0.0, 0.0, -1.0 / s6, 0.0, 0.0, 0.0, 2.0 / s6),
        Matrix3::new(1.0 / s2, 0.0, 0.0, 0.0, -1.0 / s2, 0.0, 0.0, 0.0, 0.0),
        Matrix3::new(0.0, 1.0 / s2, 0.0, 1.0 / s2, 0.0, 0.0, 0.0, 0.0, 0.0),
        Matrix3::new(0.0, 0.0, 1.0 / s2, 0.0, 0.0, 0.0, 1.0 / s2, 0.0, 0.0),
        Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0 / s2, 0.0, 1.0 / s2, 0.0),
    ]
}

pub(crate) fn q_matrix(z: &[f64]) -> Matrix3<f64> {
    let b = basis();
    let mut m = Matrix3::zeros();
    for (i, bi) in b.iter().enumerate() {
        m += *bi * z[i];
    }
    m
}

pub(crate) fn q_coords(m: &Matrix3<f64>) -> Vec<f64> {
    basis().iter().map(|b| (m.transpose() * b).trace()).collect()
}

/// Unit uniaxial Q-tensor of a unit director: `sqrt(3/2) (n n^T - I/3)`.
pub(crate) fn uniaxial_q(n: &Vector3<f64>) -> Vec<f64> {
    let scale = (1.5f64).sqrt();
    let m = (n * n.transpose() - Matrix3::identity() / 3.0) * scale;
    q_coords(&m)
}

/// Leading eigenvector (the director, up to sign) of the Q-tensor with the
/// given coordinates.
pub(crate) fn director_of(z: &[f64]) -> Vector3<f64> {
    eigen_sorted(&q_matrix(z)).1[0]
}

/// Eigenvalues (descending) and matching unit eigenvectors of a symmetric
/// 3x3 matrix.
fn eigen_sorted(m: &Matrix3<f64>) -> ([f64; 3], [Vector3<f64>; 3]) {
    let se = m.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| se.eigenvalues[b].total_cmp(&se.eigenvalues[a]));
    let vals = [se.eigenvalues[idx[0]], se.eigenvalues[idx[1]], se.eigenvalues[idx[2]]];
    let vecs = [
        Vector3::from(se.eigenvectors.column(idx[0]).into_owned()),
        Vector3::from(se.eigenvectors.column(idx[1]).into_owned()),
        Vector3::from(se.eigenvectors.column(idx[2]).into_owned()),
    ];
    (vals, vecs)
}
