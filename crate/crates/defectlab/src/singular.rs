//! The singularity operator: extract the defect chain `S_y(u)` of a sampled
//! field `u: Omega -> R^m` at a generic offset level `y`, plus the integral
//! verifiers built on top of it (boundary restriction, homotopy cobordism
//! witnesses, Jacobian and coarea estimates, and n-valued stability).
//!
//! Two extraction backends:
//!
//! - [`Backend::Preimage`] (sphere-family targets, `d >= k`): per simplex the
//!   interpolant is affine, so `u(x) = y` is a linear system whose solution
//!   set is a `(d-k)`-polyhedron. Transverse pieces carry the sign of the
//!   Jacobian orientation: a point gets `sign(det Du)`, a segment in `d = 3`
//!   is oriented along the kernel direction `w` and signed so that the frame
//!   `(w, p, q)` with `(Du p, Du q)` positively oriented in the value plane
//!   is positively oriented in space. The output chain lives on a fresh
//!   complex embedded in the domain.
//! - [`Backend::Link`] (any codimension-2 target): every interior dual
//!   `(d-2)`-cell is classified by the loop of retracted values around its
//!   transverse primal 2-face, traversed so that (normal axis, loop frame)
//!   is positively oriented. The output chain lives on the dual grid.
//!
//! Offsets are kept generic by detection + seeded jitter: any conditioning
//! failure (level on a simplex face, loop value near the exceptional set,
//! unresolved refinement) re-draws `y` inside a ball of radius
//! `1e-6 * delta0`, at most [`MAX_RESAMPLES`] times.
//!
//! For fields whose samples all lie on the target (within `1e-9`) and
//! offsets `|y| <= 0.95 * delta0`, the link backend classifies the loops of
//! the *retracted samples themselves*, refined along geodesics of the
//! target. The offset then cancels from the computation entirely — the
//! straight-line homotopy from `u - y` to `u` stays clear of the exceptional
//! set — so the extracted chain is bit-for-bit identical across all such
//! offsets.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chain::{Chain, ChainError};
use crate::coeff::{CoefficientGroup, GroupElement, GroupError};
use crate::flatnorm::{relative_flat_norm, FlatNormError};
use crate::mesh::{build_grid_complex, ComplexBuilder, DualGrid, FaceRef, GridLayout, MeshError};
use crate::target::{self, TargetError, TargetManifold};
use std::sync::Arc;

#[derive(Debug, Error)]
pub enum SingularError {
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    FlatNorm(#[from] FlatNormError),
    #[error("field shape: {0}")]
    FieldShape(String),
    #[error("field has {got} components but target {target} embeds in R^{want}")]
    ComponentMismatch { got: usize, target: String, want: usize },
    #[error("degeneracy not resolved after {resamples} jittered resamples")]
    UnresolvedDegeneracy { resamples: u32 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("field is not target-valued: vertex {vertex} is {dist:.3e} away")]
    NotNValued { vertex: u32, dist: f64 },
    #[error("defect chain changed between offsets {y_a:?} and {y_b:?}")]
    StabilityMismatch { y_a: Vec<f64>, y_b: Vec<f64> },
    #[error("boundary restriction needs a chain of dimension >= 1, got {0}")]
    BoundaryDimension(usize),
}

/// Maximum number of jittered re-draws of the offset before giving up.
pub const MAX_RESAMPLES: u32 = 8;
/// Jitter ball radius as a fraction of the target's `delta0`.
const JITTER_FRAC: f64 = 1e-6;
/// Loop values closer than this to the exceptional set are degenerate.
const NEAR_X: f64 = 1e-10;
/// Maximum bisection depth when a loop step violates the safe-step bound.
const REFINE_DEPTH: u32 = 24;
/// Safe angular step for circle-valued loop increments (well under pi/2,
/// with slack for accumulated refinement error).
const SAFE_ANGLE: f64 = 1.2;
/// Safe |cos| between consecutive directors for the Z/2 classifier.
const SAFE_DOT: f64 = 0.1;
/// Barycentric margin: level sets passing this close to a simplex face are
/// treated as degenerate and resolved by jitter.
const BMARGIN: f64 = 1e-9;
/// Merge tolerance for segment endpoints shared across simplex faces.
const SNAP: f64 = 1e-9;
/// Vertex samples within this of the target allow geodesic refinement.
const GEODESIC_ON_N: f64 = 1e-9;
/// ... provided the offset stays below this fraction of `delta0`.
const GEODESIC_Y: f64 = 0.95;

// ---------------------------------------------------------------------------
// Sampled fields

/// A vector field sampled on a regular grid, interpolated piecewise-linearly
/// over the Kuhn triangulation. Caches the sup-norm bound `lambda = max |u|`
/// (attained at a vertex, since PL values are convex combinations) and the
/// constant gradient of every simplex.
#[derive(Debug, Clone)]
pub struct SampledField {
    layout: GridLayout,
    complex: Arc<crate::mesh::Complex>,
    perms: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
    m: usize,
    lambda: f64,
    gradients: Vec<DMatrix<f64>>,
}

impl SampledField {
    /// Sample `f` at every grid vertex.
    pub fn from_fn(
        layout: GridLayout,
        m: usize,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<SampledField, SingularError> {
        layout.validate()?;
        let n = layout.num_vertices();
        let mut values = Vec::with_capacity(n);
        for id in 0..n as u32 {
            let x = layout.vertex_coord(&layout.vertex_index(id));
            values.push(f(&x));
        }
        SampledField::from_values(layout, m, values)
    }

    /// Wrap per-vertex values (row-major vertex order, `m` components each).
    pub fn from_values(
        layout: GridLayout,
        m: usize,
        values: Vec<Vec<f64>>,
    ) -> Result<SampledField, SingularError> {
        layout.validate()?;
        if m == 0 {
            return Err(SingularError::FieldShape("field needs at least one component".into()));
        }
        if values.len() != layout.num_vertices() {
            return Err(SingularError::FieldShape(format!(
                "expected {} vertex samples, got {}",
                layout.num_vertices(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if v.len() != m {
                return Err(SingularError::FieldShape(format!(
                    "sample {i} has {} components, expected {m}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(SingularError::FieldShape(format!("sample {i} is not finite")));
            }
        }
        let complex = Arc::new(build_grid_complex(&layout)?);
        let perms = layout.permutations();
        let d = layout.dim();
        let zero_cube = vec![0usize; d];
        let e_invs: Vec<DMatrix<f64>> =
            perms.iter().map(|p| edge_inverse(&layout, &zero_cube, p)).collect();
        let lambda = values
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let mut gradients = Vec::with_capacity(layout.num_cubes() * perms.len());
        for cube in 0..layout.num_cubes() as u32 {
            let ci = layout.cube_index(cube);
            for (rank, perm) in perms.iter().enumerate() {
                let path = layout.kuhn_path_vertices(&ci, perm);
                let mut w = DMatrix::zeros(m, d);
                for j in 1..=d {
                    for i in 0..m {
                        w[(i, j - 1)] =
                            values[path[j] as usize][i] - values[path[0] as usize][i];
                    }
                }
                gradients.push(&w * &e_invs[rank]);
            }
        }
        Ok(SampledField { layout, complex, perms, values, m, lambda, gradients })
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn complex(&self) -> &Arc<crate::mesh::Complex> {
        &self.complex
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn components(&self) -> usize {
        self.m
    }

    /// Sup-norm bound `lambda = max_x |u(x)|`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn value(&self, vertex: u32) -> &[f64] {
        &self.values[vertex as usize]
    }

    pub fn vertex_values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Piecewise-linear interpolation (points outside the box clamp to it).
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let (cube, rank) = self.layout.locate(x);
        let perm = &self.perms[rank];
        let path = self.layout.kuhn_path_vertices(&cube, perm);
        let bary = self.layout.barycentric(x, &cube, perm);
        let mut out = vec![0.0; self.m];
        for (j, &v) in path.iter().enumerate() {
            for i in 0..self.m {
                out[i] += bary[j] * self.values[v as usize][i];
            }
        }
        out
    }

    /// Constant gradient (m x d) of the given simplex.
    pub fn gradient(&self, simplex: u32) -> &DMatrix<f64> {
        &self.gradients[simplex as usize]
    }

    /// `sum_sigma vol(sigma) * |grad u|_F^p` — the PL-exact gradient energy.
    pub fn grad_energy(&self, p: u32) -> f64 {
        let d = self.dim();
        (0..self.gradients.len() as u32)
            .map(|s| {
                let vol = self.complex.volume(d, s).expect("top cell");
                vol * self.gradients[s as usize].norm().powi(p as i32)
            })
            .sum()
    }

    /// The field `c * u` on the same grid.
    pub fn scaled(&self, c: f64) -> SampledField {
        SampledField {
            layout: self.layout.clone(),
            complex: self.complex.clone(),
            perms: self.perms.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| c * x).collect())
                .collect(),
            m: self.m,
            lambda: c.abs() * self.lambda,
            gradients: self.gradients.iter().map(|g| g * c).collect(),
        }
    }
}

fn edge_inverse(layout: &GridLayout, cube: &[usize], perm: &[usize]) -> DMatrix<f64> {
    let d = layout.dim();
    let path = layout.kuhn_path_vertices(cube, perm);
    let x0 = layout.vertex_coord(&layout.vertex_index(path[0]));
    let mut e = DMatrix::zeros(d, d);
    for j in 1..=d {
        let xj = layout.vertex_coord(&layout.vertex_index(path[j]));
        for i in 0..d {
            e[(i, j - 1)] = xj[i] - x0[i];
        }
    }
    e.try_inverse().expect("Kuhn simplices are nondegenerate")
}

// ---------------------------------------------------------------------------
// Offsets, jitter, sampling helpers

/// Which extraction strategy produced a [`SingularChain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Preimage,
    Link,
}

/// A defect chain together with the offset that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct SingularChain {
    /// Dimension `d - k`; on a fresh embedded complex (preimage) or the dual
    /// grid (link). Its interior boundary vanishes.
    pub chain: Chain,
    /// The offset actually used (equals the request unless jitter resolved a
    /// degeneracy).
    pub offset: Vec<f64>,
    pub backend: Backend,
    /// How many jittered re-draws were needed.
    pub resamples: u32,
}

/// Internal marker: the current offset hit a degenerate configuration.
#[derive(Debug, Clone, Copy)]
struct Degen(#[allow(dead_code)] &'static str);

fn jitter_seed(y: &[f64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for (i, v) in y.iter().enumerate() {
        h = (h.rotate_left(13) ^ v.to_bits() ^ ((i as u64) << 56)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    }
    h
}

/// Run `f` at `y`, re-drawing inside the jitter ball on degeneracy. Returns
/// the value, the offset used, and the number of re-draws. Deterministic:
/// the jitter stream is seeded from the requested offset.
fn with_jitter<T>(
    t: &TargetManifold,
    y0: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<T, Degen>,
) -> Result<(T, Vec<f64>, u32), SingularError> {
    let mut y = y0.to_vec();
    let mut rng: Option<ChaCha8Rng> = None;
    for attempt in 0..=MAX_RESAMPLES {
        match f(&y) {
            Ok(v) => return Ok((v, y, attempt)),
            Err(_degen) => {
                let rng =
                    rng.get_or_insert_with(|| ChaCha8Rng::seed_from_u64(jitter_seed(y0)));
                let amp = JITTER_FRAC * t.delta0();
                let dy = ball_point(rng, y0.len(), amp);
                y = y0.iter().zip(&dy).map(|(a, b)| a + b).collect();
            }
        }
    }
    Err(SingularError::UnresolvedDegeneracy { resamples: MAX_RESAMPLES })
}

fn rand_dir(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m)
            .map(|_| {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
            })
            .collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

fn ball_point(rng: &mut ChaCha8Rng, m: usize, radius: f64) -> Vec<f64> {
    let dir = rand_dir(rng, m);
    let r = radius * rng.gen::<f64>().powf(1.0 / m as f64);
    dir.into_iter().map(|a| a * r).collect()
}

/// Stratified-radius samples filling `batches x per` points of `B_radius`:
/// radii hit every volume shell `[i, i+1)/per` exactly once per batch, so
/// radially-localized integrands lose most of their sampling variance.
/// Each stratum gets an independent jitter (not one shift shared across the
/// batch); that keeps the batch means i.i.d., so the batch standard error
/// stays an honest estimate even when the integrand jumps inside a shell.
fn systematic_ball(
    rng: &mut ChaCha8Rng,
    m: usize,
    radius: f64,
    batches: usize,
    per: usize,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(batches * per);
    for _ in 0..batches {
        for i in 0..per {
            let jitter: f64 = rng.gen();
            let r = radius * ((i as f64 + jitter) / per as f64).powf(1.0 / m as f64);
            let dir = rand_dir(rng, m);
            out.push(dir.into_iter().map(|a| a * r).collect());
        }
    }
    out
}

fn vol_ball(m: usize, r: f64) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0 * r,
        _ => TAU * r * r / m as f64 * vol_ball(m - 2, r),
    }
}

fn mean_sem(batch_means: &[f64]) -> (f64, f64) {
    let b = batch_means.len() as f64;
    let mean = batch_means.iter().sum::<f64>() / b;
    if batch_means.len() < 2 {
        return (mean, 0.0);
    }
    let var = batch_means.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (b - 1.0);
    (mean, (var / b).sqrt())
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Loop classification machinery (link backend)

/// A point of the target used for loop classification: a unit circle vector
/// or a director (unit eigenvector, sign arbitrary).
#[derive(Debug, Clone, Copy)]
enum NPoint {
    Angle([f64; 2]),
    Director(Vector3<f64>),
}

/// Accumulated loop statistic: total angle increment (free class) or product
/// of consecutive director dot signs (Z/2 class).
#[derive(Debug, Clone, Copy)]
enum Stat {
    Ang(f64),
    Sgn(i8),
}

fn stat_add(a: Stat, b: Stat) -> Stat {
    match (a, b) {
        (Stat::Ang(x), Stat::Ang(y)) => Stat::Ang(x + y),
        (Stat::Sgn(p), Stat::Sgn(q)) => Stat::Sgn(p * q),
        _ => unreachable!("mixed loop statistics"),
    }
}

fn stat_flip(a: Stat) -> Stat {
    match a {
        Stat::Ang(x) => Stat::Ang(-x),
        s @ Stat::Sgn(_) => s,
    }
}

fn npoint(t: &TargetManifold, w: &[f64]) -> Result<NPoint, Degen> {
    match t {
        TargetManifold::Circle | TargetManifold::Sphere(2) => {
            let n = (w[0] * w[0] + w[1] * w[1]).sqrt();
            if n <= NEAR_X {
                return Err(Degen("loop value at the exceptional set"));
            }
            Ok(NPoint::Angle([w[0] / n, w[1] / n]))
        }
        TargetManifold::Rp2q => {
            let gap = t.dist_to_x(w).expect("ambient dimension checked");
            if gap <= NEAR_X {
                return Err(Degen("loop value at the exceptional set"));
            }
            Ok(NPoint::Director(target::director_of(w)))
        }
        TargetManifold::Sphere(_) => unreachable!("link classification needs codimension 2"),
    }
}

/// Increment of one loop step plus whether it satisfies the safe-step bound.
fn pair_stat(p0: &NPoint, p1: &NPoint) -> (Stat, bool) {
    match (p0, p1) {
        (NPoint::Angle(a), NPoint::Angle(b)) => {
            let cross = a[0] * b[1] - a[1] * b[0];
            let dot = a[0] * b[0] + a[1] * b[1];
            let inc = cross.atan2(dot);
            (Stat::Ang(inc), inc.abs() <= SAFE_ANGLE)
        }
        (NPoint::Director(a), NPoint::Director(b)) => {
            let dot = a.dot(b);
            (Stat::Sgn(if dot < 0.0 { -1 } else { 1 }), dot.abs() >= SAFE_DOT)
        }
        _ => unreachable!("mixed loop statistics"),
    }
}

/// Refinement by value-space midpoints: exact for PL loops, since the
/// interpolated value at the midpoint of an edge is the midpoint of values.
fn refine_chordal(
    t: &TargetManifold,
    w0: &[f64],
    w1: &[f64],
    p0: &NPoint,
    p1: &NPoint,
    depth: u32,
) -> Result<Stat, Degen> {
    let (s, safe) = pair_stat(p0, p1);
    if safe {
        return Ok(s);
    }
    if depth == 0 {
        return Err(Degen("refinement depth exhausted"));
    }
    let mid: Vec<f64> = w0.iter().zip(w1).map(|(a, b)| 0.5 * (a + b)).collect();
    let pm = npoint(t, &mid)?;
    Ok(stat_add(
        refine_chordal(t, w0, &mid, p0, &pm, depth - 1)?,
        refine_chordal(t, &mid, w1, &pm, p1, depth - 1)?,
    ))
}

/// Refinement by geodesic midpoints on the target; offset-independent.
fn refine_geodesic(p0: &NPoint, p1: &NPoint, depth: u32) -> Result<Stat, Degen> {
    let (s, safe) = pair_stat(p0, p1);
    if safe {
        return Ok(s);
    }
    if depth == 0 {
        return Err(Degen("refinement depth exhausted"));
    }
    let pm = geodesic_mid(p0, p1)?;
    Ok(stat_add(
        refine_geodesic(p0, &pm, depth - 1)?,
        refine_geodesic(&pm, p1, depth - 1)?,
    ))
}

fn geodesic_mid(a: &NPoint, b: &NPoint) -> Result<NPoint, Degen> {
    match (a, b) {
        (NPoint::Angle(u), NPoint::Angle(v)) => {
            let s = [u[0] + v[0], u[1] + v[1]];
            let n = (s[0] * s[0] + s[1] * s[1]).sqrt();
            if n <= 1e-12 {
                return Err(Degen("antipodal circle values"));
            }
            Ok(NPoint::Angle([s[0] / n, s[1] / n]))
        }
        (NPoint::Director(u), NPoint::Director(v)) => {
            let v = if u.dot(v) < 0.0 { -*v } else { *v };
            let s = u + v;
            if s.norm() <= 1e-12 {
                return Err(Degen("perpendicular directors"));
            }
            Ok(NPoint::Director(s.normalize()))
        }
        _ => unreachable!("mixed loop statistics"),
    }
}

fn seg_stat_chordal(t: &TargetManifold, w0: &[f64], w1: &[f64]) -> Result<Stat, Degen> {
    let p0 = npoint(t, w0)?;
    let p1 = npoint(t, w1)?;
    refine_chordal(t, w0, w1, &p0, &p1, REFINE_DEPTH)
}

/// Turn a closed-loop statistic into a group element: winding number for the
/// free class (must be within 1e-6 of an integer), sign parity for Z/2.
fn class_of(group: &CoefficientGroup, s: Stat) -> Result<GroupElement, Degen> {
    match s {
        Stat::Ang(total) => {
            let turns = total / TAU;
            let r = turns.round();
            if (turns - r).abs() > 1e-6 {
                return Err(Degen("winding sum is not an integer"));
            }
            Ok(group.scalar(r as i64))
        }
        Stat::Sgn(p) => Ok(group.scalar(if p < 0 { 1 } else { 0 })),
    }
}

/// Per-offset loop-classification context with shared per-edge statistics;
/// sharing makes the cycle law an exact integer identity, because every
/// primal edge contributes identical (up to sign) increments to the faces on
/// both of its sides.
struct LinkCtx<'a> {
    u: &'a SampledField,
    t: TargetManifold,
    y: Vec<f64>,
    geodesic: bool,
    edges: HashMap<(u32, u32), Stat>,
    points: HashMap<u32, NPoint>,
}

impl<'a> LinkCtx<'a> {
    fn new(u: &'a SampledField, t: TargetManifold, y: &[f64], geodesic: bool) -> Self {
        LinkCtx { u, t, y: y.to_vec(), geodesic, edges: HashMap::new(), points: HashMap::new() }
    }

    fn shifted(&self, v: u32) -> Vec<f64> {
        self.u.value(v).iter().zip(&self.y).map(|(a, b)| a - b).collect()
    }

    fn point(&mut self, v: u32) -> Result<NPoint, Degen> {
        if let Some(p) = self.points.get(&v) {
            return Ok(*p);
        }
        let w = if self.geodesic { self.u.value(v).to_vec() } else { self.shifted(v) };
        let p = npoint(&self.t, &w)?;
        self.points.insert(v, p);
        Ok(p)
    }

    /// Loop statistic of the step from vertex `a` to vertex `b`, cached on
    /// the canonical (low, high) orientation.
    fn edge(&mut self, a: u32, b: u32) -> Result<Stat, Degen> {
        let (ca, cb, flip) = if a < b { (a, b, false) } else { (b, a, true) };
        let s = if let Some(&s) = self.edges.get(&(ca, cb)) {
            s
        } else {
            let s = if self.geodesic {
                let p0 = self.point(ca)?;
                let p1 = self.point(cb)?;
                refine_geodesic(&p0, &p1, REFINE_DEPTH)?
            } else {
                let p0 = self.point(ca)?;
                let p1 = self.point(cb)?;
                refine_chordal(&self.t, &self.shifted(ca), &self.shifted(cb), &p0, &p1, REFINE_DEPTH)?
            };
            self.edges.insert((ca, cb), s);
            s
        };
        Ok(if flip { stat_flip(s) } else { s })
    }

    /// Closed quad loop `c0 -> c1 -> c2 -> c3 -> c0`.
    fn quad(&mut self, c: [u32; 4]) -> Result<Stat, Degen> {
        let mut s = self.edge(c[0], c[1])?;
        s = stat_add(s, self.edge(c[1], c[2])?);
        s = stat_add(s, self.edge(c[2], c[3])?);
        s = stat_add(s, self.edge(c[3], c[0])?);
        Ok(s)
    }
}

/// d = 2: classify the counterclockwise loop around every square; entries on
/// dual center vertices (ids = cube ids).
fn link_entries_2d(
    ctx: &mut LinkCtx,
    layout: &GridLayout,
    group: &CoefficientGroup,
) -> Result<Vec<(u32, GroupElement)>, Degen> {
    let mut out = vec![];
    for cube in 0..layout.num_cubes() as u32 {
        let ci = layout.cube_index(cube);
        let v = |di: usize, dj: usize| layout.vertex_id(&[ci[0] + di, ci[1] + dj]);
        let s = ctx.quad([v(0, 0), v(1, 0), v(1, 1), v(0, 1)])?;
        let g = class_of(group, s)?;
        if !g.is_zero() {
            out.push((cube, g));
        }
    }
    Ok(out)
}

/// d = 3: classify the transverse face of every dual edge, traversing the
/// face in the cyclic axis pair `(p, q) = (a+1, a+2) mod 3` so that the
/// frame (edge direction = axis `a`, p, q) is positively oriented.
fn link_entries_3d(
    ctx: &mut LinkCtx,
    dual: &DualGrid,
    group: &CoefficientGroup,
) -> Result<Vec<(u32, GroupElement)>, Degen> {
    let layout = dual.layout();
    let mut out = vec![];
    for e in 0..dual.num_dual_edges() as u32 {
        let f = dual.face_of_edge(e).expect("edge enumerates faces");
        let a = f.axis;
        let (p, q) = ((a + 1) % 3, (a + 2) % 3);
        let t_axes: Vec<usize> = (0..3).filter(|&ax| ax != a).collect();
        let mut base = [0usize; 3];
        base[a] = f.layer;
        for (slot, &ax) in t_axes.iter().enumerate() {
            base[ax] = f.transverse[slot];
        }
        let vid = |dp: usize, dq: usize| {
            let mut ix = base;
            ix[p] += dp;
            ix[q] += dq;
            layout.vertex_id(&ix)
        };
        let s = ctx.quad([vid(0, 0), vid(1, 0), vid(1, 1), vid(0, 1)])?;
        let g = class_of(group, s)?;
        if !g.is_zero() {
            out.push((e, g));
        }
    }
    Ok(out)
}

/// True when every vertex sample lies within `1e-9` of the target.
pub fn field_on_manifold(u: &SampledField, t: &TargetManifold) -> bool {
    (0..u.layout().num_vertices() as u32).all(|v| t.on_manifold(u.value(v), GEODESIC_ON_N))
}

// ---------------------------------------------------------------------------
// Preimage backend solvers

enum PointKind {
    Regular { d_inv: DMatrix<f64>, sign: i8 },
    /// Rank-deficient interpolant: `proj` is the orthogonal projector onto
    /// the complement of the image span, used to decide whether an offset
    /// lies dangerously close to the degenerate image.
    Deficient { proj: DMatrix<f64> },
}

struct PointCell {
    x0: Vec<f64>,
    u0: DVector<f64>,
    e_inv: DMatrix<f64>,
    kind: PointKind,
}

/// Precomputed per-simplex solve data for the `d = k` point extraction;
/// build once, query at many offsets.
struct PointSolver {
    d: usize,
    cells: Vec<PointCell>,
}

fn deficiency_projector(dmat: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = dmat.nrows();
    let svd = dmat.clone().svd(true, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax >= 1e-13 && smin > 1e-10 * smax {
        return None;
    }
    let mut proj = DMatrix::identity(m, m);
    if smax >= 1e-13 {
        let ucols = svd.u.expect("requested");
        for (j, &s) in svd.singular_values.iter().enumerate() {
            if s > 1e-10 * smax {
                let c = ucols.column(j).into_owned();
                proj -= &c * c.transpose();
            }
        }
    }
    Some(proj)
}

impl PointSolver {
    fn new(u: &SampledField) -> PointSolver {
        let layout = u.layout();
        let d = layout.dim();
        let perms = layout.permutations();
        let zero_cube = vec![0usize; d];
        let e_invs: Vec<DMatrix<f64>> =
            perms.iter().map(|p| edge_inverse(layout, &zero_cube, p)).collect();
        let mut cells = Vec::with_capacity(layout.num_cubes() * perms.len());
        for cube in 0..layout.num_cubes() as u32 {
            let ci = layout.cube_index(cube);
            for (rank, perm) in perms.iter().enumerate() {
                let sid = layout.simplex_id(&ci, rank);
                let path = layout.kuhn_path_vertices(&ci, perm);
                let x0 = layout.vertex_coord(&layout.vertex_index(path[0]));
                let u0 = DVector::from_column_slice(u.value(path[0]));
                let dmat = u.gradient(sid);
                let kind = match deficiency_projector(dmat) {
                    Some(proj) => PointKind::Deficient { proj },
                    None => {
                        let sign = if dmat.determinant() > 0.0 { 1 } else { -1 };
                        PointKind::Regular {
                            d_inv: dmat.clone().try_inverse().expect("well conditioned"),
                            sign,
                        }
                    }
                };
                cells.push(PointCell { x0, u0, e_inv: e_invs[rank].clone(), kind });
            }
        }
        PointSolver { d, cells }
    }

    /// All transverse solutions of `u(x) = y`, with orientation signs.
    fn points(&self, y: &[f64]) -> Result<Vec<(Vec<f64>, i8)>, Degen> {
        let yv = DVector::from_column_slice(y);
        let mut out = vec![];
        for cell in &self.cells {
            let rhs = &yv - &cell.u0;
            match &cell.kind {
                PointKind::Deficient { proj } => {
                    if (proj * &rhs).norm() <= 1e-9 * (1.0 + yv.norm()) {
                        return Err(Degen("offset lies on a rank-deficient image"));
                    }
                }
                PointKind::Regular { d_inv, sign } => {
                    let delta = d_inv * &rhs;
                    let lam = &cell.e_inv * &delta;
                    let mut min_coord = 1.0 - lam.iter().sum::<f64>();
                    for &l in lam.iter() {
                        min_coord = min_coord.min(l);
                    }
                    if min_coord > BMARGIN {
                        let x: Vec<f64> =
                            cell.x0.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
                        out.push((x, *sign));
                    } else if min_coord >= -BMARGIN {
                        return Err(Degen("level set passes through a simplex face"));
                    }
                }
            }
        }
        let _ = self.d;
        Ok(out)
    }
}

enum SegKind {
    Regular { pinv: DMatrix<f64>, what: Vector3<f64>, sign: i8 },
    Deficient { proj: DMatrix<f64> },
}

struct SegCell {
    x0: Vec<f64>,
    u0: DVector<f64>,
    e_inv: DMatrix<f64>,
    kind: SegKind,
}

/// Per-tetrahedron solve data for the `(d, k) = (3, 2)` segment extraction.
struct SegmentSolver {
    cells: Vec<SegCell>,
}

impl SegmentSolver {
    fn new(u: &SampledField) -> SegmentSolver {
        let layout = u.layout();
        let perms = layout.permutations();
        let zero_cube = vec![0usize; 3];
        let e_invs: Vec<DMatrix<f64>> =
            perms.iter().map(|p| edge_inverse(layout, &zero_cube, p)).collect();
        let mut cells = Vec::with_capacity(layout.num_cubes() * perms.len());
        for cube in 0..layout.num_cubes() as u32 {
            let ci = layout.cube_index(cube);
            for (rank, perm) in perms.iter().enumerate() {
                let sid = layout.simplex_id(&ci, rank);
                let path = layout.kuhn_path_vertices(&ci, perm);
                let x0 = layout.vertex_coord(&layout.vertex_index(path[0]));
                let u0 = DVector::from_column_slice(u.value(path[0]));
                let dmat = u.gradient(sid);
                let kind = match deficiency_projector(dmat) {
                    Some(proj) => SegKind::Deficient { proj },
                    None => {
                        let r0 = Vector3::new(dmat[(0, 0)], dmat[(0, 1)], dmat[(0, 2)]);
                        let r1 = Vector3::new(dmat[(1, 0)], dmat[(1, 1)], dmat[(1, 2)]);
                        let what = r0.cross(&r1).normalize();
                        let ddt = dmat * dmat.transpose();
                        let pinv = dmat.transpose()
                            * ddt.try_inverse().expect("full row rank by the SVD gate");
                        // frame (what, p, q) is positively oriented; the sign
                        // compares the image orientation (Du p, Du q) to the
                        // positive plane orientation.
                        let axis = (0..3)
                            .min_by(|&i, &j| {
                                what[i].abs().partial_cmp(&what[j].abs()).unwrap()
                            })
                            .unwrap();
                        let mut e_axis = Vector3::zeros();
                        e_axis[axis] = 1.0;
                        let p = what.cross(&e_axis).normalize();
                        let q = what.cross(&p);
                        let ip = dmat * p;
                        let iq = dmat * q;
                        let det2 = ip[0] * iq[1] - ip[1] * iq[0];
                        let sign = if det2 > 0.0 { 1 } else { -1 };
                        SegKind::Regular { pinv, what, sign }
                    }
                };
                cells.push(SegCell { x0, u0, e_inv: e_invs[rank].clone(), kind });
            }
        }
        SegmentSolver { cells }
    }

    /// All transverse solution segments of `u(x) = y`, oriented along the
    /// kernel direction, with orientation signs.
    fn segments(&self, y: &[f64]) -> Result<Vec<([f64; 3], [f64; 3], i8)>, Degen> {
        let yv = DVector::from_column_slice(y);
        let mut out = vec![];
        for cell in &self.cells {
            let rhs = &yv - &cell.u0;
            let (pinv, what, sign) = match &cell.kind {
                SegKind::Deficient { proj } => {
                    if (proj * &rhs).norm() <= 1e-9 * (1.0 + yv.norm()) {
                        return Err(Degen("offset lies on a rank-deficient image"));
                    }
                    continue;
                }
                SegKind::Regular { pinv, what, sign } => (pinv, what, *sign),
            };
            let xp = pinv * &rhs; // particular solution offset from x0
            let lam_rest = &cell.e_inv * &xp;
            let mu_rest = &cell.e_inv * what;
            let mut lam = [0.0f64; 4];
            let mut mu = [0.0f64; 4];
            lam[0] = 1.0 - lam_rest.iter().sum::<f64>();
            mu[0] = -mu_rest.iter().sum::<f64>();
            for i in 0..3 {
                lam[i + 1] = lam_rest[i];
                mu[i + 1] = mu_rest[i];
            }
            // clip the line lam + t*mu >= 0 to the tetrahedron
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            let mut miss = false;
            for i in 0..4 {
                if mu[i] > 1e-13 {
                    lo = lo.max(-lam[i] / mu[i]);
                } else if mu[i] < -1e-13 {
                    hi = hi.min(-lam[i] / mu[i]);
                } else if lam[i] < -BMARGIN {
                    miss = true;
                    break;
                } else if lam[i] <= BMARGIN {
                    return Err(Degen("solution line grazes a face plane"));
                }
            }
            if miss {
                continue;
            }
            if hi < lo - 1e-12 {
                continue;
            }
            if hi - lo <= SNAP {
                return Err(Degen("solution line clips a sliver"));
            }
            for &t_end in &[lo, hi] {
                let zeros = (0..4)
                    .filter(|&i| (lam[i] + t_end * mu[i]).abs() <= BMARGIN)
                    .count();
                if zeros != 1 {
                    return Err(Degen("segment endpoint on a low-dimensional face"));
                }
            }
            let at = |t_end: f64| -> [f64; 3] {
                let mut p = [0.0f64; 3];
                for i in 0..3 {
                    p[i] = cell.x0[i] + xp[i] + t_end * what[i];
                }
                p
            };
            out.push((at(lo), at(hi), sign));
        }
        Ok(out)
    }
}

fn build_point_chain(
    ambient: usize,
    group: &CoefficientGroup,
    pts: &[(Vec<f64>, i8)],
) -> Chain {
    let mut builder = ComplexBuilder::new(ambient);
    let mut entries = vec![];
    for (x, sign) in pts {
        let v = builder.add_vertex(x.clone()).expect("finite coords");
        entries.push((v, group.scalar(*sign as i64)));
    }
    let cx = Arc::new(builder.build().expect("vertex-only complex"));
    Chain::from_entries(cx, group.clone(), 0, entries).expect("fresh cells")
}

fn build_segment_chain(
    group: &CoefficientGroup,
    segs: &[([f64; 3], [f64; 3], i8)],
) -> Result<Chain, Degen> {
    // Endpoint interning with a snap tolerance: endpoints of adjacent
    // simplices agree up to solver roundoff, and exact boundary cancellation
    // in the chain needs them to be the *same* vertex.
    let mut points: Vec<[f64; 3]> = vec![];
    let mut intern = |p: &[f64; 3]| -> u32 {
        for (i, q) in points.iter().enumerate() {
            let d2: f64 = (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum();
            if d2.sqrt() <= SNAP {
                return i as u32;
            }
        }
        points.push(*p);
        (points.len() - 1) as u32
    };
    let mut tuples: Vec<([u32; 2], i8)> = vec![];
    for (a, b, sign) in segs {
        let ia = intern(a);
        let ib = intern(b);
        if ia == ib {
            return Err(Degen("segment collapsed under endpoint merging"));
        }
        tuples.push(([ia, ib], *sign));
    }
    let mut builder = ComplexBuilder::new(3);
    for p in &points {
        builder.add_vertex(p.to_vec()).expect("finite coords");
    }
    for (t, _) in &tuples {
        builder.add_cell(vec![t[0], t[1]]).expect("distinct endpoints");
    }
    let cx = Arc::new(builder.build().expect("segment complex"));
    Ok(Chain::from_tuples(
        cx,
        group.clone(),
        1,
        tuples.iter().map(|(t, s)| (&t[..], group.scalar(*s as i64))),
    )
    .expect("cells just built"))
}

// ---------------------------------------------------------------------------
// The operator

/// The backend [`singular_set`] picks when none is forced: preimage for
/// sphere-family targets (exact affine solve), link for the rest.
pub fn default_backend(
    u: &SampledField,
    t: &TargetManifold,
) -> Result<Backend, SingularError> {
    match t {
        TargetManifold::Circle | TargetManifold::Sphere(_) => {
            if u.dim() >= t.codimension() {
                Ok(Backend::Preimage)
            } else {
                Err(SingularError::Unsupported(format!(
                    "domain dimension {} is below the target codimension {}",
                    u.dim(),
                    t.codimension()
                )))
            }
        }
        TargetManifold::Rp2q => Ok(Backend::Link),
    }
}

/// Extract the defect chain of `u` at offset `y` with the default backend.
pub fn singular_set(
    u: &SampledField,
    t: &TargetManifold,
    y: &[f64],
) -> Result<SingularChain, SingularError> {
    singular_set_with(u, t, y, default_backend(u, t)?)
}

/// Extract the defect chain of `u` at offset `y` with an explicit backend.
pub fn singular_set_with(
    u: &SampledField,
    t: &TargetManifold,
    y: &[f64],
    backend: Backend,
) -> Result<SingularChain, SingularError> {
    check_offset(u, t, y)?;
    match backend {
        Backend::Preimage => preimage_set(u, t, y),
        Backend::Link => link_set(u, t, y),
    }
}

fn check_offset(u: &SampledField, t: &TargetManifold, y: &[f64]) -> Result<(), SingularError> {
    if u.components() != t.ambient_dim() {
        return Err(SingularError::ComponentMismatch {
            got: u.components(),
            target: t.name(),
            want: t.ambient_dim(),
        });
    }
    if y.len() != u.components() {
        return Err(SingularError::FieldShape(format!(
            "offset has {} components, expected {}",
            y.len(),
            u.components()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SingularError::FieldShape("offset must be finite".into()));
    }
    Ok(())
}

fn preimage_set(
    u: &SampledField,
    t: &TargetManifold,
    y: &[f64],
) -> Result<SingularChain, SingularError> {
    if matches!(t, TargetManifold::Rp2q) {
        return Err(SingularError::Unsupported(
            "the preimage backend requires a sphere-family target (affine zero set)".into(),
        ));
    }
    let d = u.dim();
    let k = t.codimension();
    let group = t.group();
    if d == k {
        let solver = PointSolver::new(u);
        let (chain, offset, resamples) = with_jitter(t, y, |yy| {
            let pts = solver.points(yy)?;
            Ok(build_point_chain(d, &group, &pts))
        })?;
        Ok(SingularChain { chain, offset, backend: Backend::Preimage, resamples })
    } else if d == 3 && k == 2 {
        let solver = SegmentSolver::new(u);
        let (chain, offset, resamples) = with_jitter(t, y, |yy| {
            let segs = solver.segments(yy)?;
            build_segment_chain(&group, &segs)
        })?;
        // interior cycle law: any boundary charge sits on the domain boundary
        let bd = chain.boundary()?;
        for (cell, _) in bd.iter() {
            let p = chain.complex().vertex(cell);
            assert!(
                boundary_distance(u.layout(), p) <= 1e-7,
                "interior cycle law violated: boundary point {p:?} inside the domain"
            );
        }
        Ok(SingularChain { chain, offset, backend: Backend::Preimage, resamples })
    } else {
        Err(SingularError::Unsupported(format!(
            "preimage backend supports d = k or (d, k) = (3, 2); got d = {d}, k = {k}"
        )))
    }
}

fn boundary_distance(layout: &GridLayout, p: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..layout.dim() {
        let lo = layout.origin[a];
        let hi = lo + layout.spacing[a] * layout.counts[a] as f64;
        best = best.min((p[a] - lo).abs()).min((hi - p[a]).abs());
    }
    best
}

fn link_set(
    u: &SampledField,
    t: &TargetManifold,
    y: &[f64],
) -> Result<SingularChain, SingularError> {
    if t.codimension() != 2 {
        return Err(SingularError::Unsupported(
            "the link backend requires a codimension-2 target class".into(),
        ));
    }
    let d = u.dim();
    let dual = DualGrid::new(u.layout().clone())?;
    let group = t.group();
    let on_n = field_on_manifold(u, t);
    let (chain, offset, resamples) = with_jitter(t, y, |yy| {
        let geodesic = on_n && norm2(yy) <= GEODESIC_Y * t.delta0();
        let mut ctx = LinkCtx::new(u, *t, yy, geodesic);
        let entries = if d == 2 {
            link_entries_2d(&mut ctx, u.layout(), &group)?
        } else {
            link_entries_3d(&mut ctx, &dual, &group)?
        };
        Ok(Chain::from_entries(dual.complex().clone(), group.clone(), d - 2, entries)
            .expect("dual cells are valid"))
    })?;
    if d == 3 {
        // interior cycle law, exact by shared per-edge statistics
        let bd = chain.boundary()?;
        for (v, _) in bd.iter() {
            assert!(
                !dual.is_center_vertex(v),
                "interior cycle law violated at dual vertex {v}"
            );
        }
    }
    Ok(SingularChain { chain, offset, backend: Backend::Link, resamples })
}

/// `∂(S_y(u) restricted to kept cells)`; `keep` is evaluated on the centroid
/// of each defect cell. The result is supported on the interface: every
/// boundary cell is a face of a kept defect cell, and either a face of a
/// dropped defect cell or a boundary charge the unrestricted chain already
/// had (both checked).
pub fn singular_boundary(
    u: &SampledField,
    t: &TargetManifold,
    y: &[f64],
    keep: impl Fn(&[f64]) -> bool,
) -> Result<Chain, SingularError> {
    let s = singular_set(u, t, y)?;
    let dim = s.chain.dim();
    if dim == 0 {
        return Err(SingularError::BoundaryDimension(0));
    }
    let cx = s.chain.complex().clone();
    let kept: BTreeSet<u32> = s
        .chain
        .iter()
        .filter(|(c, _)| keep(&cx.centroid(dim, *c).expect("support cell")))
        .map(|(c, _)| c)
        .collect();
    let restricted = s.chain.restrict(|c| kept.contains(&c));
    let bd = restricted.boundary()?;
    let full_bd = s.chain.boundary()?;
    let mut kept_faces = BTreeSet::new();
    let mut dropped_faces = BTreeSet::new();
    for (c, _) in s.chain.iter() {
        for &(f, _) in cx.boundary_incidence(dim, c)?.iter() {
            if kept.contains(&c) {
                kept_faces.insert(f);
            } else {
                dropped_faces.insert(f);
            }
        }
    }
    for (f, _) in bd.iter() {
        assert!(kept_faces.contains(&f), "boundary cell {f} is not a face of the kept part");
        assert!(
            dropped_faces.contains(&f) || !full_bd.coefficient(f).is_zero(),
            "boundary cell {f} appears away from the cut and from the full boundary"
        );
    }
    Ok(bd)
}

// ---------------------------------------------------------------------------
// Homotopy cobordism (d = 2)

/// Witness chain `R` on the dual grid with `∂R = S_y(u1) - S_y(u0)` at every
/// interior dual vertex, built from the straight-line homotopy
/// `(1-s) u0 + s u1`: for each primal edge, the winding of the quad loop
/// `u0(A) -> u1(A) -> u1(D) -> u0(D)` is placed on the dual edge crossing
/// it (rotated +90 degrees: x-edges map to +y dual edges with coefficient
/// +γ, y-edges to +x dual edges with -γ). Shared per-edge and per-vertex
/// statistics make the boundary identity exact, not approximate. Planar
/// domains only.
pub fn homotopy_cobordism(
    u0: &SampledField,
    u1: &SampledField,
    t: &TargetManifold,
    y: &[f64],
) -> Result<Chain, SingularError> {
    if u0.layout() != u1.layout() {
        return Err(SingularError::FieldShape(
            "homotopy cobordism requires both fields on the same grid".into(),
        ));
    }
    check_offset(u0, t, y)?;
    check_offset(u1, t, y)?;
    if t.codimension() != 2 {
        return Err(SingularError::Unsupported(
            "homotopy cobordism requires a codimension-2 target class".into(),
        ));
    }
    if u0.dim() != 2 {
        return Err(SingularError::Unsupported(
            "homotopy cobordism is implemented for planar domains (d = 2)".into(),
        ));
    }
    let layout = u0.layout().clone();
    let dual = DualGrid::new(layout.clone())?;
    let group = t.group();
    let (r, _, _) = with_jitter(t, y, |yy| {
        // interpolated values leave the target, so both contexts refine by
        // value-space midpoints
        let mut c0 = LinkCtx::new(u0, *t, yy, false);
        let mut c1 = LinkCtx::new(u1, *t, yy, false);
        let mut tcache: HashMap<u32, Stat> = HashMap::new();
        let e0 = link_entries_2d(&mut c0, &layout, &group)?;
        let e1 = link_entries_2d(&mut c1, &layout, &group)?;
        let mut entries: Vec<(u32, GroupElement)> = vec![];
        let (nx, ny) = (layout.counts[0], layout.counts[1]);
        for j in 0..=ny {
            for i in 0..nx {
                let a = layout.vertex_id(&[i, j]);
                let b = layout.vertex_id(&[i + 1, j]);
                let g = quad_class(&mut c0, &mut c1, &mut tcache, t, &group, a, b)?;
                if !g.is_zero() {
                    let e = dual
                        .edge_of_face(&FaceRef { axis: 1, layer: j, transverse: vec![i] })
                        .expect("face enumerated");
                    entries.push((e, g));
                }
            }
        }
        for i in 0..=nx {
            for j in 0..ny {
                let a = layout.vertex_id(&[i, j]);
                let b = layout.vertex_id(&[i, j + 1]);
                let g = quad_class(&mut c0, &mut c1, &mut tcache, t, &group, a, b)?;
                if !g.is_zero() {
                    let e = dual
                        .edge_of_face(&FaceRef { axis: 0, layer: i, transverse: vec![j] })
                        .expect("face enumerated");
                    entries.push((e, group.neg(&g).expect("valid element")));
                }
            }
        }
        let r = Chain::from_entries(dual.complex().clone(), group.clone(), 1, entries)
            .expect("dual edges valid");
        let s0 = Chain::from_entries(dual.complex().clone(), group.clone(), 0, e0)
            .expect("dual centers valid");
        let s1 = Chain::from_entries(dual.complex().clone(), group.clone(), 0, e1)
            .expect("dual centers valid");
        let got = r
            .boundary()
            .expect("1-chain")
            .restrict(|v| dual.is_center_vertex(v));
        let want = s1.sub(&s0).expect("same complex");
        assert!(got == want, "cobordism boundary law failed");
        Ok(r)
    })?;
    Ok(r)
}

/// Class of the homotopy quad `u0(a)-y -> u1(a)-y -> u1(b)-y -> u0(b)-y`.
fn quad_class(
    c0: &mut LinkCtx,
    c1: &mut LinkCtx,
    tcache: &mut HashMap<u32, Stat>,
    t: &TargetManifold,
    group: &CoefficientGroup,
    a: u32,
    b: u32,
) -> Result<GroupElement, Degen> {
    let ta = tside(c0, c1, tcache, t, a)?;
    let tb = tside(c0, c1, tcache, t, b)?;
    let i1 = c1.edge(a, b)?;
    let i0 = c0.edge(a, b)?;
    let total = stat_add(stat_add(ta, i1), stat_add(stat_flip(tb), stat_flip(i0)));
    class_of(group, total)
}

fn tside(
    c0: &LinkCtx,
    c1: &LinkCtx,
    tcache: &mut HashMap<u32, Stat>,
    t: &TargetManifold,
    v: u32,
) -> Result<Stat, Degen> {
    if let Some(&s) = tcache.get(&v) {
        return Ok(s);
    }
    let s = seg_stat_chordal(t, &c0.shifted(v), &c1.shifted(v))?;
    tcache.insert(v, s);
    Ok(s)
}

// ---------------------------------------------------------------------------
// Integral verifiers

/// Monte-Carlo check of the Jacobian integral identity for `d = k` sphere
/// targets: `(1/omega_k) * integral of chi(S_y(u)) dy` over the offset ball
/// `B_{lambda+1}` against the total boundary degree.
#[derive(Debug, Clone, Serialize)]
pub struct JacobianReport {
    pub samples: usize,
    /// `(1/omega_k) * integral chi(S_y) dy`, estimated by stratified-radius
    /// sampling of `B_{lambda+1}`.
    pub estimate: f64,
    /// Batch standard error (8 batches), floored at `4*max(|est|,1)/samples`.
    pub std_error: f64,
    /// Independent comparison: the degree of `u` restricted to the domain
    /// boundary, computed from angle increments (d=2) or solid angles (d=3).
    pub boundary_degree: f64,
}

pub fn jacobian_integral_check(
    u: &SampledField,
    t: &TargetManifold,
    samples: usize,
) -> Result<JacobianReport, SingularError> {
    if matches!(t, TargetManifold::Rp2q) {
        return Err(SingularError::Unsupported(
            "the Jacobian integral check requires a sphere-family target".into(),
        ));
    }
    check_offset(u, t, &vec![0.0; u.components()])?;
    let k = t.codimension();
    if u.dim() != k {
        return Err(SingularError::Unsupported(format!(
            "the Jacobian integral check needs d = k; got d = {}, k = {k}",
            u.dim()
        )));
    }
    let solver = PointSolver::new(u);
    let radius = u.lambda() + 1.0;
    let per = samples.div_ceil(8).max(1);
    let total = per * 8;
    let mut rng = ChaCha8Rng::seed_from_u64(0x4ac0_b1a5);
    let ys = systematic_ball(&mut rng, k, radius, 8, per);
    let chis = ys
        .par_iter()
        .map(|y0| {
            let (chi, _, _) = with_jitter(t, y0, |yy| {
                let pts = solver.points(yy)?;
                Ok(pts.iter().map(|&(_, s)| s as i64).sum::<i64>() as f64)
            })?;
            Ok(chi)
        })
        .collect::<Result<Vec<f64>, SingularError>>()?;
    let scale = radius.powi(k as i32);
    let batch_means: Vec<f64> = (0..8)
        .map(|b| chis[b * per..(b + 1) * per].iter().sum::<f64>() / per as f64 * scale)
        .collect();
    let (estimate, sem) = mean_sem(&batch_means);
    let std_error = sem.max(4.0 * estimate.abs().max(1.0) / total as f64);
    let boundary_degree = boundary_degree(u, t)?;
    Ok(JacobianReport { samples: total, estimate, std_error, boundary_degree })
}

/// Degree of `u` restricted to the domain boundary (d = k only): summed
/// angle increments over the boundary 1-chain for `d = 2`, summed signed
/// solid angles over the boundary 2-chain for `d = 3`. Fails if a boundary
/// value sits at the target's exceptional set.
pub fn boundary_degree(u: &SampledField, t: &TargetManifold) -> Result<f64, SingularError> {
    if matches!(t, TargetManifold::Rp2q) {
        return Err(SingularError::Unsupported(
            "boundary degree requires a sphere-family target".into(),
        ));
    }
    let d = u.dim();
    if d != t.codimension() || u.components() != t.ambient_dim() {
        return Err(SingularError::Unsupported(
            "boundary degree needs d = k and matching components".into(),
        ));
    }
    let cx = u.complex().clone();
    let group = CoefficientGroup::integers();
    let one = group.scalar(1);
    let region = Chain::from_entries(
        cx.clone(),
        group,
        d,
        (0..cx.num_cells(d) as u32).map(|c| (c, one.clone())),
    )?;
    let bd = region.boundary()?;
    let mut total = 0.0;
    if d == 2 {
        for (e, g) in bd.iter() {
            let tup = cx.cell_tuple(1, e)?;
            let s = seg_stat_chordal(t, u.value(tup[0]), u.value(tup[1])).map_err(|_| {
                SingularError::Unsupported(
                    "boundary values reach the exceptional set; degree undefined".into(),
                )
            })?;
            let Stat::Ang(inc) = s else { unreachable!("circle statistics") };
            total += g.free[0] as f64 * inc;
        }
        Ok(total / TAU)
    } else {
        for (f, g) in bd.iter() {
            let tup = cx.cell_tuple(2, f)?;
            let omega = solid_angle(u.value(tup[0]), u.value(tup[1]), u.value(tup[2]))?;
            total += g.free[0] as f64 * omega;
        }
        Ok(total / (2.0 * TAU))
    }
}

/// Signed solid angle of the spherical triangle spanned by the directions of
/// `a`, `b`, `c`.
fn solid_angle(a: &[f64], b: &[f64], c: &[f64]) -> Result<f64, SingularError> {
    let unit = |v: &[f64]| -> Result<Vector3<f64>, SingularError> {
        let n = norm2(v);
        if n <= NEAR_X {
            return Err(SingularError::Unsupported(
                "boundary values reach the exceptional set; degree undefined".into(),
            ));
        }
        Ok(Vector3::new(v[0] / n, v[1] / n, v[2] / n))
    };
    let (a, b, c) = (unit(a)?, unit(b)?, unit(c)?);
    let num = a.dot(&b.cross(&c));
    let den = 1.0 + a.dot(&b) + b.dot(&c) + c.dot(&a);
    if num.abs() <= 1e-300 && den <= 1e-12 {
        return Err(SingularError::Unsupported(
            "degenerate boundary triangle (antipodal values)".into(),
        ));
    }
    Ok(2.0 * num.atan2(den))
}

/// Coarea comparison: `integral of M(S_y(u)) dy` over `B_{lambda+1}` against
/// the gradient energy `|grad u|_k^k`.
#[derive(Debug, Clone, Serialize)]
pub struct MassCoareaReport {
    pub samples: usize,
    pub mass_integral: f64,
    pub std_error: f64,
    /// PL-exact `sum vol * |grad u|_F^k`.
    pub gradient_energy: f64,
    /// `mass_integral / gradient_energy` (0 when both vanish).
    pub ratio: f64,
    /// The same integral for the field `1.5 * u` (half the samples).
    pub scaled_mass_integral: f64,
    /// Whether the scaled integral dominates the original, up to twice the
    /// combined standard errors (it must: levels of `c*u` are levels of `u`).
    pub monotone_under_scaling: bool,
}

pub fn mass_coarea_report(
    u: &SampledField,
    t: &TargetManifold,
    samples: usize,
) -> Result<MassCoareaReport, SingularError> {
    check_offset(u, t, &vec![0.0; u.components()])?;
    let backend = default_backend(u, t)?;
    let k = t.codimension() as u32;
    let (mass_int, std_error, total) = mass_integral(u, t, samples, 0x0c0a_4ea0, backend)?;
    let gradient_energy = u.grad_energy(k);
    let ratio = if gradient_energy > 0.0 { mass_int / gradient_energy } else { 0.0 };
    let scaled_field = u.scaled(1.5);
    let (scaled_mass_integral, scaled_sem, _) =
        mass_integral(&scaled_field, t, (samples / 2).max(8), 0x0c0a_4eb0, backend)?;
    let monotone_under_scaling =
        scaled_mass_integral + 2.0 * (scaled_sem + std_error) >= mass_int;
    Ok(MassCoareaReport {
        samples: total,
        mass_integral: mass_int,
        std_error,
        gradient_energy,
        ratio,
        scaled_mass_integral,
        monotone_under_scaling,
    })
}

fn mass_integral(
    u: &SampledField,
    t: &TargetManifold,
    samples: usize,
    seed: u64,
    backend: Backend,
) -> Result<(f64, f64, usize), SingularError> {
    let m = u.components();
    let d = u.dim();
    let radius = u.lambda() + 1.0;
    let per = samples.div_ceil(8).max(1);
    let total = per * 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ys = systematic_ball(&mut rng, m, radius, 8, per);

    enum Eval {
        Points(PointSolver),
        Segments(SegmentSolver),
        Link { dual: DualGrid, on_n: bool },
    }
    let eval = match backend {
        Backend::Preimage if d == t.codimension() => Eval::Points(PointSolver::new(u)),
        Backend::Preimage => Eval::Segments(SegmentSolver::new(u)),
        Backend::Link => Eval::Link {
            dual: DualGrid::new(u.layout().clone())?,
            on_n: field_on_manifold(u, t),
        },
    };
    let group = t.group();
    let masses = ys
        .par_iter()
        .map(|y0| {
            let (mass, _, _) = with_jitter(t, y0, |yy| match &eval {
                Eval::Points(s) => Ok(s.points(yy)?.len() as f64),
                Eval::Segments(s) => Ok(s
                    .segments(yy)?
                    .iter()
                    .map(|(a, b, _)| {
                        (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum::<f64>().sqrt()
                    })
                    .sum()),
                Eval::Link { dual, on_n } => {
                    let geodesic = *on_n && norm2(yy) <= GEODESIC_Y * t.delta0();
                    let mut ctx = LinkCtx::new(u, *t, yy, geodesic);
                    let entries = if d == 2 {
                        link_entries_2d(&mut ctx, u.layout(), &group)?
                    } else {
                        link_entries_3d(&mut ctx, dual, &group)?
                    };
                    let mut mass = 0.0;
                    for (cell, g) in &entries {
                        let n = group.group_norm(g).expect("standard group") as f64;
                        let vol = if d == 2 {
                            1.0
                        } else {
                            dual.complex().volume(1, *cell).expect("dual edge")
                        };
                        mass += n * vol;
                    }
                    Ok(mass)
                }
            })?;
            Ok(mass)
        })
        .collect::<Result<Vec<f64>, SingularError>>()?;
    let vol = vol_ball(m, radius);
    let batch_means: Vec<f64> = (0..8)
        .map(|b| masses[b * per..(b + 1) * per].iter().sum::<f64>() / per as f64 * vol)
        .collect();
    let (mean, sem) = mean_sem(&batch_means);
    Ok((mean, sem, total))
}

/// Continuity comparison for two fields on the same planar grid: the
/// integral of the relative flat norm of `S_y(u1) - S_y(u0)` over offsets,
/// against the first-order difference integral
/// `|u1 - u0| * (|grad u1|^{k-1} + |grad u0|^{k-1})`.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub samples: usize,
    pub flat_integral: f64,
    pub std_error: f64,
    pub rhs_integral: f64,
    /// `flat_integral / rhs_integral` (0 when both vanish).
    pub ratio: f64,
}

pub fn continuity_report(
    u0: &SampledField,
    u1: &SampledField,
    t: &TargetManifold,
    samples: usize,
) -> Result<ContinuityReport, SingularError> {
    if u0.layout() != u1.layout() {
        return Err(SingularError::FieldShape(
            "continuity comparison requires both fields on the same grid".into(),
        ));
    }
    check_offset(u0, t, &vec![0.0; u0.components()])?;
    check_offset(u1, t, &vec![0.0; u1.components()])?;
    if t.codimension() != 2 || u0.dim() != 2 {
        return Err(SingularError::Unsupported(
            "the continuity report covers planar domains and codimension-2 targets".into(),
        ));
    }
    let layout = u0.layout().clone();
    let dual = DualGrid::new(layout.clone())?;
    let group = t.group();
    let m = u0.components();
    let radius = u0.lambda().max(u1.lambda()) + 1.0;
    let per = samples.div_ceil(8).max(1);
    let total = per * 8;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0c01_7171);
    let ys = systematic_ball(&mut rng, m, radius, 8, per);
    let on0 = field_on_manifold(u0, t);
    let on1 = field_on_manifold(u1, t);
    let values = ys
        .par_iter()
        .map(|y0| {
            // one jitter stream covers both extractions: the difference
            // chain needs a common offset
            let ((e0, e1), _, _) = with_jitter(t, y0, |yy| {
                let small = norm2(yy) <= GEODESIC_Y * t.delta0();
                let mut c0 = LinkCtx::new(u0, *t, yy, on0 && small);
                let mut c1 = LinkCtx::new(u1, *t, yy, on1 && small);
                Ok((
                    link_entries_2d(&mut c0, &layout, &group)?,
                    link_entries_2d(&mut c1, &layout, &group)?,
                ))
            })?;
            let s0 = Chain::from_entries(dual.complex().clone(), group.clone(), 0, e0)?;
            let s1 = Chain::from_entries(dual.complex().clone(), group.clone(), 0, e1)?;
            let diff = s1.sub(&s0)?;
            let fd = relative_flat_norm(&diff, |dim, cell| match dim {
                0 => dual.is_center_vertex(cell),
                1 => !dual.is_boundary_edge(cell),
                _ => false,
            })?;
            Ok(fd.value)
        })
        .collect::<Result<Vec<f64>, SingularError>>()?;
    let vol = vol_ball(m, radius);
    let batch_means: Vec<f64> = (0..8)
        .map(|b| values[b * per..(b + 1) * per].iter().sum::<f64>() / per as f64 * vol)
        .collect();
    let (flat_integral, std_error) = mean_sem(&batch_means);

    // first-order comparison integrand, vertex-averaged per simplex
    let k = t.codimension() as i32;
    let d = u0.dim();
    let cx = u0.complex();
    let perms = layout.permutations();
    let mut rhs_integral = 0.0;
    for cube in 0..layout.num_cubes() as u32 {
        let ci = layout.cube_index(cube);
        for (rank, perm) in perms.iter().enumerate() {
            let sid = layout.simplex_id(&ci, rank);
            let vol_s = cx.volume(d, sid).expect("top cell");
            let path = layout.kuhn_path_vertices(&ci, perm);
            let diff_avg = path
                .iter()
                .map(|&v| {
                    let a = u0.value(v);
                    let b = u1.value(v);
                    (0..m).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum::<f64>().sqrt()
                })
                .sum::<f64>()
                / path.len() as f64;
            let g0 = u0.gradient(sid).norm().powi(k - 1);
            let g1 = u1.gradient(sid).norm().powi(k - 1);
            rhs_integral += vol_s * diff_avg * (g0 + g1);
        }
    }
    let ratio = if rhs_integral > 1e-300 {
        flat_integral / rhs_integral
    } else if flat_integral.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ContinuityReport { samples: total, flat_integral, std_error, rhs_integral, ratio })
}

/// Offset-stability certificate for target-valued fields: the defect chain
/// of a field whose samples all lie on the target must not depend on the
/// offset while `|y| < 0.9 * delta0`.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub samples: usize,
    pub defect_cells: usize,
    pub total_mass: f64,
    /// The common chain also matches the direct loop classification at
    /// offset zero.
    pub stop_consistent: bool,
    pub chain: Chain,
}

pub fn n_valued_stability(
    u: &SampledField,
    t: &TargetManifold,
    samples: usize,
) -> Result<StabilityReport, SingularError> {
    check_offset(u, t, &vec![0.0; u.components()])?;
    if t.codimension() != 2 {
        return Err(SingularError::Unsupported(
            "stability comparison uses the link backend (codimension-2 targets)".into(),
        ));
    }
    for v in 0..u.layout().num_vertices() as u32 {
        if !t.on_manifold(u.value(v), GEODESIC_ON_N) {
            let dist = match t.retract(u.value(v)) {
                Ok(r) => {
                    let w = u.value(v);
                    (0..w.len()).map(|i| (w[i] - r[i]) * (w[i] - r[i])).sum::<f64>().sqrt()
                }
                Err(_) => f64::INFINITY,
            };
            return Err(SingularError::NotNValued { vertex: v, dist });
        }
    }
    let m = u.components();
    let mut rng = ChaCha8Rng::seed_from_u64(0x57ab_111f);
    let bound = 0.9 * t.delta0() * (1.0 - 1e-9);
    let ys: Vec<Vec<f64>> =
        (0..samples.max(1)).map(|_| ball_point(&mut rng, m, bound)).collect();
    let mut common: Option<Chain> = None;
    for (i, y) in ys.iter().enumerate() {
        let sc = singular_set_with(u, t, y, Backend::Link)?;
        match &common {
            None => common = Some(sc.chain),
            Some(first) => {
                if sc.chain != *first {
                    return Err(SingularError::StabilityMismatch {
                        y_a: ys[0].clone(),
                        y_b: ys[i].clone(),
                    });
                }
            }
        }
    }
    let chain = common.expect("at least one sample");
    let stop = singular_set_with(u, t, &vec![0.0; m], Backend::Link)?;
    let stop_consistent = stop.chain == chain;
    Ok(StabilityReport {
        samples: ys.len(),
        defect_cells: chain.num_cells(),
        total_mass: chain.mass()?,
        stop_consistent,
        chain,
    })
}

// ---------------------------------------------------------------------------
