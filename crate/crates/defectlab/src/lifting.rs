//! Phase unwrapping of circle-valued planar fields: build a cut chain `R`
//! on the dual grid with `∂R = S_y(u)` relative to the domain, then assign a
//! real phase `θ` to every grid vertex so that `(cos θ, sin θ)` reproduces
//! the samples, adjacent phases differ by less than `π` off the cut, and
//! crossing a cut cell jumps the phase by exactly `2π` times the cut
//! coefficient. The total variation of the lift is reported against the
//! variation of the field plus the jump mass.
//!
//! Phases are stored as `θ(v) = atan2(u₂(v), u₁(v)) + 2π·n(v)` with integer
//! winding offsets `n(v)`, so projecting the lift back to the circle is
//! exact up to one trigonometric argument reduction.
//!
//! Director fields (five-component Q-tensor coordinates) get the covering
//! analogue that exists without a cut: sign continuation of the unit
//! director over a caller-chosen defect-free, simply-connected subregion.
//! A loop in the region that would flip the sign (a half-charge inside) is
//! reported as a holonomy inconsistency.

use std::collections::HashMap;

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::chain::{Chain, ChainError};
use crate::coeff::GroupError;
use crate::flatnorm::{relative_flat_norm, FlatNormError};
use crate::mesh::{DualGrid, FaceRef, MeshError};
use crate::singular::{homotopy_cobordism, Backend, SampledField, SingularChain, SingularError};
use crate::target::{self, TargetError, TargetManifold};
use std::f64::consts::TAU;

#[derive(Debug, Error)]
pub enum LiftError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    FlatNorm(#[from] FlatNormError),
    #[error(transparent)]
    Singular(#[from] SingularError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error("vertex {vertex} is not on the unit circle (|u| deviates by {dev:.3e})")]
    NotCircleValued { vertex: u32, dev: f64 },
    #[error("adjacent samples at vertices {a} and {b} are nearly antipodal (step {angle:.3} rad)")]
    StepBound { a: u32, b: u32, angle: f64 },
    #[error("holonomy inconsistency across vertices {a} and {b}: the cut does not bound the singular set")]
    HolonomyInconsistency { a: u32, b: u32 },
    #[error("the cut chain's boundary does not match the singular chain")]
    CutMismatch,
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Near-antipodal adjacent samples make the principal-value increment
/// unreliable; refuse rather than guess.
const STEP_BOUND: f64 = 3.0;
/// Minimum |cosine| between adjacent directors for sign continuation.
const DIRECTOR_STEP: f64 = 0.1;

/// A cut chain `R` with `∂R = S` relative to the domain, plus the masses of
/// the reduced and raw constructions.
#[derive(Debug, Clone)]
pub struct CutChain {
    /// Dimension-1 chain on the dual grid.
    pub chain: Chain,
    pub mass: f64,
    /// Mass of the unreduced homotopy witness the construction started from.
    pub witness_mass: f64,
}

/// Entry-wise chain comparison that tolerates distinct (but structurally
/// identical) complex instances.
fn same_entries(a: &Chain, b: &Chain) -> bool {
    a.dim() == b.dim()
        && a.num_cells() == b.num_cells()
        && a.iter().zip(b.iter()).all(|((ca, ga), (cb, gb))| ca == cb && ga == gb)
}

fn reference_value(t: &TargetManifold) -> Result<Vec<f64>, LiftError> {
    match t {
        TargetManifold::Circle | TargetManifold::Sphere(2) => Ok(vec![1.0, 0.0]),
        TargetManifold::Rp2q => Ok(target::uniaxial_q(&Vector3::x())),
        TargetManifold::Sphere(_) => Err(LiftError::Unsupported(
            "cut construction needs a codimension-2 target".into(),
        )),
    }
}

/// The unreduced cut: the homotopy witness against a constant reference
/// field, whose boundary matches `S` by construction (verified here).
pub fn witness_cut(
    u: &SampledField,
    t: &TargetManifold,
    s: &SingularChain,
) -> Result<CutChain, LiftError> {
    if u.dim() != 2 {
        return Err(LiftError::Unsupported(
            "cut construction is implemented for planar domains".into(),
        ));
    }
    if s.backend != Backend::Link {
        return Err(LiftError::Unsupported(
            "cut construction needs the link-backend chain on the dual grid".into(),
        ));
    }
    let dual = DualGrid::new(u.layout().clone())?;
    let constant = SampledField::from_values(
        u.layout().clone(),
        u.components(),
        vec![reference_value(t)?; u.layout().num_vertices()],
    )?;
    let witness = homotopy_cobordism(&constant, u, t, &s.offset)?;
    let wb = witness.boundary()?.restrict(|v| dual.is_center_vertex(v));
    if !same_entries(&wb, &s.chain) {
        return Err(LiftError::CutMismatch);
    }
    let witness_mass = witness.mass()?;
    Ok(CutChain { chain: witness, mass: witness_mass, witness_mass })
}

/// Build a cut chain with `∂R = S` relative to the domain: the homotopy
/// witness against a constant reference field proves one exists, and the
/// flat-norm solver's P-search (with the domain boundary free) reduces its
/// mass. The lighter of the two is returned.
pub fn cut_chain(
    u: &SampledField,
    t: &TargetManifold,
    s: &SingularChain,
) -> Result<CutChain, LiftError> {
    let CutChain { chain: witness, witness_mass, .. } = witness_cut(u, t, s)?;
    let dual = DualGrid::new(u.layout().clone())?;
    // P-search: minimize edge mass subject to matching S at every interior
    // dual vertex, with absorption on the domain rim free
    let fd = relative_flat_norm(&s.chain, |dim, cell| match dim {
        0 => dual.is_center_vertex(cell),
        _ => true,
    })?;
    let pb = fd.p.boundary()?.restrict(|v| dual.is_center_vertex(v));
    assert!(same_entries(&pb, &s.chain), "flat-norm witness lost the boundary identity");
    let p_mass = fd.p.mass()?;
    if p_mass <= witness_mass + 1e-12 {
        Ok(CutChain { chain: fd.p, mass: p_mass, witness_mass })
    } else {
        Ok(CutChain { chain: witness, mass: witness_mass, witness_mass })
    }
}

/// Variation accounting for a lifted field.
#[derive(Debug, Clone, Serialize)]
pub struct VariationReport {
    /// Total variation of the lift: the absolutely continuous part (from
    /// per-simplex principal-value increments) plus the jump part `2π·M(R)`.
    pub theta_variation: f64,
    /// `Σ vol·|∇u|_F` of the field.
    pub field_variation: f64,
    pub cut_mass: f64,
    /// `2π·M(R)`, the jump part of `theta_variation`.
    pub jump_variation: f64,
    /// `theta_variation / field_variation` (0 when both vanish).
    pub ratio: f64,
}

/// A phase function on grid vertices projecting back to the sampled field.
#[derive(Debug, Clone, Serialize)]
pub struct LiftedField {
    /// Per-vertex phase, vertex id order.
    pub theta: Vec<f64>,
    /// The cut chain the phases jump across.
    pub cut: Chain,
    /// Nonzero jump coefficients per cut cell (dual edge id, multiplicity).
    pub jumps: Vec<(u32, i64)>,
    pub report: VariationReport,
}

/// Principal-value angle from `a` to `b` (both unit), in `(-π, π]`.
fn pv(a: &[f64], b: &[f64]) -> f64 {
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    cross.atan2(dot)
}

/// Unwrap the phase of a circle-valued planar field across the cut `r`.
/// Phases are assigned by deterministic breadth-first traversal (vertex-id
/// order) that avoids crossing the cut wherever possible; every remaining
/// grid edge then checks the accumulated holonomy, so an `Ok` lift is
/// globally consistent, not just tree-consistent.
pub fn lift_circle_field(
    u: &SampledField,
    s: &SingularChain,
    r: &Chain,
) -> Result<LiftedField, LiftError> {
    if u.dim() != 2 || u.components() != 2 {
        return Err(LiftError::Unsupported(
            "circle lifting needs a planar two-component field".into(),
        ));
    }
    if s.backend != Backend::Link {
        return Err(LiftError::Unsupported(
            "circle lifting needs the link-backend chain on the dual grid".into(),
        ));
    }
    if r.dim() != 1 || r.group().free_rank() != 1 || !r.group().torsion_orders().is_empty() {
        return Err(LiftError::Unsupported(
            "the cut must be an integer 1-chain on the dual grid".into(),
        ));
    }
    let layout = u.layout().clone();
    let dual = DualGrid::new(layout.clone())?;
    if r.complex().num_cells(1) != dual.complex().num_cells(1) {
        return Err(LiftError::Unsupported("the cut lives on a different grid".into()));
    }
    let rb = r.boundary()?.restrict(|v| dual.is_center_vertex(v));
    if !same_entries(&rb, &s.chain) {
        return Err(LiftError::CutMismatch);
    }

    let nvert = layout.num_vertices();
    let mut alpha = Vec::with_capacity(nvert);
    for v in 0..nvert as u32 {
        let w = u.value(v);
        let dev = ((w[0] * w[0] + w[1] * w[1]).sqrt() - 1.0).abs();
        if dev > 1e-9 {
            return Err(LiftError::NotCircleValued { vertex: v, dev });
        }
        alpha.push(w[1].atan2(w[0]));
    }

    // jump coefficient per oriented primal edge: crossing the cut jumps by
    // 2π times the dual coefficient, signed so that plaquette sums cancel
    // the winding (+x steps pick -R of the +y dual edge, +y steps +R of the
    // +x dual edge)
    let coeff = |e: u32| -> i64 {
        let g = r.coefficient(e);
        if g.free.is_empty() { 0 } else { g.free[0] }
    };
    let (nx, ny) = (layout.counts[0], layout.counts[1]);
    let mut jump: HashMap<(u32, u32), i64> = HashMap::new();
    let mut edges: Vec<(u32, u32)> = vec![];
    for j in 0..=ny {
        for i in 0..nx {
            let a = layout.vertex_id(&[i, j]);
            let b = layout.vertex_id(&[i + 1, j]);
            let e = dual
                .edge_of_face(&FaceRef { axis: 1, layer: j, transverse: vec![i] })
                .expect("face enumerated");
            let c = coeff(e);
            if c != 0 {
                jump.insert((a, b), -c);
                jump.insert((b, a), c);
            }
            edges.push((a, b));
        }
    }
    for i in 0..=nx {
        for j in 0..ny {
            let a = layout.vertex_id(&[i, j]);
            let b = layout.vertex_id(&[i, j + 1]);
            let e = dual
                .edge_of_face(&FaceRef { axis: 0, layer: i, transverse: vec![j] })
                .expect("face enumerated");
            let c = coeff(e);
            if c != 0 {
                jump.insert((a, b), c);
                jump.insert((b, a), -c);
            }
            edges.push((a, b));
        }
    }
    let jump_of = |a: u32, b: u32| -> i64 { jump.get(&(a, b)).copied().unwrap_or(0) };

    // integer winding offset per step: n(b) = n(a) + jump + carry, where the
    // carry tracks principal-value wraparound of the raw angles
    let step = |a: u32, b: u32| -> Result<(i64, f64), LiftError> {
        let inc = pv(u.value(a), u.value(b));
        if inc.abs() > STEP_BOUND {
            return Err(LiftError::StepBound { a, b, angle: inc.abs() });
        }
        let raw = (inc - (alpha[b as usize] - alpha[a as usize])) / TAU;
        let carry = raw.round();
        debug_assert!((raw - carry).abs() < 1e-6, "carry {raw} is not near an integer");
        Ok((jump_of(a, b) + carry as i64, inc))
    };

    let mut neighbors: Vec<Vec<u32>> = vec![vec![]; nvert];
    for &(a, b) in &edges {
        neighbors[a as usize].push(b);
        neighbors[b as usize].push(a);
    }
    for n in &mut neighbors {
        n.sort_unstable();
    }

    // base: lowest vertex not touching the cut (fall back to 0)
    let mut on_cut = vec![false; nvert];
    for (&(a, b), _) in &jump {
        on_cut[a as usize] = true;
        on_cut[b as usize] = true;
    }
    let base = (0..nvert as u32).find(|&v| !on_cut[v as usize]).unwrap_or(0);

    let mut offset: Vec<Option<i64>> = vec![None; nvert];
    offset[base as usize] = Some(0);
    // phase 1: breadth-first over uncrossed edges; phase 2: attach whatever
    // the cut separated through the lowest crossing edge, then resume
    let mut queue = std::collections::VecDeque::from([base]);
    loop {
        while let Some(a) = queue.pop_front() {
            let na = offset[a as usize].expect("queued vertices are assigned");
            for &b in &neighbors[a as usize] {
                if offset[b as usize].is_some() || jump_of(a, b) != 0 {
                    continue;
                }
                let (dn, _) = step(a, b)?;
                offset[b as usize] = Some(na + dn);
                queue.push_back(b);
            }
        }
        // find the lowest assigned->unassigned edge (necessarily crossing)
        let mut attach: Option<(u32, u32)> = None;
        'outer: for a in 0..nvert as u32 {
            if offset[a as usize].is_none() {
                continue;
            }
            for &b in &neighbors[a as usize] {
                if offset[b as usize].is_none() {
                    attach = Some((a, b));
                    break 'outer;
                }
            }
        }
        match attach {
            None => break,
            Some((a, b)) => {
                let (dn, _) = step(a, b)?;
                offset[b as usize] = Some(offset[a as usize].unwrap() + dn);
                queue.push_back(b);
            }
        }
    }

    // holonomy: every edge (tree or not) must agree with its prescribed jump
    for &(a, b) in &edges {
        let (dn, _) = step(a, b)?;
        if offset[b as usize].unwrap() - offset[a as usize].unwrap() != dn {
            return Err(LiftError::HolonomyInconsistency { a, b });
        }
    }

    let theta: Vec<f64> =
        (0..nvert).map(|v| alpha[v] + TAU * offset[v].unwrap() as f64).collect();

    // variation: AC part from principal-value increments per simplex (the
    // affine phase whose path-edge increments are the pv's), plus the jump
    // part 2π·M(R)
    let perms = layout.permutations();
    let cx = u.complex();
    let mut ac = 0.0;
    for cube in 0..layout.num_cubes() as u32 {
        let ci = layout.cube_index(cube);
        for (rank, perm) in perms.iter().enumerate() {
            let sid = layout.simplex_id(&ci, rank);
            let path = layout.kuhn_path_vertices(&ci, perm);
            let x0 = layout.vertex_coord(&layout.vertex_index(path[0]));
            let x1 = layout.vertex_coord(&layout.vertex_index(path[1]));
            let x2 = layout.vertex_coord(&layout.vertex_index(path[2]));
            let e = Matrix2::new(x1[0] - x0[0], x2[0] - x1[0], x1[1] - x0[1], x2[1] - x1[1]);
            let d1 = pv(u.value(path[0]), u.value(path[1]));
            let d2 = pv(u.value(path[1]), u.value(path[2]));
            let grad = e
                .transpose()
                .try_inverse()
                .expect("Kuhn simplices are nondegenerate")
                * Vector2::new(d1, d2);
            ac += cx.volume(2, sid).expect("top cell") * grad.norm();
        }
    }
    let cut_mass = r.mass()?;
    let jump_variation = TAU * cut_mass;
    let theta_variation = ac + jump_variation;
    let field_variation = u.grad_energy(1);
    let ratio = if field_variation > 0.0 { theta_variation / field_variation } else { 0.0 };

    let jumps: Vec<(u32, i64)> = r
        .iter()
        .map(|(e, g)| (e, if g.free.is_empty() { 0 } else { g.free[0] }))
        .filter(|&(_, c)| c != 0)
        .collect();

    Ok(LiftedField {
        theta,
        cut: r.clone(),
        jumps,
        report: VariationReport {
            theta_variation,
            field_variation,
            cut_mass,
            jump_variation,
            ratio,
        },
    })
}

/// Sign continuation of the unit director of a five-component Q-tensor
/// field over the vertices selected by `region`. The subregion must be
/// defect-free and simply connected; a sign-reversing loop (a half-charge
/// inside a hole) surfaces as [`LiftError::HolonomyInconsistency`]. Returns
/// one oriented unit director per selected vertex, `None` elsewhere.
pub fn lift_director_signs(
    u: &SampledField,
    region: impl Fn(&[f64]) -> bool,
) -> Result<Vec<Option<[f64; 3]>>, LiftError> {
    if u.components() != 5 {
        return Err(LiftError::Unsupported(
            "director continuation needs a five-component Q-tensor field".into(),
        ));
    }
    let layout = u.layout().clone();
    let nvert = layout.num_vertices();
    let d = layout.dim();
    let selected: Vec<bool> = (0..nvert as u32)
        .map(|v| region(&layout.vertex_coord(&layout.vertex_index(v))))
        .collect();
    let mut directors: Vec<Option<Vector3<f64>>> = vec![None; nvert];
    for v in 0..nvert as u32 {
        if selected[v as usize] {
            directors[v as usize] = Some(target::director_of(u.value(v)));
        }
    }
    // grid edges between selected vertices
    let mut neighbors: Vec<Vec<u32>> = vec![vec![]; nvert];
    for v in 0..nvert as u32 {
        if !selected[v as usize] {
            continue;
        }
        let ix = layout.vertex_index(v);
        for a in 0..d {
            if ix[a] < layout.counts[a] {
                let mut jx = ix.clone();
                jx[a] += 1;
                let w = layout.vertex_id(&jx);
                if selected[w as usize] {
                    neighbors[v as usize].push(w);
                    neighbors[w as usize].push(v);
                }
            }
        }
    }
    let mut sign: Vec<Option<i8>> = vec![None; nvert];
    let mut queue = std::collections::VecDeque::new();
    for v in 0..nvert as u32 {
        if !selected[v as usize] || sign[v as usize].is_some() {
            continue;
        }
        sign[v as usize] = Some(1);
        queue.push_back(v);
        while let Some(a) = queue.pop_front() {
            let sa = sign[a as usize].unwrap();
            let da = directors[a as usize].unwrap();
            for &b in &neighbors[a as usize] {
                let db = directors[b as usize].unwrap();
                let dot = da.dot(&db);
                if dot.abs() < DIRECTOR_STEP {
                    return Err(LiftError::StepBound { a, b, angle: dot.abs() });
                }
                let sb = if dot < 0.0 { -sa } else { sa };
                match sign[b as usize] {
                    None => {
                        sign[b as usize] = Some(sb);
                        queue.push_back(b);
                    }
                    Some(existing) => {
                        if existing != sb {
                            return Err(LiftError::HolonomyInconsistency { a, b });
                        }
                    }
                }
            }
        }
    }
    Ok((0..nvert)
        .map(|v| {
            let s = sign[v].map(|s| s as f64)?;
            let dv = directors[v]?;
            Some([s * dv[0], s * dv[1], s * dv[2]])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::GridLayout;
    use crate::singular::singular_set_with;

    fn grid2(n: usize) -> GridLayout {
        GridLayout::new(vec![-1.0, -1.0], vec![2.0 / n as f64; 2], vec![n; 2]).unwrap()
    }

    fn circle() -> TargetManifold {
        TargetManifold::Circle
    }

    fn unit_vortex(n: usize, c: [f64; 2]) -> SampledField {
        SampledField::from_fn(grid2(n), 2, |x| {
            let w = [x[0] - c[0], x[1] - c[1]];
            let r = (w[0] * w[0] + w[1] * w[1]).sqrt();
            vec![w[0] / r, w[1] / r]
        })
        .unwrap()
    }

    /// ±1 pair: phase difference of the two vortex angles, a circle-valued
    /// field with zero total charge.
    fn vortex_pair(n: usize, c1: [f64; 2], c2: [f64; 2]) -> SampledField {
        SampledField::from_fn(grid2(n), 2, |x| {
            let t1 = (x[1] - c1[1]).atan2(x[0] - c1[0]);
            let t2 = (x[1] - c2[1]).atan2(x[0] - c2[0]);
            let phi = t1 - t2;
            vec![phi.cos(), phi.sin()]
        })
        .unwrap()
    }

    fn max_projection_error(u: &SampledField, theta: &[f64]) -> f64 {
        (0..theta.len())
            .map(|v| {
                let w = u.value(v as u32);
                (theta[v].cos() - w[0]).abs().max((theta[v].sin() - w[1]).abs())
            })
            .fold(0.0, f64::max)
    }

    fn extract(u: &SampledField, y: [f64; 2]) -> SingularChain {
        singular_set_with(u, &circle(), &y, Backend::Link).unwrap()
    }

    #[test]
    fn constant_field_lifts_to_constant_phase() {
        let u = SampledField::from_fn(grid2(6), 2, |_| {
            vec![0.6f64.cos(), 0.6f64.sin()]
        })
        .unwrap();
        let s = extract(&u, [0.05, 0.02]);
        assert!(s.chain.is_zero());
        let cut = cut_chain(&u, &circle(), &s).unwrap();
        assert!(cut.chain.is_zero());
        assert_eq!(cut.mass, 0.0);
        let lift = lift_circle_field(&u, &s, &cut.chain).unwrap();
        assert!(lift.jumps.is_empty());
        for &t in &lift.theta {
            assert!((t - 0.6).abs() < 1e-12);
        }
        assert_eq!(lift.report.theta_variation, 0.0);
        assert_eq!(lift.report.ratio, 0.0);
    }

    #[test]
    fn single_vortex_cut_runs_to_the_rim() {
        let n = 16;
        let u = unit_vortex(n, [0.016, 0.017]);
        let s = extract(&u, [0.0, 0.0]);
        assert_eq!(s.chain.num_cells(), 1);
        let cut = cut_chain(&u, &circle(), &s).unwrap();
        assert!(cut.mass <= cut.witness_mass + 1e-12);
        // minimal route from the center to the rim: about half the box,
        // within a couple of cells
        assert!(
            cut.mass <= 1.0 + 3.0 * (2.0 / n as f64) && cut.mass >= 1.0 - 3.0 * (2.0 / n as f64),
            "cut mass {} should approximate the distance to the rim",
            cut.mass
        );
        let lift = lift_circle_field(&u, &s, &cut.chain).unwrap();
        assert!(max_projection_error(&u, &lift.theta) < 1e-12);
        // every jump coefficient is ±1 and the measured phase jump is an
        // exact 2π multiple on top of the principal value
        assert!(!lift.jumps.is_empty());
        for &(_, c) in &lift.jumps {
            assert_eq!(c.abs(), 1);
        }
        let layout = grid2(n);
        let dual = DualGrid::new(layout.clone()).unwrap();
        for &(e, c) in &lift.jumps {
            let f = dual.face_of_edge(e).unwrap();
            let (a, b, j) = if f.axis == 1 {
                let (i, jj) = (f.transverse[0], f.layer);
                (layout.vertex_id(&[i, jj]), layout.vertex_id(&[i + 1, jj]), -c)
            } else {
                let (i, jj) = (f.layer, f.transverse[0]);
                (layout.vertex_id(&[i, jj]), layout.vertex_id(&[i, jj + 1]), c)
            };
            let measured = lift.theta[b as usize]
                - lift.theta[a as usize]
                - pv(u.value(a), u.value(b));
            assert!(
                (measured - TAU * j as f64).abs() < 1e-9,
                "edge ({a},{b}): measured jump {measured} vs 2π·{j}"
            );
        }
        assert!(lift.report.ratio < 10.0);
        // adjacent phases differ by less than π off the cut
        for jy in 0..=n {
            for ix in 0..n {
                let a = layout.vertex_id(&[ix, jy]) as usize;
                let b = layout.vertex_id(&[ix + 1, jy]) as usize;
                if lift.jumps.iter().all(|&(e, _)| {
                    dual.face_of_edge(e).unwrap()
                        != &FaceRef { axis: 1, layer: jy, transverse: vec![ix] }
                }) {
                    assert!((lift.theta[a] - lift.theta[b]).abs() < std::f64::consts::PI);
                }
            }
        }
    }

    #[test]
    fn vortex_pair_cut_is_a_short_join() {
        let n = 16;
        let c1 = [-0.37, 0.016];
        let c2 = [0.43, 0.017];
        let u = vortex_pair(n, c1, c2);
        let s = extract(&u, [0.0, 0.0]);
        assert_eq!(s.chain.num_cells(), 2);
        let charges: i64 = s.chain.iter().map(|(_, g)| g.free[0]).sum();
        assert_eq!(charges, 0, "pair carries opposite charges");
        let cut = cut_chain(&u, &circle(), &s).unwrap();
        let h = 2.0 / n as f64;
        let sep = (c2[0] - c1[0]).abs() + (c2[1] - c1[1]).abs();
        assert!(
            cut.mass <= sep + 3.0 * h,
            "cut mass {} should be close to the L1 separation {}",
            cut.mass,
            sep
        );
        let lift = lift_circle_field(&u, &s, &cut.chain).unwrap();
        assert!(max_projection_error(&u, &lift.theta) < 1e-12);
        assert!(lift.report.ratio < 10.0);
        assert!(
            lift.report.theta_variation
                <= lift.report.field_variation * 1.1 + lift.report.jump_variation + 1e-9
        );
    }

    #[test]
    fn smooth_winding_free_field_lifts_isometrically() {
        let n = 32;
        let u = SampledField::from_fn(grid2(n), 2, |x| {
            let psi = 0.8 * (std::f64::consts::PI * x[0]).sin()
                * (0.5 * std::f64::consts::PI * x[1]).cos();
            vec![psi.cos(), psi.sin()]
        })
        .unwrap();
        let s = extract(&u, [0.03, -0.02]);
        assert!(s.chain.is_zero());
        let cut = cut_chain(&u, &circle(), &s).unwrap();
        assert!(cut.chain.is_zero());
        let lift = lift_circle_field(&u, &s, &cut.chain).unwrap();
        assert!(max_projection_error(&u, &lift.theta) < 1e-12);
        let ratio = lift.report.theta_variation / lift.report.field_variation;
        assert!(
            ratio <= 1.01 && ratio >= 0.99,
            "defect-free lift should be a near-isometry, got ratio {ratio}"
        );
    }

    #[test]
    fn tampered_cut_is_rejected() {
        let n = 10;
        let u = unit_vortex(n, [0.016, 0.017]);
        let s = extract(&u, [0.0, 0.0]);
        let cut = cut_chain(&u, &circle(), &s).unwrap();
        // adding a stray dual edge breaks the boundary identity
        let group = cut.chain.group().clone();
        let stray = Chain::from_entries(
            cut.chain.complex().clone(),
            group.clone(),
            1,
            [(0u32, group.scalar(1))],
        )
        .unwrap();
        let bad = cut.chain.add(&stray).unwrap();
        let err = lift_circle_field(&u, &s, &bad);
        assert!(matches!(err, Err(LiftError::CutMismatch)));
    }

    #[test]
    fn off_circle_fields_are_rejected() {
        let n = 8;
        let u = SampledField::from_fn(grid2(n), 2, |x| vec![x[0], x[1]]).unwrap();
        let s = extract(&u, [0.013, 0.007]);
        let cut = cut_chain(&u, &circle(), &s).unwrap();
        let err = lift_circle_field(&u, &s, &cut.chain);
        assert!(matches!(err, Err(LiftError::NotCircleValued { .. })));
    }

    #[test]
    fn preimage_chains_are_rejected_for_cuts() {
        let u = unit_vortex(8, [0.016, 0.017]);
        let s = singular_set_with(&u, &circle(), &[0.0, 0.0], Backend::Preimage).unwrap();
        let err = cut_chain(&u, &circle(), &s);
        assert!(matches!(err, Err(LiftError::Unsupported(_))));
    }

    #[test]
    fn lift_is_deterministic() {
        let u = vortex_pair(12, [-0.37, 0.016], [0.43, 0.017]);
        let s = extract(&u, [0.0, 0.0]);
        let cut = cut_chain(&u, &circle(), &s).unwrap();
        let a = lift_circle_field(&u, &s, &cut.chain).unwrap();
        let b = lift_circle_field(&u, &s, &cut.chain).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.jumps, b.jumps);
    }

    fn director_pair_field(n: usize, c1: [f64; 2], c2: [f64; 2]) -> SampledField {
        SampledField::from_fn(grid2(n), 5, |x| {
            let t1 = (x[1] - c1[1]).atan2(x[0] - c1[0]);
            let t2 = (x[1] - c2[1]).atan2(x[0] - c2[0]);
            let phi = 0.5 * (t1 - t2);
            target::uniaxial_q(&Vector3::new(phi.cos(), phi.sin(), 0.0))
        })
        .unwrap()
    }

    #[test]
    fn director_signs_continue_on_simply_connected_regions() {
        let c1 = [-0.47, 0.016];
        let c2 = [0.53, 0.017];
        let u = director_pair_field(16, c1, c2);
        let lifted = lift_director_signs(&u, |x| {
            (x[0] * x[0] + (x[1] + 0.6) * (x[1] + 0.6)).sqrt() < 0.35
        })
        .unwrap();
        let layout = grid2(16);
        let mut count = 0;
        for v in 0..layout.num_vertices() as u32 {
            if let Some(nvec) = lifted[v as usize] {
                count += 1;
                // the oriented director still generates the sample
                let q = target::uniaxial_q(&Vector3::new(nvec[0], nvec[1], nvec[2]));
                for (a, b) in q.iter().zip(u.value(v)) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
        assert!(count > 10, "region should contain a useful number of vertices");
        // a region that encircles one half-charge cannot be oriented
        let err = lift_director_signs(&u, |x| {
            let r = ((x[0] - c1[0]).powi(2) + (x[1] - c1[1]).powi(2)).sqrt();
            (0.2..0.45).contains(&r)
        });
        assert!(matches!(err, Err(LiftError::HolonomyInconsistency { .. })));
    }
}
