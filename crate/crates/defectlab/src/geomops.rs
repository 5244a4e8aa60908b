//! Geometric operations on polyhedral chains: push-forward under
//! piecewise-affine maps, transverse intersection of chains of
//! complementary dimension, segment clipping against regions (the excess
//! case needed for the Leibniz boundary rule), and the translation-stable
//! intersection index.
//!
//! Orientation convention, used everywhere a sign appears: when an n-cell of
//! `S` and an m-cell of `R` meet in a j-plane, pick a basis `u` of the
//! intersection plane, extend by `v` so `(u, v)` positively orients the
//! S-cell, extend by `w` so `(u, w)` positively orients the R-cell; the
//! intersection is oriented by `u` exactly when the concatenated frame
//! `(u, v, w)` is a positively oriented basis of the ambient space. For
//! transverse points (j = 0) this reduces to `sign det [basis_S | basis_R]`.

use crate::chain::{Chain, ChainError};
use crate::coeff::{CoefficientGroup, GroupElement, GroupError};
use crate::mesh::{Complex, ComplexBuilder, MeshError};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("map defines {got} vertex images but the source complex has {want} vertices")]
    ImageCountMismatch { got: usize, want: usize },
    #[error("vertex images live in R^{got}, expected R^{want}")]
    ImageDimMismatch { got: usize, want: usize },
    #[error("chain does not live on the map's source complex")]
    WrongComplex,
    #[error("image of {dim}-cell {cell} is not a union of target cells ({detail})")]
    NotRepresentable { dim: usize, cell: u32, detail: String },
    #[error("push-forward remeshing is only implemented for images of dimension <= 2, got {0}")]
    RemeshDimension(usize),
    #[error("chain dimensions {dim_s} + {dim_r} do not fit the ambient/excess requirement")]
    DimensionMismatch { dim_s: usize, dim_r: usize },
    #[error("chains live in different ambient spaces ({0} vs {1})")]
    AmbientMismatch(usize, usize),
    #[error("second chain must have integer coefficients")]
    IntegerChainRequired,
    #[error("support condition violated: dist({which}) = {dist:.3e}")]
    SupportsTouch { which: &'static str, dist: f64 },
    #[error("intersection index unstable: samples still disagree at radius {radius:.3e}")]
    Unstable { radius: f64 },
}

/// Relative tolerance below which a combined span is treated as
/// non-transverse (degenerate); callers resample the translation.
const TRANSVERSE_TOL: f64 = 1e-8;
/// Barycentric margin: solutions this close to a simplex boundary are
/// flagged degenerate rather than counted or discarded.
const BOUNDARY_MARGIN: f64 = 1e-9;
/// Intersection points closer than this are merged into one 0-cell.
const MERGE_TOL: f64 = 1e-9;

/// A piecewise-affine map determined by an image point for every vertex of
/// a source complex; affine on each cell.
#[derive(Debug, Clone)]
pub struct PLMap {
    source: Arc<Complex>,
    images: Vec<Vec<f64>>,
    target_dim: usize,
    lambda: f64,
}

impl PLMap {
    pub fn new(source: Arc<Complex>, images: Vec<Vec<f64>>) -> Result<Self, GeomError> {
        if images.len() != source.num_vertices() {
            return Err(GeomError::ImageCountMismatch {
                got: images.len(),
                want: source.num_vertices(),
            });
        }
        let target_dim = images.first().map_or(source.ambient_dim(), Vec::len);
        for img in &images {
            if img.len() != target_dim {
                return Err(GeomError::ImageDimMismatch { got: img.len(), want: target_dim });
            }
        }
        let mut lambda: f64 = 0.0;
        for dim in 1..=source.dimension() {
            for id in 0..source.num_cells(dim) as u32 {
                let tuple = source.cell_tuple(dim, id)?;
                let b_src = edge_matrix_of(&source, tuple);
                let b_img = edge_matrix_points(&images, tuple);
                // operator norm of the affine part restricted to the cell
                // plane: express in an orthonormal in-plane basis via QR
                let qr = b_src.qr();
                let r = qr.r();
                if let Some(r_inv) = r.try_inverse() {
                    let m = &b_img * r_inv;
                    let sv = m.svd(false, false).singular_values;
                    lambda = lambda.max(sv.iter().fold(0.0f64, |a, &b| a.max(b)));
                }
            }
        }
        Ok(PLMap { source, images, target_dim, lambda })
    }

    /// Convenience: the globally affine map `x -> A x + b`.
    pub fn affine(source: Arc<Complex>, a: &DMatrix<f64>, b: &[f64]) -> Result<Self, GeomError> {
        let images = (0..source.num_vertices() as u32)
            .map(|v| {
                let x = DVector::from_column_slice(source.vertex(v));
                let y = a * x;
                y.iter().zip(b).map(|(yi, bi)| yi + bi).collect()
            })
            .collect();
        PLMap::new(source, images)
    }

    pub fn source(&self) -> &Arc<Complex> {
        &self.source
    }

    pub fn image(&self, vertex: u32) -> &[f64] {
        &self.images[vertex as usize]
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    /// Lipschitz constant: max over cells of the operator norm of the
    /// affine part.
    pub fn lipschitz(&self) -> f64 {
        self.lambda
    }
}

/// Push a chain forward along a piecewise-affine map onto a target complex.
///
/// Each cell image is first matched combinatorially (its image vertices are
/// target vertices spanning a target cell); otherwise the image simplex is
/// remeshed as the union of the target cells it contains (images of
/// dimension <= 2 only). Rank-deficient images contribute zero. The mass
/// bound `M(f_*S) <= lambda^n M(S)` is asserted on every call.
pub fn pushforward(f: &PLMap, s: &Chain, target: &Arc<Complex>) -> Result<Chain, GeomError> {
    if !Arc::ptr_eq(s.complex(), f.source()) && **s.complex() != **f.source() {
        return Err(GeomError::WrongComplex);
    }
    if target.ambient_dim() != f.target_dim() {
        return Err(GeomError::ImageDimMismatch {
            got: f.target_dim(),
            want: target.ambient_dim(),
        });
    }
    let n = s.dim();
    let mut entries: Vec<(u32, GroupElement)> = vec![];
    for (cell, g) in s.iter() {
        let tuple = f.source().cell_tuple(n, cell)?;
        let image: Vec<&[f64]> = tuple.iter().map(|&v| f.image(v)).collect();
        if n == 0 {
            let Some(tv) = find_vertex(target, image[0]) else {
                return Err(GeomError::NotRepresentable {
                    dim: 0,
                    cell,
                    detail: "image point is not a target vertex".into(),
                });
            };
            entries.push((tv, g.clone()));
            continue;
        }
        let b_img = edge_matrix_points(&f.images, tuple);
        let svd = b_img.clone().svd(false, false);
        let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
        let smin = svd.singular_values.iter().fold(f64::MAX, |a, &b| a.min(b));
        if smax <= 0.0 || smin < 1e-12 * smax {
            continue; // collapsed image
        }
        // combinatorial route: image vertices are target vertices forming a cell
        let mapped: Option<Vec<u32>> =
            image.iter().map(|p| find_vertex(target, p)).collect();
        if let Some(mt) = mapped {
            if let Some((id, sign)) = target.find_cell(n, &mt) {
                let coeff = if sign >= 0 { g.clone() } else { s.group().neg(g)? };
                entries.push((id, coeff));
                continue;
            }
        }
        if n > 2 {
            return Err(GeomError::RemeshDimension(n));
        }
        // containment remeshing: collect the target n-cells inside the image
        let mut covered = 0.0;
        let image_vol = simplex_volume(&image);
        let (lo, hi) = bbox(image.iter().copied());
        for tid in 0..target.num_cells(n) as u32 {
            let ttuple = target.cell_tuple(n, tid)?;
            let tpts: Vec<&[f64]> = ttuple.iter().map(|&v| target.vertex(v)).collect();
            let (tlo, thi) = bbox(tpts.iter().copied());
            if boxes_disjoint(&lo, &hi, &tlo, &thi, 1e-9) {
                continue;
            }
            if !tpts.iter().all(|p| point_in_simplex(&image, p, 1e-7)) {
                continue;
            }
            let centroid: Vec<f64> = (0..f.target_dim())
                .map(|i| tpts.iter().map(|p| p[i]).sum::<f64>() / tpts.len() as f64)
                .collect();
            if !point_in_simplex(&image, &centroid, 1e-7) {
                continue;
            }
            // relative orientation of the contained cell within the image plane
            let b_t = edge_matrix_of(target, ttuple);
            let c = lstsq(&b_img, &b_t);
            let sign = c.determinant().signum();
            if sign == 0.0 {
                continue;
            }
            covered += target.volume(n, tid)?;
            let coeff = if sign > 0.0 { g.clone() } else { s.group().neg(g)? };
            entries.push((tid, coeff));
        }
        if (covered - image_vol).abs() > 1e-7 * image_vol.max(1.0) {
            return Err(GeomError::NotRepresentable {
                dim: n,
                cell,
                detail: format!(
                    "contained target cells cover {covered:.12} of image volume {image_vol:.12}"
                ),
            });
        }
    }
    let result = Chain::from_entries(target.clone(), s.group().clone(), n, entries)?;
    let bound = f.lipschitz().powi(n as i32) * s.mass()?;
    let got = result.mass()?;
    assert!(
        got <= bound * (1.0 + 1e-9) + 1e-12,
        "push-forward mass {got} exceeds lambda^n bound {bound}"
    );
    Ok(result)
}

/// Transverse intersection of complementary-dimension chains.
#[derive(Debug, Clone)]
pub struct IntersectionResult {
    /// Intersection points with group coefficients, on a fresh point complex.
    pub zero_chain: Chain,
    /// Augmentation of `zero_chain`.
    pub index: GroupElement,
    /// Some cell pair was within tolerance of non-transversality; the
    /// flagged pairs are skipped and callers should resample `y`.
    pub degenerate: bool,
}

/// Intersect `S` (dim n, coefficients in G) with the translate by `y` of
/// `R` (dim d-n, integer coefficients). Each transverse intersection point
/// gets coefficient `sign * multiplicity_R * g_S` with the basis-
/// concatenation sign convention.
pub fn intersect_chains(s: &Chain, r: &Chain, y: &[f64]) -> Result<IntersectionResult, GeomError> {
    let d = s.complex().ambient_dim();
    if r.complex().ambient_dim() != d {
        return Err(GeomError::AmbientMismatch(d, r.complex().ambient_dim()));
    }
    if s.dim() + r.dim() != d {
        return Err(GeomError::DimensionMismatch { dim_s: s.dim(), dim_r: r.dim() });
    }
    let mut degenerate = false;
    let mut points: Vec<Vec<f64>> = vec![];
    let mut coeffs: Vec<GroupElement> = vec![];
    let group = s.group().clone();
    for (sc, g) in s.iter() {
        let s_tuple = s.complex().cell_tuple(s.dim(), sc)?;
        let s_pts: Vec<Vec<f64>> =
            s_tuple.iter().map(|&v| s.complex().vertex(v).to_vec()).collect();
        let (slo, shi) = bbox(s_pts.iter().map(|p| p.as_slice()));
        for (rc, mult) in r.iter() {
            let m = integer_multiplicity(r, mult)?;
            let r_tuple = r.complex().cell_tuple(r.dim(), rc)?;
            let r_pts: Vec<Vec<f64>> = r_tuple
                .iter()
                .map(|&v| {
                    r.complex().vertex(v).iter().zip(y).map(|(a, b)| a + b).collect()
                })
                .collect();
            let (rlo, rhi) = bbox(r_pts.iter().map(|p| p.as_slice()));
            if boxes_disjoint(&slo, &shi, &rlo, &rhi, 1e-12) {
                continue;
            }
            match transverse_point(&s_pts, &r_pts) {
                PairOutcome::Point { x, sign } => {
                    points.push(x);
                    coeffs.push(group.scale(i64::from(sign) * m, g)?);
                }
                PairOutcome::Miss => {}
                PairOutcome::Degenerate => degenerate = true,
            }
        }
    }
    let zero_chain = zero_chain_from_points(d, &group, points, coeffs)?;
    let index = zero_chain.augmentation()?;
    Ok(IntersectionResult { zero_chain, index, degenerate })
}

/// Excess intersection in the plane: clip the segments of a 1-chain against
/// the 2-cells of a region chain (in either argument order), producing an
/// oriented 1-chain on a fresh complex. This is the `dim A + dim B = d + 1`
/// case of the same orientation convention, and the left-hand ingredient of
/// the boundary (Leibniz) rule.
pub fn clip_chain(a: &Chain, b: &Chain, y: &[f64]) -> Result<(Chain, bool), GeomError> {
    let d = a.complex().ambient_dim();
    if b.complex().ambient_dim() != d {
        return Err(GeomError::AmbientMismatch(d, b.complex().ambient_dim()));
    }
    if d != 2 || a.dim() + b.dim() != 3 {
        return Err(GeomError::DimensionMismatch { dim_s: a.dim(), dim_r: b.dim() });
    }
    let group = a.group().clone();
    let mut degenerate = false;
    let mut bank: Vec<Vec<f64>> = vec![];
    let mut pieces: Vec<(usize, usize, GroupElement)> = vec![];
    for (ac, g) in a.iter() {
        let a_pts = cell_points(a, ac, &[0.0, 0.0])?;
        for (bc, mult) in b.iter() {
            let m = integer_multiplicity(b, mult)?;
            let b_pts = cell_points(b, bc, y)?;
            // (triangle pts, segment pts, triangle orientation carrier)
            let (tri, seg) = if a.dim() == 2 { (&a_pts, &b_pts) } else { (&b_pts, &a_pts) };
            let s_tri = orientation_sign(tri);
            if s_tri == 0 {
                degenerate = true;
                continue;
            }
            match clip_segment_to_triangle(seg, tri) {
                ClipOutcome::Piece { t0, t1 } => {
                    if t1 - t0 < BOUNDARY_MARGIN {
                        degenerate = true;
                        continue;
                    }
                    let p0 = lerp(seg, t0);
                    let p1 = lerp(seg, t1);
                    let v0 = intern_point(&mut bank, p0);
                    let v1 = intern_point(&mut bank, p1);
                    if v0 == v1 {
                        degenerate = true;
                        continue;
                    }
                    // the piece runs along the segment's own direction with
                    // sign = orientation of the 2-cell relative to the plane
                    let coeff = group.scale(i64::from(s_tri) * m, g)?;
                    pieces.push((v0, v1, coeff));
                }
                ClipOutcome::Empty => {}
                ClipOutcome::Degenerate => degenerate = true,
            }
        }
    }
    let mut builder = ComplexBuilder::new(d);
    for p in &bank {
        builder.add_vertex(p.clone())?;
    }
    for (v0, v1, _) in &pieces {
        builder.add_cell(vec![*v0 as u32, *v1 as u32])?;
    }
    let complex = Arc::new(builder.build()?);
    let tuples: Vec<(Vec<u32>, GroupElement)> =
        pieces.into_iter().map(|(v0, v1, c)| (vec![v0 as u32, v1 as u32], c)).collect();
    let chain = Chain::from_tuples(
        complex,
        group,
        1,
        tuples.iter().map(|(t, c)| (t.as_slice(), c.clone())),
    )?;
    Ok((chain, degenerate))
}

/// The translation-stable intersection index `I(S, R)`: the common value of
/// the augmentation of `S` cap `(translate of R by y)` over random small `y`.
///
/// Preconditions `spt(boundary S)` disjoint from `spt R` and `spt S` disjoint
/// from `spt(boundary R)` are checked by exact simplex-pair distances. The
/// sampling radius starts below those distances and is halved until all
/// samples agree; persistent disagreement is reported as unstable.
pub fn intersection_index(
    s: &Chain,
    r: &Chain,
    samples: usize,
    radius: f64,
) -> Result<GroupElement, GeomError> {
    let d = s.complex().ambient_dim();
    let d_bs_r = chain_distance(&boundary_or_empty(s)?, Some(r))?;
    let d_s_br = chain_distance(&boundary_or_empty(r)?, Some(s))?;
    if d_bs_r <= BOUNDARY_MARGIN {
        return Err(GeomError::SupportsTouch { which: "spt(dS), spt(R)", dist: d_bs_r });
    }
    if d_s_br <= BOUNDARY_MARGIN {
        return Err(GeomError::SupportsTouch { which: "spt(S), spt(dR)", dist: d_s_br });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x1d05_eed5);
    let mut rad = radius.min(0.45 * d_bs_r.min(d_s_br));
    let samples = samples.max(1);
    for _halving in 0..=8 {
        let mut common: Option<GroupElement> = None;
        let mut agree = true;
        for _ in 0..samples {
            let mut value = None;
            for _retry in 0..32 {
                let y = ball_point(&mut rng, d, rad);
                let res = intersect_chains(s, r, &y)?;
                if !res.degenerate {
                    value = Some(res.index);
                    break;
                }
            }
            let Some(v) = value else {
                agree = false;
                break;
            };
            match &common {
                None => common = Some(v),
                Some(c) if *c == v => {}
                Some(_) => {
                    agree = false;
                    break;
                }
            }
        }
        if agree {
            if let Some(c) = common {
                return Ok(c);
            }
        }
        rad /= 2.0;
    }
    Err(GeomError::Unstable { radius: rad })
}

/// Exact distance between the supports of two chains (min over simplex
/// pairs); `None` or an empty chain gives infinity.
pub fn chain_distance(a: &Option<Chain>, b: Option<&Chain>) -> Result<f64, GeomError> {
    let (Some(a), Some(b)) = (a, b) else {
        return Ok(f64::INFINITY);
    };
    let mut best = f64::INFINITY;
    for (ac, _) in a.iter() {
        let apts = cell_points(a, ac, &vec![0.0; a.complex().ambient_dim()])?;
        for (bc, _) in b.iter() {
            let bpts = cell_points(b, bc, &vec![0.0; b.complex().ambient_dim()])?;
            best = best.min(simplex_distance(&apts, &bpts));
        }
    }
    Ok(best)
}

fn boundary_or_empty(c: &Chain) -> Result<Option<Chain>, GeomError> {
    if c.dim() == 0 {
        return Ok(None);
    }
    let b = c.boundary()?;
    Ok(if b.is_zero() { None } else { Some(b) })
}

enum PairOutcome {
    Point { x: Vec<f64>, sign: i8 },
    Miss,
    Degenerate,
}

/// Transverse intersection of two simplices of complementary dimension,
/// given as vertex point lists (translations already applied).
fn transverse_point(s_pts: &[Vec<f64>], r_pts: &[Vec<f64>]) -> PairOutcome {
    let d = s_pts[0].len();
    let a = s_pts.len() - 1;
    let b = r_pts.len() - 1;
    debug_assert_eq!(a + b, d);
    if a == 0 || b == 0 {
        let (point, cell) = if a == 0 { (&s_pts[0], r_pts) } else { (&r_pts[0], s_pts) };
        let e = edge_matrix_vecs(cell);
        let rhs = DVector::from_iterator(d, point.iter().zip(&cell[0]).map(|(p, q)| p - q));
        let Some(inv) = e.clone().try_inverse() else {
            return PairOutcome::Degenerate;
        };
        let lam = inv * rhs;
        match barycentric_position(lam.as_slice()) {
            Position::Inside => {
                let sign = e.determinant().signum() as i8;
                PairOutcome::Point { x: point.clone(), sign }
            }
            Position::Boundary => PairOutcome::Degenerate,
            Position::Outside => PairOutcome::Miss,
        }
    } else {
        let e_s = edge_matrix_vecs(s_pts);
        let e_r = edge_matrix_vecs(r_pts);
        let mut m = DMatrix::zeros(d, d);
        for j in 0..a {
            m.set_column(j, &e_s.column(j));
        }
        for j in 0..b {
            m.set_column(a + j, &(-&e_r.column(j)));
        }
        let svd = m.clone().svd(true, true);
        let smax = svd.singular_values.iter().fold(0.0f64, |x, &v| x.max(v));
        let smin = svd.singular_values.iter().fold(f64::MAX, |x, &v| x.min(v));
        if smax <= 0.0 || smin < TRANSVERSE_TOL * smax {
            return PairOutcome::Degenerate;
        }
        let rhs =
            DVector::from_iterator(d, r_pts[0].iter().zip(&s_pts[0]).map(|(q, p)| q - p));
        let Some(st) = svd.solve(&rhs, 0.0).ok() else {
            return PairOutcome::Degenerate;
        };
        let pos_s = barycentric_position(&st.as_slice()[..a]);
        let pos_r = barycentric_position(&st.as_slice()[a..]);
        match (pos_s, pos_r) {
            (Position::Inside, Position::Inside) => {
                let mut frame = DMatrix::zeros(d, d);
                for j in 0..a {
                    frame.set_column(j, &e_s.column(j));
                }
                for j in 0..b {
                    frame.set_column(a + j, &e_r.column(j));
                }
                let sign = frame.determinant().signum() as i8;
                if sign == 0 {
                    return PairOutcome::Degenerate;
                }
                let x: Vec<f64> = (0..d)
                    .map(|i| {
                        s_pts[0][i]
                            + (0..a).map(|j| e_s[(i, j)] * st[j]).sum::<f64>()
                    })
                    .collect();
                PairOutcome::Point { x, sign }
            }
            (Position::Boundary, _) | (_, Position::Boundary) => PairOutcome::Degenerate,
            _ => PairOutcome::Miss,
        }
    }
}

enum Position {
    Inside,
    Boundary,
    Outside,
}

/// Classify reduced barycentric coordinates (lam_1..lam_k, with lam_0
/// implied) relative to the simplex, with the degeneracy margin.
fn barycentric_position(lam: &[f64]) -> Position {
    let mut coords: Vec<f64> = lam.to_vec();
    coords.push(1.0 - lam.iter().sum::<f64>());
    let min = coords.iter().fold(f64::MAX, |a, &b| a.min(b));
    if min > BOUNDARY_MARGIN {
        Position::Inside
    } else if min < -BOUNDARY_MARGIN {
        Position::Outside
    } else {
        Position::Boundary
    }
}

enum ClipOutcome {
    Piece { t0: f64, t1: f64 },
    Empty,
    Degenerate,
}

/// Clip the parametrized segment to a triangle's three half-planes.
fn clip_segment_to_triangle(seg: &[Vec<f64>], tri: &[Vec<f64>]) -> ClipOutcome {
    let p = &seg[0];
    let dir = [seg[1][0] - seg[0][0], seg[1][1] - seg[0][1]];
    let scale = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
    if scale < BOUNDARY_MARGIN {
        return ClipOutcome::Degenerate;
    }
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..3 {
        let a = &tri[i];
        let b = &tri[(i + 1) % 3];
        let c = &tri[(i + 2) % 3];
        // inward normal of edge (a, b): the side containing c
        let mut n = [-(b[1] - a[1]), b[0] - a[0]];
        let side = n[0] * (c[0] - a[0]) + n[1] * (c[1] - a[1]);
        if side < 0.0 {
            n = [-n[0], -n[1]];
        }
        let nn = (n[0] * n[0] + n[1] * n[1]).sqrt();
        let denom = (n[0] * dir[0] + n[1] * dir[1]) / (nn * scale);
        let num = (n[0] * (p[0] - a[0]) + n[1] * (p[1] - a[1])) / nn;
        if denom.abs() < 1e-12 {
            // segment parallel to this edge line
            if num.abs() < BOUNDARY_MARGIN {
                return ClipOutcome::Degenerate; // riding along the edge
            }
            if num < 0.0 {
                return ClipOutcome::Empty;
            }
            continue;
        }
        let t = -num / (denom * scale);
        if denom > 0.0 {
            t0 = t0.max(t);
        } else {
            t1 = t1.min(t);
        }
    }
    if t1 <= t0 + BOUNDARY_MARGIN {
        if t1 >= t0 - BOUNDARY_MARGIN {
            return ClipOutcome::Degenerate; // grazing contact
        }
        return ClipOutcome::Empty;
    }
    ClipOutcome::Piece { t0, t1 }
}

/// Orientation of a full-dimensional 2-cell in the plane: sign of the edge
/// determinant of its stored tuple.
fn orientation_sign(tri: &[Vec<f64>]) -> i8 {
    let det = (tri[1][0] - tri[0][0]) * (tri[2][1] - tri[0][1])
        - (tri[1][1] - tri[0][1]) * (tri[2][0] - tri[0][0]);
    if det.abs() < 1e-15 {
        0
    } else {
        det.signum() as i8
    }
}

fn lerp(seg: &[Vec<f64>], t: f64) -> Vec<f64> {
    seg[0].iter().zip(&seg[1]).map(|(a, b)| a + t * (b - a)).collect()
}

fn intern_point(bank: &mut Vec<Vec<f64>>, p: Vec<f64>) -> usize {
    for (i, q) in bank.iter().enumerate() {
        if dist2(q, &p) < MERGE_TOL * MERGE_TOL {
            return i;
        }
    }
    bank.push(p);
    bank.len() - 1
}

fn zero_chain_from_points(
    d: usize,
    group: &CoefficientGroup,
    points: Vec<Vec<f64>>,
    coeffs: Vec<GroupElement>,
) -> Result<Chain, GeomError> {
    let mut bank: Vec<Vec<f64>> = vec![];
    let mut merged: Vec<GroupElement> = vec![];
    for (p, c) in points.into_iter().zip(coeffs) {
        let i = intern_point(&mut bank, p);
        if i == merged.len() {
            merged.push(c);
        } else {
            merged[i] = group.add(&merged[i], &c)?;
        }
    }
    let mut builder = ComplexBuilder::new(d);
    for p in &bank {
        builder.add_vertex(p.clone())?;
    }
    let complex = Arc::new(builder.build()?);
    let entries = merged.into_iter().enumerate().map(|(i, c)| (i as u32, c));
    Ok(Chain::from_entries(complex, group.clone(), 0, entries)?)
}

fn integer_multiplicity(r: &Chain, g: &GroupElement) -> Result<i64, GeomError> {
    if r.group().free_rank() != 1 || !r.group().torsion_orders().is_empty() {
        return Err(GeomError::IntegerChainRequired);
    }
    let _ = g;
    Ok(g.free[0])
}

fn cell_points(c: &Chain, id: u32, shift: &[f64]) -> Result<Vec<Vec<f64>>, GeomError> {
    let tuple = c.complex().cell_tuple(c.dim(), id)?;
    Ok(tuple
        .iter()
        .map(|&v| c.complex().vertex(v).iter().zip(shift).map(|(a, b)| a + b).collect())
        .collect())
}

fn edge_matrix_of(cx: &Complex, tuple: &[u32]) -> DMatrix<f64> {
    let pts: Vec<&[f64]> = tuple.iter().map(|&v| cx.vertex(v)).collect();
    let d = pts[0].len();
    DMatrix::from_fn(d, pts.len() - 1, |i, j| pts[j + 1][i] - pts[0][i])
}

fn edge_matrix_points(images: &[Vec<f64>], tuple: &[u32]) -> DMatrix<f64> {
    let d = images[tuple[0] as usize].len();
    DMatrix::from_fn(d, tuple.len() - 1, |i, j| {
        images[tuple[j + 1] as usize][i] - images[tuple[0] as usize][i]
    })
}

fn edge_matrix_vecs(pts: &[Vec<f64>]) -> DMatrix<f64> {
    let d = pts[0].len();
    DMatrix::from_fn(d, pts.len() - 1, |i, j| pts[j + 1][i] - pts[0][i])
}

/// Least-squares solve `A X = B` column by column (A tall, full rank).
fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let mut x = DMatrix::zeros(a.ncols(), b.ncols());
    for j in 0..b.ncols() {
        let col = svd.solve(&b.column(j).into_owned(), 1e-13).expect("svd solve");
        x.set_column(j, &col);
    }
    x
}

/// Euclidean volume of a simplex given by vertex points (Gram determinant).
fn simplex_volume(pts: &[&[f64]]) -> f64 {
    let k = pts.len() - 1;
    if k == 0 {
        return 1.0;
    }
    let d = pts[0].len();
    let e = DMatrix::from_fn(d, k, |i, j| pts[j + 1][i] - pts[0][i]);
    let gram = e.transpose() * &e;
    let det: f64 = gram.determinant().max(0.0);
    let mut fact = 1.0;
    for i in 1..=k {
        fact *= i as f64;
    }
    det.sqrt() / fact
}

/// Is `p` inside (or within tol of) the simplex spanned by `pts`? Works in
/// any ambient dimension via least squares with a residual check.
fn point_in_simplex(pts: &[&[f64]], p: &[f64], tol: f64) -> bool {
    let k = pts.len() - 1;
    let d = pts[0].len();
    if k == 0 {
        return dist2(pts[0], p).sqrt() <= tol;
    }
    let e = DMatrix::from_fn(d, k, |i, j| pts[j + 1][i] - pts[0][i]);
    let rhs = DVector::from_iterator(d, p.iter().zip(pts[0]).map(|(a, b)| a - b));
    let svd = e.clone().svd(true, true);
    let Ok(lam) = svd.solve(&rhs, 1e-13) else {
        return false;
    };
    let res = (&e * &lam - &rhs).norm();
    if res > tol {
        return false;
    }
    let mut coords: Vec<f64> = lam.as_slice().to_vec();
    coords.push(1.0 - lam.iter().sum::<f64>());
    coords.iter().all(|&c| c >= -tol)
}

fn bbox<'a>(pts: impl Iterator<Item = &'a [f64]>) -> (Vec<f64>, Vec<f64>) {
    let mut lo: Vec<f64> = vec![];
    let mut hi: Vec<f64> = vec![];
    for p in pts {
        if lo.is_empty() {
            lo = p.to_vec();
            hi = p.to_vec();
        } else {
            for i in 0..p.len() {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
    }
    (lo, hi)
}

fn boxes_disjoint(alo: &[f64], ahi: &[f64], blo: &[f64], bhi: &[f64], pad: f64) -> bool {
    alo.iter()
        .zip(ahi)
        .zip(blo.iter().zip(bhi))
        .any(|((al, ah), (bl, bh))| *ah + pad < *bl || *bh + pad < *al)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn find_vertex(cx: &Complex, p: &[f64]) -> Option<u32> {
    (0..cx.num_vertices() as u32).find(|&v| dist2(cx.vertex(v), p) < MERGE_TOL * MERGE_TOL)
}

/// Exact distance between two simplices: enumerate face pairs (vertex
/// subsets), minimize over each pair of affine hulls, and keep the feasible
/// candidates. Every KKT configuration of the convex program lives on some
/// face pair, so the minimum over feasible candidates is exact.
fn simplex_distance(a_pts: &[Vec<f64>], b_pts: &[Vec<f64>]) -> f64 {
    let d = a_pts[0].len();
    let mut best = f64::INFINITY;
    for ma in 1u32..(1 << a_pts.len()) {
        let sa: Vec<&Vec<f64>> =
            (0..a_pts.len()).filter(|i| ma & (1 << i) != 0).map(|i| &a_pts[i]).collect();
        for mb in 1u32..(1 << b_pts.len()) {
            let sb: Vec<&Vec<f64>> =
                (0..b_pts.len()).filter(|i| mb & (1 << i) != 0).map(|i| &b_pts[i]).collect();
            let ka = sa.len() - 1;
            let kb = sb.len() - 1;
            let vars = ka + kb;
            let (alpha, beta);
            if vars == 0 {
                alpha = vec![];
                beta = vec![];
            } else {
                let m = DMatrix::from_fn(d, vars, |i, j| {
                    if j < ka {
                        sa[j + 1][i] - sa[0][i]
                    } else {
                        -(sb[j - ka + 1][i] - sb[0][i])
                    }
                });
                let rhs = DVector::from_iterator(d, sb[0].iter().zip(sa[0]).map(|(b, a)| b - a));
                let svd = m.svd(true, true);
                let Ok(sol) = svd.solve(&rhs, 1e-12) else {
                    continue;
                };
                alpha = sol.as_slice()[..ka].to_vec();
                beta = sol.as_slice()[ka..].to_vec();
            }
            if !bary_feasible(&alpha) || !bary_feasible(&beta) {
                continue;
            }
            let x: Vec<f64> = (0..d)
                .map(|i| {
                    sa[0][i] + alpha.iter().enumerate().map(|(j, t)| t * (sa[j + 1][i] - sa[0][i])).sum::<f64>()
                })
                .collect();
            let yv: Vec<f64> = (0..d)
                .map(|i| {
                    sb[0][i] + beta.iter().enumerate().map(|(j, t)| t * (sb[j + 1][i] - sb[0][i])).sum::<f64>()
                })
                .collect();
            best = best.min(dist2(&x, &yv).sqrt());
        }
    }
    best
}

fn bary_feasible(lam: &[f64]) -> bool {
    let sum: f64 = lam.iter().sum();
    lam.iter().all(|&l| l >= -1e-12) && sum <= 1.0 + 1e-12
}

/// Uniform point in the d-ball of given radius (rejection from the cube).
fn ball_point(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    loop {
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if p.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            return p.into_iter().map(|x| x * radius).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid_complex, GridLayout};
    use approx::assert_relative_eq;

    fn grid(n: usize, h: f64) -> Arc<Complex> {
        let layout = GridLayout::new(vec![0.0, 0.0], vec![h, h], vec![n, n]).unwrap();
        Arc::new(build_grid_complex(&layout).unwrap())
    }

    fn segment_complex(points: &[(f64, f64)]) -> Arc<Complex> {
        let mut b = ComplexBuilder::new(2);
        for &(x, y) in points {
            b.add_vertex(vec![x, y]).unwrap();
        }
        for i in 0..points.len() / 2 {
            b.add_cell(vec![2 * i as u32, 2 * i as u32 + 1]).unwrap();
        }
        Arc::new(b.build().unwrap())
    }

    fn seg_chain(points: &[(f64, f64)], coeffs: &[i64]) -> Chain {
        let cx = segment_complex(points);
        let z = CoefficientGroup::integers();
        let entries: Vec<(Vec<u32>, GroupElement)> = coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| (vec![2 * i as u32, 2 * i as u32 + 1], z.scalar(c)))
            .collect();
        Chain::from_tuples(cx, z, 1, entries.iter().map(|(t, c)| (t.as_slice(), c.clone())))
            .unwrap()
    }

    fn full_square_chain(cx: &Arc<Complex>) -> Chain {
        let z = CoefficientGroup::integers();
        let entries: Vec<(u32, GroupElement)> = (0..cx.num_cells(2) as u32)
            .map(|id| (id, z.scalar(cx.top_orientation_sign(id).unwrap() as i64)))
            .collect();
        Chain::from_entries(cx.clone(), z, 2, entries).unwrap()
    }

    fn noise(seed: u64, i: usize) -> f64 {
        let mut x = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(i as u64 + 1);
        x ^= x >> 30;
        x = x.wrapping_mul(0xBF58476D1CE4E5B9);
        x ^= x >> 27;
        (x as f64 / u64::MAX as f64) * 2.0 - 1.0
    }

    #[test]
    fn identity_pushforward_is_identity() {
        let cx = grid(2, 1.0);
        let images: Vec<Vec<f64>> =
            (0..cx.num_vertices() as u32).map(|v| cx.vertex(v).to_vec()).collect();
        let f = PLMap::new(cx.clone(), images).unwrap();
        assert_relative_eq!(f.lipschitz(), 1.0, epsilon = 1e-12);
        let z = CoefficientGroup::integers();
        let s = Chain::from_entries(cx.clone(), z, 1, vec![(0u32, CoefficientGroup::integers().scalar(3))])
            .unwrap();
        let fs = pushforward(&f, &s, &cx).unwrap();
        assert_eq!(fs, s);
    }

    #[test]
    fn uniform_scaling_achieves_the_mass_bound_exactly() {
        let cx = grid(2, 1.0);
        let target = grid(2, 2.0);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let f = PLMap::affine(cx.clone(), &a, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(f.lipschitz(), 2.0, epsilon = 1e-12);
        let z = CoefficientGroup::integers();
        // one unit horizontal edge: mass 1
        let (eid, _) = cx.find_cell(1, &[0, 1]).expect("edge 0-1");
        let s = Chain::from_entries(cx.clone(), z.clone(), 1, vec![(eid, z.scalar(1))]).unwrap();
        assert_relative_eq!(s.mass().unwrap(), 1.0, epsilon = 1e-12);
        let fs = pushforward(&f, &s, &target).unwrap();
        assert_relative_eq!(fs.mass().unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn collapsed_image_contributes_zero() {
        let cx = segment_complex(&[(0.0, 0.0), (0.0, 1.0)]);
        // orthogonal projection to the x-axis collapses the vertical edge
        let images = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let f = PLMap::new(cx.clone(), images).unwrap();
        let s = seg_chain(&[(0.0, 0.0), (0.0, 1.0)], &[1]);
        let fs = pushforward(&f, &s, &cx).unwrap();
        assert!(fs.is_zero());
    }

    #[test]
    fn refinement_remesh_distributes_coefficients() {
        let coarse = grid(1, 1.0);
        let fine = grid(2, 0.5);
        let images: Vec<Vec<f64>> =
            (0..coarse.num_vertices() as u32).map(|v| coarse.vertex(v).to_vec()).collect();
        let f = PLMap::new(coarse.clone(), images).unwrap();
        let s = full_square_chain(&coarse);
        let fs = pushforward(&f, &s, &fine).unwrap();
        assert_relative_eq!(fs.mass().unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(fs.num_cells(), 8);
        // boundary commutes through the remesh as well
        let dfs = fs.boundary().unwrap();
        let fds = pushforward(&f, &s.boundary().unwrap(), &fine).unwrap();
        assert_eq!(dfs, fds);
    }

    #[test]
    fn boundary_commutes_with_pushforward_on_random_affine_maps() {
        let cx = grid(3, 1.0);
        let z = CoefficientGroup::integers();
        for trial in 0..20u64 {
            let det_ok = |m: &DMatrix<f64>| m.determinant().abs() > 0.05;
            let mut a;
            let mut k = 0;
            loop {
                a = DMatrix::from_fn(2, 2, |i, j| 1.5 * noise(trial * 100 + k, 7 * i + j));
                if det_ok(&a) {
                    break;
                }
                k += 1;
            }
            let b = [noise(trial, 100), noise(trial, 101)];
            let f = PLMap::affine(cx.clone(), &a, &b).unwrap();
            // target: same combinatorics over the mapped vertices
            let mut builder = ComplexBuilder::new(2);
            for v in 0..cx.num_vertices() as u32 {
                builder.add_vertex(f.image(v).to_vec()).unwrap();
            }
            for id in 0..cx.num_cells(2) as u32 {
                builder.add_cell(cx.cell_tuple(2, id).unwrap().to_vec()).unwrap();
            }
            let target = Arc::new(builder.build().unwrap());
            for dim in [1usize, 2] {
                let entries: Vec<(u32, GroupElement)> = (0..cx.num_cells(dim) as u32)
                    .filter(|&id| noise(trial + 7, id as usize) > 0.4)
                    .map(|id| (id, z.scalar(1 + (noise(trial, id as usize) * 2.0) as i64)))
                    .collect();
                let s = Chain::from_entries(cx.clone(), z.clone(), dim, entries).unwrap();
                if s.is_zero() {
                    continue;
                }
                let fs = pushforward(&f, &s, &target).unwrap();
                let lambda = f.lipschitz();
                assert!(
                    fs.mass().unwrap()
                        <= lambda.powi(dim as i32) * s.mass().unwrap() * (1.0 + 1e-9) + 1e-12
                );
                let dfs = fs.boundary().unwrap();
                let fds = pushforward(&f, &s.boundary().unwrap(), &target).unwrap();
                assert_eq!(dfs, fds, "trial {trial} dim {dim}");
            }
        }
    }

    #[test]
    fn single_crossing_locks_the_sign_convention() {
        // S horizontal (+x), R vertical (+y): frame (e_x, e_y) is positive,
        // so the crossing carries +g.
        let s = seg_chain(&[(-1.0, 0.0), (1.0, 0.0)], &[1]);
        let r = seg_chain(&[(0.0, -1.0), (0.0, 1.0)], &[1]);
        let res = intersect_chains(&s, &r, &[0.0, 0.0]).unwrap();
        assert!(!res.degenerate);
        assert_eq!(res.index, CoefficientGroup::integers().scalar(1));
        // swapped order: frame (e_y, e_x) is negative
        let res2 = intersect_chains(&r, &s, &[0.0, 0.0]).unwrap();
        assert_eq!(res2.index, CoefficientGroup::integers().scalar(-1));
        // torsion coefficients: +g = -g = g in Z/2
        let z2 = CoefficientGroup::cyclic(2).unwrap();
        let s2 = {
            let cx = segment_complex(&[(-1.0, 0.0), (1.0, 0.0)]);
            Chain::from_entries(cx, z2.clone(), 1, vec![(0u32, z2.scalar(1))]).unwrap()
        };
        let res3 = intersect_chains(&s2, &r, &[0.0, 0.0]).unwrap();
        assert_eq!(res3.index, z2.scalar(1));
        // index always equals the augmentation of the zero chain
        assert_eq!(res.index, res.zero_chain.augmentation().unwrap());
    }

    #[test]
    fn disjoint_boxes_give_empty_intersection() {
        let s = seg_chain(&[(0.0, 0.0), (1.0, 0.0)], &[1]);
        let r = seg_chain(&[(5.0, -1.0), (5.0, 1.0)], &[1]);
        let res = intersect_chains(&s, &r, &[0.0, 0.0]).unwrap();
        assert!(res.zero_chain.is_zero());
        assert!(res.index.is_zero());
        assert!(!res.degenerate);
    }

    #[test]
    fn parallel_opposite_segments_cancel() {
        let s = seg_chain(&[(-1.0, 0.2), (1.0, 0.2), (-1.0, -0.2), (1.0, -0.2)], &[1, -1]);
        let r = seg_chain(&[(0.1, -1.0), (0.1, 1.0)], &[1]);
        let res = intersect_chains(&s, &r, &[0.0, 0.0]).unwrap();
        assert_eq!(res.zero_chain.num_cells(), 2);
        assert!(res.index.is_zero());
    }

    #[test]
    fn near_parallel_pairs_are_flagged_degenerate() {
        let s = seg_chain(&[(-1.0, 0.0), (1.0, 0.0)], &[1]);
        let r = seg_chain(&[(-1.0, -1e-12), (1.0, 1e-12)], &[1]);
        let res = intersect_chains(&s, &r, &[0.0, 0.0]).unwrap();
        assert!(res.degenerate);
    }

    #[test]
    fn three_dimensional_segment_triangle_crossing() {
        // S: vertical segment through the triangle's interior; R: triangle
        // in the xy-plane with edges along +x, +y. Frame (e_z, e_x, e_y) is
        // an even permutation: sign +1.
        let mut bs = ComplexBuilder::new(3);
        bs.add_vertex(vec![0.3, 0.3, -1.0]).unwrap();
        bs.add_vertex(vec![0.3, 0.3, 1.0]).unwrap();
        bs.add_cell(vec![0, 1]).unwrap();
        let z = CoefficientGroup::integers();
        let s = Chain::from_entries(Arc::new(bs.build().unwrap()), z.clone(), 1, vec![(0u32, z.scalar(1))])
            .unwrap();
        let mut br = ComplexBuilder::new(3);
        br.add_vertex(vec![0.0, 0.0, 0.0]).unwrap();
        br.add_vertex(vec![2.0, 0.0, 0.0]).unwrap();
        br.add_vertex(vec![0.0, 2.0, 0.0]).unwrap();
        br.add_cell(vec![0, 1, 2]).unwrap();
        let r = Chain::from_entries(Arc::new(br.build().unwrap()), z.clone(), 2, vec![(0u32, z.scalar(1))])
            .unwrap();
        let res = intersect_chains(&s, &r, &[0.0, 0.0, 0.0]).unwrap();
        assert!(!res.degenerate);
        assert_eq!(res.index, z.scalar(1));
    }

    /// Both sides of the boundary rule
    /// d(A cap B) = (-1)^(d - dim B) (dA cap B) + (A cap dB)
    /// as explicit 0-chains, compared point by point.
    #[test]
    fn leibniz_boundary_rule_on_random_pairs() {
        let cx = grid(2, 1.0);
        let z = CoefficientGroup::integers();
        let mut checked = 0;
        for trial in 0..40u64 {
            let entries: Vec<(u32, GroupElement)> = (0..cx.num_cells(2) as u32)
                .filter(|&id| noise(trial, id as usize) > 0.0)
                .map(|id| {
                    let c = 1 + (noise(trial + 1, id as usize).abs() * 2.0) as i64;
                    (id, z.scalar(c * cx.top_orientation_sign(id).unwrap() as i64))
                })
                .collect();
            let a = Chain::from_entries(cx.clone(), z.clone(), 2, entries).unwrap();
            if a.is_zero() {
                continue;
            }
            let pts = [
                (
                    -0.4 + 0.2 * noise(trial, 50),
                    0.3 + 0.3 * noise(trial, 51),
                ),
                (
                    2.4 + 0.2 * noise(trial, 52),
                    1.7 + 0.3 * noise(trial, 53),
                ),
            ];
            let b = seg_chain(&pts, &[1 + (trial % 2) as i64]);
            let y = [0.05 * noise(trial, 60), 0.05 * noise(trial, 61)];
            let (ab, degen) = clip_chain(&a, &b, &y).unwrap();
            let da_b = intersect_chains(&a.boundary().unwrap(), &b, &y).unwrap();
            let a_db = intersect_chains(&a, &b.boundary().unwrap(), &y).unwrap();
            if degen || da_b.degenerate || a_db.degenerate {
                continue;
            }
            checked += 1;
            let lhs = ab.boundary().unwrap();
            // collect (point, integer coefficient) maps from both sides
            let mut want: Vec<(Vec<f64>, i64)> = vec![];
            let factor = -1i64; // (-1)^(2 - 1)
            for (cell, g) in da_b.zero_chain.iter() {
                want.push((da_b.zero_chain.complex().vertex(cell).to_vec(), factor * g.free[0]));
            }
            for (cell, g) in a_db.zero_chain.iter() {
                want.push((a_db.zero_chain.complex().vertex(cell).to_vec(), g.free[0]));
            }
            let mut got: Vec<(Vec<f64>, i64)> = lhs
                .iter()
                .map(|(cell, g)| (lhs.complex().vertex(cell).to_vec(), g.free[0]))
                .collect();
            // merge expected duplicates, then match within tolerance
            for (p, c) in want {
                let hit = got.iter_mut().find(|(q, _)| dist2(q, &p).sqrt() < 1e-7);
                match hit {
                    Some((_, cg)) => *cg -= c,
                    None => panic!("trial {trial}: expected point {p:?} missing on LHS"),
                }
            }
            for (q, cg) in got {
                assert_eq!(cg, 0, "trial {trial}: unmatched mass at {q:?}");
            }
        }
        assert!(checked >= 25, "only {checked} non-degenerate trials");
    }

    #[test]
    fn stable_index_of_a_single_crossing() {
        let s = seg_chain(&[(-1.0, 0.0), (1.0, 0.0)], &[2]);
        let r = seg_chain(&[(0.0, -1.0), (0.0, 1.0)], &[1]);
        let idx = intersection_index(&s, &r, 25, 0.3).unwrap();
        assert_eq!(idx, CoefficientGroup::integers().scalar(2));
    }

    #[test]
    fn support_violation_is_reported() {
        // R passes through an endpoint of S: spt(dS) meets spt(R)
        let s = seg_chain(&[(0.0, 0.0), (1.0, 0.0)], &[1]);
        let r = seg_chain(&[(0.0, -1.0), (0.0, 1.0)], &[1]);
        assert!(matches!(
            intersection_index(&s, &r, 5, 0.1),
            Err(GeomError::SupportsTouch { .. })
        ));
    }

    #[test]
    fn index_with_boundary_matches_the_sign_rule() {
        // I(S, dR) = (-1)^n I(dS, R) with n = dim S = 1, on random
        // transverse segment/region pairs.
        let cx = grid(3, 1.0);
        let z = CoefficientGroup::integers();
        let mut checked = 0;
        for trial in 0..100u64 {
            // R: one grid square as a 2-chain (both triangles of cube (i,j))
            let i = ((noise(trial, 0) + 1.0) * 1.4) as usize % 3;
            let j = ((noise(trial, 1) + 1.0) * 1.4) as usize % 3;
            let entries: Vec<(u32, GroupElement)> = (0..cx.num_cells(2) as u32)
                .filter(|&id| {
                    let c = cx.centroid(2, id).unwrap();
                    c[0] > i as f64 && c[0] < (i + 1) as f64 && c[1] > j as f64 && c[1] < (j + 1) as f64
                })
                .map(|id| (id, z.scalar(cx.top_orientation_sign(id).unwrap() as i64)))
                .collect();
            let r = Chain::from_entries(cx.clone(), z.clone(), 2, entries).unwrap();
            // S: a long segment crossing near the square at a random angle
            let cxm = i as f64 + 0.5 + 0.2 * noise(trial, 2);
            let cym = j as f64 + 0.5 + 0.2 * noise(trial, 3);
            let ang = std::f64::consts::PI * noise(trial, 4);
            let (dx, dy) = (ang.cos(), ang.sin());
            let s = seg_chain(
                &[(cxm - 8.0 * dx, cym - 8.0 * dy), (cxm + 8.0 * dx, cym + 8.0 * dy)],
                &[1],
            );
            let dr = r.boundary().unwrap();
            let ds = s.boundary().unwrap();
            let lhs = match intersection_index(&s, &dr, 10, 0.05) {
                Ok(v) => v,
                Err(GeomError::SupportsTouch { .. }) | Err(GeomError::Unstable { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            let rhs = match intersection_index(&ds, &r, 10, 0.05) {
                Ok(v) => v,
                Err(GeomError::SupportsTouch { .. }) | Err(GeomError::Unstable { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            checked += 1;
            // (-1)^1 = -1
            assert_eq!(lhs, z.neg(&rhs).unwrap(), "trial {trial}");
        }
        assert!(checked >= 60, "only {checked} usable trials");
    }

    #[test]
    fn index_vanishes_when_boundary_misses_the_region() {
        // S = dP for a small closed square boundary lying inside R's square:
        // I(S, dR): S is a cycle, dR surrounds it at distance > 0.
        let p = seg_chain(
            &[
                (1.25, 1.25),
                (1.75, 1.25),
                (1.75, 1.25),
                (1.75, 1.75),
                (1.75, 1.75),
                (1.25, 1.75),
                (1.25, 1.75),
                (1.25, 1.25),
            ],
            &[1, 1, 1, 1],
        );
        let cx = grid(3, 1.0);
        let z = CoefficientGroup::integers();
        let entries: Vec<(u32, GroupElement)> = (0..cx.num_cells(2) as u32)
            .filter(|&id| {
                let c = cx.centroid(2, id).unwrap();
                c[0] > 1.0 && c[0] < 2.0 && c[1] > 1.0 && c[1] < 2.0
            })
            .map(|id| (id, z.scalar(cx.top_orientation_sign(id).unwrap() as i64)))
            .collect();
        let r = Chain::from_entries(cx.clone(), z.clone(), 2, entries).unwrap();
        // dP is a cycle, so I(dP, dR) pairs a boundary with a cycle whose
        // own boundary is empty: the index must vanish.
        let idx = intersection_index(&p, &r.boundary().unwrap(), 12, 0.05).unwrap();
        assert!(idx.is_zero());
    }

    #[test]
    fn index_is_bilinear_in_the_first_argument() {
        let r = seg_chain(&[(0.2, -2.0), (0.2, 2.0)], &[1]);
        for trial in 0..15u64 {
            let y1 = 0.3 * noise(trial, 0);
            let y2 = 0.9 + 0.3 * noise(trial, 1);
            let c1 = 1 + (noise(trial, 2).abs() * 3.0) as i64;
            let c2 = -1 - (noise(trial, 3).abs() * 3.0) as i64;
            let s1 = seg_chain(&[(-1.0, y1), (1.0, y1)], &[c1]);
            let s2 = seg_chain(&[(-1.0, y2), (1.0, y2)], &[c2]);
            let both = seg_chain(&[(-1.0, y1), (1.0, y1), (-1.0, y2), (1.0, y2)], &[c1, c2]);
            let i1 = intersection_index(&s1, &r, 8, 0.05).unwrap();
            let i2 = intersection_index(&s2, &r, 8, 0.05).unwrap();
            let i12 = intersection_index(&both, &r, 8, 0.05).unwrap();
            let z = CoefficientGroup::integers();
            assert_eq!(i12, z.add(&i1, &i2).unwrap(), "trial {trial}");
        }
    }

    #[test]
    fn simplex_distance_agrees_with_hand_values() {
        let a = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let b = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
        assert_relative_eq!(simplex_distance(&a, &b), 1.0, epsilon = 1e-12);
        let c = vec![vec![2.0, 0.0], vec![3.0, 0.0]];
        assert_relative_eq!(simplex_distance(&a, &c), 1.0, epsilon = 1e-12);
        // crossing segments touch
        let d = vec![vec![0.5, -1.0], vec![0.5, 1.0]];
        assert_relative_eq!(simplex_distance(&a, &d), 0.0, epsilon = 1e-12);
        // point to triangle interior projection
        let tri = vec![vec![0.0, 0.0, 0.0], vec![4.0, 0.0, 0.0], vec![0.0, 4.0, 0.0]];
        let pt = vec![vec![1.0, 1.0, 2.5]];
        assert_relative_eq!(simplex_distance(&tri, &pt), 2.5, epsilon = 1e-12);
    }

    /// Flat norm of a small integer 0-chain in the plane, by brute force
    /// over matchings: pair opposite points by distance or pay mass 1.
    /// Used as the independent oracle in the averaged crossing bound below.
    fn flat_norm_points(pts: &[(Vec<f64>, i64)]) -> f64 {
        let mut pos: Vec<Vec<f64>> = vec![];
        let mut neg: Vec<Vec<f64>> = vec![];
        for (p, c) in pts {
            for _ in 0..c.unsigned_abs() {
                if *c > 0 {
                    pos.push(p.clone());
                } else {
                    neg.push(p.clone());
                }
            }
        }
        fn rec(pos: &mut Vec<Vec<f64>>, neg: &mut Vec<Vec<f64>>) -> f64 {
            let Some(p) = pos.pop() else {
                return neg.len() as f64;
            };
            // leave p unmatched
            let mut best = 1.0 + rec(pos, neg);
            for i in 0..neg.len() {
                let n = neg.remove(i);
                let cost = dist2(&p, &n).sqrt().min(2.0);
                best = best.min(cost + rec(pos, neg));
                neg.insert(i, n);
            }
            pos.push(p);
            best
        }
        rec(&mut pos, &mut neg)
    }

    #[test]
    fn averaged_intersection_flat_norm_bound() {
        // MC form of the averaged crossing bound:
        //   avg_y F(S cap t_y R) <= F(S) (M(R) + M(dR)).
        let cx = grid(1, 1.0);
        let square = full_square_chain(&cx);
        let s = square.boundary().unwrap(); // boundary of the unit square
        let fs = crate::flatnorm::flat_norm(&s).unwrap();
        let r = seg_chain(&[(-0.2, 0.3), (1.2, 0.3)], &[1]);
        let bound = fs.value * (r.mass().unwrap() + 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut total = 0.0;
        let mut count = 0;
        while count < 200 {
            let y = ball_point(&mut rng, 2, 0.25);
            let res = intersect_chains(&s, &r, &y).unwrap();
            if res.degenerate {
                continue;
            }
            let pts: Vec<(Vec<f64>, i64)> = res
                .zero_chain
                .iter()
                .map(|(c, g)| (res.zero_chain.complex().vertex(c).to_vec(), g.free[0]))
                .collect();
            total += flat_norm_points(&pts);
            count += 1;
        }
        let avg = total / count as f64;
        assert!(
            avg <= bound * 1.05,
            "average {avg} exceeds bound {bound} beyond sampling slack"
        );
    }
}
