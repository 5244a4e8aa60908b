//! Finite oriented simplicial complexes and the cubical dual grids used by the
//! link-classification defect backend.
//!
//! Orientation is carried by ordered vertex tuples: the facet of
//! `(v_0, ..., v_k)` obtained by omitting `v_i` enters the boundary with sign
//! `(-1)^i`, corrected by the parity between the omitted tuple and the stored
//! orientation of that facet. Boxes are triangulated by the Kuhn/Freudenthal
//! subdivision (one simplex per axis permutation), which is face-compatible
//! across neighboring cubes, so piecewise-linear interpolation over the grid is
//! globally continuous.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("spacing must be positive and finite (got {0})")]
    InvalidSpacing(f64),
    #[error("counts must be >= 1 on every axis")]
    InvalidCounts,
    #[error("grid dimension {0} unsupported (expected 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("degenerate cell: {0}")]
    DegenerateCell(String),
    #[error("unknown cell: dimension {dim}, id {id}")]
    UnknownCell { dim: usize, id: u32 },
    #[error("vertex id {0} out of range")]
    VertexOutOfRange(u32),
    #[error("0-cells have no facets")]
    ZeroDimensional,
    #[error("cell list is not closed under faces")]
    NotClosed,
    #[error("vertex has {got} coordinates, complex is ambient dimension {want}")]
    AmbientMismatch { got: usize, want: usize },
}

/// Finite oriented simplicial complex. Cells of each dimension are stored as
/// ordered vertex tuples; ids are assigned in insertion order and 0-cell ids
/// coincide with vertex ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Complex {
    ambient_dim: usize,
    vertices: Vec<Vec<f64>>,
    /// `cells[k][id]` is the ordered vertex tuple of the id-th k-cell.
    cells: Vec<Vec<Vec<u32>>>,
    /// `facets[k][id]` lists (facet id, incidence sign); empty tier for k = 0.
    facets: Vec<Vec<Vec<(u32, i8)>>>,
    /// k-dimensional Hausdorff volume per cell (1 for vertices).
    volumes: Vec<Vec<f64>>,
    /// sorted-tuple -> id lookup per dimension
    index: Vec<HashMap<Vec<u32>, u32>>,
    /// Exact rational snapshots of the f64 coordinates, when enabled.
    exact_vertices: Option<Vec<Vec<BigRational>>>,
}

/// Incremental builder; `build` closes the cell set under faces, checks for
/// degeneracy, and computes incidence signs and volumes.
pub struct ComplexBuilder {
    ambient_dim: usize,
    vertices: Vec<Vec<f64>>,
    explicit_cells: Vec<Vec<u32>>,
}

impl ComplexBuilder {
    pub fn new(ambient_dim: usize) -> Self {
        ComplexBuilder { ambient_dim, vertices: vec![], explicit_cells: vec![] }
    }

    pub fn add_vertex(&mut self, coords: Vec<f64>) -> Result<u32, MeshError> {
        if coords.len() != self.ambient_dim {
            return Err(MeshError::AmbientMismatch { got: coords.len(), want: self.ambient_dim });
        }
        self.vertices.push(coords);
        Ok((self.vertices.len() - 1) as u32)
    }

    /// Add a cell as an ordered vertex tuple; its faces are added implicitly.
    pub fn add_cell(&mut self, tuple: Vec<u32>) -> Result<(), MeshError> {
        if tuple.is_empty() {
            return Err(MeshError::DegenerateCell("empty tuple".into()));
        }
        for &v in &tuple {
            if v as usize >= self.vertices.len() {
                return Err(MeshError::VertexOutOfRange(v));
            }
        }
        let mut sorted = tuple.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != tuple.len() {
            return Err(MeshError::DegenerateCell(format!("repeated vertex in {tuple:?}")));
        }
        self.explicit_cells.push(tuple);
        Ok(())
    }

    pub fn build(self) -> Result<Complex, MeshError> {
        let dim = self.explicit_cells.iter().map(|c| c.len() - 1).max().unwrap_or(0);
        let mut cx = Complex {
            ambient_dim: self.ambient_dim,
            vertices: self.vertices,
            cells: vec![vec![]; dim + 1],
            facets: vec![vec![]; dim + 1],
            volumes: vec![vec![]; dim + 1],
            index: vec![HashMap::new(); dim + 1],
            exact_vertices: None,
        };
        // 0-cell ids always equal vertex ids.
        for v in 0..cx.vertices.len() as u32 {
            cx.cells[0].push(vec![v]);
            cx.facets[0].push(vec![]);
            cx.volumes[0].push(1.0);
            cx.index[0].insert(vec![v], v);
        }
        for tuple in &self.explicit_cells {
            cx.insert_closed(tuple)?;
        }
        Ok(cx)
    }
}

impl Complex {
    /// Insert a cell and, recursively, its faces; returns (id, parity sign of
    /// `tuple` relative to the stored orientation).
    fn insert_closed(&mut self, tuple: &[u32]) -> Result<(u32, i8), MeshError> {
        let k = tuple.len() - 1;
        let mut key = tuple.to_vec();
        key.sort_unstable();
        if let Some(&id) = self.index[k].get(&key) {
            let sign = permutation_parity(&self.cells[k][id as usize], tuple)
                .ok_or_else(|| MeshError::DegenerateCell(format!("tuple {tuple:?}")))?;
            return Ok((id, sign));
        }
        let mut facet_list = vec![];
        if k >= 1 {
            for i in 0..tuple.len() {
                let face: Vec<u32> =
                    tuple.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
                let (fid, parity) = self.insert_closed(&face)?;
                let omit_sign = if i % 2 == 0 { 1i8 } else { -1i8 };
                facet_list.push((fid, omit_sign * parity));
            }
        }
        let vol = self.simplex_volume(tuple);
        if !(vol > 0.0) {
            return Err(MeshError::DegenerateCell(format!(
                "zero {k}-volume for tuple {tuple:?}"
            )));
        }
        let id = self.cells[k].len() as u32;
        self.cells[k].push(tuple.to_vec());
        self.facets[k].push(facet_list);
        self.volumes[k].push(vol);
        self.index[k].insert(key, id);
        Ok((id, 1))
    }

    fn simplex_volume(&self, tuple: &[u32]) -> f64 {
        let k = tuple.len() - 1;
        if k == 0 {
            return 1.0;
        }
        let v0 = &self.vertices[tuple[0] as usize];
        let edges: Vec<Vec<f64>> = tuple[1..]
            .iter()
            .map(|&v| {
                self.vertices[v as usize].iter().zip(v0).map(|(a, b)| a - b).collect()
            })
            .collect();
        // Gram determinant: vol = sqrt(det(E^T E)) / k!
        let mut gram = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                gram[i][j] = edges[i].iter().zip(&edges[j]).map(|(a, b)| a * b).sum();
            }
        }
        let det = det_f64(&gram);
        if det <= 0.0 {
            return 0.0;
        }
        det.sqrt() / factorial(k) as f64
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    /// Top dimension (highest tier with any cells).
    pub fn dimension(&self) -> usize {
        (0..self.cells.len()).rev().find(|&k| !self.cells[k].is_empty()).unwrap_or(0)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex(&self, id: u32) -> &[f64] {
        &self.vertices[id as usize]
    }

    pub fn num_cells(&self, dim: usize) -> usize {
        self.cells.get(dim).map_or(0, |c| c.len())
    }

    pub fn cell_tuple(&self, dim: usize, id: u32) -> Result<&[u32], MeshError> {
        self.cells
            .get(dim)
            .and_then(|tier| tier.get(id as usize))
            .map(|t| t.as_slice())
            .ok_or(MeshError::UnknownCell { dim, id })
    }

    pub fn volume(&self, dim: usize, id: u32) -> Result<f64, MeshError> {
        self.volumes
            .get(dim)
            .and_then(|tier| tier.get(id as usize))
            .copied()
            .ok_or(MeshError::UnknownCell { dim, id })
    }

    /// Facets with incidence signs, per the omit-`i` / `(-1)^i` convention.
    pub fn boundary_incidence(&self, dim: usize, id: u32) -> Result<&[(u32, i8)], MeshError> {
        if dim == 0 {
            if (id as usize) < self.num_cells(0) {
                return Err(MeshError::ZeroDimensional);
            }
            return Err(MeshError::UnknownCell { dim, id });
        }
        self.facets
            .get(dim)
            .and_then(|tier| tier.get(id as usize))
            .map(|f| f.as_slice())
            .ok_or(MeshError::UnknownCell { dim, id })
    }

    /// Find a cell by vertex tuple: returns (id, parity of `tuple` vs the
    /// stored orientation), or None if the cell is absent.
    pub fn find_cell(&self, dim: usize, tuple: &[u32]) -> Option<(u32, i8)> {
        let mut key = tuple.to_vec();
        key.sort_unstable();
        let &id = self.index.get(dim)?.get(&key)?;
        let sign = permutation_parity(&self.cells[dim][id as usize], tuple)?;
        Some((id, sign))
    }

    pub fn centroid(&self, dim: usize, id: u32) -> Result<Vec<f64>, MeshError> {
        let tuple = self.cell_tuple(dim, id)?;
        let mut c = vec![0.0; self.ambient_dim];
        for &v in tuple {
            for (ci, xi) in c.iter_mut().zip(&self.vertices[v as usize]) {
                *ci += xi;
            }
        }
        let n = tuple.len() as f64;
        c.iter_mut().for_each(|x| *x /= n);
        Ok(c)
    }

    /// Snapshot the (exactly representable) f64 coordinates as rationals,
    /// enabling exact top-cell volume queries.
    pub fn enable_exact_coords(&mut self) {
        if self.exact_vertices.is_none() {
            self.exact_vertices = Some(
                self.vertices
                    .iter()
                    .map(|v| {
                        v.iter()
                            .map(|&x| BigRational::from_float(x).expect("finite coordinate"))
                            .collect()
                    })
                    .collect(),
            );
        }
    }

    pub fn has_exact_coords(&self) -> bool {
        self.exact_vertices.is_some()
    }

    /// Exact volume of a top-dimensional cell: |det of edge matrix| / d!.
    pub fn exact_top_volume(&self, id: u32) -> Option<BigRational> {
        let exact = self.exact_vertices.as_ref()?;
        let d = self.ambient_dim;
        let tuple = self.cells.get(d)?.get(id as usize)?;
        let v0 = &exact[tuple[0] as usize];
        let edges: Vec<Vec<BigRational>> = tuple[1..]
            .iter()
            .map(|&v| exact[v as usize].iter().zip(v0).map(|(a, b)| a - b).collect())
            .collect();
        let det = det_rational(&edges);
        Some(det.abs() / BigRational::from_integer(BigInt::from(factorial(d))))
    }

    /// Orientation sign of a top-dimensional cell's stored tuple (+1 if the
    /// edge determinant is positive).
    pub fn top_orientation_sign(&self, id: u32) -> Result<i8, MeshError> {
        let d = self.ambient_dim;
        let tuple = self.cell_tuple(d, id)?;
        let v0 = &self.vertices[tuple[0] as usize];
        let edges: Vec<Vec<f64>> = tuple[1..]
            .iter()
            .map(|&v| self.vertices[v as usize].iter().zip(v0).map(|(a, b)| a - b).collect())
            .collect();
        let det = det_f64(&edges);
        if det == 0.0 {
            return Err(MeshError::DegenerateCell(format!("cell {id}")));
        }
        Ok(if det > 0.0 { 1 } else { -1 })
    }
}

/// JSON shape: vertices plus cells by dimension; incidence and volumes are
/// recomputed on load, and ids are preserved because insertion order is.
#[derive(Serialize, Deserialize)]
struct ComplexData {
    vertices: Vec<Vec<f64>>,
    cells: Vec<Vec<Vec<u32>>>,
}

impl Serialize for Complex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ComplexData { vertices: self.vertices.clone(), cells: self.cells.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Complex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let data = ComplexData::deserialize(d)?;
        let ambient = data.vertices.first().map_or(0, |v| v.len());
        let mut builder = ComplexBuilder::new(ambient);
        for v in data.vertices {
            builder.add_vertex(v).map_err(D::Error::custom)?;
        }
        // Insert lowest dimension first so stored ids and orientations match.
        for tier in &data.cells {
            for tuple in tier {
                builder.add_cell(tuple.clone()).map_err(D::Error::custom)?;
            }
        }
        let cx = builder.build().map_err(D::Error::custom)?;
        if cx.cells != data.cells {
            return Err(D::Error::custom(MeshError::NotClosed));
        }
        Ok(cx)
    }
}

/// Sign of the permutation taking `stored` to `tuple` (same vertex set), or
/// None if the vertex sets differ or contain repeats.
fn permutation_parity(stored: &[u32], tuple: &[u32]) -> Option<i8> {
    if stored.len() != tuple.len() {
        return None;
    }
    let mut perm = Vec::with_capacity(tuple.len());
    for v in tuple {
        let pos = stored.iter().position(|s| s == v)?;
        if perm.contains(&pos) {
            return None;
        }
        perm.push(pos);
    }
    let mut inversions = 0;
    for i in 0..perm.len() {
        for j in i + 1..perm.len() {
            if perm[i] > perm[j] {
                inversions += 1;
            }
        }
    }
    Some(if inversions % 2 == 0 { 1 } else { -1 })
}

fn factorial(k: usize) -> u64 {
    (1..=k as u64).product::<u64>().max(1)
}

fn det_f64(m: &[Vec<f64>]) -> f64 {
    match m.len() {
        0 => 1.0,
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        n => {
            // Gaussian elimination with partial pivoting for the rare larger case.
            let mut a: Vec<Vec<f64>> = m.to_vec();
            let mut det = 1.0;
            for k in 0..n {
                let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
                if a[piv][k] == 0.0 {
                    return 0.0;
                }
                if piv != k {
                    a.swap(piv, k);
                    det = -det;
                }
                det *= a[k][k];
                for i in k + 1..n {
                    let f = a[i][k] / a[k][k];
                    for j in k..n {
                        a[i][j] -= f * a[k][j];
                    }
                }
            }
            det
        }
    }
}

fn det_rational(m: &[Vec<BigRational>]) -> BigRational {
    match m.len() {
        0 => BigRational::one(),
        1 => m[0][0].clone(),
        2 => &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0],
        3 => {
            &m[0][0] * (&m[1][1] * &m[2][2] - &m[1][2] * &m[2][1])
                - &m[0][1] * (&m[1][0] * &m[2][2] - &m[1][2] * &m[2][0])
                + &m[0][2] * (&m[1][0] * &m[2][1] - &m[1][1] * &m[2][0])
        }
        n => {
            let mut a: Vec<Vec<BigRational>> = m.to_vec();
            let mut det = BigRational::one();
            for k in 0..n {
                let Some(piv) = (k..n).find(|&i| !a[i][k].is_zero()) else {
                    return BigRational::zero();
                };
                if piv != k {
                    a.swap(piv, k);
                    det = -det;
                }
                det *= a[k][k].clone();
                for i in k + 1..n {
                    let f = &a[i][k] / &a[k][k];
                    for j in k..n {
                        let delta = &f * &a[k][j];
                        a[i][j] -= delta;
                    }
                }
            }
            det
        }
    }
}

/// Axis-aligned sampling grid: `counts[a]` cells along axis `a`, vertices at
/// `origin + i * spacing`. Fixes the deterministic id scheme shared by the
/// simplicial complex, the dual grid, and the sampled-field interpolator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridLayout {
    pub fn new(origin: Vec<f64>, spacing: Vec<f64>, counts: Vec<usize>) -> Result<Self, MeshError> {
        let layout = GridLayout { origin, spacing, counts };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let d = self.origin.len();
        if !(2..=3).contains(&d) {
            return Err(MeshError::UnsupportedDimension(d));
        }
        if self.spacing.len() != d || self.counts.len() != d {
            return Err(MeshError::InvalidCounts);
        }
        if let Some(&h) = self.spacing.iter().find(|&&h| !(h > 0.0) || !h.is_finite()) {
            return Err(MeshError::InvalidSpacing(h));
        }
        if self.counts.iter().any(|&c| c == 0) {
            return Err(MeshError::InvalidCounts);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.counts.iter().map(|&c| c + 1).product()
    }

    pub fn num_cubes(&self) -> usize {
        self.counts.iter().product()
    }

    /// Lattice-point id, x fastest.
    pub fn vertex_id(&self, idx: &[usize]) -> u32 {
        let mut id = 0;
        for a in (0..self.dim()).rev() {
            id = id * (self.counts[a] + 1) + idx[a];
        }
        id as u32
    }

    pub fn vertex_index(&self, id: u32) -> Vec<usize> {
        let mut rem = id as usize;
        let mut idx = vec![0; self.dim()];
        for a in 0..self.dim() {
            idx[a] = rem % (self.counts[a] + 1);
            rem /= self.counts[a] + 1;
        }
        idx
    }

    pub fn vertex_coord(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.origin)
            .zip(&self.spacing)
            .map(|((&i, &o), &h)| o + i as f64 * h)
            .collect()
    }

    /// Cube id, x fastest.
    pub fn cube_id(&self, idx: &[usize]) -> u32 {
        let mut id = 0;
        for a in (0..self.dim()).rev() {
            id = id * self.counts[a] + idx[a];
        }
        id as u32
    }

    pub fn cube_index(&self, id: u32) -> Vec<usize> {
        let mut rem = id as usize;
        let mut idx = vec![0; self.dim()];
        for a in 0..self.dim() {
            idx[a] = rem % self.counts[a];
            rem /= self.counts[a];
        }
        idx
    }

    pub fn cube_center(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.origin)
            .zip(&self.spacing)
            .map(|((&i, &o), &h)| o + (i as f64 + 0.5) * h)
            .collect()
    }

    pub fn simplices_per_cube(&self) -> usize {
        factorial(self.dim()) as usize
    }

    /// Axis permutations in lexicographic order; permutation `p` names the
    /// Kuhn simplex whose path steps along axes `p[0], p[1], ...`.
    pub fn permutations(&self) -> Vec<Vec<usize>> {
        let d = self.dim();
        let mut perms = vec![];
        let mut cur: Vec<usize> = (0..d).collect();
        loop {
            perms.push(cur.clone());
            // next_permutation in lex order
            let Some(i) = (0..d - 1).rev().find(|&i| cur[i] < cur[i + 1]) else { break };
            let j = (i + 1..d).rev().find(|&j| cur[j] > cur[i]).unwrap();
            cur.swap(i, j);
            cur[i + 1..].reverse();
        }
        perms
    }

    /// Top-cell id of the Kuhn simplex `perm_rank` inside cube `cube_idx`,
    /// matching the insertion order of `build_grid_complex`.
    pub fn simplex_id(&self, cube_idx: &[usize], perm_rank: usize) -> u32 {
        self.cube_id(cube_idx) * self.simplices_per_cube() as u32 + perm_rank as u32
    }

    /// Kuhn path vertices `w_0, w_0 + e_{p0}, ...` in path order (the order
    /// barycentric coordinates refer to).
    pub fn kuhn_path_vertices(&self, cube_idx: &[usize], perm: &[usize]) -> Vec<u32> {
        let mut idx = cube_idx.to_vec();
        let mut out = vec![self.vertex_id(&idx)];
        for &a in perm {
            idx[a] += 1;
            out.push(self.vertex_id(&idx));
        }
        out
    }

    /// Stored (positively oriented) tuple: path order, with the last two
    /// vertices swapped for odd permutations so the edge determinant is +.
    pub fn kuhn_stored_tuple(&self, cube_idx: &[usize], perm: &[usize]) -> Vec<u32> {
        let mut tuple = self.kuhn_path_vertices(cube_idx, perm);
        if perm_parity(perm) < 0 {
            let n = tuple.len();
            tuple.swap(n - 1, n - 2);
        }
        tuple
    }

    /// Locate the Kuhn simplex containing `x`: clamps into the box, returns
    /// (cube index, permutation rank). Points on shared faces resolve to the
    /// lexicographically first admissible permutation.
    pub fn locate(&self, x: &[f64]) -> (Vec<usize>, usize) {
        let d = self.dim();
        let mut cube = vec![0usize; d];
        let mut frac = vec![0.0f64; d];
        for a in 0..d {
            let t = (x[a] - self.origin[a]) / self.spacing[a];
            let i = (t.floor() as isize).clamp(0, self.counts[a] as isize - 1) as usize;
            cube[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        // Sort axes by descending fractional coordinate (stable: ties keep
        // axis order), giving the lexicographically least admissible perm.
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap());
        let rank = self.permutations().iter().position(|p| p == &order).unwrap();
        (cube, rank)
    }

    /// Barycentric coordinates of `x` in path order for the simplex returned
    /// by `locate` (nonnegative, sums to 1 when x lies in that simplex).
    pub fn barycentric(&self, x: &[f64], cube_idx: &[usize], perm: &[usize]) -> Vec<f64> {
        let d = self.dim();
        let mut frac = vec![0.0f64; d];
        for a in 0..d {
            let t = (x[a] - self.origin[a]) / self.spacing[a];
            frac[a] = (t - cube_idx[a] as f64).clamp(0.0, 1.0);
        }
        let s: Vec<f64> = perm.iter().map(|&a| frac[a]).collect();
        let mut bary = Vec::with_capacity(d + 1);
        bary.push(1.0 - s[0]);
        for j in 1..d {
            bary.push(s[j - 1] - s[j]);
        }
        bary.push(s[d - 1]);
        bary
    }
}

fn perm_parity(perm: &[usize]) -> i8 {
    let mut inversions = 0;
    for i in 0..perm.len() {
        for j in i + 1..perm.len() {
            if perm[i] > perm[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Triangulate the box described by `layout`: each square splits into 2
/// triangles, each cube into 6 tetrahedra (Kuhn subdivision), top cells
/// positively oriented, ids matching `GridLayout::simplex_id`.
pub fn build_grid_complex(layout: &GridLayout) -> Result<Complex, MeshError> {
    layout.validate()?;
    let d = layout.dim();
    let mut builder = ComplexBuilder::new(d);
    let n_verts = layout.num_vertices();
    for id in 0..n_verts as u32 {
        let idx = layout.vertex_index(id);
        builder.add_vertex(layout.vertex_coord(&idx))?;
    }
    let perms = layout.permutations();
    for cube_id in 0..layout.num_cubes() as u32 {
        let cube = layout.cube_index(cube_id);
        for perm in &perms {
            builder.add_cell(layout.kuhn_stored_tuple(&cube, perm))?;
        }
    }
    builder.build()
}

/// A primal (d-1)-cell of the cubical grid: perpendicular to `axis`, at
/// lattice `layer` along it (0..=counts[axis]), cube coordinates `transverse`
/// on the remaining axes in ascending axis order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FaceRef {
    pub axis: usize,
    pub layer: usize,
    pub transverse: Vec<usize>,
}

/// Cubical dual grid: dual vertices at cube centers (ids = cube ids) plus one
/// vertex per boundary face midpoint; dual edges cross the grid's (d-1)-faces,
/// oriented along the +axis direction. Materialized as a `Complex` so chains
/// (defect outputs, cobordisms, lift witnesses) can live on it.
#[derive(Debug, Clone)]
pub struct DualGrid {
    layout: GridLayout,
    complex: Arc<Complex>,
    /// dual edge id -> crossed primal face
    edge_face: Vec<FaceRef>,
    edge_boundary: Vec<bool>,
    /// number of axis-`a` dual edges preceding block `a`
    axis_offset: Vec<usize>,
    n_cubes: usize,
}

impl DualGrid {
    pub fn new(layout: GridLayout) -> Result<Self, MeshError> {
        layout.validate()?;
        let d = layout.dim();
        let n_cubes = layout.num_cubes();
        let mut builder = ComplexBuilder::new(d);
        for id in 0..n_cubes as u32 {
            let idx = layout.cube_index(id);
            builder.add_vertex(layout.cube_center(&idx))?;
        }
        // Enumerate faces axis-block by axis-block, layer slowest, transverse
        // lex within a layer; boundary faces get a midpoint vertex on demand.
        let mut edge_face = vec![];
        let mut edge_boundary = vec![];
        let mut axis_offset = vec![0usize; d + 1];
        let mut edges: Vec<Vec<u32>> = vec![];
        for a in 0..d {
            axis_offset[a] = edges.len();
            let t_axes: Vec<usize> = (0..d).filter(|&b| b != a).collect();
            let t_counts: Vec<usize> = t_axes.iter().map(|&b| layout.counts[b]).collect();
            let t_total: usize = t_counts.iter().product();
            for layer in 0..=layout.counts[a] {
                for t_lex in 0..t_total {
                    let mut t_idx = vec![0usize; t_axes.len()];
                    let mut rem = t_lex;
                    for (slot, &tc) in t_counts.iter().enumerate() {
                        t_idx[slot] = rem % tc;
                        rem /= tc;
                    }
                    let cube_at = |l: usize| -> u32 {
                        let mut c = vec![0usize; d];
                        c[a] = l;
                        for (slot, &b) in t_axes.iter().enumerate() {
                            c[b] = t_idx[slot];
                        }
                        layout.cube_id(&c)
                    };
                    let face_center = |layer: usize| -> Vec<f64> {
                        let mut x = vec![0.0; d];
                        for (slot, &b) in t_axes.iter().enumerate() {
                            x[b] = layout.origin[b] + (t_idx[slot] as f64 + 0.5) * layout.spacing[b];
                        }
                        x[a] = layout.origin[a] + layer as f64 * layout.spacing[a];
                        x
                    };
                    let tuple = if layer == 0 {
                        let v = builder.add_vertex(face_center(0))?;
                        vec![v, cube_at(0)]
                    } else if layer == layout.counts[a] {
                        let v = builder.add_vertex(face_center(layer))?;
                        vec![cube_at(layer - 1), v]
                    } else {
                        vec![cube_at(layer - 1), cube_at(layer)]
                    };
                    edges.push(tuple);
                    edge_face.push(FaceRef {
                        axis: a,
                        layer,
                        transverse: t_idx,
                    });
                    edge_boundary.push(layer == 0 || layer == layout.counts[a]);
                }
            }
        }
        axis_offset[d] = edges.len();
        for e in &edges {
            builder.add_cell(e.clone())?;
        }
        let complex = builder.build()?;
        debug_assert_eq!(complex.num_cells(1), edges.len());
        Ok(DualGrid {
            layout,
            complex: Arc::new(complex),
            edge_face,
            edge_boundary,
            axis_offset,
            n_cubes,
        })
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    /// The materialized 1-skeleton; dual vertex ids < num_cubes are cube
    /// centers, the rest boundary-face midpoints.
    pub fn complex(&self) -> &Arc<Complex> {
        &self.complex
    }

    pub fn num_cubes(&self) -> usize {
        self.n_cubes
    }

    pub fn num_dual_edges(&self) -> usize {
        self.edge_face.len()
    }

    pub fn is_center_vertex(&self, v: u32) -> bool {
        (v as usize) < self.n_cubes
    }

    /// Dual edge crossing the given primal face, oriented along +axis.
    pub fn edge_of_face(&self, face: &FaceRef) -> Option<u32> {
        let d = self.layout.dim();
        if face.axis >= d || face.layer > self.layout.counts[face.axis] {
            return None;
        }
        let t_axes: Vec<usize> = (0..d).filter(|&b| b != face.axis).collect();
        if face.transverse.len() != t_axes.len() {
            return None;
        }
        let mut t_lex = 0usize;
        let mut mul = 1usize;
        for (slot, &b) in t_axes.iter().enumerate() {
            if face.transverse[slot] >= self.layout.counts[b] {
                return None;
            }
            t_lex += face.transverse[slot] * mul;
            mul *= self.layout.counts[b];
        }
        let t_total: usize = t_axes.iter().map(|&b| self.layout.counts[b]).product();
        Some((self.axis_offset[face.axis] + face.layer * t_total + t_lex) as u32)
    }

    /// The primal face crossed by a dual edge.
    pub fn face_of_edge(&self, edge: u32) -> Option<&FaceRef> {
        self.edge_face.get(edge as usize)
    }

    pub fn is_boundary_edge(&self, edge: u32) -> bool {
        self.edge_boundary.get(edge as usize).copied().unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> GridLayout {
        GridLayout::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1, 1]).unwrap()
    }

    #[test]
    fn single_square_counts() {
        let cx = build_grid_complex(&unit_square()).unwrap();
        assert_eq!(cx.num_vertices(), 4);
        assert_eq!(cx.num_cells(0), 4);
        assert_eq!(cx.num_cells(1), 5);
        assert_eq!(cx.num_cells(2), 2);
    }

    #[test]
    fn grid_counts_formula() {
        let layout = GridLayout::new(vec![0.0, 0.0], vec![0.5, 0.5], vec![2, 2]).unwrap();
        let cx = build_grid_complex(&layout).unwrap();
        assert_eq!(cx.num_vertices(), 9);
        assert_eq!(cx.num_cells(2), 8);

        let layout3 =
            GridLayout::new(vec![0.0; 3], vec![1.0; 3], vec![1, 1, 1]).unwrap();
        let cx3 = build_grid_complex(&layout3).unwrap();
        assert_eq!(cx3.num_cells(3), 6);
        let total: f64 = (0..6).map(|i| cx3.volume(3, i).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edge_and_triangle_incidence_signs() {
        let mut b = ComplexBuilder::new(2);
        let v0 = b.add_vertex(vec![0.0, 0.0]).unwrap();
        let v1 = b.add_vertex(vec![1.0, 0.0]).unwrap();
        let v2 = b.add_vertex(vec![0.0, 1.0]).unwrap();
        b.add_cell(vec![v0, v1, v2]).unwrap();
        let cx = b.build().unwrap();
        // edge (v0,v1): facets [(v1,+1),(v0,-1)]
        let (eid, _) = cx.find_cell(1, &[v0, v1]).unwrap();
        let facets = cx.boundary_incidence(1, eid).unwrap();
        assert_eq!(facets, &[(v1, 1), (v0, -1)]);
        // triangle boundary signs follow the omit-i convention: +, -, +
        let (tid, _) = cx.find_cell(2, &[v0, v1, v2]).unwrap();
        let tri_facets = cx.boundary_incidence(2, tid).unwrap();
        let signs: Vec<i8> = tri_facets.iter().map(|&(_, s)| s).collect();
        // each facet is stored in its omitted order on first insertion
        assert_eq!(signs, vec![1, -1, 1]);
    }

    #[test]
    fn boundary_of_boundary_vanishes_incidence_level() {
        let layout = GridLayout::new(vec![0.0; 3], vec![1.0, 0.5, 2.0], vec![2, 2, 1]).unwrap();
        let cx = build_grid_complex(&layout).unwrap();
        for dim in 2..=3 {
            for id in 0..cx.num_cells(dim) as u32 {
                let mut net: HashMap<u32, i32> = HashMap::new();
                for &(f, s) in cx.boundary_incidence(dim, id).unwrap() {
                    for &(e, t) in cx.boundary_incidence(dim - 1, f).unwrap() {
                        *net.entry(e).or_insert(0) += s as i32 * t as i32;
                    }
                }
                assert!(net.values().all(|&v| v == 0), "dd != 0 on {dim}-cell {id}");
            }
        }
    }

    #[test]
    fn top_volume_sum_matches_box_exactly_in_rational_mode() {
        let layout =
            GridLayout::new(vec![-1.0, -1.0, 0.0], vec![0.3, 0.7, 0.11], vec![3, 2, 2]).unwrap();
        let mut cx = build_grid_complex(&layout).unwrap();
        cx.enable_exact_coords();
        let mut total = BigRational::zero();
        for id in 0..cx.num_cells(3) as u32 {
            total += cx.exact_top_volume(id).unwrap();
        }
        // Expected: product over axes of (last lattice coordinate - origin),
        // all exactly representable rationals of the stored f64 coords.
        let mut expected = BigRational::one();
        for a in 0..3 {
            let mut idx = vec![0; 3];
            idx[a] = layout.counts[a];
            let hi = BigRational::from_float(layout.vertex_coord(&idx)[a]).unwrap();
            let lo = BigRational::from_float(layout.origin[a]).unwrap();
            expected *= hi - lo;
        }
        assert_eq!(total, expected);
    }

    #[test]
    fn top_cells_positively_oriented() {
        let layout = GridLayout::new(vec![0.0; 3], vec![1.0, 2.0, 0.5], vec![2, 1, 2]).unwrap();
        let cx = build_grid_complex(&layout).unwrap();
        for id in 0..cx.num_cells(3) as u32 {
            assert_eq!(cx.top_orientation_sign(id).unwrap(), 1);
        }
    }

    #[test]
    fn locate_and_barycentric_reconstruct_point() {
        let layout = GridLayout::new(vec![-1.0, 0.0], vec![0.5, 0.25], vec![4, 8]).unwrap();
        let x = [0.37, 1.93];
        let (cube, rank) = layout.locate(&x);
        let perm = &layout.permutations()[rank];
        let verts = layout.kuhn_path_vertices(&cube, perm);
        let bary = layout.barycentric(&x, &cube, perm);
        assert!(bary.iter().all(|&l| l >= -1e-12));
        assert!((bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rec = vec![0.0; 2];
        for (&v, &l) in verts.iter().zip(&bary) {
            let c = layout.vertex_coord(&layout.vertex_index(v));
            rec[0] += l * c[0];
            rec[1] += l * c[1];
        }
        assert!((rec[0] - x[0]).abs() < 1e-12 && (rec[1] - x[1]).abs() < 1e-12);
    }

    #[test]
    fn dual_grid_faces_and_edges_are_inverse_bijections() {
        let layout = GridLayout::new(vec![0.0; 3], vec![1.0; 3], vec![2, 3, 2]).unwrap();
        let dual = DualGrid::new(layout.clone()).unwrap();
        // every face maps to an edge that maps back
        let mut seen = std::collections::HashSet::new();
        for a in 0..3 {
            let t_axes: Vec<usize> = (0..3).filter(|&b| b != a).collect();
            for layer in 0..=layout.counts[a] {
                let t0 = layout.counts[t_axes[0]];
                let t1 = layout.counts[t_axes[1]];
                for i in 0..t0 {
                    for j in 0..t1 {
                        let face = FaceRef { axis: a, layer, transverse: vec![i, j] };
                        let e = dual.edge_of_face(&face).unwrap();
                        assert_eq!(dual.face_of_edge(e), Some(&face));
                        assert!(seen.insert(e));
                        let expect_boundary = layer == 0 || layer == layout.counts[a];
                        assert_eq!(dual.is_boundary_edge(e), expect_boundary);
                    }
                }
            }
        }
        assert_eq!(seen.len(), dual.num_dual_edges());
    }

    #[test]
    fn dual_edge_lengths_full_and_half() {
        let layout = GridLayout::new(vec![0.0, 0.0], vec![0.5, 0.25], vec![2, 2]).unwrap();
        let dual = DualGrid::new(layout).unwrap();
        let cx = dual.complex();
        for e in 0..dual.num_dual_edges() as u32 {
            let face = dual.face_of_edge(e).unwrap();
            let h = dual.layout().spacing[face.axis];
            let want = if dual.is_boundary_edge(e) { h / 2.0 } else { h };
            assert!((cx.volume(1, e).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn complex_json_round_trip_preserves_ids() {
        let layout = GridLayout::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![2, 1]).unwrap();
        let cx = build_grid_complex(&layout).unwrap();
        let json = serde_json::to_string(&cx).unwrap();
        let back: Complex = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cx);
    }
}
