//! Chains with coefficients in a normed abelian group over a fixed background
//! complex: `S = sum_i alpha_i [cell_i]` as a sparse map, with boundary, mass
//! `M(S) = sum |alpha_i| vol(cell_i)`, restriction, support, and the
//! augmentation homomorphism on 0-chains.
//!
//! A cell referenced against its stored orientation is folded in canonically:
//! the coefficient is negated instead of tracking a second orientation, which
//! implements the identification `-[sigma] = [sigma reversed]`.

use crate::coeff::{CoefficientGroup, GroupElement, GroupError};
use crate::mesh::{Complex, MeshError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("chains live over different coefficient groups")]
    GroupMismatch,
    #[error("chains live on different complexes")]
    ComplexMismatch,
    #[error("expected dimension {want}, got {got}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("cell {id} does not exist in dimension {dim}")]
    UnknownCell { dim: usize, id: u32 },
    #[error("tuple {0:?} is not a cell of the complex")]
    UnknownTuple(Vec<u32>),
    #[error("boundary of a 0-chain is undefined")]
    ZeroDimBoundary,
    #[error("augmentation applies to 0-chains only (got dimension {0})")]
    NotZeroDimensional(usize),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Sparse chain over a complex. Immutable value: operations return new chains.
#[derive(Debug, Clone)]
pub struct Chain {
    complex: Arc<Complex>,
    group: CoefficientGroup,
    dim: usize,
    entries: BTreeMap<u32, GroupElement>,
}

impl PartialEq for Chain {
    fn eq(&self, other: &Self) -> bool {
        self.same_complex(other)
            && self.group == other.group
            && self.dim == other.dim
            && self.entries == other.entries
    }
}

impl Chain {
    pub fn zero(complex: Arc<Complex>, group: CoefficientGroup, dim: usize) -> Chain {
        Chain { complex, group, dim, entries: BTreeMap::new() }
    }

    /// Build from (cell id, coefficient) pairs; duplicates accumulate, zeros
    /// are dropped.
    pub fn from_entries(
        complex: Arc<Complex>,
        group: CoefficientGroup,
        dim: usize,
        entries: impl IntoIterator<Item = (u32, GroupElement)>,
    ) -> Result<Chain, ChainError> {
        let mut chain = Chain::zero(complex, group, dim);
        for (cell, g) in entries {
            chain.accumulate(cell, &g)?;
        }
        Ok(chain)
    }

    /// Build from (ordered vertex tuple, coefficient) pairs; tuples opposite
    /// to the stored orientation contribute with negated coefficient.
    pub fn from_tuples<'a>(
        complex: Arc<Complex>,
        group: CoefficientGroup,
        dim: usize,
        entries: impl IntoIterator<Item = (&'a [u32], GroupElement)>,
    ) -> Result<Chain, ChainError> {
        let mut chain = Chain::zero(complex.clone(), group, dim);
        for (tuple, g) in entries {
            let (id, sign) = complex
                .find_cell(dim, tuple)
                .ok_or_else(|| ChainError::UnknownTuple(tuple.to_vec()))?;
            let signed = if sign >= 0 { g } else { chain.group.neg(&g)? };
            chain.accumulate(id, &signed)?;
        }
        Ok(chain)
    }

    fn accumulate(&mut self, cell: u32, g: &GroupElement) -> Result<(), ChainError> {
        if cell as usize >= self.complex.num_cells(self.dim) {
            return Err(ChainError::UnknownCell { dim: self.dim, id: cell });
        }
        self.group.check(g)?;
        let current = self.entries.remove(&cell).unwrap_or_else(|| self.group.zero());
        let sum = self.group.add(&current, g)?;
        if !sum.is_zero() {
            self.entries.insert(cell, sum);
        }
        Ok(())
    }

    pub fn complex(&self) -> &Arc<Complex> {
        &self.complex
    }

    pub fn group(&self) -> &CoefficientGroup {
        &self.group
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_cells(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &GroupElement)> {
        self.entries.iter().map(|(&c, g)| (c, g))
    }

    pub fn coefficient(&self, cell: u32) -> GroupElement {
        self.entries.get(&cell).cloned().unwrap_or_else(|| self.group.zero())
    }

    fn same_complex(&self, other: &Chain) -> bool {
        Arc::ptr_eq(&self.complex, &other.complex) || *self.complex == *other.complex
    }

    fn compatible(&self, other: &Chain) -> Result<(), ChainError> {
        if !self.same_complex(other) {
            return Err(ChainError::ComplexMismatch);
        }
        if self.group != other.group {
            return Err(ChainError::GroupMismatch);
        }
        if self.dim != other.dim {
            return Err(ChainError::DimensionMismatch { want: self.dim, got: other.dim });
        }
        Ok(())
    }

    pub fn add(&self, other: &Chain) -> Result<Chain, ChainError> {
        self.compatible(other)?;
        let mut out = self.clone();
        for (cell, g) in &other.entries {
            out.accumulate(*cell, g)?;
        }
        Ok(out)
    }

    pub fn neg(&self) -> Chain {
        let entries = self
            .entries
            .iter()
            .map(|(&c, g)| (c, self.group.neg(g).expect("entry belongs to group")))
            .collect();
        Chain { complex: self.complex.clone(), group: self.group.clone(), dim: self.dim, entries }
    }

    pub fn sub(&self, other: &Chain) -> Result<Chain, ChainError> {
        self.add(&other.neg())
    }

    /// Integer multiple `k * S`.
    pub fn scale(&self, k: i64) -> Chain {
        let mut entries = BTreeMap::new();
        for (&c, g) in &self.entries {
            let kg = self.group.scale(k, g).expect("entry belongs to group");
            if !kg.is_zero() {
                entries.insert(c, kg);
            }
        }
        Chain { complex: self.complex.clone(), group: self.group.clone(), dim: self.dim, entries }
    }

    /// Boundary via the complex's incidence signs; `∂∘∂ = 0`.
    pub fn boundary(&self) -> Result<Chain, ChainError> {
        if self.dim == 0 {
            return Err(ChainError::ZeroDimBoundary);
        }
        let mut out =
            Chain::zero(self.complex.clone(), self.group.clone(), self.dim - 1);
        for (&cell, g) in &self.entries {
            for &(facet, sign) in self.complex.boundary_incidence(self.dim, cell)? {
                let signed = if sign >= 0 { g.clone() } else { self.group.neg(g)? };
                out.accumulate(facet, &signed)?;
            }
        }
        Ok(out)
    }

    /// Mass `M(S) = sum |alpha_i| vol(cell_i)` with the group's word-length
    /// norm. Fails only if a nonstandard generating set exceeds its search
    /// radius.
    pub fn mass(&self) -> Result<f64, ChainError> {
        let mut total = 0.0;
        for (&cell, g) in &self.entries {
            let norm = self.group.group_norm(g)? as f64;
            total += norm * self.complex.volume(self.dim, cell)?;
        }
        Ok(total)
    }

    /// Keep exactly the cells satisfying the predicate (restriction `S|_A`).
    pub fn restrict(&self, keep: impl Fn(u32) -> bool) -> Chain {
        let entries = self.entries.iter().filter(|(&c, _)| keep(c)).map(|(&c, g)| (c, g.clone())).collect();
        Chain { complex: self.complex.clone(), group: self.group.clone(), dim: self.dim, entries }
    }

    /// Closed support: carrier cells plus all their faces, as (dim, id) pairs.
    pub fn support(&self) -> BTreeSet<(usize, u32)> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<(usize, u32)> =
            self.entries.keys().map(|&c| (self.dim, c)).collect();
        while let Some((dim, cell)) = stack.pop() {
            if !out.insert((dim, cell)) || dim == 0 {
                continue;
            }
            for &(facet, _) in self.complex.boundary_incidence(dim, cell).expect("cell exists") {
                stack.push((dim - 1, facet));
            }
        }
        out
    }

    /// Augmentation `chi(sum g_j [x_j]) = sum g_j` on 0-chains; vanishes on
    /// boundaries.
    pub fn augmentation(&self) -> Result<GroupElement, ChainError> {
        if self.dim != 0 {
            return Err(ChainError::NotZeroDimensional(self.dim));
        }
        let mut total = self.group.zero();
        for g in self.entries.values() {
            total = self.group.add(&total, g)?;
        }
        Ok(total)
    }

    pub fn to_data(&self) -> ChainData {
        ChainData {
            dim: self.dim,
            cells: self.entries.iter().map(|(&c, g)| (c, g.clone())).collect(),
            group: self.group.clone(),
        }
    }

    pub fn from_data(complex: Arc<Complex>, data: ChainData) -> Result<Chain, ChainError> {
        Chain::from_entries(complex, data.group, data.dim, data.cells)
    }
}

/// Serialized form: `{"dim": n, "cells": [[cell_id, element], ...], "group": descriptor}`.
/// The background complex travels separately.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainData {
    pub dim: usize,
    pub cells: Vec<(u32, GroupElement)>,
    pub group: CoefficientGroup,
}

impl Serialize for Chain {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_data().serialize(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grid_complex, GridLayout};

    fn square_complex() -> Arc<Complex> {
        let layout = GridLayout::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1, 1]).unwrap();
        Arc::new(build_grid_complex(&layout).unwrap())
    }

    fn grid2(n: usize) -> Arc<Complex> {
        let layout =
            GridLayout::new(vec![0.0, 0.0], vec![1.0 / n as f64; 2], vec![n, n]).unwrap();
        Arc::new(build_grid_complex(&layout).unwrap())
    }

    #[test]
    fn triangle_boundary_is_its_oriented_edges() {
        let cx = square_complex();
        let z = CoefficientGroup::integers();
        let tuple = cx.cell_tuple(2, 0).unwrap().to_vec();
        let s = Chain::from_entries(cx.clone(), z.clone(), 2, [(0, z.scalar(1))]).unwrap();
        let b = s.boundary().unwrap();
        assert_eq!(b.num_cells(), 3);
        // omit-i convention: facet omitting v_i carries sign (-1)^i, read
        // against each edge's stored orientation
        for i in 0..3 {
            let e: Vec<u32> =
                (0..3).filter(|&j| j != i).map(|j| tuple[j]).collect();
            let (id, parity) = cx.find_cell(1, &e).unwrap();
            let omit_sign = if i % 2 == 0 { 1 } else { -1 };
            assert_eq!(b.coefficient(id), z.scalar((omit_sign * parity) as i64), "edge {e:?}");
        }
    }

    #[test]
    fn boundary_of_boundary_is_zero() {
        let cx = grid2(3);
        let g = CoefficientGroup::new(1, vec![3]).unwrap();
        let entries: Vec<(u32, GroupElement)> = (0..cx.num_cells(2) as u32)
            .map(|c| (c, g.element(vec![(c as i64 % 5) - 2], vec![c as i64]).unwrap()))
            .collect();
        let s = Chain::from_entries(cx, g, 2, entries).unwrap();
        assert!(s.boundary().unwrap().boundary().unwrap().is_zero());
    }

    #[test]
    fn mod2_adjacent_triangles_cancel_shared_edge() {
        let cx = square_complex();
        let z2 = CoefficientGroup::cyclic(2).unwrap();
        let s = Chain::from_entries(
            cx.clone(),
            z2.clone(),
            2,
            [(0, z2.scalar(1)), (1, z2.scalar(1))],
        )
        .unwrap();
        let b = s.boundary().unwrap();
        // four outer edges of the unit square remain; the diagonal cancels
        assert_eq!(b.num_cells(), 4);
        for (edge, _) in b.iter() {
            let t = cx.cell_tuple(1, edge).unwrap();
            let p = cx.vertex(t[0]);
            let q = cx.vertex(t[1]);
            let on_boundary = p[0] == q[0] && (p[0] == 0.0 || p[0] == 1.0)
                || p[1] == q[1] && (p[1] == 0.0 || p[1] == 1.0);
            assert!(on_boundary, "edge {t:?} should lie on the square boundary");
        }
    }

    #[test]
    fn mass_weights_norm_times_volume() {
        let cx = square_complex();
        let g = CoefficientGroup::new(1, vec![2]).unwrap();
        let coef = g.element(vec![1], vec![1]).unwrap(); // |.| = 2
        let s = Chain::from_entries(cx, g, 2, [(0, coef.clone()), (1, coef)]).unwrap();
        // two triangles of area 1/2, coefficient norm 2
        assert!((s.mass().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn restriction_partitions_mass_and_is_idempotent() {
        let cx = grid2(2);
        let z = CoefficientGroup::integers();
        let entries: Vec<(u32, GroupElement)> =
            (0..cx.num_cells(1) as u32).map(|c| (c, z.scalar(1 + c as i64 % 3))).collect();
        let s = Chain::from_entries(cx.clone(), z, 1, entries).unwrap();
        let keep = |c: u32| cx.centroid(1, c).unwrap()[0] > 0.5;
        let inside = s.restrict(keep);
        let outside = s.restrict(|c| !keep(c));
        assert!(
            (inside.mass().unwrap() + outside.mass().unwrap() - s.mass().unwrap()).abs() < 1e-12
        );
        assert_eq!(inside.restrict(keep), inside);
        assert_eq!(s.restrict(|_| true), s);
        assert!(s.restrict(|_| false).is_zero());
    }

    #[test]
    fn augmentation_sums_and_kills_boundaries() {
        let cx = grid2(2);
        let z = CoefficientGroup::integers();
        let p = Chain::from_entries(cx.clone(), z.clone(), 0, [(0, z.scalar(2)), (3, z.scalar(-5))])
            .unwrap();
        assert_eq!(p.augmentation().unwrap(), z.scalar(-3));
        let one = Chain::from_entries(
            cx.clone(),
            z.clone(),
            1,
            (0..cx.num_cells(1) as u32).map(|c| (c, z.scalar(c as i64 % 4 - 1))),
        )
        .unwrap();
        assert!(one.boundary().unwrap().augmentation().unwrap().is_zero());
        assert!(matches!(one.augmentation(), Err(ChainError::NotZeroDimensional(1))));
    }

    #[test]
    fn support_is_closed() {
        let cx = square_complex();
        let z = CoefficientGroup::integers();
        let s = Chain::from_entries(cx.clone(), z, 1, [(0, CoefficientGroup::integers().scalar(1))])
            .unwrap();
        let supp = s.support();
        let tuple = cx.cell_tuple(1, 0).unwrap();
        assert_eq!(supp.len(), 3);
        assert!(supp.contains(&(1, 0)));
        assert!(supp.contains(&(0, tuple[0])) && supp.contains(&(0, tuple[1])));
    }

    #[test]
    fn opposite_orientation_tuples_fold_with_negated_coefficient() {
        let cx = square_complex();
        let z = CoefficientGroup::integers();
        let stored = cx.cell_tuple(1, 0).unwrap().to_vec();
        let reversed = vec![stored[1], stored[0]];
        let s = Chain::from_tuples(
            cx.clone(),
            z.clone(),
            1,
            [(stored.as_slice(), z.scalar(3)), (reversed.as_slice(), z.scalar(1))],
        )
        .unwrap();
        assert_eq!(s.coefficient(0), z.scalar(2));
    }

    #[test]
    fn chain_json_round_trip() {
        let cx = grid2(2);
        let g = CoefficientGroup::new(0, vec![4]).unwrap();
        let s = Chain::from_entries(cx.clone(), g.clone(), 1, [(2, g.scalar(3)), (5, g.scalar(1))])
            .unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let data: ChainData = serde_json::from_str(&json).unwrap();
        let back = Chain::from_data(cx, data).unwrap();
        assert_eq!(back, s);
    }
}
