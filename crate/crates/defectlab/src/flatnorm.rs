//! Flat norm `F(S) = min { M(P) + M(Q) : S = dP + Q }` and its relative
//! variant `F_U` (costs charged only inside `U`, the defect `S - dP - Q`
//! allowed outside), optimized over the background complex.
//!
//! With the standard generating set the problem decouples into one scalar
//! problem per group factor. Free factors are solved by an in-repo revised
//! simplex (exact rationals on small instances, float64 with tolerance 1e-9
//! otherwise) whose rounded solution is certified against the LP bound;
//! 0-chains over Z additionally have an exact shortest-path/matching fast
//! path (the constraint matrix is a network matrix, so transport solutions
//! are optimal). Torsion factors go through branch-and-bound enumeration.
//! `flat_norm_oracle` is an independent brute-force verifier used to certify
//! the solver on desk-scale instances.

use crate::chain::{Chain, ChainError};
use crate::mesh::MeshError;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlatNormError {
    #[error("complex has no cells of dimension {0} to build P from")]
    MissingHigherCells(usize),
    #[error("flat norm needs the standard generating set (word norms must decouple per factor)")]
    NonstandardGenerators,
    #[error("oracle size cap exceeded: {0}")]
    SizeCapExceeded(String),
    #[error("LP did not converge: {0}")]
    Numerical(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// How trustworthy the reported value is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Exactness {
    /// Upper bound only; optimality not certified.
    #[serde(rename = "heuristic-upper-bound")]
    HeuristicUpperBound,
    /// Certified optimal via convex relaxation + integral rounding (or an
    /// exact combinatorial equivalent).
    #[serde(rename = "lp-relaxed")]
    LpRelaxed,
    /// Certified optimal by exhaustive enumeration.
    #[serde(rename = "oracle-verified")]
    OracleVerified,
}

/// Witness decomposition `S = dP + Q`; `value = M(P|U) + M(Q|U)`.
#[derive(Debug, Clone)]
pub struct FlatDecomposition {
    pub value: f64,
    pub p: Chain,
    pub q: Chain,
    pub exactness: Exactness,
}

/// Absolute flat norm: minimize `M(P) + M(Q)` over `S = dP + Q`.
pub fn flat_norm(s: &Chain) -> Result<FlatDecomposition, FlatNormError> {
    relative_flat_norm(s, |_, _| true)
}

/// Relative flat norm `F_U`: minimize `M(P|U) + M(Q|U)` subject to
/// `spt(S - dP - Q)` outside `U`. The returned witness keeps `S = dP + Q`
/// exact by absorbing the defect into `Q` outside `U`, where it is free.
pub fn relative_flat_norm(
    s: &Chain,
    in_u: impl Fn(usize, u32) -> bool,
) -> Result<FlatDecomposition, FlatNormError> {
    solve(s, &in_u, Mode::Main)
}

/// Independent brute-force verifier: exhaustive minimum over integer P with
/// per-cell coefficients bounded by `coefficient_bound` (free factors) or
/// ranging over the torsion order. Requires a desk-scale complex.
pub fn flat_norm_oracle(
    s: &Chain,
    coefficient_bound: i64,
) -> Result<FlatDecomposition, FlatNormError> {
    relative_flat_norm_oracle(s, coefficient_bound, |_, _| true)
}

pub fn relative_flat_norm_oracle(
    s: &Chain,
    coefficient_bound: i64,
    in_u: impl Fn(usize, u32) -> bool,
) -> Result<FlatDecomposition, FlatNormError> {
    let n = s.dim();
    let cx = s.complex();
    let total = cx.num_cells(n) + cx.num_cells(n + 1);
    if total > 14 {
        return Err(FlatNormError::SizeCapExceeded(format!(
            "{total} cells in dimensions {n} and {} (cap 14)",
            n + 1
        )));
    }
    solve(s, &in_u, Mode::Oracle { bound: coefficient_bound })
}

#[derive(Clone, Copy)]
enum Mode {
    Main,
    Oracle { bound: i64 },
}

/// One scalar factor of the coefficient group.
#[derive(Clone, Copy, Debug)]
enum Factor {
    Free(usize),
    Torsion { slot: usize, order: u32 },
}

struct FactorSolution {
    p: Vec<i64>,    // per (n+1)-cell
    value: f64,     // M(P|U) + M(Q|U) for this factor
    exactness: Exactness,
}

fn solve(
    s: &Chain,
    in_u: &dyn Fn(usize, u32) -> bool,
    mode: Mode,
) -> Result<FlatDecomposition, FlatNormError> {
    let n = s.dim();
    let cx = s.complex().clone();
    let group = s.group().clone();
    if !is_standard_group(&group) {
        return Err(FlatNormError::NonstandardGenerators);
    }
    let n_up = cx.num_cells(n + 1);
    if n_up == 0 && !s.is_zero() {
        return Err(FlatNormError::MissingHigherCells(n + 1));
    }

    // Shared geometry: costs (volumes zeroed outside U) and the sparse
    // boundary columns of the (n+1)-cells.
    let n_cells = cx.num_cells(n);
    let vol_n: Vec<f64> =
        (0..n_cells as u32).map(|e| cx.volume(n, e).unwrap()).collect();
    let vol_up: Vec<f64> =
        (0..n_up as u32).map(|c| cx.volume(n + 1, c).unwrap()).collect();
    let u_n: Vec<bool> = (0..n_cells as u32).map(|e| in_u(n, e)).collect();
    let u_up: Vec<bool> = (0..n_up as u32).map(|c| in_u(n + 1, c)).collect();
    let mut columns: Vec<Vec<(u32, i8)>> = Vec::with_capacity(n_up);
    for c in 0..n_up as u32 {
        columns.push(cx.boundary_incidence(n + 1, c)?.to_vec());
    }

    let mut factors = vec![];
    for i in 0..group.free_rank() {
        factors.push(Factor::Free(i));
    }
    for (j, &order) in group.torsion_orders().iter().enumerate() {
        factors.push(Factor::Torsion { slot: j, order });
    }

    let mut per_factor: Vec<(Factor, FactorSolution)> = vec![];
    for factor in factors {
        let sv = extract_factor(s, factor);
        if sv.is_empty() {
            // minimum 0 is attained by P = 0: every cost is nonnegative
            continue;
        }
        let problem = ScalarProblem {
            s: &sv,
            columns: &columns,
            vol_n: &vol_n,
            vol_up: &vol_up,
            u_n: &u_n,
            u_up: &u_up,
            torsion: match factor {
                Factor::Free(_) => None,
                Factor::Torsion { order, .. } => Some(order),
            },
        };
        let sol = match mode {
            Mode::Oracle { bound } => problem.enumerate(bound, ORACLE_ENUM_CAP)?,
            Mode::Main => problem.solve_main(s)?,
        };
        per_factor.push((factor, sol));
    }

    // Assemble the per-factor integer solutions into one P chain.
    let mut p_entries: BTreeMap<u32, (Vec<i64>, Vec<i64>)> = BTreeMap::new();
    let mut exactness = Exactness::OracleVerified;
    for (factor, sol) in &per_factor {
        exactness = exactness.min(sol.exactness);
        for (c, &v) in sol.p.iter().enumerate() {
            if v != 0 {
                let entry = p_entries.entry(c as u32).or_insert_with(|| {
                    (vec![0; group.free_rank()], vec![0; group.torsion_orders().len()])
                });
                match factor {
                    Factor::Free(i) => entry.0[*i] = v,
                    Factor::Torsion { slot, .. } => entry.1[*slot] = v,
                }
            }
        }
    }
    let p = Chain::from_entries(
        cx.clone(),
        group.clone(),
        n + 1,
        p_entries
            .into_iter()
            .map(|(c, (free, tor))| (c, group.element(free, tor).expect("shape"))),
    )?;
    let q = s.sub(&p.boundary()?)?;
    let value = p.restrict(|c| u_up[c as usize]).mass()?
        + q.restrict(|e| u_n[e as usize]).mass()?;
    Ok(FlatDecomposition { value, p, q, exactness })
}

fn is_standard_group(group: &crate::coeff::CoefficientGroup) -> bool {
    // standard generating set: one unit generator per factor
    let gens = group.generators();
    if gens.len() != group.free_rank() + group.torsion_orders().len() {
        return false;
    }
    gens.iter().all(|g| {
        let nf = g.free.iter().filter(|&&x| x != 0).count();
        let nt = g.torsion.iter().filter(|&&t| t != 0).count();
        nf + nt == 1
            && g.free.iter().all(|&x| x == 0 || x.abs() == 1)
            && g.torsion
                .iter()
                .zip(group.torsion_orders())
                .all(|(&t, &n)| t == 0 || t == 1 || t + 1 == n)
    })
}

fn extract_factor(s: &Chain, factor: Factor) -> BTreeMap<u32, i64> {
    let mut out = BTreeMap::new();
    for (cell, g) in s.iter() {
        let v = match factor {
            Factor::Free(i) => g.free[i],
            Factor::Torsion { slot, .. } => g.torsion[slot] as i64,
        };
        if v != 0 {
            out.insert(cell, v);
        }
    }
    out
}

/// Scalar (single-factor) flat-norm instance.
struct ScalarProblem<'a> {
    s: &'a BTreeMap<u32, i64>,
    columns: &'a [Vec<(u32, i8)>],
    vol_n: &'a [f64],
    vol_up: &'a [f64],
    u_n: &'a [bool],
    u_up: &'a [bool],
    /// None = free factor (Z); Some(n) = torsion factor (Z/n).
    torsion: Option<u32>,
}

const LP_MAX_ROWS: usize = 1500;
const RATIONAL_LP_MAX_SIZE: usize = 30_000; // rows * columns
const ENUM_CAP: usize = 4_000_000;
const ORACLE_ENUM_CAP: usize = 20_000_000;
const MATCHING_EXPAND_CAP: usize = 64;
const DP_MATCH_CAP: usize = 12;

impl ScalarProblem<'_> {
    fn scalar_norm(&self, v: i64) -> i64 {
        match self.torsion {
            None => v.abs(),
            Some(n) => {
                let t = v.rem_euclid(n as i64);
                t.min(n as i64 - t)
            }
        }
    }

    fn residual(&self, p: &[i64]) -> BTreeMap<u32, i64> {
        let mut q: BTreeMap<u32, i64> = self.s.clone();
        for (c, &v) in p.iter().enumerate() {
            if v == 0 {
                continue;
            }
            for &(e, sign) in &self.columns[c] {
                *q.entry(e).or_insert(0) -= sign as i64 * v;
            }
        }
        q.retain(|_, v| self.scalar_norm(*v) != 0);
        q
    }

    fn cost(&self, p: &[i64]) -> f64 {
        let mut total = 0.0;
        for (c, &v) in p.iter().enumerate() {
            if self.u_up[c] {
                total += self.scalar_norm(v) as f64 * self.vol_up[c];
            }
        }
        for (&e, &v) in &self.residual(p) {
            if self.u_n[e as usize] {
                total += self.scalar_norm(v) as f64 * self.vol_n[e as usize];
            }
        }
        total
    }

    fn solve_main(&self, s_chain: &Chain) -> Result<FactorSolution, FlatNormError> {
        if let Some(order) = self.torsion {
            return self.solve_torsion(order);
        }
        // 0-chains over Z: exact transport fast path whenever the unit count
        // admits the exact matching DP (optimal and much cheaper than the
        // dense LP), and unconditionally when the LP would be too big.
        let rows = self.u_n.iter().filter(|&&b| b).count();
        if s_chain.dim() == 0 {
            let (np, nn) = self.s.values().fold((0usize, 0usize), |(p, n), &v| {
                if v > 0 {
                    (p + v as usize, n)
                } else {
                    (p, n + (-v) as usize)
                }
            });
            let dp_exact = np.min(nn) <= DP_MATCH_CAP && np <= 20 && nn <= 20;
            if dp_exact || rows > LP_MAX_ROWS {
                return self.solve_transport(s_chain);
            }
        }
        if rows > LP_MAX_ROWS {
            // Too big for the dense LP: certified-upper-bound fallback Q = S.
            return Ok(FactorSolution {
                p: vec![0; self.columns.len()],
                value: self.cost(&vec![0; self.columns.len()]),
                exactness: Exactness::HeuristicUpperBound,
            });
        }
        self.solve_lp()
    }

    /// LP relaxation with split variables, solved by revised simplex; the
    /// rounded solution is certified against the LP bound.
    fn solve_lp(&self) -> Result<FactorSolution, FlatNormError> {
        let row_cells: Vec<u32> = (0..self.u_n.len() as u32)
            .filter(|&e| self.u_n[e as usize])
            .collect();
        let m = row_cells.len();
        let row_of: HashMap<u32, usize> =
            row_cells.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let n_up = self.columns.len();
        // columns: p+ (n_up), p- (n_up), r+ (m), r- (m)
        let n_vars = 2 * n_up + 2 * m;
        let mut cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n_vars);
        let mut costs: Vec<f64> = Vec::with_capacity(n_vars);
        for pass in 0..2 {
            let sgn = if pass == 0 { 1.0 } else { -1.0 };
            for c in 0..n_up {
                let col: Vec<(usize, f64)> = self.columns[c]
                    .iter()
                    .filter_map(|&(e, s)| row_of.get(&e).map(|&i| (i, sgn * s as f64)))
                    .collect();
                cols.push(col);
                costs.push(if self.u_up[c] { self.vol_up[c] } else { 0.0 });
            }
        }
        for pass in 0..2 {
            let sgn = if pass == 0 { 1.0 } else { -1.0 };
            for (i, &e) in row_cells.iter().enumerate() {
                cols.push(vec![(i, sgn)]);
                costs.push(self.vol_n[e as usize]);
            }
        }
        let b: Vec<f64> =
            row_cells.iter().map(|&e| *self.s.get(&e).unwrap_or(&0) as f64).collect();
        // start basis: r+ for nonnegative rows, r- otherwise (identity)
        let basis: Vec<usize> = (0..m)
            .map(|i| if b[i] >= 0.0 { 2 * n_up + i } else { 2 * n_up + m + i })
            .collect();

        let lp_value = if m * n_vars <= RATIONAL_LP_MAX_SIZE {
            let cols_q: Vec<Vec<(usize, BigRational)>> = cols
                .iter()
                .map(|col| col.iter().map(|&(i, v)| (i, rat(v))).collect())
                .collect();
            let costs_q: Vec<BigRational> = costs.iter().map(|&v| rat(v)).collect();
            let b_q: Vec<BigRational> = b.iter().map(|&v| rat(v)).collect();
            let sol = simplex(&cols_q, &costs_q, &b_q, basis.clone())
                .map_err(FlatNormError::Numerical)?;
            rat_to_f64(&sol.value)
        } else {
            let sol =
                simplex(&cols, &costs, &b, basis.clone()).map_err(FlatNormError::Numerical)?;
            sol.value
        };

        // Re-solve in f64 to read off the primal point for rounding (cheap,
        // and exact enough: certification is by value comparison).
        let sol = simplex(&cols, &costs, &b, basis).map_err(FlatNormError::Numerical)?;
        let mut p = vec![0i64; n_up];
        for c in 0..n_up {
            let v = sol.x[c] - sol.x[n_up + c];
            p[c] = v.round() as i64;
        }
        let rounded = self.cost(&p);
        if rounded <= lp_value + 1e-9 + 1e-7 * lp_value.abs() {
            return Ok(FactorSolution { p, value: rounded, exactness: Exactness::LpRelaxed });
        }
        // Rounding failed: keep the best upper bound we can prove, trying a
        // bounded enumeration first.
        let bound = p.iter().map(|v| v.abs()).max().unwrap_or(0).max(2);
        if let Ok(exact) = self.enumerate(bound, ENUM_CAP) {
            // enumeration is exhaustive within the bound; certified iff it
            // meets the LP bound
            let flag = if exact.value <= lp_value + 1e-9 + 1e-7 * lp_value.abs() {
                Exactness::LpRelaxed
            } else {
                Exactness::HeuristicUpperBound
            };
            return Ok(FactorSolution { exactness: flag, ..exact });
        }
        let zero = vec![0i64; n_up];
        let (best_p, best_val) = if rounded < self.cost(&zero) {
            (p, rounded)
        } else {
            let v = self.cost(&zero);
            (zero, v)
        };
        Ok(FactorSolution { p: best_p, value: best_val, exactness: Exactness::HeuristicUpperBound })
    }

    fn solve_torsion(&self, order: u32) -> Result<FactorSolution, FlatNormError> {
        let n_up = self.columns.len();
        let combos = (order as f64).powi(n_up.min(64) as i32);
        if combos <= ENUM_CAP as f64 {
            return self.enumerate(order as i64 - 1, ENUM_CAP);
        }
        // Greedy descent: flip one cell at a time while it improves.
        let mut p = vec![0i64; n_up];
        let mut best = self.cost(&p);
        let mut improved = true;
        while improved {
            improved = false;
            for c in 0..n_up {
                let keep = p[c];
                for v in 0..order as i64 {
                    if v == keep {
                        continue;
                    }
                    p[c] = v;
                    let cost = self.cost(&p);
                    if cost + 1e-12 < best {
                        best = cost;
                        improved = true;
                    } else {
                        p[c] = keep;
                    }
                }
            }
        }
        Ok(FactorSolution { p, value: best, exactness: Exactness::HeuristicUpperBound })
    }

    /// Exhaustive DFS over integer P in the box, pruning on accumulated cost.
    fn enumerate(&self, bound: i64, cap: usize) -> Result<FactorSolution, FlatNormError> {
        let n_up = self.columns.len();
        let radius = match self.torsion {
            None => 2 * bound + 1,
            Some(n) => (n as i64).min(bound + 1),
        } as f64;
        if radius.powi(n_up.min(64) as i32) > cap as f64 && n_up > 0 {
            return Err(FlatNormError::SizeCapExceeded(format!(
                "{radius}^{n_up} candidate P chains"
            )));
        }
        let mut best_p = vec![0i64; n_up];
        let mut best = self.cost(&best_p);
        let mut p = vec![0i64; n_up];
        self.enumerate_rec(0, 0.0, &mut p, &mut best, &mut best_p, bound);
        Ok(FactorSolution { p: best_p, value: best, exactness: Exactness::OracleVerified })
    }

    fn enumerate_rec(
        &self,
        c: usize,
        p_cost: f64,
        p: &mut Vec<i64>,
        best: &mut f64,
        best_p: &mut Vec<i64>,
        bound: i64,
    ) {
        if p_cost >= *best {
            return; // Q cost is nonnegative
        }
        if c == p.len() {
            let total = self.cost(p);
            if total < *best {
                *best = total;
                best_p.clone_from(p);
            }
            return;
        }
        let values: Vec<i64> = match self.torsion {
            None => (-bound..=bound).collect(),
            Some(n) => (0..(n as i64).min(bound + 1)).collect(),
        };
        for v in values {
            p[c] = v;
            let dc = if self.u_up[c] {
                self.scalar_norm(v) as f64 * self.vol_up[c]
            } else {
                0.0
            };
            self.enumerate_rec(c + 1, p_cost + dc, p, best, best_p, bound);
        }
        p[c] = 0;
    }

    /// Exact transport solution for 0-chains over Z: each positive unit is
    /// matched to a negative unit along a cheapest edge path, or absorbed at
    /// the cost of its own mass (cheapest over reachable drop points); the
    /// constraint matrix is a network matrix, so such solutions are optimal.
    fn solve_transport(&self, s_chain: &Chain) -> Result<FactorSolution, FlatNormError> {
        let cx = s_chain.complex();
        let n_vert = self.u_n.len();
        // adjacency from 1-cells
        let mut adj: Vec<Vec<(u32, usize, f64, i8)>> = vec![vec![]; n_vert];
        for c in 0..self.columns.len() {
            let t = cx.cell_tuple(1, c as u32)?;
            let (a, b) = (t[0] as usize, t[1] as usize);
            let w = if self.u_up[c] { self.vol_up[c] } else { 0.0 };
            // walking a -> b uses +edge, b -> a uses -edge
            adj[a].push((c as u32, b, w, 1));
            adj[b].push((c as u32, a, w, -1));
        }
        let mut pos = vec![];
        let mut neg = vec![];
        for (&e, &v) in self.s {
            for _ in 0..v.unsigned_abs() {
                if v > 0 {
                    pos.push(e as usize);
                } else {
                    neg.push(e as usize);
                }
            }
        }
        if pos.len() + neg.len() > MATCHING_EXPAND_CAP {
            return Ok(FactorSolution {
                p: vec![0; self.columns.len()],
                value: self.cost(&vec![0; self.columns.len()]),
                exactness: Exactness::HeuristicUpperBound,
            });
        }
        // Dijkstra from every unit location (both signs share sources).
        let mut sources: Vec<usize> = pos.clone();
        sources.extend(&neg);
        sources.sort_unstable();
        sources.dedup();
        let mut dist_map: HashMap<usize, (Vec<f64>, Vec<Option<(u32, i8, usize)>>)> =
            HashMap::new();
        for &src in &sources {
            dist_map.insert(src, dijkstra(&adj, src, n_vert));
        }
        let drop_cost = |v: usize| if self.u_n[v] { self.vol_n[v] } else { 0.0 };
        // absorb(unit at u) = min over w of d(u, w) + drop(w)
        let absorb = |u: usize| -> (f64, usize) {
            let (d, _) = &dist_map[&u];
            let mut best = (drop_cost(u), u);
            for w in 0..n_vert {
                if d[w].is_finite() {
                    let c = d[w] + drop_cost(w);
                    if c < best.0 - 1e-15 {
                        best = (c, w);
                    }
                }
            }
            best
        };
        let pair_cost = |i: usize, j: usize| -> f64 { dist_map[&pos[i]].0[neg[j]] };

        // Assignment: match or absorb. Exact subset DP over the smaller side
        // when feasible, greedy otherwise.
        let absorb_pos: Vec<(f64, usize)> = pos.iter().map(|&u| absorb(u)).collect();
        let absorb_neg: Vec<(f64, usize)> = neg.iter().map(|&u| absorb(u)).collect();
        let (assignment, exact) = assign_units(
            pos.len(),
            neg.len(),
            &|i, j| pair_cost(i, j),
            &absorb_pos.iter().map(|&(c, _)| c).collect::<Vec<_>>(),
            &absorb_neg.iter().map(|&(c, _)| c).collect::<Vec<_>>(),
        );

        // Materialize P from the chosen paths.
        let mut p = vec![0i64; self.columns.len()];
        let mut walk = |from: usize, to: usize, flip: i64| {
            // path from `from` to `to` using predecessor data of `from`
            let (_, pred) = &dist_map[&from];
            let mut cur = to;
            while cur != from {
                let (edge, dir, prev) = pred[cur].expect("reached node has predecessor");
                // pred stores the step prev -> cur with sign dir
                p[edge as usize] += dir as i64 * flip;
                cur = prev;
            }
        };
        for (i, a) in assignment.iter().enumerate() {
            match *a {
                Assign::Pair(j) => {
                    // dP must be +1 at pos[i], -1 at neg[j]: path neg -> pos
                    // equals reversed path pos -> neg computed from pos side.
                    walk(pos[i], neg[j], -1);
                }
                Assign::Absorb => {
                    let (_, w) = absorb_pos[i];
                    if w != pos[i] {
                        // move the unit to the cheap drop point w
                        walk(pos[i], w, -1);
                    }
                }
            }
        }
        // negative units: those not matched get absorbed
        let matched: std::collections::HashSet<usize> = assignment
            .iter()
            .filter_map(|a| match a {
                Assign::Pair(j) => Some(*j),
                Assign::Absorb => None,
            })
            .collect();
        for j in 0..neg.len() {
            if !matched.contains(&j) {
                let (_, w) = absorb_neg[j];
                if w != neg[j] {
                    walk(neg[j], w, 1);
                }
            }
        }
        let value = self.cost(&p);
        let _ = exact;
        Ok(FactorSolution {
            p,
            value,
            exactness: if exact { Exactness::LpRelaxed } else { Exactness::HeuristicUpperBound },
        })
    }
}

enum Assign {
    Pair(usize),
    Absorb,
}

/// Choose, for each positive unit, a matching negative unit or absorption,
/// minimizing total cost (every unmatched negative unit pays its own absorb
/// cost). Exact bitmask DP when min(side) <= DP_MATCH_CAP.
fn assign_units(
    np: usize,
    nn: usize,
    pair: &dyn Fn(usize, usize) -> f64,
    absorb_p: &[f64],
    absorb_n: &[f64],
) -> (Vec<Assign>, bool) {
    if np.min(nn) <= DP_MATCH_CAP && nn <= 20 && np <= 20 {
        // DP over subsets of negative units, positives processed in order.
        // state: (i, mask) -> min cost for positives i.. with negatives in
        // mask still available; unmatched negatives in mask pay absorb at the
        // end.
        let full: usize = (1usize << nn) - 1;
        let tail_absorb: Vec<f64> = {
            // absorb cost of a mask = sum of absorb_n over set bits
            let mut t = vec![0.0; full + 1];
            for mask in 1..=full {
                let b = mask.trailing_zeros() as usize;
                t[mask] = t[mask & (mask - 1)] + absorb_n[b];
            }
            t
        };
        let mut memo: Vec<Vec<f64>> = vec![vec![f64::INFINITY; full + 1]; np + 1];
        let mut choice: Vec<Vec<i32>> = vec![vec![-2; full + 1]; np + 1];
        for mask in 0..=full {
            memo[np][mask] = tail_absorb[mask];
        }
        for i in (0..np).rev() {
            for mask in 0..=full {
                // absorb positive i
                let mut best = absorb_p[i] + memo[i + 1][mask];
                let mut ch = -1i32; // -1 = absorb
                for j in 0..nn {
                    if mask & (1 << j) != 0 {
                        let c = pair(i, j) + memo[i + 1][mask & !(1 << j)];
                        if c < best - 1e-15 {
                            best = c;
                            ch = j as i32;
                        }
                    }
                }
                memo[i][mask] = best;
                choice[i][mask] = ch;
            }
        }
        let mut out = vec![];
        let mut mask = full;
        for i in 0..np {
            match choice[i][mask] {
                -1 => out.push(Assign::Absorb),
                j => {
                    out.push(Assign::Pair(j as usize));
                    mask &= !(1 << j);
                }
            }
        }
        (out, true)
    } else {
        // greedy: repeatedly take the globally cheapest pairing that beats
        // absorbing both sides
        let mut out: Vec<Assign> = (0..np).map(|_| Assign::Absorb).collect();
        let mut used_n = vec![false; nn];
        let mut used_p = vec![false; np];
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..np {
                if used_p[i] {
                    continue;
                }
                for j in 0..nn {
                    if used_n[j] {
                        continue;
                    }
                    let gain = absorb_p[i] + absorb_n[j] - pair(i, j);
                    if gain > 1e-15 && best.map_or(true, |(g, _, _)| gain > g) {
                        best = Some((gain, i, j));
                    }
                }
            }
            let Some((_, i, j)) = best else { break };
            out[i] = Assign::Pair(j);
            used_p[i] = true;
            used_n[j] = true;
        }
        (out, false)
    }
}

/// Dijkstra over the edge graph; returns distances and predecessor steps
/// (edge id, +-1 for traversal direction, previous vertex).
fn dijkstra(
    adj: &[Vec<(u32, usize, f64, i8)>],
    src: usize,
    n: usize,
) -> (Vec<f64>, Vec<Option<(u32, i8, usize)>>) {
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<(u32, i8, usize)>> = vec![None; n];
    dist[src] = 0.0;
    let mut heap: BinaryHeap<(std::cmp::Reverse<OrdF64>, usize)> = BinaryHeap::new();
    heap.push((std::cmp::Reverse(OrdF64(0.0)), src));
    while let Some((std::cmp::Reverse(d), v)) = heap.pop() {
        if d.0 > dist[v] + 1e-15 {
            continue;
        }
        for &(edge, w, cost, dir) in &adj[v] {
            let nd = dist[v] + cost;
            if nd + 1e-15 < dist[w] {
                dist[w] = nd;
                pred[w] = Some((edge, dir, v));
                heap.push((std::cmp::Reverse(OrdF64(nd)), w));
            }
        }
    }
    (dist, pred)
}

#[derive(PartialEq, PartialOrd)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn rat(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

fn rat_to_f64(v: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    v.to_f64().unwrap_or_else(|| {
        bigint_f64(v.numer()) / bigint_f64(v.denom())
    })
}

fn bigint_f64(v: &BigInt) -> f64 {
    use num_traits::ToPrimitive;
    v.to_f64().unwrap_or(f64::INFINITY)
}

/// Minimal numeric abstraction so one simplex implementation serves both the
/// exact-rational and float64 paths.
trait LpNum: Clone + PartialOrd {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_neg_tol(&self) -> bool;
    fn is_pos_tol(&self) -> bool;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
}

impl LpNum for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_neg_tol(&self) -> bool {
        *self < -1e-9
    }
    fn is_pos_tol(&self) -> bool {
        *self > 1e-9
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
}

impl LpNum for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn is_neg_tol(&self) -> bool {
        self.is_negative()
    }
    fn is_pos_tol(&self) -> bool {
        self.is_positive()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
}

struct LpSolution<T> {
    value: T,
    x: Vec<T>,
}

/// Revised simplex, Bland's rule, explicit basis inverse. `cols` are sparse
/// constraint columns of Ax = b, x >= 0; `basis` must be a feasible starting
/// basis (the callers pass the signed-slack identity).
fn simplex<T: LpNum>(
    cols: &[Vec<(usize, T)>],
    costs: &[T],
    b: &[T],
    mut basis: Vec<usize>,
) -> Result<LpSolution<T>, String> {
    let m = b.len();
    let n = cols.len();
    if m == 0 {
        return Ok(LpSolution { value: T::zero(), x: vec![T::zero(); n] });
    }
    // basis inverse, initialized from the (diagonal, +-1) starting basis
    let mut binv: Vec<Vec<T>> = vec![vec![T::zero(); m]; m];
    for (i, &bi) in basis.iter().enumerate() {
        let d = &cols[bi];
        assert!(d.len() == 1 && d[0].0 == i, "starting basis must be signed identity");
        binv[i][i] = T::one().div(&d[0].1);
    }
    let mut xb: Vec<T> = (0..m)
        .map(|i| (0..m).fold(T::zero(), |acc, j| acc.add(&binv[i][j].mul(&b[j]))))
        .collect();
    let max_iter = 50 * (n + m) + 1000;
    for _ in 0..max_iter {
        // duals y = c_B^T Binv
        let mut y = vec![T::zero(); m];
        for i in 0..m {
            for j in 0..m {
                y[j] = y[j].add(&costs[basis[i]].mul(&binv[i][j]));
            }
        }
        // entering: smallest index with negative reduced cost (Bland)
        let mut entering = None;
        'scan: for j in 0..n {
            if basis.contains(&j) {
                continue;
            }
            let mut rc = costs[j].clone();
            for &(i, ref v) in &cols[j] {
                rc = rc.sub(&y[i].mul(v));
            }
            if rc.is_neg_tol() {
                entering = Some(j);
                break 'scan;
            }
        }
        let Some(j) = entering else {
            let mut x = vec![T::zero(); n];
            let mut value = T::zero();
            for (i, &bi) in basis.iter().enumerate() {
                x[bi] = xb[i].clone();
                value = value.add(&costs[bi].mul(&xb[i]));
            }
            return Ok(LpSolution { value, x });
        };
        // direction d = Binv * A_j
        let mut d = vec![T::zero(); m];
        for &(i, ref v) in &cols[j] {
            for r in 0..m {
                d[r] = d[r].add(&binv[r][i].mul(v));
            }
        }
        // ratio test, Bland tie-break on smallest basis variable index
        let mut leave: Option<(usize, T)> = None;
        for r in 0..m {
            if d[r].is_pos_tol() {
                let ratio = xb[r].div(&d[r]);
                let replace = match &leave {
                    None => true,
                    Some((lr, lratio)) => {
                        ratio < *lratio
                            || (!(ratio > *lratio) && basis[r] < basis[*lr])
                    }
                };
                if replace {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((r, _)) = leave else {
            return Err("LP unbounded direction encountered".to_string());
        };
        // pivot: row r scaled, others eliminated
        let piv = d[r].clone();
        for k in 0..m {
            binv[r][k] = binv[r][k].div(&piv);
        }
        xb[r] = xb[r].div(&piv);
        for i in 0..m {
            if i != r && (d[i].is_pos_tol() || d[i].is_neg_tol()) {
                for k in 0..m {
                    let delta = d[i].mul(&binv[r][k]);
                    binv[i][k] = binv[i][k].sub(&delta);
                }
                let delta = d[i].mul(&xb[r]);
                xb[i] = xb[i].sub(&delta);
            }
        }
        basis[r] = j;
    }
    Err("simplex iteration cap exceeded".to_string())
}
