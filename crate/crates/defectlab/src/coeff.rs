//! Finitely generated abelian coefficient groups `Z^r x Z/n_1 x ... x Z/n_s`
//! with a declared generating set and the word-length norm
//! `|g| = min { sum |d_j| : g = sum d_j gamma_j }`.
//!
//! The norm is what turns chains into a normed space: mass weights every cell
//! coefficient by `|g|`, and the discreteness property `|g| >= 1` for `g != 0`
//! is what makes flat-norm arguments about multiplicity counting work.

use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::{HashMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("torsion orders must be >= 2 (got {0})")]
    BadTorsionOrder(u32),
    #[error("element shape does not match group descriptor: {0}")]
    Mismatch(String),
    #[error("declared generators do not generate the group")]
    NotGenerating,
    #[error("word-length search exceeded radius {0}; nonstandard generating set too wide")]
    NormRadiusExceeded(u32),
    #[error("generating set is empty but the group is nontrivial")]
    EmptyGenerators,
}

/// Element of a fixed coefficient group. Torsion residues are kept reduced
/// into `[0, n_i)`; equality is component-wise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupElement {
    pub free: Vec<i64>,
    pub torsion: Vec<u32>,
}

impl GroupElement {
    pub fn is_zero(&self) -> bool {
        self.free.iter().all(|&x| x == 0) && self.torsion.iter().all(|&t| t == 0)
    }
}

/// Radius cap for the Cayley-graph search with nonstandard generating sets.
pub const NORM_SEARCH_RADIUS: u32 = 64;

/// Descriptor of `Z^free_rank x Z/n_1 x ... x Z/n_s` together with a
/// generating set. Value object: two groups are interchangeable only if all
/// fields (including generators) agree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientGroup {
    free_rank: usize,
    torsion_orders: Vec<u32>,
    generators: Vec<GroupElement>,
    /// Generators are the standard basis up to order and sign, so the norm
    /// has the closed form `l1(free) + sum min(t, n - t)`.
    standard: bool,
}

impl CoefficientGroup {
    /// Group with the standard generating set (unit vectors in each factor).
    pub fn new(free_rank: usize, torsion_orders: Vec<u32>) -> Result<Self, GroupError> {
        if let Some(&n) = torsion_orders.iter().find(|&&n| n < 2) {
            return Err(GroupError::BadTorsionOrder(n));
        }
        let generators = standard_basis(free_rank, &torsion_orders);
        Ok(CoefficientGroup { free_rank, torsion_orders, generators, standard: true })
    }

    /// The integers `Z` with generator 1. Coefficient group of `pi_1(S^1)`
    /// and `pi_{k-1}(S^{k-1})`.
    pub fn integers() -> Self {
        Self::new(1, vec![]).expect("Z is valid")
    }

    /// `Z/n` with generator 1. `Z/2` is the coefficient group of `pi_1(RP^2)`.
    pub fn cyclic(n: u32) -> Result<Self, GroupError> {
        Self::new(0, vec![n])
    }

    /// Group with an explicit generating set. Generation is verified exactly:
    /// the free parts must form a basis of `Z^r` (unimodular Hermite form) and
    /// the torsion parts of the free-relation lattice must close the torsion
    /// factor under addition.
    pub fn with_generators(
        free_rank: usize,
        torsion_orders: Vec<u32>,
        generators: Vec<GroupElement>,
    ) -> Result<Self, GroupError> {
        if let Some(&n) = torsion_orders.iter().find(|&&n| n < 2) {
            return Err(GroupError::BadTorsionOrder(n));
        }
        let mut group = CoefficientGroup {
            free_rank,
            torsion_orders,
            generators: vec![],
            standard: false,
        };
        if generators.is_empty() && !(free_rank == 0 && group.torsion_orders.is_empty()) {
            return Err(GroupError::EmptyGenerators);
        }
        let generators: Vec<GroupElement> = generators
            .into_iter()
            .map(|g| {
                if g.free.len() != free_rank || g.torsion.len() != group.torsion_orders.len() {
                    return Err(GroupError::Mismatch("generator shape".into()));
                }
                Ok(group.reduce(g))
            })
            .collect::<Result<_, GroupError>>()?;
        if !group.generates(&generators) {
            return Err(GroupError::NotGenerating);
        }
        group.standard = is_standard_up_to_sign_and_order(free_rank, &group.torsion_orders, &generators);
        group.generators = generators;
        Ok(group)
    }

    pub fn free_rank(&self) -> usize {
        self.free_rank
    }

    pub fn torsion_orders(&self) -> &[u32] {
        &self.torsion_orders
    }

    pub fn generators(&self) -> &[GroupElement] {
        &self.generators
    }

    pub fn zero(&self) -> GroupElement {
        GroupElement { free: vec![0; self.free_rank], torsion: vec![0; self.torsion_orders.len()] }
    }

    pub fn is_trivial(&self) -> bool {
        self.free_rank == 0 && self.torsion_orders.is_empty()
    }

    /// Build an element, reducing torsion entries into `[0, n_i)`.
    pub fn element(&self, free: Vec<i64>, torsion: Vec<i64>) -> Result<GroupElement, GroupError> {
        if free.len() != self.free_rank || torsion.len() != self.torsion_orders.len() {
            return Err(GroupError::Mismatch(format!(
                "expected free rank {} and {} torsion entries, got {} and {}",
                self.free_rank,
                self.torsion_orders.len(),
                free.len(),
                torsion.len()
            )));
        }
        let torsion = torsion
            .iter()
            .zip(&self.torsion_orders)
            .map(|(&t, &n)| t.rem_euclid(n as i64) as u32)
            .collect();
        Ok(GroupElement { free, torsion })
    }

    /// Shorthand for elements of groups with a single factor.
    pub fn scalar(&self, v: i64) -> GroupElement {
        if self.free_rank == 1 && self.torsion_orders.is_empty() {
            GroupElement { free: vec![v], torsion: vec![] }
        } else if self.free_rank == 0 && self.torsion_orders.len() == 1 {
            GroupElement {
                free: vec![],
                torsion: vec![v.rem_euclid(self.torsion_orders[0] as i64) as u32],
            }
        } else {
            panic!("scalar() is only for single-factor groups");
        }
    }

    pub fn check(&self, g: &GroupElement) -> Result<(), GroupError> {
        if g.free.len() != self.free_rank || g.torsion.len() != self.torsion_orders.len() {
            return Err(GroupError::Mismatch(format!(
                "element has free rank {} / torsion length {}, group needs {} / {}",
                g.free.len(),
                g.torsion.len(),
                self.free_rank,
                self.torsion_orders.len()
            )));
        }
        if let Some((i, _)) = g
            .torsion
            .iter()
            .zip(&self.torsion_orders)
            .enumerate()
            .find(|(_, (&t, &n))| t >= n)
        {
            return Err(GroupError::Mismatch(format!("torsion entry {i} not reduced")));
        }
        Ok(())
    }

    fn reduce(&self, mut g: GroupElement) -> GroupElement {
        for (t, &n) in g.torsion.iter_mut().zip(&self.torsion_orders) {
            *t %= n;
        }
        g
    }

    pub fn add(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement, GroupError> {
        self.check(a)?;
        self.check(b)?;
        let free = a.free.iter().zip(&b.free).map(|(x, y)| x + y).collect();
        let torsion = a
            .torsion
            .iter()
            .zip(&b.torsion)
            .zip(&self.torsion_orders)
            .map(|((&x, &y), &n)| (x + y) % n)
            .collect();
        Ok(GroupElement { free, torsion })
    }

    pub fn neg(&self, a: &GroupElement) -> Result<GroupElement, GroupError> {
        self.check(a)?;
        let free = a.free.iter().map(|x| -x).collect();
        let torsion = a
            .torsion
            .iter()
            .zip(&self.torsion_orders)
            .map(|(&x, &n)| if x == 0 { 0 } else { n - x })
            .collect();
        Ok(GroupElement { free, torsion })
    }

    pub fn sub(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement, GroupError> {
        let nb = self.neg(b)?;
        self.add(a, &nb)
    }

    /// Integer multiple `k * a`.
    pub fn scale(&self, k: i64, a: &GroupElement) -> Result<GroupElement, GroupError> {
        self.check(a)?;
        let free = a.free.iter().map(|x| k * x).collect();
        let torsion = a
            .torsion
            .iter()
            .zip(&self.torsion_orders)
            .map(|(&x, &n)| ((k * x as i64).rem_euclid(n as i64)) as u32)
            .collect();
        Ok(GroupElement { free, torsion })
    }

    /// Word-length norm. Closed form for the standard generating set; bounded
    /// breadth-first search on the Cayley graph otherwise (the torsion part is
    /// finite, and the radius cap keeps the free part finite too).
    pub fn group_norm(&self, g: &GroupElement) -> Result<u64, GroupError> {
        self.check(g)?;
        if self.standard {
            let free: u64 = g.free.iter().map(|x| x.unsigned_abs()).sum();
            let torsion: u64 = g
                .torsion
                .iter()
                .zip(&self.torsion_orders)
                .map(|(&t, &n)| t.min(n - t) as u64)
                .sum();
            return Ok(free + torsion);
        }
        self.norm_bfs(g)
    }

    fn norm_bfs(&self, g: &GroupElement) -> Result<u64, GroupError> {
        if g.is_zero() {
            return Ok(0);
        }
        let mut seen: HashMap<GroupElement, u32> = HashMap::new();
        let mut queue = VecDeque::new();
        seen.insert(self.zero(), 0);
        queue.push_back(self.zero());
        while let Some(cur) = queue.pop_front() {
            let d = seen[&cur];
            if d >= NORM_SEARCH_RADIUS {
                continue;
            }
            for gen in &self.generators {
                for step in [gen.clone(), self.neg(gen).expect("valid generator")] {
                    let next = self.add(&cur, &step).expect("same group");
                    if next == *g {
                        return Ok(d as u64 + 1);
                    }
                    seen.entry(next.clone()).or_insert_with(|| {
                        queue.push_back(next.clone());
                        d + 1
                    });
                }
            }
        }
        Err(GroupError::NormRadiusExceeded(NORM_SEARCH_RADIUS))
    }

    /// Exact generation test: free parts must span `Z^r` unimodularly, and the
    /// torsion images of the free-relation lattice must generate the torsion
    /// factor (kernel vectors of the free-part map are the only combinations
    /// landing in `{0} x T`).
    fn generates(&self, gens: &[GroupElement]) -> bool {
        let r = self.free_rank;
        if self.is_trivial() {
            return true;
        }
        if r > 0 && !spans_unimodularly(gens, r) {
            return false;
        }
        if self.torsion_orders.is_empty() {
            return true;
        }
        let free_cols: Vec<Vec<i64>> = gens.iter().map(|g| g.free.clone()).collect();
        let torsion_gens: Vec<Vec<u32>> = integer_kernel_basis(&free_cols, r)
            .into_iter()
            .map(|combo| {
                let mut t = vec![0i64; self.torsion_orders.len()];
                for (j, &c) in combo.iter().enumerate() {
                    for (k, &tj) in gens[j].torsion.iter().enumerate() {
                        t[k] += c * tj as i64;
                    }
                }
                t.iter()
                    .zip(&self.torsion_orders)
                    .map(|(&x, &n)| x.rem_euclid(n as i64) as u32)
                    .collect()
            })
            .collect();
        torsion_closure_is_full(&torsion_gens, &self.torsion_orders)
    }
}

/// Basis of `{z in Z^g : sum z_j cols[j] = 0}` by column-style Euclidean
/// elimination with tracked operations. The kernel lattice of an integer
/// matrix is saturated, so the eliminated columns whose free part vanished
/// form a genuine basis.
fn integer_kernel_basis(cols: &[Vec<i64>], rows: usize) -> Vec<Vec<i64>> {
    let g = cols.len();
    let mut mat: Vec<Vec<i64>> = cols.to_vec(); // mat[c] = current column c
    let mut ops: Vec<Vec<i64>> = (0..g).map(|i| {
        let mut v = vec![0; g];
        v[i] = 1;
        v
    }).collect();
    let mut lead = 0;
    for row in 0..rows {
        if lead >= g {
            break;
        }
        // Euclidean-reduce entries of `row` across columns lead..g until at
        // most one is nonzero, then move it to position `lead`.
        loop {
            let nonzero: Vec<usize> = (lead..g).filter(|&c| mat[c][row] != 0).collect();
            match nonzero.len() {
                0 => break,
                1 => {
                    mat.swap(nonzero[0], lead);
                    ops.swap(nonzero[0], lead);
                    lead += 1;
                    break;
                }
                _ => {
                    let &pivot = nonzero
                        .iter()
                        .min_by_key(|&&c| mat[c][row].abs())
                        .expect("nonempty");
                    let p = mat[pivot][row];
                    for &c in &nonzero {
                        if c == pivot {
                            continue;
                        }
                        let q = mat[c][row].div_euclid(p);
                        if q != 0 {
                            for i in 0..rows {
                                mat[c][i] -= q * mat[pivot][i];
                            }
                            for j in 0..g {
                                ops[c][j] -= q * ops[pivot][j];
                            }
                        }
                    }
                }
            }
        }
    }
    (lead..g).map(|c| ops[c].clone()).collect()
}

/// Do the free parts of `gens` generate `Z^r`? Equivalent to the gcd of all
/// `r x r` minors being 1 (desk scale: enumerate minors).
fn spans_unimodularly(gens: &[GroupElement], r: usize) -> bool {
    let cols: Vec<&Vec<i64>> = gens.iter().map(|g| &g.free).collect();
    if cols.len() < r {
        return false;
    }
    let mut gcd_minors: i64 = 0;
    let mut chosen = vec![0usize; r];
    fn rec(
        cols: &[&Vec<i64>],
        r: usize,
        start: usize,
        depth: usize,
        chosen: &mut Vec<usize>,
        gcd_minors: &mut i64,
    ) {
        if depth == r {
            let minor = int_det(&(0..r).map(|i| (0..r).map(|j| cols[chosen[j]][i]).collect()).collect::<Vec<Vec<i64>>>());
            *gcd_minors = gcd(*gcd_minors, minor.abs());
            return;
        }
        for c in start..cols.len() {
            chosen[depth] = c;
            rec(cols, r, c + 1, depth + 1, chosen, gcd_minors);
            if *gcd_minors == 1 {
                return;
            }
        }
    }
    rec(&cols, r, 0, 0, &mut chosen, &mut gcd_minors);
    gcd_minors == 1
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Integer determinant by fraction-free Gaussian elimination (Bareiss).
fn int_det(m: &[Vec<i64>]) -> i64 {
    let n = m.len();
    if n == 0 {
        return 1;
    }
    let mut a: Vec<Vec<i128>> = m.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if a[k][k] == 0 {
            let Some(swap) = (k + 1..n).find(|&i| a[i][k] != 0) else { return 0 };
            a.swap(k, swap);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
            a[i][k] = 0;
        }
        prev = a[k][k];
    }
    (sign * a[n - 1][n - 1]) as i64
}

fn torsion_closure_is_full(gens: &[Vec<u32>], orders: &[u32]) -> bool {
    let total: u64 = orders.iter().map(|&n| n as u64).product();
    let mut seen = std::collections::HashSet::new();
    let zero = vec![0u32; orders.len()];
    seen.insert(zero.clone());
    let mut queue = VecDeque::from([zero]);
    while let Some(cur) = queue.pop_front() {
        for g in gens {
            let next: Vec<u32> = cur
                .iter()
                .zip(g)
                .zip(orders)
                .map(|((&a, &b), &n)| (a + b) % n)
                .collect();
            if seen.insert(next.clone()) {
                queue.push_back(next);
            }
        }
    }
    seen.len() as u64 == total
}

fn standard_basis(free_rank: usize, torsion_orders: &[u32]) -> Vec<GroupElement> {
    let mut gens = vec![];
    for i in 0..free_rank {
        let mut free = vec![0; free_rank];
        free[i] = 1;
        gens.push(GroupElement { free, torsion: vec![0; torsion_orders.len()] });
    }
    for i in 0..torsion_orders.len() {
        let mut torsion = vec![0; torsion_orders.len()];
        torsion[i] = 1;
        gens.push(GroupElement { free: vec![0; free_rank], torsion });
    }
    gens
}

/// Standard up to order and sign leaves the word-length norm unchanged, so the
/// closed form stays valid.
fn is_standard_up_to_sign_and_order(
    free_rank: usize,
    torsion_orders: &[u32],
    gens: &[GroupElement],
) -> bool {
    let std_gens = standard_basis(free_rank, torsion_orders);
    if gens.len() != std_gens.len() {
        return false;
    }
    let mut used = vec![false; std_gens.len()];
    'outer: for g in gens {
        for (i, s) in std_gens.iter().enumerate() {
            if used[i] {
                continue;
            }
            let neg_free: Vec<i64> = s.free.iter().map(|x| -x).collect();
            let neg_tor: Vec<u32> = s
                .torsion
                .iter()
                .zip(torsion_orders)
                .map(|(&t, &n)| if t == 0 { 0 } else { n - t })
                .collect();
            if (g.free == s.free && g.torsion == s.torsion)
                || (g.free == neg_free && g.torsion == neg_tor)
            {
                used[i] = true;
                continue 'outer;
            }
        }
        return false;
    }
    true
}

// JSON descriptor is {"free_rank": r, "torsion": [n1, ...]}. Only groups with
// the standard generating set round-trip through serialization; custom
// generating sets are in-memory objects.
impl Serialize for CoefficientGroup {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Descriptor<'a> {
            free_rank: usize,
            torsion: &'a [u32],
        }
        Descriptor { free_rank: self.free_rank, torsion: &self.torsion_orders }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CoefficientGroup {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Descriptor {
            free_rank: usize,
            torsion: Vec<u32>,
        }
        let d = Descriptor::deserialize(deserializer)?;
        CoefficientGroup::new(d.free_rank, d.torsion).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_inverse_and_torsion_wrap() {
        let z = CoefficientGroup::integers();
        let three = z.scalar(3);
        let minus = z.scalar(-3);
        assert!(z.add(&three, &minus).unwrap().is_zero());

        let z2 = CoefficientGroup::cyclic(2).unwrap();
        let one = z2.scalar(1);
        assert!(z2.add(&one, &one).unwrap().is_zero());

        let g = CoefficientGroup::new(1, vec![3]).unwrap();
        let a = g.element(vec![2], vec![2]).unwrap();
        let b = g.element(vec![1], vec![2]).unwrap();
        assert_eq!(g.add(&a, &b).unwrap(), g.element(vec![3], vec![1]).unwrap());
    }

    #[test]
    fn norm_closed_form_matches_spec_values() {
        let z = CoefficientGroup::integers();
        assert_eq!(z.group_norm(&z.zero()).unwrap(), 0);
        assert_eq!(z.group_norm(&z.scalar(5)).unwrap(), 5);
        let z2 = CoefficientGroup::cyclic(2).unwrap();
        assert_eq!(z2.group_norm(&z2.scalar(1)).unwrap(), 1);
        // Z x Z/2 standard: |(1, 1)| = 2, as used by the chain mass example.
        let g = CoefficientGroup::new(1, vec![2]).unwrap();
        assert_eq!(g.group_norm(&g.element(vec![1], vec![1]).unwrap()).unwrap(), 2);
    }

    #[test]
    fn bfs_agrees_with_closed_form_on_shuffled_standard_basis() {
        let gens = vec![
            GroupElement { free: vec![0, -1], torsion: vec![0] },
            GroupElement { free: vec![0, 0], torsion: vec![4] },
            GroupElement { free: vec![1, 0], torsion: vec![0] },
        ];
        let g = CoefficientGroup::with_generators(2, vec![5], gens).unwrap();
        assert!(g.standard);
        let h = CoefficientGroup::new(2, vec![5]).unwrap();
        for free in [[0, 0], [3, -2], [-1, 4]] {
            for t in 0..5 {
                let e = g.element(free.to_vec(), vec![t]).unwrap();
                assert_eq!(g.group_norm(&e).unwrap(), h.group_norm(&e).unwrap());
            }
        }
    }

    #[test]
    fn nonstandard_generators_norm_via_bfs() {
        // Z with generators {2, 3}: |1| = 2 (3 - 2), |5| = 2, |4| = 2, |7| = 3.
        let gens = vec![
            GroupElement { free: vec![2], torsion: vec![] },
            GroupElement { free: vec![3], torsion: vec![] },
        ];
        let g = CoefficientGroup::with_generators(1, vec![], gens).unwrap();
        assert_eq!(g.group_norm(&g.scalar(1)).unwrap(), 2);
        assert_eq!(g.group_norm(&g.scalar(5)).unwrap(), 2);
        assert_eq!(g.group_norm(&g.scalar(4)).unwrap(), 2);
        assert_eq!(g.group_norm(&g.scalar(7)).unwrap(), 3);
    }

    #[test]
    fn generation_check_rejects_proper_subgroups() {
        // (1, 1) generates only {(k, k mod 2)} in Z x Z/2.
        let gens = vec![GroupElement { free: vec![1], torsion: vec![1] }];
        assert_eq!(
            CoefficientGroup::with_generators(1, vec![2], gens).unwrap_err(),
            GroupError::NotGenerating
        );
        // Adding (0, 1) fixes it.
        let gens = vec![
            GroupElement { free: vec![1], torsion: vec![1] },
            GroupElement { free: vec![0], torsion: vec![1] },
        ];
        assert!(CoefficientGroup::with_generators(1, vec![2], gens).is_ok());
        // {2} does not generate Z.
        let gens = vec![GroupElement { free: vec![2], torsion: vec![] }];
        assert_eq!(
            CoefficientGroup::with_generators(1, vec![], gens).unwrap_err(),
            GroupError::NotGenerating
        );
    }

    #[test]
    fn descriptor_json_round_trip() {
        let g = CoefficientGroup::new(2, vec![2, 6]).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"{"free_rank":2,"torsion":[2,6]}"#);
        let back: CoefficientGroup = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn mismatched_shapes_error() {
        let g = CoefficientGroup::new(1, vec![2]).unwrap();
        let alien = GroupElement { free: vec![1, 2], torsion: vec![] };
        assert!(matches!(g.add(&g.zero(), &alien), Err(GroupError::Mismatch(_))));
    }
}
