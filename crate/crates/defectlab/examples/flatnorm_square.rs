//! Flat-norm decompositions S = dP + Q on a small grid complex.
//!
//! The flat norm trades boundary mass against filling mass: a long loop is
//! cheaper to fill (P = enclosed area, Q = 0), a well-separated dipole is
//! cheaper to join (P = 0-chain path witness). The exhaustive oracle
//! certifies the LP answer on desk-scale complexes.

use std::sync::Arc;

use defectlab::coeff::{CoefficientGroup, GroupElement};
use defectlab::mesh::{build_grid_complex, GridLayout};
use defectlab::{flat_norm, flat_norm_oracle, Chain};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let z = CoefficientGroup::integers();

    // A 4x4 grid of unit squares; S = boundary loop of the central 2x2 block.
    let layout = GridLayout::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![4, 4])?;
    let cx = Arc::new(build_grid_complex(&layout)?);
    let block: Vec<(u32, GroupElement)> = (0..cx.num_cells(2) as u32)
        .filter(|&id| {
            let c = cx.centroid(2, id).unwrap();
            (1.0..3.0).contains(&c[0]) && (1.0..3.0).contains(&c[1])
        })
        .map(|id| (id, z.scalar(cx.top_orientation_sign(id).unwrap() as i64)))
        .collect();
    let region = Chain::from_entries(cx.clone(), z.clone(), 2, block)?;
    let loop_chain = region.boundary()?;
    let fd = flat_norm(&loop_chain)?;
    println!("2x2 block boundary: M(S) = {}", loop_chain.mass()?);
    println!(
        "  F(S) = {} with M(P) = {}, M(Q) = {}  [{:?}]",
        fd.value,
        fd.p.mass()?,
        fd.q.mass()?,
        fd.exactness
    );
    // the loop of length 8 is filled by the 4 enclosed squares
    assert_eq!(fd.value, 4.0);

    // A 0-chain dipole: joining beats keeping only when the points are
    // close. F = min(graph distance, M(S)).
    let dipole = |b_idx: &[usize]| {
        let a = layout.vertex_id(&[0, 0]);
        let b = layout.vertex_id(b_idx);
        Chain::from_entries(cx.clone(), z.clone(), 0, [(a, z.scalar(1)), (b, z.scalar(-1))])
    };
    let near = flat_norm(&dipole(&[1, 0])?)?;
    println!("\ndipole at distance 1: F = {} (P = the joining edge)", near.value);
    assert_eq!((near.value, near.p.mass()?), (1.0, 1.0));
    let far = flat_norm(&dipole(&[3, 2])?)?;
    println!("dipole at distance 5: F = {} (kept as Q: a 5-edge path costs more)", far.value);
    assert_eq!((far.value, far.p.mass()?), (2.0, 0.0));

    // Oracle check on a single square (two triangles): exhaustive search
    // over integer fillings certifies the solver. The unit loop of length 4
    // is filled by both triangles for cost 1.
    let layout = GridLayout::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1, 1])?;
    let cx = Arc::new(build_grid_complex(&layout)?);
    let entries: Vec<_> = (0..cx.num_cells(2) as u32)
        .map(|id| (id, z.scalar(cx.top_orientation_sign(id).unwrap() as i64)))
        .collect();
    let square = Chain::from_entries(cx.clone(), z.clone(), 2, entries)?;
    let s = square.boundary()?;
    let main = flat_norm(&s)?;
    let oracle = flat_norm_oracle(&s, 2)?;
    println!("\nunit square boundary: solver F = {}, oracle F = {}", main.value, oracle.value);
    assert_eq!((main.value, oracle.value), (1.0, 1.0));
    Ok(())
}
