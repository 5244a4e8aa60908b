//! Intersection indices and the boundary-swap sign rule.
//!
//! Two chains in general position meet in a 0-chain whose augmentation is
//! the intersection index I(S, R). Swapping which factor carries the
//! boundary flips the sign by (-1)^n for an n-chain S:
//! I(S, dR) = (-1)^n I(dS, R).

use std::sync::Arc;

use defectlab::coeff::CoefficientGroup;
use defectlab::mesh::{build_grid_complex, ComplexBuilder, GridLayout};
use defectlab::{intersect_chains, intersection_index, Chain};

fn seg(points: &[(f64, f64)]) -> Chain {
    let z = CoefficientGroup::integers();
    let mut b = ComplexBuilder::new(2);
    for &(x, y) in points {
        b.add_vertex(vec![x, y]).unwrap();
    }
    for i in 0..points.len() as u32 / 2 {
        b.add_cell(vec![2 * i, 2 * i + 1]).unwrap();
    }
    let cx = Arc::new(b.build().unwrap());
    let entries: Vec<_> = (0..points.len() as u32 / 2).map(|i| (i, z.scalar(1))).collect();
    Chain::from_entries(cx, z, 1, entries).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A single transverse crossing: S along +x, R along +y. The frame
    // (e_x, e_y) is positively oriented, so the crossing counts +1.
    let s = seg(&[(-1.0, 0.0), (1.0, 0.0)]);
    let r = seg(&[(0.0, -1.0), (0.0, 1.0)]);
    let res = intersect_chains(&s, &r, &[0.0, 0.0])?;
    println!("S along +x, R along +y: index = {:?}", res.index.free);
    for (c, g) in res.zero_chain.iter() {
        let x = res.zero_chain.complex().centroid(0, c)?;
        println!("  crossing at ({:.3}, {:.3}) with sign {:?}", x[0], x[1], g.free[0]);
    }

    // Reversing R reverses the index.
    let r_rev = seg(&[(0.0, 1.0), (0.0, -1.0)]);
    let res_rev = intersect_chains(&s, &r_rev, &[0.0, 0.0])?;
    println!("reversed R:            index = {:?}", res_rev.index.free);

    // The boundary-swap rule pairs complementary dimensions: a 1-chain S
    // against a 2-chain R gives I(S, dR) = (-1)^1 I(dS, R). Both sides are
    // averaged over offsets within an adaptive stability radius.
    let z = CoefficientGroup::integers();
    let layout = GridLayout::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![3, 3])?;
    let cx = Arc::new(build_grid_complex(&layout)?);
    let entries: Vec<_> = (0..cx.num_cells(2) as u32)
        .filter(|&id| {
            let c = cx.centroid(2, id).unwrap();
            (1.0..2.0).contains(&c[0]) && (1.0..2.0).contains(&c[1])
        })
        .map(|id| (id, z.scalar(cx.top_orientation_sign(id).unwrap() as i64)))
        .collect();
    let region = Chain::from_entries(cx, z.clone(), 2, entries)?;

    // A strand that passes through crosses dR twice with cancelling signs,
    // and its endpoints miss R: both sides are zero.
    let through = seg(&[(1.53, -8.0), (1.53, 8.0)]);
    let lhs = intersection_index(&through, &region.boundary()?, 16, 0.05)?;
    let rhs = intersection_index(&through.boundary()?, &region, 16, 0.05)?;
    println!("\nstrand through the square [1,2]^2: I(S, dR) = {:?}, I(dS, R) = {:?}", lhs.free, rhs.free);
    assert_eq!(lhs, z.neg(&rhs)?);

    // A strand that stops inside crosses dR once, and exactly one endpoint
    // lands in R: both sides are +-1 and the sign rule bites.
    let stopped = seg(&[(1.53, -8.0), (1.53, 1.48)]);
    let lhs = intersection_index(&stopped, &region.boundary()?, 16, 0.05)?;
    let rhs = intersection_index(&stopped.boundary()?, &region, 16, 0.05)?;
    println!("strand stopping inside:            I(S, dR) = {:?}, I(dS, R) = {:?}", lhs.free, rhs.free);
    assert_eq!(lhs, z.neg(&rhs)?, "I(S, dR) must equal -I(dS, R) for 1-chains");
    assert_ne!(lhs, z.zero(), "the stopped strand must score a nonzero index");
    Ok(())
}
