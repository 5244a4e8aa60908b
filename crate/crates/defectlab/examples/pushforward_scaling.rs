//! Pushforward of chains under piecewise-linear maps.
//!
//! A PL map f with Lipschitz constant L satisfies M(f_* S) <= L^n M(S) for
//! n-chains; under a uniform scaling by c the bound is met with equality,
//! M(f_* S) = c^n M(S). Degenerate images (collapsed simplices) simply drop
//! out of the pushforward.

use std::sync::Arc;

use defectlab::coeff::CoefficientGroup;
use defectlab::mesh::{build_grid_complex, Complex, ComplexBuilder, GridLayout};
use defectlab::{pushforward, Chain, PLMap};
use nalgebra::DMatrix;

fn image_complex(f: &PLMap, cx: &Arc<Complex>) -> Arc<Complex> {
    let mut b = ComplexBuilder::new(2);
    for v in 0..cx.num_vertices() as u32 {
        b.add_vertex(f.image(v).to_vec()).unwrap();
    }
    for dim in 1..=2 {
        for id in 0..cx.num_cells(dim) as u32 {
            b.add_cell(cx.cell_tuple(dim, id).unwrap().to_vec()).unwrap();
        }
    }
    Arc::new(b.build().unwrap())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = GridLayout::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![3, 3])?;
    let cx = Arc::new(build_grid_complex(&layout)?);
    let z = CoefficientGroup::integers();

    // S = a staircase of edges with coefficient 2 on one of them.
    let entries = [(0u32, 1i64), (7, 2), (12, 1)];
    let s = Chain::from_entries(
        cx.clone(),
        z.clone(),
        1,
        entries.map(|(id, c)| (id, z.scalar(c))),
    )?;
    println!("M(S) = {}", s.mass()?);

    for c in [2.0, 0.5] {
        let a = DMatrix::<f64>::from_diagonal_element(2, 2, c);
        let f = PLMap::affine(cx.clone(), &a, &[0.0, 0.0])?;
        let target = image_complex(&f, &cx);
        let fs = pushforward(&f, &s, &target)?;
        println!(
            "scale by {c}: Lipschitz = {}, M(f_*S) = {} (= c * M(S) = {})",
            f.lipschitz(),
            fs.mass()?,
            c * s.mass()?
        );
        assert!((fs.mass()? - c * s.mass()?).abs() < 1e-12);
    }

    // A shear: the bound M(f_*S) <= L^n M(S) is strict for most chains.
    let a = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 0.7, 0.0, 1.0]);
    let f = PLMap::affine(cx.clone(), &a, &[0.0, 0.0])?;
    let target = image_complex(&f, &cx);
    let fs = pushforward(&f, &s, &target)?;
    let bound = f.lipschitz() * s.mass()?;
    println!("shear: M(f_*S) = {:.4} <= L * M(S) = {:.4}", fs.mass()?, bound);
    assert!(fs.mass()? <= bound + 1e-12);
    Ok(())
}
