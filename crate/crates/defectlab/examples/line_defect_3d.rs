//! A vortex line in three dimensions, seen by both backends.
//!
//! The `line-defect-3d` preset extends the planar vortex along the z-axis.
//! Codimension 2 in a 3-dimensional domain leaves a 1-dimensional defect:
//! the preimage backend returns embedded segments of u^{-1}(y), the link
//! backend a 1-chain of dual edges classified by loop winding.

use defectlab::cli::{preset_field, Preset};
use defectlab::{singular_set_with, Backend};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (u, t) = preset_field(Preset::LineDefect3d, 1, None, None, None)?;
    let y = [0.08, 0.05];

    let pre = singular_set_with(&u, &t, &y, Backend::Preimage)?;
    let length = pre.chain.mass()?;
    let segments = pre.chain.iter().count();
    println!("preimage: {segments} segments, total length {length:.4}");
    // the line runs through the full box [-1,1] in z, so length ~ 2
    assert!((length - 2.0).abs() < 0.1);

    let link = singular_set_with(&u, &t, &y, Backend::Link)?;
    let mass = link.chain.mass()?;
    let edges = link.chain.iter().count();
    println!("link:     {edges} dual edges, mass {mass:.4}");

    // Both chains are cycles away from the domain boundary.
    let interior = |c: &defectlab::Chain| {
        let bd = c.boundary().unwrap();
        bd.iter()
            .filter(|(v, _)| {
                let x = bd.complex().centroid(0, *v).unwrap();
                x.iter().all(|a| a.abs() < 0.9)
            })
            .count()
    };
    println!(
        "interior boundary points: preimage {}, link {}",
        interior(&pre.chain),
        interior(&link.chain)
    );
    assert_eq!(interior(&pre.chain), 0);
    assert_eq!(interior(&link.chain), 0);
    Ok(())
}
