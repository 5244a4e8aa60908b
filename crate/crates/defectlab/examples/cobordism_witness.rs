//! Homotopy cobordism between the defect chains of two fields.
//!
//! Interpolating linearly between fields u0 and u1 sweeps a 1-chain R on
//! the dual grid with dR = S_y(u1) - S_y(u0) away from the domain boundary:
//! defects of deformed fields never appear or vanish in the interior, they
//! move or leave through the boundary.

use defectlab::cli::{preset_field, Preset};
use defectlab::mesh::DualGrid;
use defectlab::{homotopy_cobordism, singular_set_with, Backend, SampledField};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (u1, t) = preset_field(Preset::Vortex, 1, Some(vec![32, 32]), None, None)?;
    let layout = u1.layout().clone();
    let constant = SampledField::from_values(
        layout.clone(),
        2,
        vec![vec![1.0, 0.0]; layout.num_vertices()],
    )?;

    let y = [0.0, 0.0];
    let s0 = singular_set_with(&constant, &t, &y, Backend::Link)?;
    let s1 = singular_set_with(&u1, &t, &y, Backend::Link)?;
    println!("constant field: {} defect cells", s0.chain.iter().count());
    println!("vortex field:   {} defect cells", s1.chain.iter().count());

    let r = homotopy_cobordism(&constant, &u1, &t, &y)?;
    println!("cobordism mass M(R) = {:.4}", r.mass()?);

    // dR - (S1 - S0) is supported on the domain rim only.
    let dual = DualGrid::new(layout)?;
    let diff = s1.chain.sub(&s0.chain)?;
    let interior = r.boundary()?.restrict(|v| dual.is_center_vertex(v));
    let mismatch = interior.sub(&diff)?;
    println!("interior boundary identity holds: {}", mismatch.is_zero());
    assert!(mismatch.is_zero());
    Ok(())
}
