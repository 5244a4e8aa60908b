//! Half-charge disclination pair in a Q-tensor field (Z/2 defects).
//!
//! The `disclination-half` preset samples a uniaxial nematic configuration
//! whose director turns by pi around each of two centers. Line fields have
//! Z/2-valued charges: each defect is its own inverse, and the two
//! half-charges annihilate in total.

use defectlab::cli::{preset_field, Preset, HALF_CHARGE_CENTERS};
use defectlab::{n_valued_stability, singular_set};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (u, t) = preset_field(Preset::DisclinationHalf, 1, None, None, None)?;
    println!("target {}: coefficients in Z/2", t.name());
    println!(
        "seeded centers: ({}, {}) and ({}, {})",
        HALF_CHARGE_CENTERS[0][0],
        HALF_CHARGE_CENTERS[0][1],
        HALF_CHARGE_CENTERS[1][0],
        HALF_CHARGE_CENTERS[1][1]
    );

    let s = singular_set(&u, &t, &[0.0; 5])?;
    println!("\ndetected defect cells ({} total):", s.chain.iter().count());
    for (cell, g) in s.chain.iter() {
        let x = s.chain.complex().centroid(0, cell)?;
        println!("  ({:+.4}, {:+.4})  class {:?}", x[0], x[1], g.torsion);
    }
    let total = s.chain.augmentation()?;
    println!("total class (must vanish: the charges cancel): {:?}", total.torsion);
    assert_eq!(total.torsion, vec![0]);

    // The samples lie on the projective quadric, so the extraction is
    // offset-independent on a definite ball around zero.
    let rep = n_valued_stability(&u, &t, 25)?;
    println!(
        "\nstability over {} offset draws: {} cells, total mass {}, consistent = {}",
        rep.samples, rep.defect_cells, rep.total_mass, rep.stop_consistent
    );
    Ok(())
}
