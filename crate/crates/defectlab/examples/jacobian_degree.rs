//! Recover the winding degree from the defect-measure integral.
//!
//! For a circle-valued plane field of degree n, averaging the total charge
//! chi(S_y) over offsets y in the ball B_{Lambda+1} recovers n: the defect
//! measure integrates to the degree. The boundary winding gives an
//! independent second route to the same number.

use defectlab::cli::{preset_field, Preset};
use defectlab::jacobian_integral_check;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:>6} {:>12} {:>12} {:>16}", "degree", "estimate", "std error", "boundary degree");
    for n in 1..=3 {
        let (u, t) = preset_field(Preset::DegreeN, n, Some(vec![32, 32]), None, None)?;
        let rep = jacobian_integral_check(&u, &t, 800)?;
        println!(
            "{n:>6} {:>12.4} {:>12.4} {:>16.4}",
            rep.estimate, rep.std_error, rep.boundary_degree
        );
    }
    Ok(())
}
