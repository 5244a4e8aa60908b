//! Normed coefficient groups Z^r x Z/n1 x ... x Z/ns.
//!
//! The group norm is the word length over the declared generating set
//! (computed exactly by breadth-first search over the torsion fibers). Mass
//! weights every cell coefficient by this norm, so changing generators
//! changes which chains are "heavy".

use defectlab::coeff::CoefficientGroup;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Z with the standard generator: |k| is the absolute value.
    let z = CoefficientGroup::integers();
    println!("Z, generator 1:      |5| = {}", z.group_norm(&z.scalar(5))?);

    // Z/5: the norm is the cyclic word length, so |3| = 2 (3 = -2).
    let z5 = CoefficientGroup::cyclic(5)?;
    println!("Z/5, generator 1:    |3| = {}", z5.group_norm(&z5.element(vec![], vec![3])?)?);

    // Z x Z/2 with generators (1, 0), (0, 1): the norm splits as a sum.
    let g = CoefficientGroup::new(1, vec![2])?;
    let e = g.element(vec![-3], vec![1])?;
    println!("Z x Z/2, standard:   |(-3, 1)| = {}", g.group_norm(&e)?);

    // Same group, coupled generators (1, 1) and (2, 1): now the cheapest
    // word for (-3, 1) mixes both generators and the norm drops.
    let coupled = CoefficientGroup::with_generators(
        1,
        vec![2],
        vec![g.element(vec![1], vec![1])?, g.element(vec![2], vec![1])?],
    )?;
    let e = coupled.element(vec![-3], vec![1])?;
    println!("Z x Z/2, {{(1,1),(2,1)}}: |(-3, 1)| = {}", coupled.group_norm(&e)?);

    // Norm axioms hold by construction; spot-check the triangle inequality.
    let a = coupled.element(vec![2], vec![0])?;
    let b = coupled.element(vec![-5], vec![1])?;
    let sum = coupled.add(&a, &b)?;
    let (na, nb, ns) = (
        coupled.group_norm(&a)?,
        coupled.group_norm(&b)?,
        coupled.group_norm(&sum)?,
    );
    println!("triangle: |a+b| = {ns} <= |a| + |b| = {}", na + nb);
    assert!(ns <= na + nb);
    Ok(())
}
