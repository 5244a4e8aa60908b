//! Flat chains with coefficients in a normed abelian group, and the
//! machinery to extract topological defects from sampled vector fields.
//!
//! The pipeline: sample a map `u: Omega -> R^m` on a grid ([`singular::SampledField`]),
//! pick a target manifold `N` with its exceptional set `X` and retraction
//! ([`target::TargetManifold`]), and extract the defect chain `S_y(u)` supported
//! where `u - y` meets `X` ([`singular::singular_set`]). Multiplicities live in
//! `pi_{k-1}(N)` represented as a finitely generated abelian group with a
//! word-length norm ([`coeff`]). Chains ([`chain`]) sit on explicit oriented
//! complexes ([`mesh`]); their flat norm is an optimization problem solved
//! in-repo ([`flatnorm`]). Intersection indices and push-forwards live in
//! [`geomops`]; circle-valued phase unwrapping across a cut in [`lifting`];
//! field I/O, presets, and the command-line front end in [`cli`].
//!
//! Every runnable capability has an example under `examples/`.

pub mod chain;
pub mod coeff;
pub mod flatnorm;
pub mod cli;
pub mod geomops;
pub mod lifting;
pub mod mesh;
pub mod singular;
pub mod target;

pub use chain::Chain;
pub use coeff::{CoefficientGroup, GroupElement};
pub use flatnorm::{flat_norm, flat_norm_oracle, relative_flat_norm, Exactness, FlatDecomposition};
pub use geomops::{intersect_chains, intersection_index, pushforward, IntersectionResult, PLMap};
pub use lifting::{
    cut_chain, lift_circle_field, lift_director_signs, witness_cut, CutChain, LiftError,
    LiftedField, VariationReport,
};
pub use mesh::{build_grid_complex, Complex, DualGrid, GridLayout};
pub use singular::{
    boundary_degree, continuity_report, default_backend, field_on_manifold, homotopy_cobordism,
    jacobian_integral_check, mass_coarea_report, n_valued_stability, singular_boundary,
    singular_set, singular_set_with, Backend, ContinuityReport, JacobianReport, MassCoareaReport,
    SampledField, SingularChain, SingularError, StabilityReport,
};
pub use target::TargetManifold;
