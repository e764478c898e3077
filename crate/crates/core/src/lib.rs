//! Exact, finite-stage computations for a Borel reduction from countable
//! graphs to torsion-free abelian groups.
//!
//! Graphs are encoded as structures with two equivalence relations, those
//! structures are embedded into a fixed universal one, and the embedding is
//! pushed through a system of partial automorphisms into a rank-ω group
//! `G_U ≤ ℚ^{X_U}`. Companion modules build tree-indexed endorigid groups.

pub mod cli;
pub mod endorigid;
pub mod groups;
pub mod keq;
pub mod linalg;
pub mod partial_autos;
pub mod primes;
pub mod reduction;
pub mod report;
pub mod system;
