//! A workbench for finite model theory at desk scale: finite relational
//! structures and their Gaifman topology, first-order logic with evaluation
//! and normal forms, synthesizers for locality and order formulas,
//! presentation schemes with brute-force invariance checking, the epsilon
//! calculus, and Ehrenfeucht-Fraisse games.

pub mod structures;

pub use structures::{Distance, HanfSignature, NeighborhoodType, Structure, StructureError, Vocabulary};
