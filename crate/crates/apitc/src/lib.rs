//! Workbench for a truly concurrent actor calculus.
//!
//! The crate provides, per module:
//!
//! - [`syntax`]: terms, parsing, printing, the name algebra and canonical forms
//! - [`typing`]: the receptionist / temporary-name type system
//! - [`lts`]: the step-labelled truly concurrent transition semantics
//! - [`traces`]: receptionist evolution, trace well-formedness, run
//!   projection and fair simulation
//! - [`events`]: prime event structures obtained by bounded unfolding
//! - [`bisim`]: pomset, step, hp and hhp equivalence checking
//! - [`laws`]: the algebraic-law harness over checked rewrite schemas
//! - [`cli`]: the `apitc` command-line entry point

pub mod bisim;
pub mod cli;
pub mod config;
pub mod events;
pub mod gen;
pub mod laws;
pub mod lts;
pub mod syntax;
pub mod traces;
pub mod typing;
