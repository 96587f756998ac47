//! Numerical toolkit for visible compression of mixed-state quantum ensembles.
//!
//! The crate is organised bottom-up:
//!
//! - [`matstack`]: dense complex linear algebra (Kronecker products, partial
//!   traces, Hermitian eigendecomposition, PSD square roots, singular values).
//! - [`states`]: density matrices, ensembles, von Neumann entropy and the
//!   Holevo quantity.
//! - [`fidelity`]: Uhlmann fidelity, purifications and the extension lemma.
//! - [`extopt`]: minimisation of the ensemble entropy over extensions of the
//!   signal states.
//! - [`protocol`]: finite-block simulation of typical-subspace compression and
//!   of the extension protocol built on top of it.
//! - [`bounds`]: inequality checks that tie simulations to the known bounds.
//!
//! All entropies are in bits.

pub mod bounds;
pub mod error;
pub mod extopt;
pub mod fidelity;
pub mod matstack;
pub mod protocol;
pub mod random;
pub mod states;

pub use error::{Error, Result};
pub use matstack::{ComplexMatrix, C64};
pub use states::{DensityMatrix, Ensemble};
