//! Strict singular characteristics and maximal slope curves on flat tori.

pub mod error;
pub mod fourier;
pub mod geometry;
pub mod hamiltonian;
pub mod semiconcave;
pub mod action;
pub mod characteristics;
pub mod laxoleinik;
pub mod singularity;
pub mod transport;
pub mod fixtures;
pub mod cli;

// Book chapters, compiled as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/torus.md")]
    mod torus {}
    #[doc = include_str!("../../../book/src/hamiltonians.md")]
    mod hamiltonians {}
    #[doc = include_str!("../../../book/src/semiconcave.md")]
    mod semiconcave {}
    #[doc = include_str!("../../../book/src/action.md")]
    mod action {}
    #[doc = include_str!("../../../book/src/lax-oleinik.md")]
    mod lax_oleinik {}
    #[doc = include_str!("../../../book/src/characteristics.md")]
    mod characteristics {}
    #[doc = include_str!("../../../book/src/singularities.md")]
    mod singularities {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
