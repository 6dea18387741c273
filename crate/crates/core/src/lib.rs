//! Learning the uncertain part of a linear plant from repeated closed-loop
//! trials under a robust tube MPC.
//!
//! The [`ilc`] module drives the loop. Each trial runs the plant under a
//! controller from [`mpc`] synthesized for the current estimate. The
//! resulting cost is handed to the [`direct`] optimizer, which picks the next
//! estimate. Set computations live in [`polytope`], solvers in [`numerics`].
//! The guide in `book/` walks through each piece with runnable examples.

pub mod numerics;
pub mod polytope;
pub mod mpc;
pub mod direct;
pub mod ilc;

// Every chapter of the guide is compiled as a doc-test so its snippets keep
// up with the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/polytopes.md")]
    mod polytopes {}
    #[doc = include_str!("../../../book/src/tube-mpc.md")]
    mod tube_mpc {}
    #[doc = include_str!("../../../book/src/direct.md")]
    mod direct {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
