//! Adversarially trained hard-constrained PINNs with NTK-based diagnostics,
//! the first-order score `r^T K gamma`, rollback training, and a kernel-flow
//! simulator for the residual-space discriminator dynamics.

pub mod advobj;
pub mod diffcore;
pub mod kernelflow;
pub mod linalg;
pub mod netmod;
pub mod ntkdiag;
pub mod pdebench;
pub mod rolltrain;

pub use diffcore::{Jet, Program, ProgramBuilder, Executor};
pub use netmod::{Activation, NetworkSpec, ParamVector};
pub use pdebench::{PdeProblem, ProblemName};
