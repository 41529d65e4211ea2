//! Kernelized diffusion maps (KDM) with adaptive kernel selection.
//!
//! The crate estimates leading eigenfunctions of a diffusion generator from
//! i.i.d. samples by solving the generalized eigenproblem `Σ a = μ L_λ a`
//! between an empirical covariance matrix and a regularized Dirichlet matrix,
//! both expressed in a finite basis (Nyström landmarks or random Fourier
//! features). Kernels are chosen either by K-fold cross-validation over a
//! finite dictionary or by gradient-based outer loops (mixture weights over a
//! Gaussian dictionary, or bounded anisotropic bandwidths).
//!
//! Module map:
//!
//! * [`kernels`]: closed-form kernels, Gaussian derivative identities, softmax mixture weights
//! * [`rff`]: random Fourier feature bases and their analytic derivatives
//! * [`operators`]: Nyström / RFF operator pairs, landmark selection
//! * [`eigsolve`]: Cholesky-reduced generalized eigensolver, lifting, gauge fixing
//! * [`cv`]: eigenvalue-sum, held-out Rayleigh and spectral-gap CV scores
//! * [`outer`]: variational outer loops (VMKL, bounded VarRFF) and Adam
//! * [`problems`]: synthetic benchmark datasets with reference eigenfunctions
//! * [`metrics`]: SubR² and correlation alignment
//! * [`methods`], [`reproduce`]: end-to-end fitting methods and table reproduction

pub mod cv;
pub mod eigsolve;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod methods;
pub mod metrics;
pub mod operators;
pub mod outer;
pub mod problems;
pub mod reproduce;
pub mod rff;
pub mod seed;

pub use cv::{CvCandidate, CvConfig, CvResult, ScoreRule};
pub use eigsolve::{EigenSolution, GevpSolution};
pub use error::{KdmError, Result};
pub use kernels::{Bandwidth, KernelFamily, KernelSpec, MixtureWeights};
pub use linalg::{Mat, Vector};
pub use methods::{FitConfig, FitOutput, MethodTag};
pub use metrics::MetricReport;
pub use operators::{BasisKind, NystromMatrices, NystromParts, OperatorPair};
pub use outer::{Ablation, OuterConfig, VarRffConfig};
pub use problems::{BenchmarkDataset, Problem};
pub use rff::RffBasis;

/// Library version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
