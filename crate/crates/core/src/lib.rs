//! Numerical analysis of linear time-varying systems `x' = A(t) x`, `y = C(t) x`:
//! exponential dichotomies, continuous QR triangularization, observability
//! Gramians, block-diagonal reduction and observer-based detectability tests.

// NaN-rejecting comparisons are written as negations on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod config;
pub mod detect;
pub mod dichotomy;
pub mod error;
pub mod gramian;
pub mod linalg;
pub mod observer;
pub mod propagate;
pub mod qrflow;
pub mod reduce;
pub mod system;

pub use config::SystemFile;
pub use detect::{analyze, analyze_diagonal, AnalysisOptions, DetectabilityReport, Route, Stage, Verdict};
pub use dichotomy::{certify_dichotomy, estimate_exponents, recheck_dichotomy, CertGrid, DichotomyCertificate, ExponentEstimate};
pub use error::{Error, Result};
pub use gramian::{check_injection_invariance, check_uco, observability_gramian, GramianReport};
pub use observer::{certify_error_decay, solve_filter_riccati, synthesize_gain, DecayCertificate, RiccatiSolution};
pub use propagate::{Integrator, IntegratorSettings, Method, TransitionCache};
pub use qrflow::{run_qr_flow, triangularized_system, QrFlowResult, QrSettings};
pub use reduce::{coppel_transform, triangular_reduction, BlockDiagReduction};
pub use system::{assemble_block_triangular, BlockPartition, CoefficientFunction, LtvSystem, TrigTerm, Wave};
