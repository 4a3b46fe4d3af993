//! Measurement-model re-estimation by KL-divergence minimisation against a
//! proxy distribution, plus trajectory diagnostics.

mod diagnostics;
mod fit;
mod model;
pub mod simplex;

pub use diagnostics::{classify_diagnostics, Classification, Evidence, FitDiagnostics, DIAGNOSTIC_FITS};
pub use fit::{fit_params, kl_objective, KlObjective};
pub use model::{apply_model, init_params};
