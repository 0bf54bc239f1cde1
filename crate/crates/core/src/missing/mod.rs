//! Estimation with missing values: iterative imputation, risk criteria with
//! finite-difference divergence, adaptive selection and mask generation.

mod ada;
mod fd;
mod impute;
mod mask;

pub use ada::{imputeada, ImputeadaOptions};
pub use fd::{divergence_fd, gsure_miss, sure_miss, FdDivergence, FdOptions};
pub use impute::{iterative_impute, ImputationResult, ImputeOptions, ImputeRule, Init, IsaRule};
pub use mask::{hide_cells, insert_missing, mar_driver, MissingMechanism};
