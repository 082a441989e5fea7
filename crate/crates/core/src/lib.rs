//! Sparse identification of nonlinear dynamics (SINDy) hardened against two
//! kinds of modelling uncertainty:
//!
//! * the analyst only knows a *superset* of the system variables, handled by
//!   permutation-calibrated causal screening in [`causal`];
//! * the candidate function library is *incomplete*, handled by learning
//!   auxiliary data-space atoms with sparse coding in [`dictlearn`].
//!
//! The pipeline is `TimeSeries` -> derivative estimate -> `FunctionLibrary`
//! -> sequential thresholded least squares -> `SparseModel`, scored by the
//! variable-selection metrics in [`metrics`]. [`harness`] wires everything
//! into the reproducible experiment runner used by the `sindy` binary.

pub mod causal;
pub mod dictlearn;
pub mod differentiate;
pub mod error;
pub mod harness;
pub mod library;
pub mod linalg;
pub mod metrics;
pub mod seed;
pub mod simulate;
pub mod stls;
pub mod timeseries;

pub use causal::{fit_augmented, screen_variables, CausalMask, ScreeningConfig};
pub use dictlearn::{learn_basis, learn_basis_with_states, match_atoms, match_atoms_outside, AtomMatch, DictLearnConfig, LearnedBasis};
pub use differentiate::{finite_diff, smooth_diff, smooth_diff_order, DerivativeMatrix, DiffMethod};
pub use error::{Error, Result};
pub use library::{
    build_polynomial_library, extend_library, restrict_library, ExtraColumn, FunctionLibrary,
    LibrarySpec, Term, TermKind, TrigFn,
};
pub use metrics::{aggregate, fdes, fpiv, select, GroundTruthCausal, Metric, MetricReport};
pub use simulate::{integrate, true_model, OdeSystem, SimConfig, SystemKind, VectorField};
pub use stls::{fit_sindy, stls_solve, FitOptions, Normalization, Solver, SparseModel};
pub use timeseries::{augment_with_noise, load_csv, save_csv, CsvSchema, NoiseMode, NoiseSpec, TimeSeries};
