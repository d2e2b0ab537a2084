//! Distance between two image time series, split into a time-independent
//! shape part and a time-dependent path part.
//!
//! Each series is modeled as a shape image deformed along
//! `exp(v · γ(t))` on either side of the shape time. Two models are moved to
//! a common shape time, the aligned shapes are registered to each other
//! (shape distance), and the path velocities are compared in one frame after
//! transport (path distance, a voxelwise maximum over time).
//!
//! ```no_run
//! use tsmetric::{fit_ts_model, total_distance, Provenance, Reference, RegParams};
//! # fn run(frames_a: Vec<tsmetric::ScalarImage>, frames_b: Vec<tsmetric::ScalarImage>) -> tsmetric::Result<()> {
//! let times = [0.0, 1.0, 2.0, 3.0, 4.0];
//! let reg = RegParams::default();
//! let a = fit_ts_model(&frames_a, &times, Provenance::Longitudinal, &reg)?;
//! let b = fit_ts_model(&frames_b, &times, Provenance::Longitudinal, &reg)?;
//! let report = total_distance(&a, &b, None, &reg, 101, Reference::B)?;
//! println!("ds = {}, dp = {}, D = {}", report.ds, report.dp, report.total);
//! # Ok(())
//! # }
//! ```

pub mod align;
pub mod error;
pub mod grid;
pub mod io;
pub mod metric;
pub mod model;
pub mod phantom;
pub mod registration;
pub mod selftest;
pub mod svf;

pub use align::{align_pair, common_interval, AlignedPair};
pub use error::{Error, Result};
pub use grid::{
    compose_disp, foreground_mask, gaussian_smooth, interp_scalar, interp_vector, magnitude_map,
    mean_over_mask, warp_image, FieldRole, GaussianSmooth, GridGeom, Mask, ScalarImage,
    VectorField,
};
pub use metric::{
    path_distance, shape_distance, total_distance, DistanceReport, Reference,
    DEFAULT_TIME_SAMPLES,
};
pub use model::{
    evaluate, fit_path, fit_ts_model, gamma_eval, rank1_fit, select_shape, GammaCurve, PathModel,
    Provenance, Side, TsModel,
};
pub use phantom::{build_sim_set, shepp_logan, synth_svf, SimConfig, SimSet, SimSetId};
pub use registration::{mse, register_svf, RegParams};
pub use svf::{bch_combine, exp_svf, invert_svf, jacobian, parallel_transport, TransportMethod};
