//! Spike-and-slab group lasso: posterior-mode fitting, spline-based additive
//! and interaction designs, debiased inference, model selection and the
//! simulation harness.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod basis;
pub mod cv;
pub mod debias;
pub mod design;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod penalty;
pub mod sim;
pub mod solver;

pub use basis::{BasisSpec, FeatureMap, Hierarchy, InteractionSpec, SplineBasis, SplineKind};
pub use cv::{kfold_cv, select_model, CvConfig, CvResult, SelectionRule};
pub use debias::{debiased_inference, DebiasOutput, DebiasReport};
pub use design::{GroupSpec, GroupedDesign, OrthoTransform};
pub use error::{Result, SsglError};
pub use model::{ModelSpec, PreparedModel, Predictor};
pub use penalty::PenaltyParams;
pub use sim::{ScenarioKind, SimOptions, SimReport, SimScenario};
pub use solver::{fit_path, fit_single, SigmaFloor, SsglConfig, SsglFit, SsglPath, WarmStart};

pub use nalgebra::{DMatrix, DVector};
