//! Indefinite theta series built from generalized error functions.

pub mod boosted;
pub mod cones;
pub mod errfn;
pub mod exact;
pub mod quadform;
pub mod special;
pub mod subset;
pub mod theta;
pub mod verify;

pub use errfn::{ErrFnArgument, ErrFnError, ErrFnValue, FrameEvaluator, Kind, QuadratureScheme, QuadratureSpec};
pub use quadform::{BilinearForm, ErrorFunctionFrame, QuadformError};
pub use subset::Subset;
