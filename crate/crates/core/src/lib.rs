//! Band and band-dominated operators on finite windows of discrete metric
//! spaces: exact `p in {1, inf, 0}` norms, band decompositions, partitions of
//! unity, quasi-locality, limit operators along lattice directions, lower
//! norms and parametrices.
//!
//! Numeric types are generic over [`Scalar`]; the aliases below fix `f64`
//! (and `f32` where single precision is useful).

pub mod error;
pub mod expr;
pub mod fredholm;
pub mod linalg;
pub mod operator;
pub mod partition;
pub mod quasilocal;
pub mod limits;
pub mod scalar;
pub mod space;

pub use error::{Error, Result};
pub use expr::{parse_expression, Expr};
pub use operator::{band_from_offsets, BandOperator, NormRegime, OffsetTerm, SymbolicSource};
pub use scalar::{Distance, Scalar};
pub use space::{make_grid_space, MetricKind, Space, SupportSet};

pub type Operator = BandOperator<f64>;
pub type Operator32 = BandOperator<f32>;
pub type Partition = partition::PartitionOfUnity<f64>;
pub type Dual = partition::DualFamily<f64>;
pub type LimitOperator = limits::LimitOperatorResult<f64>;
