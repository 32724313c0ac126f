// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias;
pub mod bounds;
pub mod calibration;
pub mod distribution;
pub mod entropy_machine;
pub mod error;
pub mod harness;
pub mod mi_machine;
pub mod morris;
pub mod num;
pub mod rng;
pub mod stats;
pub mod window;

pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/overview.md")]
    pub struct Overview;
    #[doc = include_str!("../../../book/src/morris.md")]
    pub struct Morris;
    #[doc = include_str!("../../../book/src/bias.md")]
    pub struct Bias;
    #[doc = include_str!("../../../book/src/calibration.md")]
    pub struct Calibration;
    #[doc = include_str!("../../../book/src/estimators.md")]
    pub struct Estimators;
    #[doc = include_str!("../../../book/src/bounds.md")]
    pub struct Bounds;
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub struct Experiments;
}
