pub mod comm;
pub mod condensed;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod lmpc;
pub mod nominal;
pub mod qp;
pub mod safe_set;
pub mod scenario;
pub mod validate;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/vehicle-model.md")]
    mod vehicle_model {}
    #[doc = include_str!("../../../book/src/nominal-mpc.md")]
    mod nominal_mpc {}
    #[doc = include_str!("../../../book/src/safe-set.md")]
    mod safe_set {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/sr-lmpc.md")]
    mod sr_lmpc {}
    #[doc = include_str!("../../../book/src/scenario.md")]
    mod scenario {}
}
