pub mod ddp;
pub mod dynamics;
pub mod error;
pub mod fixtures;
pub mod kinematics;
pub mod metrics;
pub mod motion;
pub mod qp;
pub mod robot;
pub mod smr;
pub mod tmr;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
