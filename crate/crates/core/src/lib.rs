pub mod cost;
pub mod error;
pub mod liealg;
pub mod models;
pub mod mpc;
pub mod ocp;
pub mod poly;
pub mod privcoord;

pub use error::{Error, Result};
pub use models::{FieldDefinition, VehicleModel};
