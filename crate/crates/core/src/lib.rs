pub mod arm;
pub mod env;
pub mod learn;
pub mod reservoir;
pub mod rod;
pub mod so3;
