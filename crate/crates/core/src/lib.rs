pub mod bounds;
pub mod cli;
pub mod error;
pub mod exact;
pub mod mc;
pub mod model;
pub mod quadrature;
pub mod special;
