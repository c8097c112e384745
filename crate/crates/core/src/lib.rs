//! Johnson-counter arithmetic on a simulated compute-in-memory subarray.

pub mod bits;
pub mod fabric;
pub mod jc;
pub mod layout;
pub mod uprog;
pub mod backends;
pub mod counter;
pub mod iarm;
pub mod tensor;
pub mod shield;
pub mod bench;
