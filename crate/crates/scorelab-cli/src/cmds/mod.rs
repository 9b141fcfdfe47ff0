pub mod eval;
pub mod gen_model;
pub mod sample;
pub mod schedule;
pub mod sweep;
pub mod train;
pub mod unroll;
