pub mod barrier;
pub mod penalty;
pub mod model;
pub mod inner;
pub mod outer;
pub mod bench;
pub mod check;
pub mod cli;
