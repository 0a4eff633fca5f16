pub mod analysis;
pub mod audit;
pub mod board;
pub mod crypto;
pub mod engine;
pub mod routing;
pub mod shuffle;
pub mod wire;
