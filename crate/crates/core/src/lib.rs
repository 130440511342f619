pub mod cfg;
pub mod cli;
pub mod frontend;
pub mod harness;
pub mod pairing;
pub mod pointsto;
pub mod rewrite;
pub mod runtime;
