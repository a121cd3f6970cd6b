pub mod cli;
pub mod exec;
pub mod profile;
pub mod sim;
pub mod stats;
pub mod ttl;
