//! Front end for `endorse-verify`: subcommands, experiment drivers and the
//! reproduction suite. The binary is a thin wrapper around [`cli::run`].

pub mod cli;
pub mod experiments;
pub mod suite;

pub use cli::{run, Outcome};
