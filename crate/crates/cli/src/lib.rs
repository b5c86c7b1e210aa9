//! Library side of the `flsched` command line tool: the experiment drivers
//! that the binary's subcommands (and the acceptance tests) run.

pub mod driver;
