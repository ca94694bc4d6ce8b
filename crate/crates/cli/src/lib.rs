//! Operator surface for formulink: the `formulink` command-line tool and the
//! JSON-over-HTTP service, with write-ahead persistence of sessions and runs.

pub mod api;
pub mod cli;
pub mod config;
pub mod runs;
pub mod store;
pub mod world;
