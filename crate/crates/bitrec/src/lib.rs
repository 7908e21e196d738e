//! Benchmark harness, file formats, pipe imaging and command-line front end for
//! [`bitrec_core`].

pub mod bench;
pub mod cli;
pub mod io;
pub mod overrides;
pub mod pipe;
pub mod recover;
