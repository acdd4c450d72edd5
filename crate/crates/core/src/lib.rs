//! Parsing, execution, symbolic analysis and PUF-based copy protection of
//! control-state abstract state machines.

pub mod ast;
pub mod interp;
pub mod par;
pub mod parser;
pub mod programs;
pub mod protect;
pub mod puf;
pub mod seed;
pub mod symexec;
pub mod verify;
