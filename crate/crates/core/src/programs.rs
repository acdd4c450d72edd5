//! Example programs shipped with the crate.

use crate::ast::Program;
use crate::parser::parse_program;

pub const TRAFFIC_LIGHT: &str = include_str!("../programs/traffic_light.casm");
pub const FAULTY_TRAFFIC_LIGHT: &str = include_str!("../programs/faulty_traffic_light.casm");
pub const BATCH_MIXER: &str = include_str!("../programs/batch_mixer.casm");

fn load(src: &str) -> Program {
    parse_program(src).expect("bundled program parses")
}

pub fn traffic_light() -> Program {
    load(TRAFFIC_LIGHT)
}

pub fn faulty_traffic_light() -> Program {
    load(FAULTY_TRAFFIC_LIGHT)
}

pub fn batch_mixer() -> Program {
    load(BATCH_MIXER)
}
