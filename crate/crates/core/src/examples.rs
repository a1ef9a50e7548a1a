//! The two bundled example problems.

use crate::error::{Error, Result};
use crate::problem::ProblemFile;

pub const EXAMPLE_IDS: [&str; 2] = ["example1", "example2"];

/// Unstable nonminimum-phase plant with an LQG controller, Θ = 0.5.
pub const EXAMPLE1_JSON: &str = include_str!("../data/example1.json");
/// Short-period aircraft dynamics, Θ = 0.0035, compensation on during `[50, 100)`.
pub const EXAMPLE2_JSON: &str = include_str!("../data/example2.json");

pub fn example_json(id: &str) -> Option<&'static str> {
    match id {
        "example1" => Some(EXAMPLE1_JSON),
        "example2" => Some(EXAMPLE2_JSON),
        _ => None,
    }
}

pub fn example_problem(id: &str) -> Result<ProblemFile> {
    let text = example_json(id).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown example '{id}' (expected one of {})",
            EXAMPLE_IDS.join(", ")
        ))
    })?;
    ProblemFile::from_json(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_examples_build() {
        for id in EXAMPLE_IDS {
            let p = example_problem(id).unwrap().build().unwrap();
            assert!(p.simulation.is_some());
        }
        assert!(example_problem("example3").is_err());
    }
}
