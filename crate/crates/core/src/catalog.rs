//! Example systems bundled with the library.

use std::path::{Path, PathBuf};

use crate::config::SystemFile;
use crate::error::{Error, Result};

pub struct Example {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! example {
    ($name:literal) => {
        Example {
            name: $name,
            text: include_str!(concat!("../systems/", $name, ".toml")),
        }
    };
}

pub const EXAMPLES: &[Example] = &[
    example!("saddle_observed"),
    example!("saddle_hidden"),
    example!("stable_pair"),
    example!("periodic_triangular"),
    example!("rotated_saddle"),
    example!("rotation"),
    example!("scalar_unstable"),
    example!("rotating_output"),
    example!("blind"),
    example!("coupled_triangular"),
    example!("switched"),
    example!("sampled_output"),
];

/// The six systems whose verdicts cover every outcome of the analysis.
pub const VERDICT_SUITE: [&str; 6] = [
    "saddle_observed",
    "saddle_hidden",
    "stable_pair",
    "periodic_triangular",
    "rotated_saddle",
    "rotation",
];

pub fn get(name: &str) -> Result<SystemFile> {
    let example = EXAMPLES
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Argument(format!("no bundled example named {name:?}")))?;
    SystemFile::parse(example.text)
}

/// Writes every example as `<name>.toml` into `dir`, creating it if needed.
pub fn write_all(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    EXAMPLES
        .iter()
        .map(|e| {
            let path = dir.join(format!("{}.toml", e.name));
            std::fs::write(&path, e.text)?;
            Ok(path)
        })
        .collect()
}
