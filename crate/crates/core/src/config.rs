//! TOML system files.
//!
//! ```toml
//! name = "saddle"
//! horizon = 60.0          # optional
//! expected = "detectable" # optional, informational
//!
//! [A]
//! kind = "constant"
//! values = [[1.0, 0.0], [0.0, -1.0]]
//!
//! [C]
//! kind = "constant"
//! values = [[1.0, 0.0]]
//!
//! [partition]             # optional
//! k = 1
//! ```
//!
//! Other kinds: `periodic` (`offset` plus `[[A.terms]]` with `row`, `col`,
//! `amplitude`, `frequency`, `phase`, `wave = "sin" | "cos"`), `piecewise`
//! (`breakpoints` and one matrix per piece in `values`) and `sampled` (`start`,
//! `step`, `values`).

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::from_rows;
use crate::system::{CoefficientFunction, LtvSystem, TrigTerm};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant {
        values: Rows,
    },
    Periodic {
        offset: Rows,
        #[serde(default)]
        terms: Vec<TrigTerm>,
    },
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<Rows>,
    },
    Sampled {
        #[serde(default)]
        start: f64,
        step: f64,
        values: Vec<Rows>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
    #[serde(rename = "A")]
    pub a: CoefficientSpec,
    #[serde(rename = "C")]
    pub c: CoefficientSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSpec>,
}

fn matrix(rows: &Rows, field: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Parse(format!("{field}: matrix must be nonempty")));
    }
    from_rows(rows).map_err(|e| Error::Parse(format!("{field}: {e}")))
}

impl CoefficientSpec {
    pub fn build(&self, field: &str) -> Result<CoefficientFunction> {
        let wrap = |e: Error| match e {
            Error::Parse(_) => e,
            other => Error::Parse(format!("{field}: {other}")),
        };
        match self {
            CoefficientSpec::Constant { values } => {
                CoefficientFunction::constant(matrix(values, &format!("{field}.values"))?).map_err(wrap)
            }
            CoefficientSpec::Periodic { offset, terms } => {
                CoefficientFunction::periodic(matrix(offset, &format!("{field}.offset"))?, terms.clone()).map_err(wrap)
            }
            CoefficientSpec::Piecewise { breakpoints, values } => {
                let values = values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| matrix(v, &format!("{field}.values[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                CoefficientFunction::piecewise_constant(breakpoints.clone(), values).map_err(wrap)
            }
            CoefficientSpec::Sampled { start, step, values } => {
                let values = values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| matrix(v, &format!("{field}.values[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                CoefficientFunction::sampled(*start, *step, values).map_err(wrap)
            }
        }
    }
}

impl SystemFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("system files serialize")
    }

    /// Builds the system and checks the declared dimensions.
    pub fn build(&self) -> Result<LtvSystem> {
        let a = self.a.build("A")?;
        let c = self.c.build("C")?;
        if let Some(n) = self.n {
            if a.rows() != n {
                return Err(Error::Dimension(format!("n = {n} but A is {}x{}", a.rows(), a.cols())));
            }
        }
        if let Some(p) = self.p {
            if c.rows() != p {
                return Err(Error::Dimension(format!("p = {p} but C has {} rows", c.rows())));
            }
        }
        if let Some(part) = self.partition {
            if part.k > a.rows() {
                return Err(Error::Dimension(format!("partition.k = {} exceeds n = {}", part.k, a.rows())));
            }
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(Error::Parse(format!("horizon must be positive, got {h}")));
            }
        }
        Ok(LtvSystem::new(a, c)?.with_name(self.name.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_file() {
        let text = r#"
name = "saddle"
[A]
kind = "constant"
values = [[1.0, 0.0], [0.0, -1.0]]
[C]
kind = "constant"
values = [[1.0, 0.0]]
[partition]
k = 1
"#;
        let file = SystemFile::parse(text).unwrap();
        let sys = file.build().unwrap();
        assert_eq!((sys.n(), sys.p(), sys.name()), (2, 1, "saddle"));
        assert_eq!(file.partition, Some(PartitionSpec { k: 1 }));
        let again = SystemFile::parse(&file.to_toml()).unwrap();
        assert_eq!(again, file);
    }

    #[test]
    fn periodic_and_sampled_kinds() {
        let text = r#"
[A]
kind = "periodic"
offset = [[0.0]]
terms = [{ row = 0, col = 0, amplitude = 2.0, frequency = 1.0, wave = "sin" }]
[C]
kind = "sampled"
step = 1.0
values = [[[0.0]], [[2.0]]]
"#;
        let sys = SystemFile::parse(text).unwrap().build().unwrap();
        assert!((sys.a().value_at(std::f64::consts::FRAC_PI_2)[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(sys.c().value_at(0.5)[(0, 0)], 1.0);
    }

    #[test]
    fn errors_name_the_field() {
        let ragged = "[A]\nkind = \"constant\"\nvalues = [[1.0, 0.0], [0.0]]\n[C]\nkind = \"constant\"\nvalues = [[1.0, 0.0]]\n";
        let err = SystemFile::parse(ragged).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("A.values"), "{err}");

        let unknown = "[A]\nkind = \"spline\"\nvalues = [[1.0]]\n[C]\nkind = \"constant\"\nvalues = [[1.0]]\n";
        let err = SystemFile::parse(unknown).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");

        let mismatch = "[A]\nkind = \"constant\"\nvalues = [[1.0]]\n[C]\nkind = \"constant\"\nvalues = [[1.0, 2.0]]\n";
        assert!(matches!(SystemFile::parse(mismatch).unwrap().build(), Err(Error::Dimension(_))));
    }
}
