use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_csv, Dataset};
use crate::error::{Error, Result};

const IRIS_CSV: &str = include_str!("../../data/iris.csv");
const IRIS_SHA256: &str = "9cc1c345c71bcc9b486b74cbf6063fa66f4bb5e0f603a4b3c3471ec2e5e8e355";
const DIGITS_CSV: &str = include_str!("../../data/digits.csv");
const DIGITS_SHA256: &str = "592cc047d0a1cc7fdef9fd724514209dcb45a80aa147dc3ab375e3e1a9a380f4";

/// Checked-in benchmark datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    /// 150 flowers, 4 measurements, 3 species.
    Iris,
    /// 1797 8x8 handwritten digits, 64 pixel intensities, 10 classes.
    Digits,
}

impl Builtin {
    pub fn label_column(self) -> &'static str {
        match self {
            Builtin::Iris => "species",
            Builtin::Digits => "digit",
        }
    }

    fn source(self) -> (&'static str, &'static str) {
        match self {
            Builtin::Iris => (IRIS_CSV, IRIS_SHA256),
            Builtin::Digits => (DIGITS_CSV, DIGITS_SHA256),
        }
    }
}

impl std::str::FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iris" => Ok(Builtin::Iris),
            "digits" => Ok(Builtin::Digits),
            other => Err(Error::config(format!("unknown built-in dataset {other:?}"))),
        }
    }
}

/// Loads a built-in dataset after verifying its snapshot checksum.
pub fn builtin(which: Builtin) -> Result<Dataset> {
    let (text, expected) = which.source();
    let digest = Sha256::digest(text.as_bytes());
    let actual: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    if actual != expected {
        return Err(Error::data(format!("{which:?} snapshot checksum mismatch: {actual}")));
    }
    read_csv(text.as_bytes(), which.label_column())
}
