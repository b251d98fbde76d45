use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureSchema, RawSample};

pub fn parse_dataset(text: &str, schema: &FeatureSchema) -> Result<Vec<RawSample>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| RawSample::parse(l, i + 1, schema))
        .collect()
}

pub fn format_dataset(samples: &[RawSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&s.to_line());
        out.push('\n');
    }
    out
}

pub fn read_dataset(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<RawSample>> {
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_dataset(&text, schema).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.as_ref().display()),
        },
        other => other,
    })
}

pub fn write_dataset(samples: &[RawSample], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(&path, format_dataset(samples)).map_err(|e| Error::io(&path, e))
}
