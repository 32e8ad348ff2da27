//! CSV emission with a leading `#` line recording version and configuration.

use std::fs::File;
use std::io::{self, BufWriter, Write};

use crate::config::RunConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("SDEADJ_VERSION");

pub struct CsvOut {
    inner: csv::Writer<Box<dyn Write>>,
}

impl CsvOut {
    /// Opens `path` (`-` is stdout) and writes the comment and column lines.
    pub fn create(path: &str, cfg: &RunConfig, columns: &[String]) -> Result<Self, CliError> {
        let mut sink: Box<dyn Write> = if path == "-" {
            Box::new(BufWriter::new(io::stdout().lock()))
        } else {
            Box::new(BufWriter::new(File::create(path)?))
        };
        writeln!(sink, "# sdeadj {VERSION} {cfg}")?;
        let mut inner = csv::Writer::from_writer(sink);
        inner.write_record(columns)?;
        Ok(Self { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Shortest decimal that parses back to the same value, in exponent form
/// for very small or large magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn columns(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
