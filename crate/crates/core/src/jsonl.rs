//! Line-delimited JSON plumbing shared by every file format in the crate.
//!
//! A stream may open with a header line `{"schema_version": 1, "kind": ...}`.
//! The header is optional on input and always written on output.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
}

/// Reads typed records one line at a time.
pub struct JsonLines<R> {
    reader: R,
    line_no: usize,
    buf: String,
    seen_first: bool,
}

impl<R: BufRead> JsonLines<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            line_no: 0,
            buf: String::new(),
            seen_first: false,
        }
    }

    /// Returns the next record with its 1-based line number.
    pub fn next_record<T: DeserializeOwned>(&mut self) -> Option<Result<(usize, T)>> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() {
                continue;
            }
            if !self.seen_first {
                self.seen_first = true;
                if line.contains("\"schema_version\"") {
                    match serde_json::from_str::<Header>(line) {
                        Ok(h) if h.schema_version == SCHEMA_VERSION => continue,
                        Ok(h) => {
                            return Some(Err(Error::UnsupportedSchema {
                                line: self.line_no,
                                found: h.schema_version,
                                expected: SCHEMA_VERSION,
                            }))
                        }
                        // Not a header after all; fall through and parse as a record.
                        Err(_) => {}
                    }
                }
            }
            let line_no = self.line_no;
            return Some(serde_json::from_str::<T>(line).map(|rec| (line_no, rec)).map_err(|e| {
                Error::MalformedRecord {
                    line: line_no,
                    message: e.to_string(),
                }
            }));
        }
    }
}

pub fn write_header<W: Write>(out: &mut W, kind: &str) -> Result<()> {
    let header = Header {
        schema_version: SCHEMA_VERSION,
        kind: Some(kind.to_string()),
    };
    serde_json::to_writer(&mut *out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_record<W: Write, T: Serialize>(out: &mut W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, record).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Deserialize, PartialEq)]
    struct Rec {
        a: u32,
    }

    fn read_all(input: &str) -> Vec<Result<(usize, Rec)>> {
        let mut lines = JsonLines::new(input.as_bytes());
        std::iter::from_fn(|| lines.next_record::<Rec>()).collect()
    }

    #[test]
    fn header_is_optional_and_skipped() {
        let with = read_all("{\"schema_version\":1,\"kind\":\"x\"}\n{\"a\":1}\n\n{\"a\":2}\n");
        let lines: Vec<_> = with.into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(lines, vec![(2, Rec { a: 1 }), (4, Rec { a: 2 })]);

        let without = read_all("{\"a\":7}\n");
        assert_eq!(without.into_iter().next().unwrap().unwrap(), (1, Rec { a: 7 }));
    }

    #[test]
    fn wrong_version_rejected() {
        let out = read_all("{\"schema_version\":9}\n{\"a\":1}\n");
        assert!(matches!(out[0], Err(Error::UnsupportedSchema { found: 9, .. })));
    }

    #[test]
    fn malformed_reports_line() {
        let out = read_all("{\"a\":1}\nnot json\n");
        assert!(matches!(out[1], Err(Error::MalformedRecord { line: 2, .. })));
    }
}
