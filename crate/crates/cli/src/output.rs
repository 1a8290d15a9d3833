//! CSV tables with `#` metadata lines.

use std::io::Write;

use crate::CliError;

pub struct Table {
    pub meta: Vec<(String, String)>,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            meta: Vec::new(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, out: impl Write) -> Result<(), CliError> {
        let mut out = out;
        let meta: Vec<String> = self.meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(out, "# {}", meta.join(" ")).map_err(CliError::Io)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header).map_err(|e| CliError::Io(e.into()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::Io(e.into()))?;
        }
        w.flush().map_err(CliError::Io)
    }
}

/// Shortest round-trip representation; `inf` and `NaN` spelled out.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_line_then_header() {
        let mut t = Table::new(&["a", "b"]);
        t.meta("seed", 4);
        t.push(vec![num(0.1), "x,y".into()]);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# seed=4\na,b\n0.1,\"x,y\"\n");
    }
}
