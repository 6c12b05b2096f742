//! Plain-text formats: flat `key = value` configs and versioned documents holding
//! header keys, row-major matrices and lists.
//!
//! Document layout:
//!
//! ```text
//! caamargin-<kind> v1
//! key = value
//! matrix <name> <rows> <cols>
//! <cols values>            (one line per row)
//! list <name> <len>
//! <len values>             (one line)
//! end
//! ```
//!
//! Floating point values are written in shortest round-trip exponent form, so a
//! write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Ordered `key = value` pairs with the line each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    /// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line,
                    message: format!("invalid key {key:?}"),
                });
            }
            if kv.get(key).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
            kv.entries.push((key.to_string(), value.trim().to_string(), line));
        }
        Ok(kv)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    /// Line number of `key`, zero for values set programmatically.
    pub fn line_of(&self, key: &str) -> usize {
        self.entries
            .iter()
            .find(|(k, _, _)| k == key)
            .map_or(0, |(_, _, l)| *l)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| Error::Parse {
                line: self.line_of(key),
                message: format!("{key}: {e}"),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(key)?.ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("missing key {key:?}"),
        })
    }

    /// Inserts or overwrites `key`.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _, _)| *k == key) {
            Some(e) => {
                e.1 = value;
                e.2 = 0;
            }
            None => self.entries.push((key, value, 0)),
        }
    }

    /// Overlays every entry of `other` on top of `self`.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v, _) in &other.entries {
            self.set(k.clone(), v.clone());
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v, _)| (k.as_str(), v.as_str()))
    }

    /// Rejects keys outside `allowed`, naming the line.
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        for (k, _, line) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("unknown key {k:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v, _) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Shortest round-trip text of an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// A typed document with header keys, named matrices and named lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    pub kind: String,
    pub header: KeyValues,
    pub matrices: Vec<(String, Array2<f64>)>,
    pub lists: Vec<(String, Vec<String>)>,
}

impl Document {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            ..Default::default()
        }
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: Array2<f64>) {
        self.matrices.push((name.into(), m));
    }

    pub fn push_list<I: IntoIterator<Item = S>, S: ToString>(&mut self, name: impl Into<String>, items: I) {
        self.lists
            .push((name.into(), items.into_iter().map(|s| s.to_string()).collect()));
    }

    pub fn matrix(&self, name: &str) -> Result<&Array2<f64>> {
        self.matrices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing matrix {name:?}"),
            })
    }

    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let items = self
            .lists
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l)
            .ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing list {name:?}"),
            })?;
        items
            .iter()
            .map(|s| {
                s.parse::<T>().map_err(|e| Error::Parse {
                    line: 0,
                    message: format!("list {name}: {e}"),
                })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("caamargin-{} v{}\n", self.kind, FORMAT_VERSION);
        out.push_str(&self.header.to_text());
        for (name, m) in &self.matrices {
            let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
            for row in m.rows() {
                let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        for (name, items) in &self.lists {
            let _ = writeln!(out, "list {name} {}", items.len());
            let _ = writeln!(out, "{}", items.join(" "));
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str, expected_kind: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, message: String| Error::Parse { line, message };
        let (_, first) = lines.next().ok_or_else(|| err(1, "empty document".into()))?;
        let expected = format!("caamargin-{expected_kind} v{FORMAT_VERSION}");
        if first.trim() != expected {
            return Err(err(1, format!("expected header {expected:?}, got {first:?}")));
        }
        let mut doc = Document::new(expected_kind);
        let mut header_text = String::new();
        let mut ended = false;
        while let Some((line, raw)) = lines.next() {
            let l = raw.trim();
            if l == "end" {
                ended = true;
                break;
            }
            let mut parts = l.split_whitespace();
            match parts.next() {
                Some("matrix") => {
                    let (name, rows, cols) = match (parts.next(), parts.next(), parts.next()) {
                        (Some(n), Some(r), Some(c)) => (
                            n.to_string(),
                            r.parse::<usize>().map_err(|e| err(line, e.to_string()))?,
                            c.parse::<usize>().map_err(|e| err(line, e.to_string()))?,
                        ),
                        _ => return Err(err(line, "malformed matrix header".into())),
                    };
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rl, row) = lines
                            .next()
                            .ok_or_else(|| err(line, format!("matrix {name} truncated")))?;
                        let before = data.len();
                        for tok in row.split_whitespace() {
                            data.push(tok.parse::<f64>().map_err(|e| err(rl, e.to_string()))?);
                        }
                        if data.len() - before != cols {
                            return Err(err(rl, format!("expected {cols} values in matrix {name}")));
                        }
                    }
                    let m = Array2::from_shape_vec((rows, cols), data)
                        .map_err(|e| err(line, e.to_string()))?;
                    doc.matrices.push((name, m));
                }
                Some("list") => {
                    let (name, len) = match (parts.next(), parts.next()) {
                        (Some(n), Some(k)) => (
                            n.to_string(),
                            k.parse::<usize>().map_err(|e| err(line, e.to_string()))?,
                        ),
                        _ => return Err(err(line, "malformed list header".into())),
                    };
                    let (ll, row) = lines
                        .next()
                        .ok_or_else(|| err(line, format!("list {name} truncated")))?;
                    let items: Vec<String> = row.split_whitespace().map(str::to_string).collect();
                    if items.len() != len {
                        return Err(err(ll, format!("expected {len} items in list {name}")));
                    }
                    doc.lists.push((name, items));
                }
                _ => {
                    if !l.is_empty() {
                        let kv = KeyValues::parse(l).map_err(|e| match e {
                            Error::Parse { message, .. } => err(line, message),
                            other => other,
                        })?;
                        for (k, v) in kv.iter() {
                            header_text.push_str(&format!("{k} = {v}\n"));
                            doc.header.entries.push((k.to_string(), v.to_string(), line));
                        }
                    }
                }
            }
        }
        if !ended {
            return Err(err(text.lines().count(), "missing `end`".into()));
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn key_values_report_line_numbers() {
        let kv = KeyValues::parse("# comment\nlr = 0.5\n\nepochs = x\n").unwrap();
        assert_eq!(kv.get("lr"), Some("0.5"));
        match kv.parsed::<usize>("epochs") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(KeyValues::parse("a = 1\nnot a pair\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse("a = 1\na = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(kv.check_known(&["lr"]), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn document_round_trip_is_exact() {
        let mut doc = Document::new("test");
        doc.header.set("seed", "7");
        doc.push_matrix("w", array![[0.1, -1e-300, std::f64::consts::PI], [1.0 / 3.0, 2.5e10, -0.0]]);
        doc.push_list("labels", [3, 1, 4]);
        let text = doc.to_text();
        let back = Document::parse(&text, "test").unwrap();
        let (a, b) = (doc.matrix("w").unwrap(), back.matrix("w").unwrap());
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.list::<usize>("labels").unwrap(), vec![3, 1, 4]);
        assert_eq!(back.header.get("seed"), Some("7"));
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn document_errors() {
        assert!(Document::parse("caamargin-x v1\nend\n", "y").is_err());
        assert!(matches!(
            Document::parse("caamargin-x v1\nmatrix m 1 2\n1.0\nend\n", "x"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(Document::parse("caamargin-x v1\n", "x").is_err());
    }
}
