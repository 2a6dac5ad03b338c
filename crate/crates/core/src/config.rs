//! Flat structured-text configuration files: `[section]` headers over
//! `key = value` lines. Blank lines and lines starting with `#` are ignored.
//! The format needs no dependencies to parse in any language, which is the
//! point: run manifests embed these files as the reproduction recipe.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// One `[name]` block and its entries, in file order.
#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    entries: Vec<(String, String)>,
    /// 1-based line of the `[name]` header in the source text.
    pub line: usize,
    origin: String,
}

impl Section {
    fn context(&self, key: &str) -> String {
        format!("{}: [{}] {key}", self.origin, self.name)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(format!("{}: missing key", self.context(key))))
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, kind: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::config(format!("{}: '{raw}' is not a {kind}", self.context(key)))
            }),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parsed(key, "whole number")
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parsed(key, "whole number")
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parsed(key, "number")
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some("true") | Some("yes") | Some("on") => Ok(Some(true)),
            Some("false") | Some("no") | Some("off") => Ok(Some(false)),
            Some(raw) => Err(Error::config(format!(
                "{}: '{raw}' is not a boolean (true/false)",
                self.context(key)
            ))),
        }
    }

    /// Comma-separated whole numbers, e.g. hidden-layer widths.
    pub fn get_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) if raw.trim().is_empty() => Ok(Some(Vec::new())),
            Some(raw) => raw
                .split(',')
                .map(|p| {
                    p.trim().parse::<usize>().map_err(|_| {
                        Error::config(format!(
                            "{}: '{p}' is not a whole number",
                            self.context(key)
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// Comma-separated numbers, e.g. per-axis bounds.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) if raw.trim().is_empty() => Ok(Some(Vec::new())),
            Some(raw) => raw
                .split(',')
                .map(|p| {
                    p.trim().parse::<f64>().map_err(|_| {
                        Error::config(format!("{}: '{p}' is not a number", self.context(key)))
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_usize(key)?.unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self.get_u64(key)?.unwrap_or(default))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_f64(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        Ok(self.get_bool(key)?.unwrap_or(default))
    }
}

/// A parsed configuration file; sections keep file order.
#[derive(Debug, Clone)]
pub struct ConfigDoc {
    sections: Vec<Section>,
    origin: String,
}

impl ConfigDoc {
    /// Parses configuration text. `origin` names the source (usually a file
    /// path) in every error message.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let name = header.strip_suffix(']').ok_or_else(|| {
                    Error::config(format!("{origin}:{line_no}: unterminated section header"))
                })?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::config(format!(
                        "{origin}:{line_no}: empty section name"
                    )));
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(Error::config(format!(
                        "{origin}:{line_no}: duplicate section [{name}]"
                    )));
                }
                sections.push(Section {
                    name: name.to_string(),
                    entries: Vec::new(),
                    line: line_no,
                    origin: origin.to_string(),
                });
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "{origin}:{line_no}: expected 'key = value' or '[section]'"
                ))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::config(format!("{origin}:{line_no}: empty key")));
            }
            let section = sections.last_mut().ok_or_else(|| {
                Error::config(format!(
                    "{origin}:{line_no}: '{key}' appears before any [section]"
                ))
            })?;
            if section.entries.iter().any(|(k, _)| k == key) {
                return Err(Error::config(format!(
                    "{origin}:{line_no}: duplicate key '{key}' in [{}]",
                    section.name
                )));
            }
            section
                .entries
                .push((key.to_string(), value.trim().to_string()));
        }
        Ok(ConfigDoc {
            sections,
            origin: origin.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Section> {
        self.section(name).ok_or_else(|| {
            Error::config(format!("{}: missing section [{name}]", self.origin))
        })
    }

    pub fn sections(&self) -> impl Iterator<Item = &Section> {
        self.sections.iter()
    }

    /// Canonical serialization: parse(render(doc)) == doc, modulo comments
    /// and spacing of the source text.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{}]", s.name);
            for (k, v) in &s.entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}

/// A builder for writing config-formatted files (manifests, snapshots).
#[derive(Debug, Default)]
pub struct ConfigWriter {
    doc: Vec<(String, Vec<(String, String)>)>,
}

impl ConfigWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        self.doc.push((name.to_string(), Vec::new()));
        self
    }

    pub fn entry(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.doc
            .last_mut()
            .expect("entry() before section()")
            .1
            .push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, (name, entries)) in self.doc.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}
