use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

/// Ordered list of diagnostics. Entries are appended in a fixed traversal
/// order so identical inputs produce identical reports.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub entries: Vec<ReportEntry>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.entries.push(ReportEntry {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        });
    }

    pub fn warn(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.entries.push(ReportEntry {
            severity: Severity::Warning,
            location: location.into(),
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.entries.iter().any(|e| e.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(|e| e.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(|e| e.severity == Severity::Warning)
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.entries.extend(other.entries);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            let sev = match e.severity {
                Severity::Warning => "warning",
                Severity::Error => "error",
            };
            write!(f, "{sev}: {}: {}", e.location, e.message)?;
        }
        Ok(())
    }
}
