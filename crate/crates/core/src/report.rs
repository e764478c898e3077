//! Itemized pass/fail reports shared by the invariant checkers.

use serde::{Deserialize, Serialize};

/// The outcome of one named clause; failures carry a counterexample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub clause: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

/// An ordered list of clause verdicts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub verdicts: Vec<Verdict>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a clause from the first counterexample found, if any.
    pub fn record(&mut self, clause: &str, failure: Option<String>) {
        self.verdicts.push(Verdict {
            clause: clause.to_string(),
            pass: failure.is_none(),
            witness: failure,
        });
    }

    /// Records a clause checked by a fallible closure.
    pub fn check(&mut self, clause: &str, result: Result<(), String>) {
        self.record(clause, result.err());
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.pass)
    }

    pub fn verdict(&self, clause: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.clause == clause)
    }

    /// Appends another report, prefixing its clause names.
    pub fn absorb(&mut self, prefix: &str, other: Report) {
        for mut v in other.verdicts {
            v.clause = format!("{prefix}{}", v.clause);
            self.verdicts.push(v);
        }
    }
}
