//! Injective prime assignments: one prime per class-with-weights `(e, q̄)` and
//! one per positive element of `G₀` for the tree construction, persisted in an
//! append-only registry log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use num_integer::Integer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keq::Point;
use crate::system::{SystemStage, Tuple};

#[derive(Debug, Error)]
pub enum PrimeError {
    #[error("registry i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("registry line {line}: {msg}")]
    Corrupt { line: usize, msg: String },
    #[error("point {0} is not realized at this stage")]
    NotRealized(Point),
    #[error("tuple {0:?} repeats a point")]
    NotInjective(Tuple),
    #[error("weights must be positive and match the tuple length")]
    BadWeights,
}

/// What a prime is attached to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassKey {
    /// An `E_k`-class, named by its canonical representative, with weights.
    ClassTuple { k: usize, rep: Tuple, q: Vec<u64> },
    /// A positive element of `G₀`, as sorted `(point, coefficient)` pairs.
    G0Element { terms: Vec<(Point, i64)> },
}

impl ClassKey {
    /// Integers the assigned prime must not divide.
    fn coprime_to(&self) -> Vec<u64> {
        match self {
            ClassKey::ClassTuple { q, .. } => q.clone(),
            ClassKey::G0Element { terms } => terms.iter().map(|&(_, c)| c.unsigned_abs()).collect(),
        }
    }

    /// The `G₀` key of an integral element given by its nonzero terms.
    pub fn g0(terms: impl IntoIterator<Item = (Point, i64)>) -> Self {
        let mut terms: Vec<(Point, i64)> = terms.into_iter().filter(|t| t.1 != 0).collect();
        terms.sort();
        ClassKey::G0Element { terms }
    }
}

/// Trial-division primality, adequate for the small primes in use.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Canonical key of the class of `x̄` at this stage: the member with the least
/// tuple birth level (untouched tuples last), then the least latest point
/// birth, then the lexicographically least tuple.
pub fn canonical_class_key(
    stage: &SystemStage,
    xs: &[Point],
    q: &[u64],
) -> Result<ClassKey, PrimeError> {
    if q.len() != xs.len() || q.contains(&0) || xs.is_empty() {
        return Err(PrimeError::BadWeights);
    }
    let mut sorted = xs.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != xs.len() {
        return Err(PrimeError::NotInjective(xs.to_vec()));
    }
    if let Some(&x) = xs.iter().find(|x| !stage.y_set().contains(x)) {
        return Err(PrimeError::NotRealized(x));
    }
    let class = stage.tuple_classes(xs.len()).class_of(xs);
    Ok(ClassKey::ClassTuple {
        k: xs.len(),
        rep: class_representative(stage, &class),
        q: q.to_vec(),
    })
}

/// The canonical member of a (nonempty) class.
pub fn class_representative(stage: &SystemStage, class: &[Tuple]) -> Tuple {
    let rank = |t: &Tuple| {
        let birth = stage.tuple_birth(t).unwrap_or(usize::MAX);
        let latest = t
            .iter()
            .filter_map(|&x| stage.y_birth(x))
            .max()
            .unwrap_or(0);
        (birth, latest, t.clone())
    };
    class
        .iter()
        .min_by_key(|t| rank(t))
        .expect("nonempty class")
        .clone()
}

/// The registry of assigned primes, optionally backed by a log file.
#[derive(Debug, Default)]
pub struct PrimeRegistry {
    assignments: BTreeMap<ClassKey, u64>,
    reverse: BTreeMap<u64, ClassKey>,
    log: Option<PathBuf>,
}

impl PrimeRegistry {
    /// An empty registry that is not persisted.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a registry log and replays it.
    pub fn open(path: &Path) -> Result<Self, PrimeError> {
        let mut reg = Self {
            log: Some(path.to_path_buf()),
            ..Self::default()
        };
        if path.exists() {
            let file = File::open(path)?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |msg: String| PrimeError::Corrupt { line: i + 1, msg };
                let (p, key) = line
                    .split_once('\t')
                    .ok_or_else(|| corrupt("missing tab".into()))?;
                let p: u64 = p.parse().map_err(|e| corrupt(format!("{e}")))?;
                let key: ClassKey =
                    serde_json::from_str(key).map_err(|e| corrupt(format!("{e}")))?;
                reg.insert(p, key).map_err(corrupt)?;
            }
        }
        Ok(reg)
    }

    fn insert(&mut self, p: u64, key: ClassKey) -> Result<(), String> {
        if !is_prime(p) {
            return Err(format!("{p} is not prime"));
        }
        if self.reverse.contains_key(&p) || self.assignments.contains_key(&key) {
            return Err(format!("duplicate assignment for {p}"));
        }
        if key.coprime_to().iter().any(|&w| w % p == 0) {
            return Err(format!("{p} divides a weight of its key"));
        }
        self.assignments.insert(key.clone(), p);
        self.reverse.insert(p, key);
        Ok(())
    }

    /// The prime of `key`, assigning the least admissible unused prime on
    /// first request and appending it to the log.
    pub fn assign_prime(&mut self, key: &ClassKey) -> Result<u64, PrimeError> {
        if let Some(&p) = self.assignments.get(key) {
            return Ok(p);
        }
        let weights = key.coprime_to();
        let p = (2..)
            .filter(|&p| is_prime(p))
            .find(|p| !self.reverse.contains_key(p) && weights.iter().all(|w| w.gcd(p) == 1))
            .expect("infinitely many primes");
        if let Some(path) = &self.log {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(
                f,
                "{p}\t{}",
                serde_json::to_string(key).expect("keys serialize")
            )?;
            f.sync_all()?;
        }
        self.insert(p, key.clone()).expect("fresh admissible prime");
        Ok(p)
    }

    pub fn prime_of(&self, key: &ClassKey) -> Option<u64> {
        self.assignments.get(key).copied()
    }

    pub fn lookup_prime(&self, p: u64) -> Option<&ClassKey> {
        self.reverse.get(&p)
    }

    /// All assignments in increasing prime order.
    pub fn entries(&self) -> impl Iterator<Item = (u64, &ClassKey)> {
        self.reverse.iter().map(|(&p, k)| (p, k))
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    /// Injectivity and coprimality of the current table.
    pub fn check(&self) -> Result<(), String> {
        if self.assignments.len() != self.reverse.len() {
            return Err("assignment table is not injective".into());
        }
        for (p, key) in &self.reverse {
            if self.assignments.get(key) != Some(p) {
                return Err(format!("prime {p} is not inverse to its key"));
            }
            if !is_prime(*p) {
                return Err(format!("{p} is not prime"));
            }
            if key.coprime_to().iter().any(|w| w % p == 0) {
                return Err(format!("{p} divides a weight of its key"));
            }
        }
        Ok(())
    }
}
