//! Oriented finite partial automorphisms of `M`, strictly increasing chains of
//! them, and the interleaved chain enumeration that schedules the system
//! construction.
//!
//! An oriented partial automorphism is a pair `(map, orient)`; inverting flips
//! the orientation bit, so no element equals its own inverse.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keq::{is_partial_iso, Point};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AutoError {
    #[error("partial automorphism must be nonempty")]
    Empty,
    #[error("map is not injective: {0}")]
    NotInjective(String),
    #[error("map is not a partial automorphism of M: {0}")]
    NotIsomorphism(String),
    #[error("orientation bit must be 0 or 1, got {0}")]
    BadOrient(u8),
    #[error("chain item {0} does not strictly extend item {1} with equal orientation")]
    NotIncreasing(usize, usize),
    #[error("point {0} is outside the domain of the chain")]
    OutsideDomain(Point),
}

/// A finite nonempty partial automorphism of `M` with an orientation bit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OrientedPartialAuto {
    map: BTreeMap<Point, Point>,
    orient: u8,
}

impl OrientedPartialAuto {
    pub fn new(map: BTreeMap<Point, Point>, orient: u8) -> Result<Self, AutoError> {
        if orient > 1 {
            return Err(AutoError::BadOrient(orient));
        }
        if map.is_empty() {
            return Err(AutoError::Empty);
        }
        let images: BTreeSet<Point> = map.values().copied().collect();
        if images.len() != map.len() {
            return Err(AutoError::NotInjective(format!("{map:?}")));
        }
        is_partial_iso(&map).map_err(AutoError::NotIsomorphism)?;
        Ok(Self { map, orient })
    }

    /// Convenience constructor from a pair list.
    pub fn from_pairs(pairs: &[(Point, Point)], orient: u8) -> Result<Self, AutoError> {
        Self::new(pairs.iter().copied().collect(), orient)
    }

    pub fn map(&self) -> &BTreeMap<Point, Point> {
        &self.map
    }

    pub fn orient(&self) -> u8 {
        self.orient
    }

    pub fn get(&self, x: Point) -> Option<Point> {
        self.map.get(&x).copied()
    }

    pub fn dom(&self) -> BTreeSet<Point> {
        self.map.keys().copied().collect()
    }

    pub fn ran(&self) -> BTreeSet<Point> {
        self.map.values().copied().collect()
    }

    /// `(h⁻¹, 1 − ι)`.
    pub fn invert(&self) -> Self {
        Self {
            map: self.map.iter().map(|(&a, &b)| (b, a)).collect(),
            orient: 1 - self.orient,
        }
    }

    /// `self ⊊ other`: equal bits and a strictly larger map.
    pub fn strictly_below(&self, other: &Self) -> bool {
        self.orient == other.orient
            && self.map.len() < other.map.len()
            && self.map.iter().all(|(k, v)| other.map.get(k) == Some(v))
    }
}

impl fmt::Display for OrientedPartialAuto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({{")?;
        for (i, (a, b)) in self.map.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}>{b}")?;
        }
        write!(f, "}},{})", self.orient)
    }
}

#[derive(Serialize, Deserialize)]
struct AutoJson {
    pairs: Vec<(Point, Point)>,
    orient: u8,
}

impl Serialize for OrientedPartialAuto {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        AutoJson {
            pairs: self.map.iter().map(|(&a, &b)| (a, b)).collect(),
            orient: self.orient,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OrientedPartialAuto {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = AutoJson::deserialize(d)?;
        Self::from_pairs(&raw.pairs, raw.orient).map_err(serde::de::Error::custom)
    }
}

/// A strictly increasing finite sequence of oriented partial automorphisms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chain {
    items: Vec<OrientedPartialAuto>,
}

impl Chain {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(items: Vec<OrientedPartialAuto>) -> Result<Self, AutoError> {
        for i in 1..items.len() {
            if !items[i - 1].strictly_below(&items[i]) {
                return Err(AutoError::NotIncreasing(i, i - 1));
            }
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[OrientedPartialAuto] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn last(&self) -> Option<&OrientedPartialAuto> {
        self.items.last()
    }

    pub fn dom(&self) -> BTreeSet<Point> {
        self.last()
            .map(OrientedPartialAuto::dom)
            .unwrap_or_default()
    }

    pub fn ran(&self) -> BTreeSet<Point> {
        self.last()
            .map(OrientedPartialAuto::ran)
            .unwrap_or_default()
    }

    /// The image of a single point under the last item.
    pub fn image(&self, s: Point) -> Option<Point> {
        self.last().and_then(|g| g.get(s))
    }

    /// Applies the last item pointwise.
    pub fn apply(&self, xs: &[Point]) -> Result<Vec<Point>, AutoError> {
        xs.iter()
            .map(|&x| self.image(x).ok_or(AutoError::OutsideDomain(x)))
            .collect()
    }

    pub fn invert(&self) -> Self {
        Self {
            items: self.items.iter().map(OrientedPartialAuto::invert).collect(),
        }
    }

    /// The chain without its last item.
    pub fn parent(&self) -> Option<Self> {
        (!self.items.is_empty()).then(|| Self {
            items: self.items[..self.items.len() - 1].to_vec(),
        })
    }

    /// `self ⊲ other`: a proper initial segment.
    pub fn is_proper_prefix_of(&self, other: &Self) -> bool {
        self.len() < other.len() && other.items[..self.len()] == self.items[..]
    }

    /// `self ⌢ (g)`; fails unless `g` strictly extends the last item.
    pub fn extend(&self, g: OrientedPartialAuto) -> Result<Self, AutoError> {
        if let Some(last) = self.last() {
            if !last.strictly_below(&g) {
                return Err(AutoError::NotIncreasing(self.len(), self.len() - 1));
            }
        }
        let mut items = self.items.clone();
        items.push(g);
        Ok(Self { items })
    }

    /// Largest point id mentioned in the chain.
    pub fn max_point(&self) -> Option<Point> {
        self.last()
            .and_then(|g| g.dom().into_iter().chain(g.ran()).max())
    }
}

impl fmt::Display for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, g) in self.items.iter().enumerate() {
            if i > 0 {
                write!(f, " < ")?;
            }
            write!(f, "{g}")?;
        }
        write!(f, "]")
    }
}

impl Serialize for Chain {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.items.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Chain {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let items = Vec::<OrientedPartialAuto>::deserialize(d)?;
        Chain::new(items).map_err(serde::de::Error::custom)
    }
}

/// All nonempty partial automorphisms of `M` with domain and range inside
/// `0..n`, as plain maps in lexicographic order.
pub fn partial_autos_below(n: Point) -> Vec<BTreeMap<Point, Point>> {
    fn go(
        n: Point,
        x: Point,
        cur: &mut Vec<(Point, Point)>,
        out: &mut Vec<BTreeMap<Point, Point>>,
    ) {
        if x == n {
            if !cur.is_empty() {
                out.push(cur.iter().copied().collect());
            }
            return;
        }
        go(n, x + 1, cur, out);
        for y in 0..n {
            if cur.iter().any(|&(_, b)| b == y) {
                continue;
            }
            cur.push((x, y));
            let map: BTreeMap<Point, Point> = cur.iter().copied().collect();
            if is_partial_iso(&map).is_ok() {
                go(n, x + 1, cur, out);
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(n, 0, &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// Every chain of length `1..=max_len` whose items live inside `0..n`,
/// sorted by length and then lexicographically.
fn chains_below(n: Point, max_len: usize) -> Vec<Chain> {
    let maps = partial_autos_below(n);
    let mut layer: Vec<Chain> = Vec::new();
    for orient in 0..2 {
        for m in &maps {
            layer.push(Chain {
                items: vec![OrientedPartialAuto {
                    map: m.clone(),
                    orient,
                }],
            });
        }
    }
    layer.sort();
    let mut all = layer.clone();
    for _ in 1..max_len {
        let mut next = Vec::new();
        for c in &layer {
            let last = c.last().expect("nonempty");
            for m in &maps {
                let g = OrientedPartialAuto {
                    map: m.clone(),
                    orient: last.orient,
                };
                if last.strictly_below(&g) {
                    let mut items = c.items.clone();
                    items.push(g);
                    next.push(Chain { items });
                }
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort();
        all.extend(next.iter().cloned());
        layer = next;
    }
    all
}

/// The fixed fair enumeration `(ḡ⁰, ḡ¹, …)`: `ḡ⁰ = ()`, and each new pair is
/// emitted as `ḡ^{2ℓ+1}` followed by its inverse `ḡ^{2ℓ+2}`.
///
/// Level `N` contributes every chain of length at most `N` over the points
/// `0..N` not emitted before, in (length, lexicographic) order. For chains of
/// length above one, the odd member of a pair is the one whose parent sits at
/// an even index; for length one it is the first of the pair met in that
/// order.
#[derive(Debug, Clone)]
pub struct ChainEnumerator {
    list: Vec<Chain>,
    index: HashMap<Chain, usize>,
    level: Point,
}

impl Default for ChainEnumerator {
    fn default() -> Self {
        Self::new()
    }
}

impl ChainEnumerator {
    pub fn new() -> Self {
        let mut index = HashMap::new();
        index.insert(Chain::empty(), 0);
        Self {
            list: vec![Chain::empty()],
            index,
            level: 0,
        }
    }

    fn push(&mut self, c: Chain) {
        self.index.insert(c.clone(), self.list.len());
        self.list.push(c);
    }

    fn next_level(&mut self) {
        self.level += 1;
        let n = self.level;
        for c in chains_below(n, n as usize) {
            if self.index.contains_key(&c) {
                continue;
            }
            let inv = c.invert();
            let odd = if c.len() == 1 {
                c
            } else {
                let parent = c.parent().expect("length above one");
                let pi = self.index[&parent];
                if pi.is_multiple_of(2) {
                    c
                } else {
                    inv.clone()
                }
            };
            let even = odd.invert();
            self.push(odd);
            self.push(even);
        }
    }

    /// The chain at position `i`, extending the enumeration as needed.
    pub fn get(&mut self, i: usize) -> &Chain {
        while self.list.len() <= i {
            self.next_level();
        }
        &self.list[i]
    }

    /// Position of a chain if it has been enumerated so far.
    pub fn position(&self, c: &Chain) -> Option<usize> {
        self.index.get(c).copied()
    }

    /// The first `n` chains.
    pub fn prefix(&mut self, n: usize) -> Vec<Chain> {
        if n > 0 {
            self.get(n - 1);
        }
        self.list[..n].to_vec()
    }
}

/// `(ḡ⁰, …, ḡ^{n−1})`.
pub fn enumerate_chains(n: usize) -> Vec<Chain> {
    ChainEnumerator::new().prefix(n)
}

/// Checks the structural clauses required of an enumeration prefix: length
/// bounds, prefixes first, the empty chain exactly at 0, distinct items
/// differing from their inverses, inverse pairing, and the unique-predecessor
/// clause for odd positions.
pub fn verify_enumeration(list: &[Chain]) -> Result<(), String> {
    let index: HashMap<&Chain, usize> = list.iter().enumerate().map(|(i, c)| (c, i)).collect();
    if index.len() != list.len() {
        return Err("enumeration repeats a chain".into());
    }
    for (l, c) in list.iter().enumerate() {
        if c.len() > l {
            return Err(format!("lg(g^{l}) = {} exceeds {l}", c.len()));
        }
        if (c.is_empty()) != (l == 0) {
            return Err(format!("g^{l} has length {} (empty exactly at 0)", c.len()));
        }
        for g in c.items() {
            if *g == g.invert() {
                return Err(format!("g^{l} has an item equal to its inverse"));
            }
        }
        for k in 0..c.len() {
            let p = Chain {
                items: c.items[..k].to_vec(),
            };
            match index.get(&p) {
                Some(&i) if i < l => {}
                Some(&i) => return Err(format!("prefix of g^{l} appears later at {i}")),
                None => return Err(format!("prefix of g^{l} of length {k} missing")),
            }
        }
        if l >= 1 && l % 2 == 0 && *c != list[l - 1].invert() {
            return Err(format!("g^{l} is not the inverse of g^{}", l - 1));
        }
        if l % 2 == 1 && c.len() > 1 {
            let half = (l - 1) / 2;
            let witnesses = (0..half)
                .filter(|&i| {
                    let (a, b) = (2 * i + 1, 2 * i + 2);
                    b < list.len()
                        && l + 1 < list.len()
                        && list[a].is_proper_prefix_of(&list[l + 1])
                        && list[a].len() + 1 == list[l + 1].len()
                        && list[b].is_proper_prefix_of(c)
                        && list[b].len() + 1 == c.len()
                })
                .count();
            if l + 1 < list.len() && witnesses != 1 {
                return Err(format!("g^{l}: {witnesses} predecessor pairs (expected 1)"));
            }
        }
    }
    Ok(())
}
