//! Finite structures with three equivalence relations (the third being
//! equality), a computable presentation of the universal homogeneous model
//! `M`, the graph encoder and the greedy embedding of a structure into `M`.
//!
//! A point of `M` is a natural number. It decodes to a triple
//! `(row, col, fiber)` by applying Cantor unpairing twice; `E0` compares rows,
//! `E1` compares columns and `E2` is equality.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use num_integer::Roots;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// A point of the universal model.
pub type Point = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeqError {
    #[error("relation index {0} out of range (expected 0, 1 or 2)")]
    RelationIndex(usize),
    #[error("duplicate point id {0}")]
    DuplicateId(String),
    #[error("partition {relation} does not cover point {id} exactly once")]
    NotAPartition { relation: &'static str, id: String },
    #[error("unknown point id {0}")]
    UnknownId(String),
    #[error("graph edge {0}-{1} is a self-loop")]
    SelfLoop(String, String),
    #[error("decode: {0}")]
    Decode(String),
}

/// Cantor pairing `(x, y) -> (x + y)(x + y + 1)/2 + y`.
pub fn pair(x: u64, y: u64) -> u64 {
    let w = x + y;
    w * (w + 1) / 2 + y
}

/// Inverse of [`pair`].
pub fn unpair(n: u64) -> (u64, u64) {
    let mut w = ((8 * n as u128 + 1).sqrt() as u64 - 1) / 2;
    // guard against rounding at perfect squares
    while w * (w + 1) / 2 > n {
        w -= 1;
    }
    while (w + 1) * (w + 2) / 2 <= n {
        w += 1;
    }
    let y = n - w * (w + 1) / 2;
    (w - y, y)
}

/// Decodes a point of `M` as `(row, col, fiber)`.
pub fn triple(n: Point) -> (u64, u64, u64) {
    let (row, rest) = unpair(n);
    let (col, fiber) = unpair(rest);
    (row, col, fiber)
}

/// Encodes `(row, col, fiber)` as a point of `M`.
pub fn code(row: u64, col: u64, fiber: u64) -> Point {
    pair(row, pair(col, fiber))
}

/// `E_i^M(a, b)` for `i < 3`.
pub fn m_relation(i: usize, a: Point, b: Point) -> Result<bool, KeqError> {
    match i {
        0 => Ok(triple(a).0 == triple(b).0),
        1 => Ok(triple(a).1 == triple(b).1),
        2 => Ok(a == b),
        _ => Err(KeqError::RelationIndex(i)),
    }
}

/// Infallible form of [`m_relation`] for internal callers with a fixed index.
pub(crate) fn rel(i: usize, a: Point, b: Point) -> bool {
    m_relation(i, a, b).expect("relation index below 3")
}

/// True when the finite point map preserves `E0`, `E1`, `E2` and their
/// negations, i.e. it is a finite partial automorphism of `M`.
pub fn is_partial_iso(pairs: &BTreeMap<Point, Point>) -> Result<(), String> {
    let items: Vec<(Point, Point)> = pairs.iter().map(|(&a, &b)| (a, b)).collect();
    for (i, &(a1, b1)) in items.iter().enumerate() {
        for &(a2, b2) in &items[i + 1..] {
            for r in 0..3 {
                if rel(r, a1, a2) != rel(r, b1, b2) {
                    return Err(format!("E{r} not preserved on ({a1},{a2}) -> ({b1},{b2})"));
                }
            }
        }
    }
    Ok(())
}

/// Ids in the JSON formats may be strings or integers; both are kept as text.
fn id_from_json<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(i64),
        Text(String),
    }
    Ok(match Raw::deserialize(d)? {
        Raw::Num(n) => n.to_string(),
        Raw::Text(s) => s,
    })
}

#[derive(Deserialize)]
struct JsonId(#[serde(deserialize_with = "id_from_json")] String);

/// A finite structure with two stored equivalence relations; `E2` is
/// equality and is never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteKeqStructure {
    /// Point ids in domain order.
    pub labels: Vec<String>,
    /// `e0[i]` is the block index of point `i`; blocks are numbered by first
    /// appearance.
    pub e0: Vec<usize>,
    /// Same convention for `E1`.
    pub e1: Vec<usize>,
}

fn normalize_blocks(raw: &[usize]) -> Vec<usize> {
    let mut seen = BTreeMap::new();
    raw.iter()
        .map(|b| {
            let next = seen.len();
            *seen.entry(*b).or_insert(next)
        })
        .collect()
}

impl FiniteKeqStructure {
    /// Builds a structure from ids and explicit blocks, validating that both
    /// families are partitions of the domain.
    pub fn from_blocks(
        labels: Vec<String>,
        e0: &[Vec<String>],
        e1: &[Vec<String>],
    ) -> Result<Self, KeqError> {
        let mut index = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(KeqError::DuplicateId(l.clone()));
            }
        }
        let assign = |blocks: &[Vec<String>], relation: &'static str| {
            let mut out = vec![usize::MAX; labels.len()];
            for (b, block) in blocks.iter().enumerate() {
                for id in block {
                    let &i = index
                        .get(id)
                        .ok_or_else(|| KeqError::UnknownId(id.clone()))?;
                    if out[i] != usize::MAX {
                        return Err(KeqError::NotAPartition {
                            relation,
                            id: id.clone(),
                        });
                    }
                    out[i] = b;
                }
            }
            if let Some(i) = out.iter().position(|&b| b == usize::MAX) {
                return Err(KeqError::NotAPartition {
                    relation,
                    id: labels[i].clone(),
                });
            }
            Ok(normalize_blocks(&out))
        };
        let e0 = assign(e0, "e0")?;
        let e1 = assign(e1, "e1")?;
        Ok(Self { labels, e0, e1 })
    }

    /// A structure where both relations are given as block-index vectors.
    pub fn from_indices(labels: Vec<String>, e0: &[usize], e1: &[usize]) -> Self {
        assert_eq!(labels.len(), e0.len());
        assert_eq!(labels.len(), e1.len());
        Self {
            labels,
            e0: normalize_blocks(e0),
            e1: normalize_blocks(e1),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The relation `E_i` between points `a` and `b` (by index).
    pub fn related(&self, i: usize, a: usize, b: usize) -> bool {
        match i {
            0 => self.e0[a] == self.e0[b],
            1 => self.e1[a] == self.e1[b],
            _ => a == b,
        }
    }

    /// Blocks of `E0` (when `i == 0`) or `E1`, as index lists.
    pub fn blocks(&self, i: usize) -> Vec<Vec<usize>> {
        let ids = if i == 0 { &self.e0 } else { &self.e1 };
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (p, &b) in ids.iter().enumerate() {
            if out.len() <= b {
                out.resize(b + 1, Vec::new());
            }
            out[b].push(p);
        }
        out
    }

    fn block_sizes(&self, i: usize) -> Vec<usize> {
        let blocks = self.blocks(i);
        let ids = if i == 0 { &self.e0 } else { &self.e1 };
        ids.iter().map(|&b| blocks[b].len()).collect()
    }

    /// Appends `j` fresh points that are singletons for both relations
    /// (the encoding of `j` isolated vertices).
    pub fn pad_isolated(&self, j: usize) -> Self {
        let mut out = self.clone();
        let b0 = self.e0.iter().max().map_or(0, |m| m + 1);
        let b1 = self.e1.iter().max().map_or(0, |m| m + 1);
        for i in 0..j {
            out.labels.push(format!("pad{i}"));
            out.e0.push(b0 + i);
            out.e1.push(b1 + i);
        }
        out
    }

    /// The first `n` points as a substructure.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self::from_indices(self.labels[..n].to_vec(), &self.e0[..n], &self.e1[..n])
    }
}

#[derive(Serialize, Deserialize)]
struct KeqJson {
    domain: Vec<JsonId>,
    e0: Vec<Vec<JsonId>>,
    e1: Vec<Vec<JsonId>>,
}

impl Serialize for JsonId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl Serialize for FiniteKeqStructure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let wrap = |i: usize| -> Vec<Vec<JsonId>> {
            self.blocks(i)
                .into_iter()
                .map(|b| {
                    b.into_iter()
                        .map(|p| JsonId(self.labels[p].clone()))
                        .collect()
                })
                .collect()
        };
        KeqJson {
            domain: self.labels.iter().cloned().map(JsonId).collect(),
            e0: wrap(0),
            e1: wrap(1),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FiniteKeqStructure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = KeqJson::deserialize(d)?;
        let unwrap = |v: Vec<Vec<JsonId>>| -> Vec<Vec<String>> {
            v.into_iter()
                .map(|b| b.into_iter().map(|i| i.0).collect())
                .collect()
        };
        Self::from_blocks(
            raw.domain.into_iter().map(|i| i.0).collect(),
            &unwrap(raw.e0),
            &unwrap(raw.e1),
        )
        .map_err(serde::de::Error::custom)
    }
}

/// A finite simple graph; edges are stored as sorted index pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphAdj {
    pub vertices: Vec<String>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl GraphAdj {
    /// Builds a graph from vertex ids and edges given by id.
    pub fn new(vertices: Vec<String>, edges: &[(String, String)]) -> Result<Self, KeqError> {
        let mut index = BTreeMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(v.clone(), i).is_some() {
                return Err(KeqError::DuplicateId(v.clone()));
            }
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            let &a = index.get(u).ok_or_else(|| KeqError::UnknownId(u.clone()))?;
            let &b = index.get(v).ok_or_else(|| KeqError::UnknownId(v.clone()))?;
            if a == b {
                return Err(KeqError::SelfLoop(u.clone(), v.clone()));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            vertices,
            edges: set,
        })
    }

    /// Graph on vertices `0..n` (ids are decimal strings) with index edges.
    pub fn from_indices(n: usize, edges: &[(usize, usize)]) -> Self {
        let vertices = (0..n).map(|i| i.to_string()).collect();
        let edges = edges
            .iter()
            .map(|&(a, b)| {
                assert!(a != b && a < n && b < n, "invalid edge ({a},{b})");
                (a.min(b), a.max(b))
            })
            .collect();
        Self { vertices, edges }
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Brute-force graph isomorphism: the vertex bijection `σ` with
    /// `u ~ v ⇔ σ(u) ~ σ(v)`, if one exists.
    pub fn isomorphism_to(&self, other: &GraphAdj) -> Option<Vec<usize>> {
        let n = self.vertices.len();
        if n != other.vertices.len() || self.edges.len() != other.edges.len() {
            return None;
        }
        fn go(a: &GraphAdj, b: &GraphAdj, map: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
            let i = map.len();
            if i == a.vertices.len() {
                return true;
            }
            for c in 0..b.vertices.len() {
                if used[c] {
                    continue;
                }
                if (0..i).all(|j| a.adjacent(i, j) == b.adjacent(c, map[j])) {
                    map.push(c);
                    used[c] = true;
                    if go(a, b, map, used) {
                        return true;
                    }
                    used[c] = false;
                    map.pop();
                }
            }
            false
        }
        let mut map = Vec::with_capacity(n);
        let mut used = vec![false; n];
        go(self, other, &mut map, &mut used).then_some(map)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    vertices: Vec<JsonId>,
    edges: Vec<(JsonId, JsonId)>,
}

impl Serialize for GraphAdj {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GraphJson {
            vertices: self.vertices.iter().cloned().map(JsonId).collect(),
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| {
                    (
                        JsonId(self.vertices[a].clone()),
                        JsonId(self.vertices[b].clone()),
                    )
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GraphAdj {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = GraphJson::deserialize(d)?;
        let edges: Vec<(String, String)> = raw.edges.into_iter().map(|(a, b)| (a.0, b.0)).collect();
        GraphAdj::new(raw.vertices.into_iter().map(|v| v.0).collect(), &edges)
            .map_err(serde::de::Error::custom)
    }
}

fn token_label(g: &GraphAdj, (a, b): (usize, usize), at: usize) -> String {
    format!("{}~{}@{}", g.vertices[a], g.vertices[b], g.vertices[at])
}

/// Star/edge-token encoding: vertices come first, then the two tokens of each
/// edge in edge order. `E0` blocks are stars `{v} ∪ {(e, v)}`, `E1` blocks are
/// the token pairs of each edge, and vertices are `E1` singletons.
pub fn encode_graph(h: &GraphAdj) -> FiniteKeqStructure {
    let nv = h.vertices.len();
    let mut labels = h.vertices.clone();
    let mut e0: Vec<usize> = (0..nv).collect();
    let mut e1: Vec<usize> = (0..nv).collect();
    for (k, &(a, b)) in h.edges.iter().enumerate() {
        for at in [a, b] {
            labels.push(token_label(h, (a, b), at));
            e0.push(at);
            e1.push(nv + k);
        }
    }
    FiniteKeqStructure::from_indices(labels, &e0, &e1)
}

/// Inverse of [`encode_graph`] on structures of the encoder's shape.
pub fn decode_keq(s: &FiniteKeqStructure) -> Result<GraphAdj, KeqError> {
    let e0_blocks = s.blocks(0);
    let e1_blocks = s.blocks(1);
    let is_vertex: Vec<bool> = (0..s.len())
        .map(|p| e1_blocks[s.e1[p]].len() == 1)
        .collect();
    let vertex_pos: Vec<usize> = (0..s.len()).filter(|&p| is_vertex[p]).collect();
    let mut vertex_index = vec![usize::MAX; s.len()];
    for (i, &p) in vertex_pos.iter().enumerate() {
        vertex_index[p] = i;
    }
    // the vertex of each E0 block
    let mut center = vec![usize::MAX; e0_blocks.len()];
    for (b, block) in e0_blocks.iter().enumerate() {
        let vs: Vec<usize> = block.iter().copied().filter(|&p| is_vertex[p]).collect();
        if vs.len() != 1 {
            return Err(KeqError::Decode(format!(
                "e0 block containing {} has {} vertices (expected exactly one)",
                s.labels[block[0]],
                vs.len()
            )));
        }
        center[b] = vertex_index[vs[0]];
    }
    let mut edges = BTreeSet::new();
    for block in e1_blocks.iter().filter(|b| b.len() != 1) {
        if block.len() != 2 {
            return Err(KeqError::Decode(format!(
                "e1 block containing {} has size {} (expected 1 or 2)",
                s.labels[block[0]],
                block.len()
            )));
        }
        let (u, v) = (center[s.e0[block[0]]], center[s.e0[block[1]]]);
        if u == v {
            return Err(KeqError::Decode(format!(
                "edge tokens {} and {} hang on the same vertex",
                s.labels[block[0]], s.labels[block[1]]
            )));
        }
        if !edges.insert((u.min(v), u.max(v))) {
            return Err(KeqError::Decode(format!(
                "duplicate edge between {} and {}",
                s.labels[vertex_pos[u]], s.labels[vertex_pos[v]]
            )));
        }
    }
    Ok(GraphAdj {
        vertices: vertex_pos.iter().map(|&p| s.labels[p].clone()).collect(),
        edges,
    })
}

/// A bijection (as index map `a -> b`) preserving both stored relations and
/// their negations, found by backtracking over block-profile-compatible
/// assignments.
pub fn is_isomorphic_finite(a: &FiniteKeqStructure, b: &FiniteKeqStructure) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    let profile = |s: &FiniteKeqStructure| -> Vec<(usize, usize)> {
        s.block_sizes(0).into_iter().zip(s.block_sizes(1)).collect()
    };
    let (pa, pb) = (profile(a), profile(b));
    let mut sa = pa.clone();
    let mut sb = pb.clone();
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb {
        return None;
    }
    fn go(
        a: &FiniteKeqStructure,
        b: &FiniteKeqStructure,
        pa: &[(usize, usize)],
        pb: &[(usize, usize)],
        map: &mut Vec<usize>,
        used: &mut Vec<bool>,
    ) -> bool {
        let i = map.len();
        if i == a.len() {
            return true;
        }
        for c in 0..b.len() {
            if used[c] || pa[i] != pb[c] {
                continue;
            }
            let ok = (0..i).all(|j| {
                a.related(0, i, j) == b.related(0, c, map[j])
                    && a.related(1, i, j) == b.related(1, c, map[j])
            });
            if ok {
                map.push(c);
                used[c] = true;
                if go(a, b, pa, pb, map, used) {
                    return true;
                }
                used[c] = false;
                map.pop();
            }
        }
        false
    }
    let mut map = Vec::with_capacity(a.len());
    let mut used = vec![false; b.len()];
    go(a, b, &pa, &pb, &mut map, &mut used).then_some(map)
}

/// `F(0), …, F(n−1)`: each `F(m)` is the least point of `M` extending the
/// previous choices to a partial isomorphism. `n` is capped at `s.len()`.
pub fn greedy_embed(s: &FiniteKeqStructure, n: usize) -> Vec<Point> {
    let n = n.min(s.len());
    let mut out: Vec<Point> = Vec::with_capacity(n);
    let mut used: HashSet<Point> = HashSet::new();
    for m in 0..n {
        let mut k: Point = 0;
        loop {
            if !used.contains(&k) {
                let ok = out.iter().enumerate().all(|(l, &fl)| {
                    s.related(0, l, m) == rel(0, fl, k) && s.related(1, l, m) == rel(1, fl, k)
                });
                if ok {
                    break;
                }
            }
            k += 1;
        }
        used.insert(k);
        out.push(k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_round_trips() {
        for n in 0..5000 {
            let (x, y) = unpair(n);
            assert_eq!(pair(x, y), n);
        }
        assert_eq!(unpair(1), (1, 0));
        assert_eq!(unpair(2), (0, 1));
    }

    #[test]
    fn relation_examples() {
        assert_eq!(m_relation(2, 7, 7), Ok(true));
        assert_eq!(m_relation(0, code(1, 2, 0), code(1, 5, 9)), Ok(true));
        assert_eq!(m_relation(1, code(1, 2, 0), code(1, 5, 9)), Ok(false));
        assert_eq!(m_relation(3, 0, 0), Err(KeqError::RelationIndex(3)));
    }

    #[test]
    fn encode_single_edge() {
        let h = GraphAdj::from_indices(2, &[(0, 1)]);
        let s = encode_graph(&h);
        assert_eq!(s.labels, vec!["0", "1", "0~1@0", "0~1@1"]);
        assert_eq!(s.blocks(0), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(s.blocks(1), vec![vec![0], vec![1], vec![2, 3]]);
        assert_eq!(decode_keq(&s).unwrap(), h);
    }

    #[test]
    fn encode_triangle_shape() {
        let h = GraphAdj::from_indices(3, &[(0, 1), (1, 2), (0, 2)]);
        let s = encode_graph(&h);
        assert_eq!(s.len(), 9);
        let mut e0: Vec<usize> = s.blocks(0).iter().map(Vec::len).collect();
        let mut e1: Vec<usize> = s.blocks(1).iter().map(Vec::len).collect();
        e0.sort_unstable();
        e1.sort_unstable();
        assert_eq!(e0, vec![3, 3, 3]);
        assert_eq!(e1, vec![1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn decode_rejects_bad_shapes() {
        // two vertices in one e0 block
        let s = FiniteKeqStructure::from_indices(vec!["a".into(), "b".into()], &[0, 0], &[0, 1]);
        assert!(matches!(decode_keq(&s), Err(KeqError::Decode(_))));
        let all_single = FiniteKeqStructure::from_indices(
            vec!["a".into(), "b".into(), "c".into()],
            &[0, 1, 2],
            &[0, 1, 2],
        );
        let g = decode_keq(&all_single).unwrap();
        assert_eq!(g.vertices.len(), 3);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn path_and_star_are_isomorphic() {
        let p3 = GraphAdj::from_indices(3, &[(0, 1), (1, 2)]);
        let k12 = GraphAdj::from_indices(3, &[(1, 0), (0, 2)]);
        assert!(is_isomorphic_finite(&encode_graph(&p3), &encode_graph(&k12)).is_some());
        let edge = GraphAdj::from_indices(2, &[(0, 1)]);
        let none = GraphAdj::from_indices(2, &[]);
        assert!(is_isomorphic_finite(&encode_graph(&edge), &encode_graph(&none)).is_none());
        let s = encode_graph(&p3);
        assert_eq!(is_isomorphic_finite(&s, &s), Some((0..s.len()).collect()));
    }

    #[test]
    fn greedy_first_choices() {
        let one = FiniteKeqStructure::from_indices(vec!["a".into()], &[0], &[0]);
        assert_eq!(greedy_embed(&one, 1), vec![0]);
        // second point E0-related to the first: independent scan
        let two = FiniteKeqStructure::from_indices(vec!["a".into(), "b".into()], &[0, 0], &[0, 1]);
        let f = greedy_embed(&two, 2);
        let expect = (0..)
            .find(|&k: &u64| {
                k != f[0] && triple(k).0 == triple(f[0]).0 && triple(k).1 != triple(f[0]).1
            })
            .unwrap();
        assert_eq!(f[1], expect);
    }

    #[test]
    fn json_round_trip() {
        let h = GraphAdj::from_indices(3, &[(0, 1), (1, 2)]);
        let text = serde_json::to_string(&h).unwrap();
        assert_eq!(
            text,
            r#"{"vertices":["0","1","2"],"edges":[["0","1"],["1","2"]]}"#
        );
        let back: GraphAdj =
            serde_json::from_str(r#"{"vertices":[0,1,2],"edges":[[0,1],[1,2]]}"#).unwrap();
        assert_eq!(back, h);
        let s = encode_graph(&h);
        let text = serde_json::to_string(&s).unwrap();
        let back: FiniteKeqStructure = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
