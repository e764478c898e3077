//! Finite approximations of the system: a partitioned basis `X = ω`, levels of
//! chains `I_n`, the partial bijections `f_ḡ`, the trapped set `Y` and the
//! level index `n(𝔪)`.
//!
//! The partition is fixed once and for all: the point `x` lies in the block
//! `X'_s` with `s = unpair(x).0`, and its index inside that block is
//! `unpair(x).1`. Every addition to `Y` takes the least block point not yet in
//! `Y`, so `Y ∩ X'_s` is always an initial segment of `X'_s`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_rational::Rational64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keq::{pair, unpair, Point};
use crate::linalg::FpSpace;
use crate::partial_autos::{Chain, ChainEnumerator};
use crate::report::Report;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SystemError {
    #[error("extension chain is empty")]
    EmptyExtension,
    #[error("parent chain {0} is not in I")]
    ParentMissing(String),
    #[error("chain {0} is already in I")]
    AlreadyPresent(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// The M-point whose block contains `x`.
pub fn block_of(x: Point) -> Point {
    unpair(x).0
}

/// The `i`-th point of the block `X'_s`.
pub fn block_point(s: Point, i: u64) -> Point {
    pair(s, i)
}

/// Injective `k`-tuples over a point set.
pub type Tuple = Vec<Point>;

/// All injective `k`-tuples with entries from `points`, in lexicographic order.
pub fn injective_tuples(points: &[Point], k: usize) -> Vec<Tuple> {
    fn go(points: &[Point], k: usize, cur: &mut Tuple, out: &mut Vec<Tuple>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for &x in points {
            if !cur.contains(&x) {
                cur.push(x);
                go(points, k, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(points, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Raw components of a stage, used to build fixtures and snapshots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageParts {
    pub chains: Vec<Chain>,
    pub chain_level: Vec<usize>,
    pub f_maps: Vec<BTreeMap<Point, Point>>,
    pub levels: Vec<Vec<usize>>,
    pub y_set: BTreeSet<Point>,
    pub y_birth: BTreeMap<Point, usize>,
    pub n_of_m: usize,
}

/// One finite stage `𝔪`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemStage {
    parts: StageParts,
    lookup: HashMap<Chain, usize>,
}

impl SystemStage {
    /// Assembles a stage without checking any invariant.
    pub fn from_parts(parts: StageParts) -> Self {
        let lookup = parts
            .chains
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        Self { parts, lookup }
    }

    pub fn parts(&self) -> &StageParts {
        &self.parts
    }

    pub fn into_parts(self) -> StageParts {
        self.parts
    }

    /// `I₀ = {()}`, `f_() = ∅`, `Y` the first point of the blocks of the
    /// M-points 0 and 1, `n(𝔪) = 1`.
    pub fn base() -> Self {
        let y_set: BTreeSet<Point> = [block_point(0, 0), block_point(1, 0)].into();
        let y_birth = y_set.iter().map(|&x| (x, 0)).collect();
        Self::from_parts(StageParts {
            chains: vec![Chain::empty()],
            chain_level: vec![0],
            f_maps: vec![BTreeMap::new()],
            levels: vec![vec![0]],
            y_set,
            y_birth,
            n_of_m: 1,
        })
    }

    pub fn n_of_m(&self) -> usize {
        self.parts.n_of_m
    }

    pub fn y_set(&self) -> &BTreeSet<Point> {
        &self.parts.y_set
    }

    /// Realized points; every realized point is trapped in `Y`.
    pub fn x_set(&self) -> &BTreeSet<Point> {
        &self.parts.y_set
    }

    pub fn chains(&self) -> &[Chain] {
        &self.parts.chains
    }

    pub fn chain_id(&self, c: &Chain) -> Option<usize> {
        self.lookup.get(c).copied()
    }

    pub fn contains_chain(&self, c: &Chain) -> bool {
        self.lookup.contains_key(c)
    }

    pub fn f_map(&self, id: usize) -> &BTreeMap<Point, Point> {
        &self.parts.f_maps[id]
    }

    pub fn f_of(&self, c: &Chain) -> Option<&BTreeMap<Point, Point>> {
        self.chain_id(c).map(|i| &self.parts.f_maps[i])
    }

    pub fn chain_level(&self, id: usize) -> usize {
        self.parts.chain_level[id]
    }

    pub fn levels(&self) -> &[Vec<usize>] {
        &self.parts.levels
    }

    /// The value of `n(𝔪)` at the time `x` entered `Y`.
    pub fn y_birth(&self, x: Point) -> Option<usize> {
        self.parts.y_birth.get(&x).copied()
    }

    /// Realized points of the block `X'_s`.
    pub fn realized_in_block(&self, s: Point) -> Vec<Point> {
        self.parts
            .y_set
            .iter()
            .copied()
            .filter(|&x| block_of(x) == s)
            .collect()
    }

    /// `min(X'_s ∖ Y)`.
    pub fn least_free(&self, s: Point) -> Point {
        least_free_in(&self.parts.y_set, s)
    }

    /// All M-points whose blocks carry realized points.
    pub fn realized_blocks(&self) -> BTreeSet<Point> {
        self.parts.y_set.iter().map(|&x| block_of(x)).collect()
    }

    /// The successor stage: adds `g_ext = ḡ⌢(g)` and its inverse as a new level.
    ///
    /// Before computing `u★ = Y ∩ X_{dom(g)}`, every block of `dom(g)` that
    /// `Y` misses receives its least point, so that `f★` strictly extends
    /// `f_ḡ`. These points are untouched by every map, so no class changes.
    pub fn successor(&self, g_ext: &Chain) -> Result<SystemStage, SystemError> {
        let g = g_ext.last().ok_or(SystemError::EmptyExtension)?;
        let parent = g_ext.parent().expect("nonempty chain");
        let Some(pid) = self.chain_id(&parent) else {
            return Err(SystemError::ParentMissing(parent.to_string()));
        };
        if self.contains_chain(g_ext) {
            return Err(SystemError::AlreadyPresent(g_ext.to_string()));
        }
        let n = self.parts.n_of_m;
        let mut parts = self.parts.clone();
        let enter = |parts: &mut StageParts, x: Point| {
            if parts.y_set.insert(x) {
                parts.y_birth.insert(x, n);
            }
        };
        for u in g.dom() {
            if !parts.y_set.iter().any(|&x| block_of(x) == u) {
                enter(&mut parts, block_point(u, 0));
            }
        }
        let y_before = parts.y_set.clone();
        let f_parent = &self.parts.f_maps[pid];
        let mut fstar = f_parent.clone();
        let mut chosen: BTreeSet<Point> = BTreeSet::new();
        let dom_g = g.dom();
        let ustar: Vec<Point> = y_before
            .iter()
            .copied()
            .filter(|&x| dom_g.contains(&block_of(x)))
            .collect();
        for &x in &ustar {
            if fstar.contains_key(&x) {
                continue;
            }
            let t = g.get(block_of(x)).expect("block in dom(g)");
            let mut i = 0;
            let y = loop {
                let y = block_point(t, i);
                if !y_before.contains(&y) && !chosen.contains(&y) {
                    break y;
                }
                i += 1;
            };
            chosen.insert(y);
            fstar.insert(x, y);
        }
        for &y in fstar.values() {
            enter(&mut parts, y);
        }
        for s in g.dom().into_iter().chain(g.ran()).collect::<BTreeSet<_>>() {
            enter(&mut parts, least_free_in(&y_before, s));
        }
        let inverse: BTreeMap<Point, Point> = fstar.iter().map(|(&a, &b)| (b, a)).collect();
        let id = parts.chains.len();
        parts.chains.push(g_ext.clone());
        parts.chains.push(g_ext.invert());
        parts.chain_level.extend([n, n]);
        parts.f_maps.push(fstar);
        parts.f_maps.push(inverse);
        parts.levels.push(vec![id, id + 1]);
        parts.n_of_m = n + 1;
        Ok(SystemStage::from_parts(parts))
    }

    /// Adds every prefix of `c` missing from `I` through successor steps.
    pub fn force_chain(&self, c: &Chain) -> Result<SystemStage, SystemError> {
        let mut stage = self.clone();
        for k in 1..=c.len() {
            let prefix = Chain::new(c.items()[..k].to_vec()).expect("prefix of a chain");
            if !stage.contains_chain(&prefix) {
                stage = stage.successor(&prefix)?;
            }
        }
        Ok(stage)
    }

    /// The union-find over `k`-tuples for `E_k`.
    pub fn tuple_classes(&self, k: usize) -> TupleClasses {
        TupleClasses::build(self, k)
    }

    /// `seq_k(𝔪)`: tuples lying inside the domain of some `f_ḡ`.
    pub fn seq_k(&self, k: usize) -> BTreeSet<Tuple> {
        let mut out = BTreeSet::new();
        for f in &self.parts.f_maps {
            let dom: Vec<Point> = f.keys().copied().collect();
            out.extend(injective_tuples(&dom, k));
        }
        out
    }

    /// Stage of first appearance of a tuple inside some `dom(f_ḡ)`,
    /// measured by the level index of the chain.
    pub fn tuple_birth(&self, t: &[Point]) -> Option<usize> {
        self.parts
            .f_maps
            .iter()
            .zip(&self.parts.chain_level)
            .filter(|(f, _)| !t.is_empty() && t.iter().all(|x| f.contains_key(x)))
            .map(|(_, &l)| l)
            .min()
    }
}

fn least_free_in(y: &BTreeSet<Point>, s: Point) -> Point {
    (0..)
        .map(|i| block_point(s, i))
        .find(|x| !y.contains(x))
        .expect("blocks are infinite")
}

/// Union-find over the touched `k`-tuples of a stage; untouched tuples are
/// singleton classes.
#[derive(Debug, Clone)]
pub struct TupleClasses {
    k: usize,
    index: HashMap<Tuple, usize>,
    tuples: Vec<Tuple>,
    parent: Vec<usize>,
}

impl TupleClasses {
    fn build(stage: &SystemStage, k: usize) -> Self {
        let mut uf = Self {
            k,
            index: HashMap::new(),
            tuples: Vec::new(),
            parent: Vec::new(),
        };
        for f in &stage.parts.f_maps {
            let dom: Vec<Point> = f.keys().copied().collect();
            for t in injective_tuples(&dom, k) {
                let img: Tuple = t.iter().map(|x| f[x]).collect();
                let a = uf.intern(t);
                let b = uf.intern(img);
                uf.union(a, b);
            }
        }
        uf
    }

    fn intern(&mut self, t: Tuple) -> usize {
        if let Some(&i) = self.index.get(&t) {
            return i;
        }
        let i = self.tuples.len();
        self.index.insert(t.clone(), i);
        self.tuples.push(t);
        self.parent.push(i);
        i
    }

    fn root(&self, mut i: usize) -> usize {
        while self.parent[i] != i {
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.root(a), self.root(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }

    pub fn arity(&self) -> usize {
        self.k
    }

    /// Touched tuples in first-seen order.
    pub fn touched(&self) -> &[Tuple] {
        &self.tuples
    }

    /// Whether two tuples are `E_k`-equivalent.
    pub fn same_class(&self, a: &[Point], b: &[Point]) -> bool {
        if a == b {
            return true;
        }
        match (self.index.get(a), self.index.get(b)) {
            (Some(&i), Some(&j)) => self.root(i) == self.root(j),
            _ => false,
        }
    }

    /// The class of a tuple, sorted.
    pub fn class_of(&self, t: &[Point]) -> Vec<Tuple> {
        match self.index.get(t) {
            None => vec![t.to_vec()],
            Some(&i) => {
                let r = self.root(i);
                let mut out: Vec<Tuple> = (0..self.tuples.len())
                    .filter(|&j| self.root(j) == r)
                    .map(|j| self.tuples[j].clone())
                    .collect();
                out.sort();
                out
            }
        }
    }

    /// All classes of touched tuples with at least two members, each sorted,
    /// ordered by least member.
    pub fn nontrivial_classes(&self) -> Vec<Vec<Tuple>> {
        let mut groups: BTreeMap<usize, Vec<Tuple>> = BTreeMap::new();
        for (j, t) in self.tuples.iter().enumerate() {
            groups.entry(self.root(j)).or_default().push(t.clone());
        }
        let mut out: Vec<Vec<Tuple>> = groups
            .into_values()
            .filter(|g| g.len() > 1)
            .map(|mut g| {
                g.sort();
                g
            })
            .collect();
        out.sort();
        out
    }
}

/// `E_k`-classes of a stage restricted to `seq_k(universe)`.
pub fn seq_classes(stage: &SystemStage, k: usize, universe: &BTreeSet<Point>) -> Vec<Vec<Tuple>> {
    let uf = stage.tuple_classes(k);
    let pts: Vec<Point> = universe.iter().copied().collect();
    let mut groups: Vec<Vec<Tuple>> = Vec::new();
    for t in injective_tuples(&pts, k) {
        match groups.iter_mut().find(|g| uf.same_class(&g[0], &t)) {
            Some(g) => g.push(t),
            None => groups.push(vec![t]),
        }
    }
    groups
}

/// Same-class relation of two stages compared on a tuple set; returns a
/// witness pair when they differ.
pub fn compare_classes(
    a: &TupleClasses,
    b: &TupleClasses,
    tuples: &BTreeSet<Tuple>,
) -> Option<(Tuple, Tuple)> {
    let mut rep_a: HashMap<usize, Tuple> = HashMap::new();
    let mut a_to_b: HashMap<usize, usize> = HashMap::new();
    let mut b_to_a: HashMap<usize, usize> = HashMap::new();
    let key = |uf: &TupleClasses, t: &Tuple| uf.index.get(t).map(|&i| uf.root(i));
    for t in tuples {
        let (Some(ka), Some(kb)) = (key(a, t), key(b, t)) else {
            // a tuple of seq_k is always touched in both stages
            return Some((t.clone(), t.clone()));
        };
        let first = rep_a.entry(ka).or_insert_with(|| t.clone()).clone();
        match (a_to_b.get(&ka), b_to_a.get(&kb)) {
            (Some(&x), _) if x != kb => return Some((first, t.clone())),
            (_, Some(&y)) if y != ka => return Some((rep_a[&y].clone(), t.clone())),
            _ => {
                a_to_b.insert(ka, kb);
                b_to_a.insert(kb, ka);
            }
        }
    }
    None
}

fn first_failure<I: IntoIterator<Item = Option<String>>>(it: I) -> Option<String> {
    it.into_iter().flatten().next()
}

/// Clause-by-clause check of a single stage.
pub fn check_stage_invariants(stage: &SystemStage) -> Report {
    let p = &stage.parts;
    let mut r = Report::new();
    let all_ids: Vec<usize> = p.levels.iter().flatten().copied().collect();
    let id_set: BTreeSet<usize> = all_ids.iter().copied().collect();

    r.record(
        "table_shape",
        (p.chains.len() != p.f_maps.len() || p.chains.len() != p.chain_level.len())
            .then(|| "chain, map and level tables differ in length".to_string()),
    );
    r.record(
        "levels_disjoint",
        (id_set.len() != all_ids.len() || id_set.len() != p.chains.len())
            .then(|| format!("{} ids listed for {} chains", all_ids.len(), p.chains.len())),
    );
    r.record(
        "level_indices",
        first_failure(p.levels.iter().enumerate().flat_map(|(n, ids)| {
            ids.iter().map(move |&id| {
                (p.chain_level.get(id) != Some(&n))
                    .then(|| format!("chain {id} recorded off level {n}"))
            })
        })),
    );
    r.record(
        "length_bound",
        first_failure(p.levels.iter().enumerate().flat_map(|(n, ids)| {
            ids.iter().map(move |&id| {
                (p.chains[id].len() > n).then(|| {
                    format!(
                        "chain {} of length {} at level {n}",
                        p.chains[id],
                        p.chains[id].len()
                    )
                })
            })
        })),
    );
    r.record(
        "prefix_closed",
        first_failure(p.chains.iter().enumerate().map(|(id, c)| {
            let lvl = p.chain_level[id];
            (0..c.len()).find_map(|k| {
                let pre = Chain::new(c.items()[..k].to_vec()).expect("prefix");
                match stage.chain_id(&pre) {
                    Some(j) if p.chain_level[j] < lvl => None,
                    _ => Some(format!(
                        "prefix of length {k} of {c} not on an earlier level"
                    )),
                }
            })
        })),
    );
    r.record(
        "empty_iff_root",
        first_failure(p.chains.iter().zip(&p.f_maps).map(|(c, f)| {
            (c.is_empty() != f.is_empty()).then(|| format!("chain {c} has |f| = {}", f.len()))
        })),
    );
    r.record(
        "partial_bijection",
        first_failure(p.chains.iter().zip(&p.f_maps).map(|(c, f)| {
            let ran: BTreeSet<Point> = f.values().copied().collect();
            (ran.len() != f.len()).then(|| format!("f for {c} is not injective"))
        })),
    );
    r.record(
        "domain_range_blocks",
        first_failure(p.chains.iter().zip(&p.f_maps).map(|(c, f)| {
            let (d, rg) = (c.dom(), c.ran());
            f.iter().find_map(|(&x, &y)| {
                (!d.contains(&block_of(x)) || !rg.contains(&block_of(y)))
                    .then(|| format!("f for {c} sends {x} to {y} outside X_dom/X_ran"))
            })
        })),
    );
    r.record(
        "class_respecting",
        first_failure(p.chains.iter().zip(&p.f_maps).map(|(c, f)| {
            f.iter().find_map(|(&x, &y)| {
                (c.image(block_of(x)) != Some(block_of(y))).then(|| {
                    format!(
                        "f for {c}: {x} in block {} maps to {y} in block {}",
                        block_of(x),
                        block_of(y)
                    )
                })
            })
        })),
    );
    r.record(
        "inverse_pairs",
        first_failure(p.chains.iter().enumerate().map(|(id, c)| {
            let inv = c.invert();
            match stage.chain_id(&inv) {
                None => Some(format!("inverse of {c} missing")),
                Some(j) if p.chain_level[j] != p.chain_level[id] => {
                    Some(format!("inverse of {c} on a different level"))
                }
                Some(j) => {
                    let expect: BTreeMap<Point, Point> =
                        p.f_maps[id].iter().map(|(&a, &b)| (b, a)).collect();
                    (p.f_maps[j] != expect)
                        .then(|| format!("f of the inverse of {c} is not the inverse map"))
                }
            }
        })),
    );
    r.record(
        "strict_extension",
        first_failure(p.chains.iter().enumerate().map(|(id, c)| {
            c.parent().and_then(|pc| {
                let j = stage.chain_id(&pc)?;
                let (fa, fb) = (&p.f_maps[j], &p.f_maps[id]);
                let ext = fa.len() < fb.len() && fa.iter().all(|(k, v)| fb.get(k) == Some(v));
                (!ext).then(|| format!("f for {c} does not strictly extend its parent's"))
            })
        })),
    );
    r.record(
        "trapped_domains",
        if p.y_set.is_empty() {
            Some("Y is empty".into())
        } else {
            first_failure(p.chains.iter().zip(&p.f_maps).map(|(c, f)| {
                f.keys()
                    .find(|x| !p.y_set.contains(x))
                    .map(|x| format!("{x} in dom(f) of {c} lies outside Y"))
            }))
        },
    );
    r.record(
        "level_count",
        (p.levels.len() != p.n_of_m || p.levels.last().is_none_or(Vec::is_empty))
            .then(|| format!("{} levels recorded with n = {}", p.levels.len(), p.n_of_m)),
    );
    r
}

/// Tuples of `seq_k(𝔫)` not inside `Y_𝔪`, with their distinct `R_k`
/// neighbours, for the valency clause.
fn new_node_valency(prev: &SystemStage, next: &SystemStage, k: usize) -> Option<String> {
    let y = &prev.parts.y_set;
    let maps = &next.parts.f_maps;
    for f in maps {
        let dom: Vec<Point> = f.keys().copied().collect();
        if dom.iter().all(|x| y.contains(x)) {
            continue;
        }
        for t in injective_tuples(&dom, k) {
            if t.iter().all(|x| y.contains(x)) {
                continue;
            }
            let nbrs: BTreeSet<Tuple> = maps
                .iter()
                .filter(|g| t.iter().all(|x| g.contains_key(x)))
                .map(|g| t.iter().map(|x| g[x]).collect())
                .collect();
            if nbrs.len() != 1 {
                return Some(format!("tuple {t:?} has {} neighbours", nbrs.len()));
            }
        }
    }
    None
}

/// Clause-by-clause check that `next` is a successor of `prev`.
pub fn check_successor(prev: &SystemStage, next: &SystemStage) -> Report {
    let (a, b) = (&prev.parts, &next.parts);
    let mut r = Report::new();
    let n = a.n_of_m;
    r.record(
        "realized_grow",
        a.y_set
            .iter()
            .find(|x| !b.y_set.contains(x))
            .map(|x| format!("{x} left Y")),
    );
    r.record(
        "level_index_step",
        (b.n_of_m != n + 1).then(|| format!("n went from {n} to {}", b.n_of_m)),
    );
    r.record(
        "old_levels_kept",
        (b.levels.len() < n
            || b.levels[..n] != a.levels[..]
            || b.chains.len() < a.chains.len()
            || b.chains[..a.chains.len()] != a.chains[..]
            || b.f_maps[..a.f_maps.len().min(b.f_maps.len())]
                != a.f_maps[..a.f_maps.len().min(b.f_maps.len())])
            .then(|| "an earlier level, chain or map changed".to_string()),
    );
    let new_ids: Vec<usize> = b.levels.get(n).cloned().unwrap_or_default();
    let new_pair_ok = new_ids.len() == 2
        && b.chains[new_ids[0]].invert() == b.chains[new_ids[1]]
        && b.chains[new_ids[0]].len() <= n;
    r.record(
        "new_level_pair",
        (!new_pair_ok).then(|| format!("level {n} holds {:?}", new_ids)),
    );
    if !new_pair_ok {
        return r;
    }
    // the forward member is the one whose parent already was in I
    let fwd = new_ids[0];
    let c = &b.chains[fwd];
    let g = c.last().expect("nonempty");
    let parent_id = c.parent().and_then(|pc| prev.chain_id(&pc));
    r.record(
        "parent_present",
        parent_id
            .is_none()
            .then(|| format!("parent of {c} missing at the earlier stage")),
    );
    let Some(pid) = parent_id else { return r };
    let f = &b.f_maps[fwd];
    let fpar = &a.f_maps[pid];
    r.record(
        "fresh_images",
        f.iter()
            .filter(|(x, _)| !fpar.contains_key(x))
            .find(|(_, y)| a.y_set.contains(y))
            .map(|(x, y)| format!("new image {x} -> {y} was already in Y")),
    );
    r.record(
        "trapped_domain_covered",
        a.y_set
            .iter()
            .filter(|&&x| g.dom().contains(&block_of(x)))
            .find(|x| !f.contains_key(x))
            .map(|x| format!("{x} in Y ∩ X_dom(g) missing from dom(f)")),
    );
    let ran: BTreeSet<Point> = f.values().copied().collect();
    let ran_par: BTreeSet<Point> = fpar.values().copied().collect();
    r.record(
        "overlap_in_parent_range",
        f.keys()
            .find(|x| ran.contains(x) && !ran_par.contains(x))
            .map(|x| format!("{x} in dom(f) ∩ ran(f) but not in the parent's range")),
    );
    r.record(
        "fresh_minima",
        g.dom()
            .into_iter()
            .chain(g.ran())
            .map(|s| least_free_in(&a.y_set, s))
            .find(|x| !b.y_set.contains(x))
            .map(|x| format!("least free point {x} not added to Y")),
    );
    for k in 1..=3 {
        let ca = prev.tuple_classes(k);
        let cb = next.tuple_classes(k);
        let seq = prev.seq_k(k);
        r.record(
            &format!("class_stability_k{k}"),
            compare_classes(&ca, &cb, &seq)
                .map(|(x, y)| format!("classes of {x:?} and {y:?} disagree between stages")),
        );
        r.record(
            &format!("new_node_valency_k{k}"),
            new_node_valency(prev, next, k),
        );
    }
    r
}

/// The fixed build `(𝔪₀, 𝔪₁, …)` driven by the chain enumeration.
#[derive(Debug, Clone)]
pub struct FullSystem {
    enumerator: ChainEnumerator,
    stages: Vec<SystemStage>,
}

impl Default for FullSystem {
    fn default() -> Self {
        Self::new()
    }
}

impl FullSystem {
    pub fn new() -> Self {
        Self {
            enumerator: ChainEnumerator::new(),
            stages: vec![SystemStage::base()],
        }
    }

    /// Stage `ℓ + 1` adds `ḡ^{ℓ+1}` when it is not yet in `I`, and repeats
    /// stage `ℓ` otherwise.
    pub fn build_to_stage(&mut self, l: usize) -> &SystemStage {
        while self.stages.len() <= l {
            let k = self.stages.len();
            let c = self.enumerator.get(k).clone();
            let last = self.stages.last().expect("base stage");
            let next = if last.contains_chain(&c) {
                last.clone()
            } else {
                last.successor(&c)
                    .expect("enumeration schedules parents first")
            };
            self.stages.push(next);
        }
        &self.stages[l]
    }

    /// Stages built so far.
    pub fn stages(&self) -> &[SystemStage] {
        &self.stages
    }

    pub fn stage(&mut self, l: usize) -> &SystemStage {
        self.build_to_stage(l)
    }

    /// `ḡ^i`.
    pub fn chain(&mut self, i: usize) -> Chain {
        self.enumerator.get(i).clone()
    }

    pub fn chain_position(&self, c: &Chain) -> Option<usize> {
        self.enumerator.position(c)
    }
}

/// Fullness prefix and per-stage checks for stages `0..=l`.
pub fn check_build(sys: &mut FullSystem, l: usize) -> Report {
    sys.build_to_stage(l);
    let mut r = Report::new();
    for i in 0..=l {
        let st = &sys.stages()[i];
        r.absorb(&format!("stage{i}/"), check_stage_invariants(st));
        if i > 0 {
            let prev = &sys.stages()[i - 1];
            if prev.n_of_m() != st.n_of_m() {
                r.absorb(&format!("stage{i}/"), check_successor(prev, st));
            } else {
                r.record(
                    &format!("stage{i}/unchanged"),
                    (prev != st).then(|| "stage changed without a new level".into()),
                );
            }
        }
        let missing = (0..=i).find(|&j| {
            let c = sys.enumerator.get(j).clone();
            !sys.stages()[i].contains_chain(&c)
        });
        r.record(
            &format!("stage{i}/enumerated_chains_present"),
            missing.map(|j| format!("chain {j} missing")),
        );
    }
    r
}

/// `(p, k, x̄, q̄)`: a prime, an arity, a base tuple and unit weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportScenario {
    pub p: u64,
    pub k: usize,
    pub base: Tuple,
    pub q: Vec<i64>,
}

impl SupportScenario {
    pub fn new(p: u64, base: Tuple, q: Vec<i64>) -> Result<Self, String> {
        let distinct: BTreeSet<&Point> = base.iter().collect();
        if distinct.len() != base.len() {
            return Err(format!("base {base:?} repeats a point"));
        }
        if base.len() != q.len() || base.len() < 2 {
            return Err("base and weights need equal length at least 2".into());
        }
        if let Some(w) = q.iter().find(|&&w| w <= 0 || w % p as i64 == 0) {
            return Err(format!("weight {w} is not a positive p-unit for p = {p}"));
        }
        Ok(Self {
            p,
            k: base.len(),
            base,
            q,
        })
    }
}

/// A finite rational-valued map with explicit domain.
pub type PartialVector = BTreeMap<Point, Rational64>;

fn in_zp(p: u64, r: &Rational64) -> bool {
    r.denom() % p as i64 != 0
}

/// `supp_p`: points whose value is not `p`-integral.
pub fn partial_supp_p(p: u64, a: &PartialVector) -> BTreeSet<Point> {
    a.iter()
        .filter(|(_, v)| !in_zp(p, v))
        .map(|(&x, _)| x)
        .collect()
}

/// How an element of the closure was obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Derivation {
    Seed {
        family: Vec<Tuple>,
        coeffs: Vec<Rational64>,
    },
    Restrict(usize),
    Sum(usize, usize),
    Transport {
        of: usize,
        chain: usize,
    },
}

/// Knobs of the depth-bounded closure.
#[derive(Debug, Clone)]
pub struct ClosureParams {
    pub depth: usize,
    /// Seed coefficients; `None` uses `±1, ±2, ±1/2, ±p, ±1/p`.
    pub battery: Option<Vec<Rational64>>,
    /// Largest family size drawn from the class.
    pub max_family: usize,
    /// Largest number of elements kept.
    pub cap: usize,
}

impl Default for ClosureParams {
    fn default() -> Self {
        Self {
            depth: 2,
            battery: None,
            max_family: 3,
            cap: 400,
        }
    }
}

/// The default seed coefficients for a prime.
pub fn default_battery(p: u64) -> Vec<Rational64> {
    let p = p as i64;
    let mut out = Vec::new();
    for r in [
        Rational64::from_integer(1),
        Rational64::from_integer(2),
        Rational64::new(1, 2),
        Rational64::from_integer(p),
        Rational64::new(1, p),
    ] {
        for s in [r, -r] {
            if !out.contains(&s) {
                out.push(s);
            }
        }
    }
    out
}

/// The depth-bounded closure together with derivations.
#[derive(Debug, Clone)]
pub struct Closure {
    pub elements: Vec<PartialVector>,
    pub derivations: Vec<Derivation>,
    /// True when the family size or the element cap cut the search short.
    pub partial: bool,
}

impl Closure {
    pub fn contains(&self, a: &PartialVector) -> bool {
        self.elements.contains(a)
    }

    /// A readable derivation tree for element `i`.
    pub fn explain(&self, i: usize, stage: &SystemStage) -> String {
        match &self.derivations[i] {
            Derivation::Seed { family, coeffs } => {
                let terms: Vec<String> = family
                    .iter()
                    .zip(coeffs)
                    .map(|(t, r)| format!("{r}*{t:?}"))
                    .collect();
                format!("seed({})", terms.join(" + "))
            }
            Derivation::Restrict(j) => format!("restrict({})", self.explain(*j, stage)),
            Derivation::Sum(j, k) => format!(
                "sum({}, {})",
                self.explain(*j, stage),
                self.explain(*k, stage)
            ),
            Derivation::Transport { of, chain } => {
                format!(
                    "transport[{}]({})",
                    stage.chains()[*chain],
                    self.explain(*of, stage)
                )
            }
        }
    }
}

struct ClosureBuilder {
    elements: Vec<PartialVector>,
    derivations: Vec<Derivation>,
    seen: HashMap<PartialVector, usize>,
    cap: usize,
    full: bool,
}

impl ClosureBuilder {
    fn add(&mut self, a: PartialVector, d: Derivation) -> bool {
        if self.seen.contains_key(&a) {
            return true;
        }
        if self.elements.len() >= self.cap {
            self.full = true;
            return false;
        }
        self.seen.insert(a.clone(), self.elements.len());
        self.elements.push(a);
        self.derivations.push(d);
        true
    }
}

fn subsets_up_to(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn go(n: usize, max: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if cur.len() == max {
            return;
        }
        for i in start..n {
            cur.push(i);
            go(n, max, i + 1, cur, out);
            cur.pop();
        }
    }
    go(n, max, 0, &mut Vec::new(), &mut out);
    out.sort_by_key(Vec::len);
    out
}

/// Depth-bounded closure of the seeds under restriction to the `p`-support,
/// pointwise sums and transport along every `f_ḡ`.
pub fn a_s_closure(stage: &SystemStage, s: &SupportScenario, params: &ClosureParams) -> Closure {
    let class = stage.tuple_classes(s.k).class_of(&s.base);
    closure_over_class(stage, &class, s, params)
}

fn closure_over_class(
    stage: &SystemStage,
    class: &[Tuple],
    s: &SupportScenario,
    params: &ClosureParams,
) -> Closure {
    let p = s.p;
    let battery = params.battery.clone().unwrap_or_else(|| default_battery(p));
    let mut b = ClosureBuilder {
        elements: Vec::new(),
        derivations: Vec::new(),
        seen: HashMap::new(),
        cap: params.cap,
        full: false,
    };
    let truncated = class.len() > params.max_family;
    'seeds: for fam in subsets_up_to(class.len(), params.max_family) {
        let mut idx = vec![0usize; fam.len()];
        'choices: loop {
            let mut a = PartialVector::new();
            for (slot, &ti) in fam.iter().enumerate() {
                let r = battery[idx[slot]];
                for (x, &w) in class[ti].iter().zip(&s.q) {
                    *a.entry(*x).or_insert_with(Rational64::zero) +=
                        r * Rational64::from_integer(w);
                }
            }
            let d = Derivation::Seed {
                family: fam.iter().map(|&i| class[i].clone()).collect(),
                coeffs: idx.iter().map(|&i| battery[i]).collect(),
            };
            if !b.add(a, d) {
                break 'seeds;
            }
            // odometer over coefficient choices
            let mut pos = 0;
            loop {
                if pos == idx.len() {
                    break 'choices;
                }
                idx[pos] += 1;
                if idx[pos] < battery.len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }
    let mut frontier_start = 0;
    for _ in 0..params.depth {
        if b.full {
            break;
        }
        let end = b.elements.len();
        for i in frontier_start..end {
            let a = b.elements[i].clone();
            let supp = partial_supp_p(p, &a);
            if supp.len() < a.len() {
                let r: PartialVector = a
                    .iter()
                    .filter(|(x, _)| supp.contains(x))
                    .map(|(&x, &v)| (x, v))
                    .collect();
                b.add(r, Derivation::Restrict(i));
            }
            for (cid, f) in stage.parts.f_maps.iter().enumerate() {
                let inv: HashMap<Point, Point> = f.iter().map(|(&x, &y)| (y, x)).collect();
                if !a.is_empty() && a.keys().all(|y| inv.contains_key(y)) {
                    let t: PartialVector = a.iter().map(|(y, &v)| (inv[y], v)).collect();
                    b.add(t, Derivation::Transport { of: i, chain: cid });
                }
            }
            for j in 0..end {
                if j > i && j >= frontier_start {
                    continue;
                }
                let mut sum = b.elements[j].clone();
                for (&x, &v) in &a {
                    *sum.entry(x).or_insert_with(Rational64::zero) += v;
                }
                if !b.add(sum, Derivation::Sum(j, i)) {
                    break;
                }
            }
            if b.full {
                break;
            }
        }
        frontier_start = end;
    }
    Closure {
        elements: b.elements,
        derivations: b.derivations,
        partial: b.full || truncated,
    }
}

/// A singleton `p`-support found in a closure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SupportViolation {
    pub scenario: SupportScenario,
    pub point: Point,
    pub derivation: String,
}

/// Outcome of the support-condition check.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SupportReport {
    pub scenarios: usize,
    pub partial_scenarios: usize,
    /// Nontrivial classes left out by the class limit.
    pub classes_skipped: usize,
    pub elements_examined: usize,
    pub violations: Vec<SupportViolation>,
    /// Singleton supports found by the unbounded order-`p` layer computation.
    pub layer_violations: Vec<SupportViolation>,
}

impl SupportReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.layer_violations.is_empty()
    }
}

/// Options for [`check_support_condition`].
#[derive(Debug, Clone)]
pub struct SupportOptions {
    pub arities: Vec<usize>,
    pub primes: Vec<u64>,
    /// Candidate weights; those divisible by `p` are skipped.
    pub weights: Vec<i64>,
    pub closure: ClosureParams,
    /// Weight tuples per class handed to the bounded closure (the layer
    /// computation always sees all of them).
    pub closure_weight_tuples: usize,
    /// Classes examined per arity, least members first; `None` examines all.
    pub max_classes: Option<usize>,
}

impl Default for SupportOptions {
    fn default() -> Self {
        Self {
            arities: vec![2, 3],
            primes: vec![2, 3],
            weights: vec![1, 2, 3],
            closure: ClosureParams::default(),
            closure_weight_tuples: 2,
            max_classes: Some(24),
        }
    }
}

fn weight_tuples(weights: &[i64], p: u64, k: usize) -> Vec<Vec<i64>> {
    let units: Vec<i64> = weights
        .iter()
        .copied()
        .filter(|w| *w > 0 && w % p as i64 != 0)
        .collect();
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|t| units.iter().map(move |&w| [t.clone(), vec![w]].concat()))
            .collect();
    }
    out
}

/// Singleton supports in the order-`p` layer of the closure, computed with
/// unbounded depth: the seeds span a subspace of `F_p^Y`, and transport along
/// `f_ḡ` applies to the part of the subspace supported inside `ran(f_ḡ)`.
pub fn layer_singletons(stage: &SystemStage, s: &SupportScenario) -> Vec<Point> {
    let class = stage.tuple_classes(s.k).class_of(&s.base);
    layer_singletons_over_class(stage, &class, s)
}

fn layer_singletons_over_class(
    stage: &SystemStage,
    class: &[Tuple],
    s: &SupportScenario,
) -> Vec<Point> {
    let p = s.p;
    let coords: Vec<Point> = stage.parts.y_set.iter().copied().collect();
    let pos: HashMap<Point, usize> = coords.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let mut space = FpSpace::new(p, coords.len());
    for t in class {
        let mut v = vec![0u64; coords.len()];
        for (x, &w) in t.iter().zip(&s.q) {
            let Some(&i) = pos.get(x) else { continue };
            v[i] = (v[i] + w.rem_euclid(p as i64) as u64) % p;
        }
        space.insert(&v);
    }
    // per map: coordinates in its range, and (preimage, image) index pairs
    type Transport = (Vec<bool>, Vec<(usize, usize)>);
    let maps: Vec<Transport> = stage
        .parts
        .f_maps
        .iter()
        .filter(|f| !f.is_empty())
        .map(|f| {
            let mut allowed = vec![false; coords.len()];
            let mut pull = Vec::new();
            for (x, y) in f {
                if let (Some(&ix), Some(&iy)) = (pos.get(x), pos.get(y)) {
                    allowed[iy] = true;
                    pull.push((ix, iy));
                }
            }
            (allowed, pull)
        })
        .collect();
    loop {
        let mut grew = false;
        for (allowed, pull) in &maps {
            for w in space.restricted_to(allowed) {
                let mut v = vec![0u64; coords.len()];
                for &(ix, iy) in pull {
                    v[ix] = w[iy];
                }
                grew |= space.insert(&v);
            }
        }
        if !grew {
            break;
        }
    }
    (0..coords.len())
        .filter(|&i| {
            let mut e = vec![0u64; coords.len()];
            e[i] = 1;
            space.contains(&e)
        })
        .map(|i| coords[i])
        .collect()
}

/// Checks that no element of the closures has a singleton `p`-support, over
/// every nontrivial class of each arity, each prime and each unit weight tuple.
pub fn check_support_condition(stage: &SystemStage, opts: &SupportOptions) -> SupportReport {
    let mut rep = SupportReport::default();
    for &k in &opts.arities {
        let mut classes = stage.tuple_classes(k).nontrivial_classes();
        if let Some(m) = opts.max_classes {
            rep.classes_skipped += classes.len().saturating_sub(m);
            classes.truncate(m);
        }
        for class in &classes {
            for &p in &opts.primes {
                for (wi, q) in weight_tuples(&opts.weights, p, k).into_iter().enumerate() {
                    let s = SupportScenario::new(p, class[0].clone(), q).expect("valid scenario");
                    rep.scenarios += 1;
                    for x in layer_singletons_over_class(stage, class, &s) {
                        rep.layer_violations.push(SupportViolation {
                            scenario: s.clone(),
                            point: x,
                            derivation: "order-p layer".into(),
                        });
                    }
                    if wi >= opts.closure_weight_tuples {
                        continue;
                    }
                    let cl = closure_over_class(stage, class, &s, &opts.closure);
                    rep.elements_examined += cl.elements.len();
                    if cl.partial {
                        rep.partial_scenarios += 1;
                    }
                    for (i, a) in cl.elements.iter().enumerate() {
                        let supp = partial_supp_p(p, a);
                        if supp.len() == 1 {
                            rep.violations.push(SupportViolation {
                                scenario: s.clone(),
                                point: *supp.iter().next().expect("one point"),
                                derivation: cl.explain(i, stage),
                            });
                            break;
                        }
                    }
                }
            }
        }
    }
    rep
}

/// Finite consequences of the limit: for prefix chains `c_a ⊲ c_b ⊲ c_c`
/// present by stage `l`, maps extend, trapped points of the earlier stage are
/// carried along, and least free points of earlier blocks are reached.
pub fn limit_condition_witness(
    sys: &mut FullSystem,
    prefix: &[crate::partial_autos::OrientedPartialAuto],
    l: usize,
) -> Report {
    let mut r = Report::new();
    let stage = sys.build_to_stage(l).clone();
    let chains: Vec<Chain> = (1..=prefix.len())
        .filter_map(|k| Chain::new(prefix[..k].to_vec()).ok())
        .collect();
    if chains.len() != prefix.len() {
        r.record(
            "prefix_increasing",
            Some("prefix is not strictly increasing".into()),
        );
        return r;
    }
    // stage index at which each chain entered I
    let entered: Vec<Option<usize>> = chains
        .iter()
        .map(|c| (0..=l).find(|&i| sys.stages()[i].contains_chain(c)))
        .collect();
    let present: Vec<usize> = (0..chains.len())
        .filter(|&i| entered[i].is_some())
        .collect();
    r.record(
        "chains_present",
        (present.len() != chains.len()).then(|| {
            format!(
                "{} of {} prefix chains built by stage {l}",
                present.len(),
                chains.len()
            )
        }),
    );
    let f = |c: &Chain| stage.f_of(c).cloned().unwrap_or_default();
    let mut fail = None;
    for (ai, &a) in present.iter().enumerate() {
        for (bi, &b) in present.iter().enumerate().skip(ai + 1) {
            for &c in present.iter().skip(bi + 1) {
                let (fa, fb, fc) = (f(&chains[a]), f(&chains[b]), f(&chains[c]));
                let ext = |x: &BTreeMap<Point, Point>, y: &BTreeMap<Point, Point>| {
                    x.iter().all(|(k, v)| y.get(k) == Some(v))
                };
                if !(ext(&fa, &fb) && ext(&fb, &fc)) {
                    fail.get_or_insert(format!("maps of prefixes {a},{b},{c} do not extend"));
                }
                let y_k = sys.stages()[entered[a].expect("present")].y_set().clone();
                let (dom_s, ran_s) = (chains[a].dom(), chains[a].ran());
                let ran_c: BTreeSet<Point> = fc.values().copied().collect();
                for &x in &y_k {
                    if dom_s.contains(&block_of(x)) && !fc.contains_key(&x) {
                        fail.get_or_insert(format!("trapped {x} missing from dom of prefix {c}"));
                    }
                    if ran_s.contains(&block_of(x)) && !ran_c.contains(&x) {
                        fail.get_or_insert(format!("trapped {x} missing from ran of prefix {c}"));
                    }
                }
                for s in &dom_s {
                    let m = least_free_in(&y_k, *s);
                    if !fc.contains_key(&m) {
                        fail.get_or_insert(format!(
                            "least free {m} of block {s} missing from dom of prefix {c}"
                        ));
                    }
                }
                for s in &ran_s {
                    let m = least_free_in(&y_k, *s);
                    if !ran_c.contains(&m) {
                        fail.get_or_insert(format!(
                            "least free {m} of block {s} missing from ran of prefix {c}"
                        ));
                    }
                }
            }
        }
    }
    r.record("carried_forward", fail);
    r
}

#[derive(Serialize, Deserialize)]
struct ChainEntry {
    id: usize,
    level: usize,
    items: Chain,
}

#[derive(Serialize, Deserialize)]
struct StageJson {
    x_set: Vec<Point>,
    part: Vec<(Point, Point)>,
    chains: Vec<ChainEntry>,
    i_levels: Vec<Vec<usize>>,
    f_maps: Vec<(usize, Vec<(Point, Point)>)>,
    y_set: Vec<Point>,
    y_birth: Vec<(Point, usize)>,
    n_of_m: usize,
}

impl Serialize for SystemStage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let p = &self.parts;
        StageJson {
            x_set: p.y_set.iter().copied().collect(),
            part: p.y_set.iter().map(|&x| (x, block_of(x))).collect(),
            chains: p
                .chains
                .iter()
                .enumerate()
                .map(|(id, c)| ChainEntry {
                    id,
                    level: p.chain_level[id],
                    items: c.clone(),
                })
                .collect(),
            i_levels: p.levels.clone(),
            f_maps: p
                .f_maps
                .iter()
                .enumerate()
                .map(|(id, f)| (id, f.iter().map(|(&a, &b)| (a, b)).collect()))
                .collect(),
            y_set: p.y_set.iter().copied().collect(),
            y_birth: p.y_birth.iter().map(|(&x, &n)| (x, n)).collect(),
            n_of_m: p.n_of_m,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SystemStage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = StageJson::deserialize(d)?;
        if let Some((x, s)) = raw.part.iter().find(|(x, s)| block_of(*x) != *s) {
            return Err(D::Error::custom(format!(
                "point {x} is recorded in block {s}, expected {}",
                block_of(*x)
            )));
        }
        let mut chains = Vec::new();
        let mut chain_level = Vec::new();
        for (i, e) in raw.chains.into_iter().enumerate() {
            if e.id != i {
                return Err(D::Error::custom("chain ids must be consecutive from 0"));
            }
            chains.push(e.items);
            chain_level.push(e.level);
        }
        let mut f_maps = vec![BTreeMap::new(); chains.len()];
        for (id, pairs) in raw.f_maps {
            let slot = f_maps
                .get_mut(id)
                .ok_or_else(|| D::Error::custom(format!("map for unknown chain {id}")))?;
            *slot = pairs.into_iter().collect();
        }
        Ok(SystemStage::from_parts(StageParts {
            chains,
            chain_level,
            f_maps,
            levels: raw.i_levels,
            y_set: raw.y_set.into_iter().collect(),
            y_birth: raw.y_birth.into_iter().collect(),
            n_of_m: raw.n_of_m,
        }))
    }
}
