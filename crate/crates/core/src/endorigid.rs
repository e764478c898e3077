//! Tree-indexed systems `𝔪(T)`, the order `≤★` on `G₀⁺`, the groups `G₁[T]`,
//! branch endomorphisms for ill-founded trees and a desk-scale endorigidity
//! search.
//!
//! Points of a built system are numbered consecutively, so each level `X_n` is
//! an initial segment `0..size_n`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::groups::{lift_along, local_span_solve, GroupElement, GroupError};
use crate::keq::Point;
use crate::linalg::{lattice_multiplier, rank_rational};
use crate::primes::{ClassKey, PrimeError, PrimeRegistry};
use crate::report::Report;

#[derive(Debug, Error)]
pub enum RigidError {
    #[error("tree: {0}")]
    Tree(String),
    #[error("node {0} is not in the tree")]
    UnknownNode(usize),
    #[error("branch is not strictly increasing at position {0}")]
    NotABranch(usize),
    #[error("point {0} is outside the domain of the branch")]
    OutsideBranch(Point),
    #[error("prime {0} is not assigned to an element of G0")]
    NotAnElementPrime(u64),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Prime(#[from] PrimeError),
}

/// A finite rooted tree with levels and the filtration `T_n = {t : lev(t) < n}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeT {
    pub nodes: Vec<usize>,
    pub parent: BTreeMap<usize, usize>,
    pub levels: BTreeMap<usize, usize>,
    /// `filtration[n]` lists `T_n`; `filtration[0]` is empty.
    pub filtration: Vec<Vec<usize>>,
}

impl TreeT {
    /// Builds a tree from a parent list: `parents[i]` is the parent of node
    /// `i`, and node 0 is the root.
    pub fn from_parents(parents: &[Option<usize>]) -> Result<Self, RigidError> {
        let nodes: Vec<usize> = (0..parents.len()).collect();
        let mut parent = BTreeMap::new();
        let mut levels = BTreeMap::new();
        for (i, p) in parents.iter().enumerate() {
            match (i, p) {
                (0, None) => {
                    levels.insert(0, 0);
                }
                (0, Some(_)) => return Err(RigidError::Tree("node 0 must be the root".into())),
                (_, None) => return Err(RigidError::Tree(format!("node {i} has no parent"))),
                (_, Some(p)) if *p >= i => {
                    return Err(RigidError::Tree(format!(
                        "parent {p} of node {i} must precede it"
                    )))
                }
                (_, Some(p)) => {
                    parent.insert(i, *p);
                    levels.insert(i, levels[p] + 1);
                }
            }
        }
        let depth = levels.values().copied().max().map_or(0, |d| d + 1);
        let filtration = (0..=depth)
            .map(|n| nodes.iter().copied().filter(|t| levels[t] < n).collect())
            .collect();
        let t = Self {
            nodes,
            parent,
            levels,
            filtration,
        };
        t.check()?;
        Ok(t)
    }

    /// A path `0 < 1 < … < len−1`.
    pub fn path(len: usize) -> Self {
        let parents: Vec<Option<usize>> = (0..len).map(|i| i.checked_sub(1)).collect();
        Self::from_parents(&parents).expect("paths are trees")
    }

    pub fn level(&self, t: usize) -> usize {
        self.levels[&t]
    }

    /// Nodes at a level, in id order.
    pub fn at_level(&self, n: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .copied()
            .filter(|t| self.levels[t] == n)
            .collect()
    }

    /// Strict predecessors, root first.
    pub fn ancestors(&self, t: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = t;
        while let Some(&p) = self.parent.get(&cur) {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// `s ≤_T t`.
    pub fn leq(&self, s: usize, t: usize) -> bool {
        s == t || self.ancestors(t).contains(&s)
    }

    /// `s ∧ t`.
    pub fn meet(&self, s: usize, t: usize) -> usize {
        let mut a = self.ancestors(s);
        a.push(s);
        let mut b = self.ancestors(t);
        b.push(t);
        a.iter()
            .zip(&b)
            .take_while(|(x, y)| x == y)
            .last()
            .map(|(x, _)| *x)
            .expect("common root")
    }

    pub fn depth(&self) -> usize {
        self.levels.values().copied().max().map_or(0, |d| d + 1)
    }

    /// Rootedness, levels and the filtration clauses.
    pub fn check(&self) -> Result<(), RigidError> {
        let roots: Vec<usize> = self
            .nodes
            .iter()
            .copied()
            .filter(|t| !self.parent.contains_key(t))
            .collect();
        if roots.len() != 1 {
            return Err(RigidError::Tree(format!("{} roots", roots.len())));
        }
        for &t in &self.nodes {
            let lev = *self
                .levels
                .get(&t)
                .ok_or_else(|| RigidError::Tree(format!("node {t} has no level")))?;
            if lev != self.ancestors(t).len() {
                return Err(RigidError::Tree(format!("level of {t} is not its depth")));
            }
        }
        if self.filtration.first().is_none_or(|f| !f.is_empty()) {
            return Err(RigidError::Tree("T_0 must be empty".into()));
        }
        for (n, tn) in self.filtration.iter().enumerate() {
            if n > 0 && !self.filtration[n - 1].iter().all(|t| tn.contains(t)) {
                return Err(RigidError::Tree(format!(
                    "T_{} is not contained in T_{n}",
                    n - 1
                )));
            }
            for &t in tn {
                if self.level(t) > n {
                    return Err(RigidError::Tree(format!(
                        "node {t} in T_{n} has a larger level"
                    )));
                }
                if n > 0
                    && self
                        .ancestors(t)
                        .iter()
                        .any(|s| !self.filtration[n - 1].contains(s))
                {
                    return Err(RigidError::Tree(format!(
                        "a predecessor of {t} is missing from T_{}",
                        n - 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A built system `𝔪(T)` truncated to finitely many levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RigidSystem {
    pub tree: TreeT,
    /// `X_n = 0..x_sizes[n]`.
    pub x_sizes: Vec<usize>,
    pub f_maps: BTreeMap<usize, BTreeMap<Point, Point>>,
}

/// Builds `levels + 1` levels: `X₀` holds `growth` points; at step `n` every
/// node of level `n − 1` extends its parent's map with fresh images of the
/// uncovered points of `X_{n−1}`, and `growth` spare points follow.
pub fn build_rigid_system(tree: &TreeT, growth: usize, levels: usize) -> RigidSystem {
    let growth = growth.max(1);
    let mut x_sizes = vec![growth];
    let mut f_maps: BTreeMap<usize, BTreeMap<Point, Point>> = BTreeMap::new();
    for n in 1..=levels {
        let mut next = x_sizes[n - 1] as Point;
        for t in tree.at_level(n - 1) {
            let mut f = tree
                .parent
                .get(&t)
                .map(|p| f_maps[p].clone())
                .unwrap_or_default();
            for x in 0..x_sizes[n - 1] as Point {
                if let std::collections::btree_map::Entry::Vacant(e) = f.entry(x) {
                    e.insert(next);
                    next += 1;
                }
            }
            f_maps.insert(t, f);
        }
        x_sizes.push(next as usize + growth);
    }
    RigidSystem {
        tree: tree.clone(),
        x_sizes,
        f_maps,
    }
}

impl RigidSystem {
    /// `𝐧(x)`.
    pub fn n_of(&self, x: Point) -> Option<usize> {
        self.x_sizes.iter().position(|&s| (x as usize) < s)
    }

    /// `𝐧(a)`: the largest level of a support point.
    pub fn n_of_element(&self, a: &GroupElement) -> Option<usize> {
        a.supp()
            .iter()
            .map(|&x| self.n_of(x))
            .collect::<Option<Vec<_>>>()?
            .into_iter()
            .max()
    }

    pub fn points(&self) -> Vec<Point> {
        (0..*self.x_sizes.last().expect("X_0") as Point).collect()
    }

    /// Points of `X_n`.
    pub fn level_points(&self, n: usize) -> Vec<Point> {
        (0..self.x_sizes[n.min(self.x_sizes.len() - 1)] as Point).collect()
    }

    /// Nodes whose map has been built.
    pub fn built_nodes(&self) -> Vec<usize> {
        self.f_maps.keys().copied().collect()
    }

    /// `f̂⁰_t(a)` when `supp(a) ⊆ dom(f_t)`.
    pub fn lift(&self, t: usize, a: &GroupElement) -> Option<GroupElement> {
        lift_along(self.f_maps.get(&t)?, a).ok()
    }

    /// `{f̂_t(a) : t}` without repetitions, in node order.
    pub fn successors(&self, a: &GroupElement) -> Vec<GroupElement> {
        let mut out: Vec<GroupElement> = Vec::new();
        for &t in self.f_maps.keys() {
            if let Some(b) = self.lift(t, a) {
                if !out.contains(&b) {
                    out.push(b);
                }
            }
        }
        out
    }

    /// `{b : a ≤★ b}` among built elements, sorted by `(𝐧, element)`.
    pub fn up_set(&self, a: &GroupElement) -> Vec<GroupElement> {
        let mut seen: BTreeSet<GroupElement> = BTreeSet::new();
        let mut queue = VecDeque::from([a.clone()]);
        while let Some(b) = queue.pop_front() {
            if seen.insert(b.clone()) {
                queue.extend(self.successors(&b));
            }
        }
        let mut out: Vec<GroupElement> = seen.into_iter().collect();
        out.sort_by_key(|b| (self.n_of_element(b), b.clone()));
        out
    }

    /// `x/E₁` among built points: the component of `x` under every `f_t`.
    pub fn e1_class(&self, x: Point) -> BTreeSet<Point> {
        let mut out = BTreeSet::from([x]);
        let mut queue = VecDeque::from([x]);
        while let Some(y) = queue.pop_front() {
            for f in self.f_maps.values() {
                let mut nbrs: Vec<Point> = f.get(&y).copied().into_iter().collect();
                nbrs.extend(f.iter().filter(|(_, &v)| v == y).map(|(&k, _)| k));
                for z in nbrs {
                    if out.insert(z) {
                        queue.push_back(z);
                    }
                }
            }
        }
        out
    }
}

/// Clause-by-clause check of a built system.
pub fn check_rigid_invariants(r: &RigidSystem) -> Report {
    let mut rep = Report::new();
    let t = &r.tree;
    rep.record("tree_filtration", t.check().err().map(|e| e.to_string()));
    rep.record(
        "x0_nonempty",
        (r.x_sizes.first().copied().unwrap_or(0) == 0).then(|| "X_0 is empty".into()),
    );
    rep.record(
        "levels_grow",
        r.x_sizes
            .windows(2)
            .position(|w| w[0] >= w[1])
            .map(|n| format!("X_{n} is not a proper subset of X_{}", n + 1)),
    );
    let top = r.x_sizes.len() - 1;
    let mut fail = |clause: &str, w: Option<String>| rep.record(clause, w);
    let domain_range = r.f_maps.iter().find_map(|(&s, f)| {
        let n = t.level(s) + 1;
        let dom_ok = f.keys().copied().eq(0..r.x_sizes[n - 1] as Point);
        let ran: BTreeSet<Point> = f.values().copied().collect();
        let inj = ran.len() == f.len();
        let into = f.values().all(|&y| (y as usize) < r.x_sizes[n]);
        (!(dom_ok && inj && into))
            .then(|| format!("f_{s} is not a one-to-one map from X_{} into X_{n}", n - 1))
    });
    fail("one_to_one_between_levels", domain_range);
    fail(
        "x0_outside_ranges",
        r.f_maps.iter().find_map(|(&s, f)| {
            f.values()
                .find(|&&y| (y as usize) < r.x_sizes[0])
                .map(|y| format!("f_{s} hits {y} in X_0"))
        }),
    );
    fail(
        "monotone_along_tree",
        r.f_maps.iter().find_map(|(&s, fs)| {
            t.ancestors(s).into_iter().find_map(|a| {
                let fa = r.f_maps.get(&a)?;
                (!fa.iter().all(|(k, v)| fs.get(k) == Some(v)))
                    .then(|| format!("f_{a} is not contained in f_{s}"))
            })
        }),
    );
    fail(
        "new_images_fresh",
        r.f_maps.iter().find_map(|(&s, f)| {
            let n = t.level(s);
            f.iter().find_map(|(&x, &y)| {
                let old_image = (y as usize) < r.x_sizes[n];
                let covered = t
                    .ancestors(s)
                    .iter()
                    .any(|a| r.f_maps.get(a).is_some_and(|fa| fa.contains_key(&x)));
                (old_image && !covered)
                    .then(|| format!("f_{s}({x}) = {y} lies in X_{n} without an earlier witness"))
            })
        }),
    );
    fail(
        "meet_ranges",
        r.f_maps.keys().find_map(|&s| {
            r.f_maps.keys().filter(|&&u| u > s).find_map(|&u| {
                let m = t.meet(s, u);
                let rs: BTreeSet<Point> = r.f_maps[&s].values().copied().collect();
                let ru: BTreeSet<Point> = r.f_maps[&u].values().copied().collect();
                let rm: BTreeSet<Point> = r
                    .f_maps
                    .get(&m)
                    .map(|f| f.values().copied().collect())
                    .unwrap_or_default();
                let both: BTreeSet<Point> = rs.intersection(&ru).copied().collect();
                (both != rm).then(|| format!("ran(f_{s}) ∩ ran(f_{u}) differs from ran(f_{m})"))
            })
        }),
    );
    fail(
        "spare_points",
        (1..=top).find_map(|n| {
            let covered: BTreeSet<Point> = t
                .at_level(n - 1)
                .iter()
                .filter_map(|s| r.f_maps.get(s))
                .flat_map(|f| f.values().copied())
                .chain(0..r.x_sizes[n - 1] as Point)
                .collect();
            (covered.len() >= r.x_sizes[n]).then(|| format!("X_{n} has no spare point"))
        }),
    );
    fail(
        "coherence",
        r.f_maps.keys().find_map(|&s| {
            r.f_maps.keys().filter(|&&u| u > s).find_map(|&u| {
                let (fs, fu) = (&r.f_maps[&s], &r.f_maps[&u]);
                fs.iter().find_map(|(&x, &y)| {
                    if fu.get(&x) != Some(&y) {
                        return None;
                    }
                    let n = r.n_of(x)?;
                    let xn = 0..r.x_sizes[n] as Point;
                    let agree = xn
                        .clone()
                        .all(|z| fs.get(&z).is_some() && fs.get(&z) == fu.get(&z));
                    (!agree).then(|| format!("f_{s} and f_{u} agree at {x} but not on X_{n}"))
                })
            })
        }),
    );
    fail(
        "points_moved",
        r.f_maps.iter().find_map(|(&s, f)| {
            f.iter()
                .find(|(x, y)| x == y)
                .map(|(x, _)| format!("f_{s} fixes {x}"))
        }),
    );
    rep
}

/// The unique path `a = a₀, …, a_n = b` witnessing `a <★ b`.
pub fn tree_star_leq(
    r: &RigidSystem,
    a: &GroupElement,
    b: &GroupElement,
) -> Option<Vec<GroupElement>> {
    if a == b || a.is_zero() {
        return None;
    }
    let mut prev: BTreeMap<GroupElement, GroupElement> = BTreeMap::new();
    let mut queue = VecDeque::from([a.clone()]);
    let mut seen = BTreeSet::from([a.clone()]);
    while let Some(c) = queue.pop_front() {
        for d in r.successors(&c) {
            if seen.insert(d.clone()) {
                prev.insert(d.clone(), c.clone());
                if &d == b {
                    let mut path = vec![d];
                    while let Some(p) = prev.get(path.last().expect("nonempty")) {
                        path.push(p.clone());
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(d);
            }
        }
    }
    None
}

/// Reasonableness of a tuple: point levels never decrease along it.
pub fn is_reasonable(r: &RigidSystem, xs: &[Point]) -> bool {
    xs.windows(2).all(|w| r.n_of(w[0]) <= r.n_of(w[1]))
}

/// Reasonableness of both tuples and, when `x̄ <^k_X ȳ`, the unique minimal
/// node sequence `t̄` with `f_t̄(x̄) = ȳ`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReasonableOrder {
    pub x_reasonable: bool,
    pub y_reasonable: bool,
    pub witness: Option<Vec<usize>>,
}

pub fn reasonable_and_order(r: &RigidSystem, xs: &[Point], ys: &[Point]) -> ReasonableOrder {
    let step = |t: &[Point]| -> Vec<(usize, Vec<Point>)> {
        // for each image, the least node producing it (the root of the cone)
        let mut out: Vec<(usize, Vec<Point>)> = Vec::new();
        for (&s, f) in &r.f_maps {
            let Some(img) = t
                .iter()
                .map(|x| f.get(x).copied())
                .collect::<Option<Vec<_>>>()
            else {
                continue;
            };
            match out.iter_mut().find(|(_, i)| *i == img) {
                Some(entry) if r.tree.leq(s, entry.0) => entry.0 = s,
                Some(_) => {}
                None => out.push((s, img)),
            }
        }
        out
    };
    let mut witness = None;
    if xs != ys {
        let mut prev: BTreeMap<Vec<Point>, (Vec<Point>, usize)> = BTreeMap::new();
        let mut queue = VecDeque::from([xs.to_vec()]);
        'search: while let Some(t) = queue.pop_front() {
            for (s, img) in step(&t) {
                if img.as_slice() == xs || prev.contains_key(&img) {
                    continue;
                }
                prev.insert(img.clone(), (t.clone(), s));
                if img.as_slice() == ys {
                    let mut nodes = Vec::new();
                    let mut cur = img;
                    while let Some((p, s)) = prev.get(&cur) {
                        nodes.push(*s);
                        cur = p.clone();
                    }
                    nodes.reverse();
                    witness = Some(nodes);
                    break 'search;
                }
                queue.push_back(img);
            }
        }
    }
    ReasonableOrder {
        x_reasonable: is_reasonable(r, xs),
        y_reasonable: is_reasonable(r, ys),
        witness,
    }
}

/// The first `n` members of `{b : a ≤★ b}` in `(𝐧, element)` order, and
/// whether `n` of them were available.
pub fn choose_basis(r: &RigidSystem, a: &GroupElement, n: usize) -> (Vec<GroupElement>, bool) {
    let up = r.up_set(a);
    let complete = up.len() >= n;
    (up.into_iter().take(n).collect(), complete)
}

/// Assigns `p_x` to every built point, in increasing order.
pub fn assign_point_primes(r: &RigidSystem, reg: &mut PrimeRegistry) -> Result<(), RigidError> {
    for x in r.points() {
        reg.assign_prime(&ClassKey::g0([(x, 1)]))?;
    }
    Ok(())
}

/// The `G₀` key of an integral element.
pub fn g0_key(a: &GroupElement) -> ClassKey {
    ClassKey::g0(a.coeffs().iter().map(|(&x, r)| (x, r.to_integer())))
}

fn element_of_key(key: &ClassKey, p: u64) -> Result<GroupElement, RigidError> {
    match key {
        ClassKey::G0Element { terms } => Ok(GroupElement::from_terms(
            terms.iter().map(|&(x, c)| (x, Rational64::from_integer(c))),
        )),
        ClassKey::ClassTuple { .. } => Err(RigidError::NotAnElementPrime(p)),
    }
}

/// Membership in `G₁[T]` over the built levels: at each denominator prime
/// `p = p_b`, the `p`-part of `a` must be a `p`-local combination of the
/// up-set of `b`.
pub fn tree_in_g1(
    r: &RigidSystem,
    reg: &PrimeRegistry,
    a: &GroupElement,
) -> Result<bool, RigidError> {
    for p in a.denominator_primes() {
        let Some(key) = reg.lookup_prime(p) else {
            return Ok(false);
        };
        let b = element_of_key(key, p)?;
        if local_span_solve(p, a, &r.up_set(&b)).is_none() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `c ∈ G₍₁,p_b₎` by definition: `c ∈ G₁` and `p^{-m}c ∈ G₁` for `m ≤ bound`.
pub fn tree_divisible(
    r: &RigidSystem,
    reg: &PrimeRegistry,
    b: &GroupElement,
    c: &GroupElement,
    bound: u32,
) -> Result<bool, RigidError> {
    let Some(p) = reg.prime_of(&g0_key(b)) else {
        return Ok(false);
    };
    if !tree_in_g1(r, reg, c)? {
        return Ok(false);
    }
    for m in 1..=bound {
        if !tree_in_g1(r, reg, &c.scale(Rational64::new(1, (p as i64).pow(m))))? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn to_big(r: &Rational64) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

fn vectors(elems: &[GroupElement], coords: &[Point]) -> Vec<Vec<BigRational>> {
    elems
        .iter()
        .map(|e| coords.iter().map(|&x| to_big(&e.coeff(x))).collect())
        .collect()
}

/// `c` lies in the pure closure of the up-set of `b` in `G₁` with a
/// multiplier at most `n_bound`.
pub fn in_up_set_closure(
    r: &RigidSystem,
    reg: &PrimeRegistry,
    b: &GroupElement,
    c: &GroupElement,
    n_bound: u64,
) -> Result<bool, RigidError> {
    if !tree_in_g1(r, reg, c)? {
        return Ok(false);
    }
    let w = r.up_set(b);
    let coords: Vec<Point> = w
        .iter()
        .flat_map(|e| e.supp())
        .chain(c.supp())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gens = vectors(&w, &coords);
    let target = vectors(std::slice::from_ref(c), &coords)
        .pop()
        .expect("one row");
    Ok(lattice_multiplier(&gens, &target).is_some_and(|n| n <= BigInt::from(n_bound)))
}

/// Transport along the union of the maps of a strictly increasing branch.
pub fn branch_endomorphism(
    r: &RigidSystem,
    branch: &[usize],
    a: &GroupElement,
) -> Result<GroupElement, RigidError> {
    for (i, w) in branch.windows(2).enumerate() {
        if !(r.tree.leq(w[0], w[1]) && w[0] != w[1]) {
            return Err(RigidError::NotABranch(i + 1));
        }
    }
    let mut union: BTreeMap<Point, Point> = BTreeMap::new();
    for t in branch {
        let f = r.f_maps.get(t).ok_or(RigidError::UnknownNode(*t))?;
        union.extend(f.iter().map(|(&x, &y)| (x, y)));
    }
    lift_along(&union, a).map_err(|e| match e {
        GroupError::OutsideDomain(x) => RigidError::OutsideBranch(x),
        other => RigidError::Group(other),
    })
}

/// Facts about a branch map on its domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BranchReport {
    pub domain_size: usize,
    pub injective: bool,
    pub non_scalar: bool,
    /// No nonzero multiple of a point of `X₀` lies in the image span.
    pub misses_x0_multiples: bool,
}

pub fn analyze_branch(r: &RigidSystem, branch: &[usize]) -> Result<BranchReport, RigidError> {
    let last = *branch.last().ok_or(RigidError::NotABranch(0))?;
    let dom: Vec<Point> = r
        .f_maps
        .get(&last)
        .ok_or(RigidError::UnknownNode(last))?
        .keys()
        .copied()
        .collect();
    let images: Vec<GroupElement> = dom
        .iter()
        .map(|&x| branch_endomorphism(r, branch, &GroupElement::basis(x)))
        .collect::<Result<_, _>>()?;
    let coords: Vec<Point> = r.points();
    let img_vecs = vectors(&images, &coords);
    let rank = rank_rational(&img_vecs);
    let injective = rank == dom.len();
    let non_scalar = dom
        .iter()
        .zip(&images)
        .any(|(&x, img)| img.coeffs().len() != 1 || !img.coeffs().contains_key(&x));
    let misses = r.level_points(0).iter().all(|&x| {
        let mut with = img_vecs.clone();
        with.extend(vectors(&[GroupElement::basis(x)], &coords));
        rank_rational(&with) == rank + 1
    });
    Ok(BranchReport {
        domain_size: dom.len(),
        injective,
        non_scalar,
        misses_x0_multiples: misses,
    })
}

/// Outcome of [`endorigidity_search`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EndoReport {
    pub assumption: String,
    pub level: usize,
    pub points: usize,
    pub unknowns: usize,
    pub constraints: usize,
    /// Dimension of the space of linear maps satisfying every span constraint.
    pub solution_dimension: usize,
    /// Surviving scalars `q` for the map `x ↦ q·x`.
    pub survivors: Vec<Rational64>,
    /// True when non-scalar directions survive, so the survivor list is
    /// restricted to the scalar line.
    pub partial: bool,
}

#[allow(clippy::needless_range_loop)]
fn nullspace(rows: &[Vec<BigRational>], width: usize) -> Vec<Vec<BigRational>> {
    let mut m: Vec<Vec<BigRational>> = rows.to_vec();
    let mut pivots: Vec<usize> = Vec::new();
    let mut r = 0;
    for c in 0..width {
        let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = BigRational::one() / m[r][c].clone();
        for v in m[r].iter_mut() {
            *v = v.clone() * inv.clone();
        }
        for i in 0..m.len() {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in 0..width {
                    let d = f.clone() * m[r][j].clone();
                    m[i][j] -= d;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    (0..width)
        .filter(|c| !pivots.contains(c))
        .map(|free| {
            let mut v = vec![BigRational::zero(); width];
            v[free] = BigRational::one();
            for (row, &pc) in pivots.iter().enumerate() {
                v[pc] = -m[row][free].clone();
            }
            v
        })
        .collect()
}

/// Linear maps `π` on the built points with `π(x)` supported in `x/E₁` and
/// `π(a)` in the span of the up-set of `a`, for `a` ranging over points and
/// the sums `u + v`, `u + 2v`; the solution space is computed exactly, and
/// scalars `q` on it (numerator and denominator at most `coeff_bound`) are
/// kept when `q·g ∈ G₁` for every test generator `g`.
pub fn endorigidity_search(
    r: &RigidSystem,
    reg: &mut PrimeRegistry,
    coeff_bound: i64,
) -> Result<EndoReport, RigidError> {
    let pts = r.points();
    let classes: BTreeMap<Point, Vec<Point>> = pts
        .iter()
        .map(|&x| (x, r.e1_class(x).into_iter().collect()))
        .collect();
    let mut var: BTreeMap<(Point, Point), usize> = BTreeMap::new();
    for (&x, cls) in &classes {
        for &y in cls {
            let n = var.len();
            var.insert((x, y), n);
        }
    }
    let width = var.len();
    let mut tests: Vec<GroupElement> = pts.iter().map(|&x| GroupElement::basis(x)).collect();
    for (i, &u) in pts.iter().enumerate() {
        for &v in &pts[i + 1..] {
            for w in [1, 2] {
                tests.push(GroupElement::from_terms([
                    (u, Rational64::one()),
                    (v, Rational64::from_integer(w)),
                ]));
            }
        }
    }
    let mut rows: Vec<Vec<BigRational>> = Vec::new();
    for a in &tests {
        let coords: Vec<Point> = a
            .supp()
            .iter()
            .flat_map(|x| classes[x].iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let span = vectors(&r.up_set(a), &coords);
        // annihilator of the span inside the coordinates of π(a)
        for z in nullspace(&span, coords.len()) {
            let mut row = vec![BigRational::zero(); width];
            for (&x, ax) in a.coeffs() {
                for &y in &classes[&x] {
                    let j = coords
                        .iter()
                        .position(|&c| c == y)
                        .expect("class coordinate");
                    row[var[&(x, y)]] += to_big(ax) * z[j].clone();
                }
            }
            if row.iter().any(|v| !v.is_zero()) {
                rows.push(row);
            }
        }
    }
    let space = nullspace(&rows, width);
    let identity: Vec<BigRational> = var
        .keys()
        .map(|(x, y)| {
            if x == y {
                BigRational::one()
            } else {
                BigRational::zero()
            }
        })
        .collect();
    let scalar_only = space.len() == 1 && {
        let mut both = space.clone();
        both.push(identity);
        rank_rational(&both) == 1
    };
    assign_point_primes(r, reg)?;
    let mut generators: Vec<GroupElement> = Vec::new();
    for &x in &pts {
        let b = GroupElement::basis(x);
        let p = reg.assign_prime(&g0_key(&b))?;
        generators.push(b.clone());
        generators.push(b.scale(Rational64::new(1, p as i64)));
    }
    let mut survivors = Vec::new();
    let bound = coeff_bound.max(0);
    let mut candidates: BTreeSet<Rational64> = BTreeSet::new();
    for num in -bound..=bound {
        for den in 1..=bound.max(1) {
            candidates.insert(Rational64::new(num, den));
        }
    }
    for q in candidates {
        let mut ok = true;
        for g in &generators {
            if !tree_in_g1(r, reg, &g.scale(q))? {
                ok = false;
                break;
            }
        }
        if ok {
            survivors.push(q);
        }
    }
    Ok(EndoReport {
        assumption: "images of basis points are supported in their E1-classes".into(),
        level: r.x_sizes.len() - 1,
        points: pts.len(),
        unknowns: width,
        constraints: rows.len(),
        solution_dimension: space.len(),
        survivors,
        partial: !scalar_only,
    })
}

/// A witness that `f̂_t` restricted to `G₁` misses part of the pure
/// closure of its range: `p_y^{-1} y` for `y = f_t(x)`.
pub fn range_gap_witness(
    r: &RigidSystem,
    reg: &mut PrimeRegistry,
    t: usize,
) -> Result<Option<GroupElement>, RigidError> {
    let f = r.f_maps.get(&t).ok_or(RigidError::UnknownNode(t))?;
    for (&x, &y) in f {
        let p = reg.assign_prime(&ClassKey::g0([(y, 1)]))?;
        let img = GroupElement::basis(y).scale(Rational64::new(1, p as i64));
        let pre = GroupElement::basis(x).scale(Rational64::new(1, p as i64));
        if tree_in_g1(r, reg, &img)? && !tree_in_g1(r, reg, &pre)? {
            return Ok(Some(img));
        }
    }
    Ok(None)
}

/// For pairwise distinct tuples, positions `(ℓ₁, i₁)` and `(ℓ₂, i₂)` with
/// `ℓ₁ ≠ ℓ₂` whose points occur nowhere else in the family.
pub fn unique_coordinates(family: &[Vec<Point>]) -> Option<((usize, usize), (usize, usize))> {
    let mut count: BTreeMap<Point, usize> = BTreeMap::new();
    for t in family {
        for &y in t {
            *count.entry(y).or_default() += 1;
        }
    }
    let unique: Vec<(usize, usize)> = family
        .iter()
        .enumerate()
        .flat_map(|(l, t)| {
            t.iter()
                .enumerate()
                .filter(|(_, y)| count[y] == 1)
                .map(move |(i, _)| (l, i))
        })
        .collect();
    unique
        .iter()
        .find_map(|&a| unique.iter().find(|b| b.0 != a.0).map(|&b| (a, b)))
}

/// Whether a rational is an integer within the bound, for survivor checks.
pub fn is_bounded_integer(q: &Rational64, bound: i64) -> bool {
    q.is_integer() && q.abs() <= Rational64::from_integer(bound)
}
