//! Oracles and enumerators shared by the integration tests. Everything here
//! is deliberately naive: brute force over permutations, explicit subgroup
//! closures and plain enumeration, independent of the library's solvers.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use num_rational::Rational64;
use tfab_core::groups::GroupElement;
use tfab_core::keq::{GraphAdj, Point};

/// Every labeled simple graph on vertices `"0"..n`, in edge-mask order.
pub fn all_graphs(n: usize) -> Vec<GraphAdj> {
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect();
    (0..1u32 << pairs.len())
        .map(|mask| {
            let edges: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &e)| e)
                .collect();
            GraphAdj::from_indices(n, &edges)
        })
        .collect()
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Graph isomorphism by trying every vertex permutation.
pub fn graph_iso_oracle(a: &GraphAdj, b: &GraphAdj) -> bool {
    let n = a.vertices.len();
    if n != b.vertices.len() || a.edges.len() != b.edges.len() {
        return false;
    }
    permutations(n).into_iter().any(|p| {
        a.edges.iter().all(|&(u, v)| {
            let (x, y) = (p[u], p[v]);
            b.edges.contains(&(x.min(y), x.max(y)))
        })
    })
}

/// A canonical form: the least sorted edge list over all relabelings.
pub fn graph_canonical(g: &GraphAdj) -> (usize, Vec<(usize, usize)>) {
    let n = g.vertices.len();
    let best = permutations(n)
        .into_iter()
        .map(|p| {
            let mut e: Vec<(usize, usize)> = g
                .edges
                .iter()
                .map(|&(u, v)| (p[u].min(p[v]), p[u].max(p[v])))
                .collect();
            e.sort();
            e
        })
        .min()
        .unwrap_or_default();
    (n, best)
}

/// Parent arrays (`parents[i] < i`) of rooted trees with at most
/// `max_nodes` nodes and every level at most `max_level`.
pub fn trees(max_nodes: usize, max_level: usize) -> Vec<Vec<Option<usize>>> {
    let mut out = Vec::new();
    let mut frontier: Vec<(Vec<Option<usize>>, Vec<usize>)> = vec![(vec![None], vec![0])];
    while let Some((parents, levels)) = frontier.pop() {
        out.push(parents.clone());
        if parents.len() == max_nodes {
            continue;
        }
        for p in 0..parents.len() {
            if levels[p] < max_level {
                let mut np = parents.clone();
                np.push(Some(p));
                let mut nl = levels.clone();
                nl.push(levels[p] + 1);
                frontier.push((np, nl));
            }
        }
    }
    out.sort();
    out
}

/// `p`-adic valuation of a nonzero integer.
pub fn val(mut n: i64, p: i64) -> u32 {
    let mut v = 0;
    while n != 0 && n % p == 0 {
        n /= p;
        v += 1;
    }
    v
}

/// The subgroup of `(ℤ/p^M)^coords` generated by the given integral
/// vectors, enumerated by breadth-first closure under adding generators.
pub struct ResidueSubgroup {
    pub p: u64,
    pub m: u32,
    pub coords: Vec<Point>,
    pub members: HashSet<Vec<u64>>,
}

impl ResidueSubgroup {
    pub fn generate(p: u64, m: u32, coords: Vec<Point>, gens: &[GroupElement]) -> Self {
        let modulus = p.pow(m) as i64;
        let vecs: Vec<Vec<u64>> = gens
            .iter()
            .map(|g| {
                coords
                    .iter()
                    .map(|&x| g.coeff(x).to_integer().rem_euclid(modulus) as u64)
                    .collect()
            })
            .collect();
        let zero = vec![0u64; coords.len()];
        let mut members = HashSet::from([zero.clone()]);
        let mut queue = VecDeque::from([zero]);
        while let Some(v) = queue.pop_front() {
            for g in &vecs {
                let w: Vec<u64> = v
                    .iter()
                    .zip(g)
                    .map(|(a, b)| (a + b) % modulus as u64)
                    .collect();
                if members.insert(w.clone()) {
                    queue.push_back(w);
                }
            }
        }
        Self {
            p,
            m,
            coords,
            members,
        }
    }

    /// Whether `a ≡ r / p^M` modulo `p`-integral vectors for some member `r`:
    /// each coordinate's residue is found by scanning `0..p^M` for the value
    /// making `a_x − t/p^M` integral at `p`.
    pub fn contains_p_part(&self, a: &GroupElement) -> bool {
        let pm = self.p.pow(self.m) as i64;
        let p = self.p as i64;
        let integral_at_p = |r: Rational64| val(*r.denom(), p) == 0;
        for (&x, &c) in a.coeffs() {
            if !self.coords.contains(&x) && !integral_at_p(c) {
                return false;
            }
        }
        let target: Option<Vec<u64>> = self
            .coords
            .iter()
            .map(|&x| {
                let c = a.coeff(x);
                (0..pm)
                    .find(|&t| integral_at_p(c - Rational64::new(t, pm)))
                    .map(|t| t as u64)
            })
            .collect();
        target.is_some_and(|t| self.members.contains(&t))
    }
}

/// Sorted union of supports.
pub fn support_union(elems: &[GroupElement]) -> Vec<Point> {
    let s: BTreeSet<Point> = elems.iter().flat_map(|e| e.supp()).collect();
    s.into_iter().collect()
}

/// Convenience constructor from `(point, numerator, denominator)` triples.
pub fn elem(terms: &[(Point, i64, i64)]) -> GroupElement {
    GroupElement::from_terms(terms.iter().map(|&(x, n, d)| (x, Rational64::new(n, d))))
}

/// Inverse of a finite injective map.
pub fn invert_map(m: &BTreeMap<Point, Point>) -> BTreeMap<Point, Point> {
    m.iter().map(|(&a, &b)| (b, a)).collect()
}
