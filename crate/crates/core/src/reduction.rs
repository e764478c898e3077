//! The end-to-end map from graphs to group presentations, isomorphism
//! transfer along forced chains, and the inverse analysis of candidate maps
//! on realized truncations.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Rational64;
use num_traits::{One, Signed};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::groups::{in_g1, lift_along, DivisibilityCertificate, GroupElement, GroupError};
use crate::keq::{
    encode_graph, greedy_embed, is_isomorphic_finite, rel, FiniteKeqStructure, GraphAdj, Point,
};
use crate::partial_autos::{AutoError, Chain, OrientedPartialAuto};
use crate::primes::{class_representative, ClassKey, PrimeError, PrimeRegistry};
use crate::report::Report;
use crate::system::{block_of, block_point, FullSystem, SystemError, SystemStage};

#[derive(Debug, Error)]
pub enum ReductionError {
    #[error("map does not preserve E{relation} between M-points {a} and {b}")]
    NotIsomorphism { relation: usize, a: Point, b: Point },
    #[error("map is not injective at M-point {0}")]
    NotInjective(Point),
    #[error(transparent)]
    Auto(#[from] AutoError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Prime(#[from] PrimeError),
    #[error("generator {0} failed the G1 membership check")]
    GeneratorOutsideG1(String),
}

/// A stage-truncated presentation of `G₍₁,𝒰₎`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentationPrefix {
    pub stage: usize,
    /// The embedded image `𝒰`, in structure order.
    pub u_label: Vec<Point>,
    pub generators: Vec<GroupElement>,
    pub divisibility_facts: Vec<DivisibilityCertificate>,
    /// Number of leading structure points the prefix depends on.
    pub prefix_points: usize,
}

/// `reduce` on a graph padded with isolated vertices.
pub fn reduce(
    sys: &mut FullSystem,
    reg: &mut PrimeRegistry,
    h: &GraphAdj,
    pad: usize,
    stage: usize,
) -> Result<PresentationPrefix, ReductionError> {
    reduce_structure(sys, reg, &encode_graph(h).pad_isolated(pad), stage)
}

/// Embeds the structure greedily and harvests the realized basis points of
/// `X_𝒰` together with `p^{-1}(Σ y_ℓ)` for every touched tuple `ȳ` of arity
/// one or two inside `X_𝒰`, with unit weights.
pub fn reduce_structure(
    sys: &mut FullSystem,
    reg: &mut PrimeRegistry,
    s: &FiniteKeqStructure,
    stage: usize,
) -> Result<PresentationPrefix, ReductionError> {
    let st = sys.build_to_stage(stage).clone();
    let u_label = greedy_embed(s, s.len());
    let u: BTreeSet<Point> = u_label.iter().copied().collect();
    let realized = st.realized_blocks();
    let prefix_points = u_label
        .iter()
        .rposition(|m| realized.contains(m))
        .map_or(0, |j| j + 1);
    let points: BTreeSet<Point> = st
        .y_set()
        .iter()
        .copied()
        .filter(|&x| u.contains(&block_of(x)))
        .collect();
    let mut generators: Vec<GroupElement> =
        points.iter().map(|&x| GroupElement::basis(x)).collect();
    let mut divisibility_facts = Vec::new();
    for k in 1..=2 {
        for class in st.tuple_classes(k).nontrivial_classes() {
            let inside: Vec<_> = class
                .iter()
                .filter(|t| t.iter().all(|x| points.contains(x)))
                .collect();
            if inside.is_empty() {
                continue;
            }
            let ones = vec![1u64; k];
            let key = ClassKey::ClassTuple {
                k,
                rep: class_representative(&st, &class),
                q: ones.clone(),
            };
            let p = reg.assign_prime(&key)?;
            for t in inside {
                let g = GroupElement::weighted(t, &ones).scale(Rational64::new(1, p as i64));
                let m = in_g1(&st, reg, &g)?;
                if !m.member {
                    return Err(ReductionError::GeneratorOutsideG1(g.to_string()));
                }
                divisibility_facts.extend(m.certificates);
                generators.push(g);
            }
        }
    }
    Ok(PresentationPrefix {
        stage,
        u_label,
        generators,
        divisibility_facts,
        prefix_points,
    })
}

/// Checks that a finite map between M-points preserves `E₀, E₁, E₂` and their
/// negations.
pub fn check_m_isomorphism(h: &BTreeMap<Point, Point>) -> Result<(), ReductionError> {
    let mut seen = BTreeMap::new();
    for (&a, &b) in h {
        if seen.insert(b, a).is_some() {
            return Err(ReductionError::NotInjective(a));
        }
    }
    for (&a, &ha) in h {
        for (&b, &hb) in h {
            for i in 0..3 {
                if rel(i, a, b) != rel(i, ha, hb) {
                    return Err(ReductionError::NotIsomorphism { relation: i, a, b });
                }
            }
        }
    }
    Ok(())
}

/// The chain `g_k = h ∩ (n_k × n_k)` over the increasing thresholds
/// `n_k = max(a, h(a)) + 1`.
pub fn transfer_chain(h: &BTreeMap<Point, Point>) -> Result<Chain, ReductionError> {
    let thresholds: BTreeSet<Point> = h.iter().map(|(&a, &b)| a.max(b) + 1).collect();
    let items = thresholds
        .iter()
        .map(|&n| {
            let pairs: Vec<(Point, Point)> = h
                .iter()
                .filter(|(&a, &b)| a < n && b < n)
                .map(|(&a, &b)| (a, b))
                .collect();
            OrientedPartialAuto::from_pairs(&pairs, 1)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Chain::new(items)?)
}

/// The result of forcing a finite isomorphism into the system.
#[derive(Debug, Clone)]
pub struct Transfer {
    pub chain: Chain,
    /// The stage after the forced chain and its prefixes were added.
    pub stage: SystemStage,
    /// `f` of the full chain, which contains every `f` of its prefixes.
    pub map: BTreeMap<Point, Point>,
}

impl Transfer {
    pub fn apply(&self, a: &GroupElement) -> Result<GroupElement, GroupError> {
        lift_along(&self.map, a)
    }

    /// The transfer on basis points, as a candidate for the inverse analysis.
    pub fn point_candidate(&self) -> BTreeMap<Point, GroupElement> {
        self.map
            .iter()
            .map(|(&x, &y)| (x, GroupElement::basis(y)))
            .collect()
    }
}

/// Forces the chain of `h` into a copy of the stage and returns the induced
/// transport of group elements.
pub fn transfer_iso(
    stage: &SystemStage,
    h: &BTreeMap<Point, Point>,
) -> Result<Transfer, ReductionError> {
    check_m_isomorphism(h)?;
    let chain = transfer_chain(h)?;
    let forced = stage.force_chain(&chain)?;
    let map = forced.f_of(&chain).cloned().unwrap_or_default();
    Ok(Transfer {
        chain,
        stage: forced,
        map,
    })
}

/// The M-level isomorphism `𝒰 → 𝒱` induced by an isomorphism of structures
/// and their greedy embeddings.
pub fn embedding_iso(
    a: &FiniteKeqStructure,
    b: &FiniteKeqStructure,
) -> Option<BTreeMap<Point, Point>> {
    let phi = is_isomorphic_finite(a, b)?;
    let (ua, ub) = (greedy_embed(a, a.len()), greedy_embed(b, b.len()));
    Some(
        phi.iter()
            .enumerate()
            .map(|(i, &j)| (ua[i], ub[j]))
            .collect(),
    )
}

/// Data extracted from a candidate map on basis points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsoAnalysis {
    pub pi_map: BTreeMap<Point, GroupElement>,
    pub pi1: BTreeMap<Point, Point>,
    pub scalars: BTreeMap<Point, Rational64>,
    pub q_star: Option<Rational64>,
    /// Whether the domain meets at least two `E₁`-classes.
    pub hypothesis_met: bool,
}

/// Why a candidate was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Refutation {
    pub witness: Point,
    pub reason: String,
}

/// Accepts a candidate iff every image is a nonzero multiple of one basis
/// point in the same `E₁`-class and the point map is injective.
pub fn extract_pointwise_map(
    stage: &SystemStage,
    candidate: &BTreeMap<Point, GroupElement>,
) -> Result<IsoAnalysis, Refutation> {
    let classes = stage.tuple_classes(1);
    let mut pi1 = BTreeMap::new();
    let mut scalars = BTreeMap::new();
    let mut targets = BTreeSet::new();
    for (&x, img) in candidate {
        if img.coeffs().len() != 1 {
            return Err(Refutation {
                witness: x,
                reason: format!("image has support of size {}", img.coeffs().len()),
            });
        }
        let (&y, &q) = img.coeffs().iter().next().expect("one term");
        if !classes.same_class(&[x], &[y]) {
            return Err(Refutation {
                witness: x,
                reason: format!("image point {y} is outside the E1-class of {x}"),
            });
        }
        if !targets.insert(y) {
            return Err(Refutation {
                witness: x,
                reason: format!("image point {y} is hit twice"),
            });
        }
        pi1.insert(x, y);
        scalars.insert(x, q);
    }
    let first = scalars.values().next().copied();
    let q_star = first.filter(|q| scalars.values().all(|v| v == q));
    let mut reps: Vec<Point> = Vec::new();
    for &x in candidate.keys() {
        if !reps.iter().any(|&r| classes.same_class(&[r], &[x])) {
            reps.push(x);
        }
    }
    Ok(IsoAnalysis {
        pi_map: candidate.clone(),
        pi1,
        scalars,
        q_star,
        hypothesis_met: reps.len() > 1,
    })
}

/// `x 𝓔ᵢ y`: the blocks of `x` and `y` are `E^M_i`-related.
pub fn script_e(i: usize, x: Point, y: Point) -> bool {
    rel(i, block_of(x), block_of(y))
}

/// Outcome of [`check_ei_preservation`].
#[derive(Debug, Clone, Serialize)]
pub struct EiCheck {
    pub report: Report,
    /// The induced M-part isomorphism when every clause passes.
    pub induced: Option<BTreeMap<Point, Point>>,
}

/// Verifies that `π₁` preserves each `𝓔ᵢ` and its negation, then that the
/// induced map on M-points is a well-defined partial isomorphism.
pub fn check_ei_preservation(analysis: &IsoAnalysis) -> EiCheck {
    let mut report = Report::new();
    let pairs: Vec<(Point, Point)> = analysis.pi1.iter().map(|(&a, &b)| (a, b)).collect();
    for i in 0..3 {
        let witness = pairs.iter().enumerate().find_map(|(n, &(x, px))| {
            pairs[n + 1..].iter().find_map(|&(y, py)| {
                (script_e(i, x, y) != script_e(i, px, py))
                    .then(|| format!("pair ({x}, {y}) maps to ({px}, {py})"))
            })
        });
        report.record(&format!("preserves_e{i}"), witness);
    }
    let mut induced: BTreeMap<Point, Point> = BTreeMap::new();
    let mut clash = None;
    for &(x, px) in &pairs {
        let (u, v) = (block_of(x), block_of(px));
        if let Some(&w) = induced.get(&u) {
            if w != v {
                clash.get_or_insert(format!("M-point {u} sent to both {w} and {v}"));
            }
        }
        induced.insert(u, v);
    }
    report.record("induced_well_defined", clash);
    let iso = check_m_isomorphism(&induced).err().map(|e| e.to_string());
    report.record("induced_isomorphism", iso);
    let induced = report.passed().then_some(induced);
    EiCheck { report, induced }
}

/// Constancy of the scalars and, when constant, `q★ ∈ {1, −1}`.
pub fn validate_scalar(analysis: &IsoAnalysis) -> Report {
    let mut r = Report::new();
    r.record(
        "scalars_present",
        analysis
            .scalars
            .is_empty()
            .then(|| "no scalars".to_string()),
    );
    let first = analysis.scalars.iter().next();
    r.record(
        "scalars_constant",
        first.and_then(|(&x0, q0)| {
            analysis
                .scalars
                .iter()
                .find(|(_, q)| *q != q0)
                .map(|(&x, q)| format!("scalar {q} at {x} differs from {q0} at {x0}"))
        }),
    );
    if let Some(q) = analysis.q_star {
        r.record(
            "q_star_integer",
            (!q.is_integer()).then(|| format!("q* = {q}")),
        );
        r.record(
            "q_star_unit",
            (q.abs() != Rational64::one()).then(|| format!("q* = {q}")),
        );
    }
    r
}

/// The realized truncation of `X_𝒰`: trapped points in blocks of `𝒰` plus the
/// first point of every block of `𝒰`.
pub fn realized_truncation(stage: &SystemStage, u: &BTreeSet<Point>) -> Vec<Point> {
    let mut out: BTreeSet<Point> = stage
        .y_set()
        .iter()
        .copied()
        .filter(|&x| u.contains(&block_of(x)))
        .collect();
    out.extend(u.iter().map(|&s| block_point(s, 0)));
    out.into_iter().collect()
}

/// A bijection between two point sets preserving each `𝓔ᵢ` and its negation.
/// `𝓔₂` is "same block", so such a bijection is a matching of blocks of equal
/// size that preserves `E₀, E₁` between blocks; the search backtracks over
/// blocks and then pairs points inside matched blocks in increasing order.
pub fn find_ei_bijection(from: &[Point], to: &[Point]) -> Option<BTreeMap<Point, Point>> {
    if from.len() != to.len() {
        return None;
    }
    let group = |pts: &[Point]| -> Vec<(Point, Vec<Point>)> {
        let mut blocks: BTreeMap<Point, Vec<Point>> = BTreeMap::new();
        for &x in pts {
            blocks.entry(block_of(x)).or_default().push(x);
        }
        blocks
            .into_iter()
            .map(|(s, mut v)| {
                v.sort();
                (s, v)
            })
            .collect()
    };
    let (a, b) = (group(from), group(to));
    if a.len() != b.len() {
        return None;
    }
    fn go(
        a: &[(Point, Vec<Point>)],
        b: &[(Point, Vec<Point>)],
        used: &mut [bool],
        chosen: &mut Vec<usize>,
    ) -> bool {
        let i = chosen.len();
        if i == a.len() {
            return true;
        }
        for j in 0..b.len() {
            if used[j] || a[i].1.len() != b[j].1.len() {
                continue;
            }
            let ok = (0..i)
                .all(|l| (0..2).all(|r| rel(r, a[l].0, a[i].0) == rel(r, b[chosen[l]].0, b[j].0)));
            if ok {
                used[j] = true;
                chosen.push(j);
                if go(a, b, used, chosen) {
                    return true;
                }
                chosen.pop();
                used[j] = false;
            }
        }
        false
    }
    let mut used = vec![false; b.len()];
    let mut chosen = Vec::new();
    if !go(&a, &b, &mut used, &mut chosen) {
        return None;
    }
    Some(
        a.iter()
            .zip(&chosen)
            .flat_map(|((_, xs), &j)| xs.iter().copied().zip(b[j].1.iter().copied()))
            .collect(),
    )
}
