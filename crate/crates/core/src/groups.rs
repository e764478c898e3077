//! Elements of `G₂ = ⊕ ℚx` with exact rational coefficients, and membership
//! in `G₀`, `G₁`, `G₍₁,p₎` and `G₍₁,𝒰₎`.
//!
//! Membership in `G₁` is decided one denominator prime at a time: a
//! torsion-free group between `G₀` and `G₂` is the intersection of its
//! localizations, and at the prime `p = p₍e,q̄₎` the only generators that are
//! not already `p`-integral are the `p^{-m}(Σ q_ℓ y_ℓ)` with `ȳ ∈ e`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::{BigRational, Rational64};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keq::Point;
use crate::linalg::{inverse_mod, lattice_multiplier, solve_mod_prime_power, solve_rational};
use crate::partial_autos::Chain;
use crate::primes::{ClassKey, PrimeRegistry};
use crate::system::{SystemStage, Tuple};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("prime {0} is assigned to a key that is not a tuple class")]
    NotAClassPrime(u64),
    #[error("representative {rep:?} of the class of prime {p} is not realized at this stage")]
    StageMismatch { p: u64, rep: Tuple },
    #[error("element is not in G1")]
    NotInG1,
    #[error("point {0} is outside the domain of the lifted map")]
    OutsideDomain(Point),
    #[error("chain {0} is not in I")]
    UnknownChain(String),
    #[error("bad element encoding: {0}")]
    Decode(String),
}

/// A finitely supported vector over the basis `X`; zero coefficients are
/// never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupElement {
    coeffs: BTreeMap<Point, Rational64>,
}

impl GroupElement {
    pub fn zero() -> Self {
        Self::default()
    }

    /// The basis vector `x`.
    pub fn basis(x: Point) -> Self {
        Self::from_terms([(x, Rational64::one())])
    }

    /// Sums the terms, dropping zero coefficients.
    pub fn from_terms(terms: impl IntoIterator<Item = (Point, Rational64)>) -> Self {
        let mut a = Self::zero();
        for (x, r) in terms {
            a.add_term(x, r);
        }
        a
    }

    /// `Σ q_ℓ x_ℓ` for a tuple and integer weights.
    pub fn weighted(xs: &[Point], q: &[u64]) -> Self {
        Self::from_terms(
            xs.iter()
                .zip(q)
                .map(|(&x, &w)| (x, Rational64::from_integer(w as i64))),
        )
    }

    pub fn add_term(&mut self, x: Point, r: Rational64) {
        let v = self.coeffs.entry(x).or_insert_with(Rational64::zero);
        *v += r;
        if v.is_zero() {
            self.coeffs.remove(&x);
        }
    }

    pub fn coeffs(&self) -> &BTreeMap<Point, Rational64> {
        &self.coeffs
    }

    pub fn coeff(&self, x: Point) -> Rational64 {
        self.coeffs
            .get(&x)
            .copied()
            .unwrap_or_else(Rational64::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (&x, &r) in &other.coeffs {
            out.add_term(x, r);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-Rational64::one()))
    }

    pub fn scale(&self, r: Rational64) -> Self {
        Self::from_terms(self.coeffs.iter().map(|(&x, &c)| (x, c * r)))
    }

    /// `supp(a)`.
    pub fn supp(&self) -> BTreeSet<Point> {
        self.coeffs.keys().copied().collect()
    }

    /// `supp_p(a)`: points whose coefficient is not `p`-integral.
    pub fn supp_p(&self, p: u64) -> BTreeSet<Point> {
        self.coeffs
            .iter()
            .filter(|(_, r)| !rational_in_qp(p, r))
            .map(|(&x, _)| x)
            .collect()
    }

    /// Membership in `G₀`: every coefficient is an integer.
    pub fn in_g0(&self) -> bool {
        self.coeffs.values().all(|r| r.is_integer())
    }

    /// Primes dividing some coefficient denominator, increasing.
    pub fn denominator_primes(&self) -> Vec<u64> {
        let mut out = BTreeSet::new();
        for r in self.coeffs.values() {
            let mut d = *r.denom() as u64;
            let mut f = 2;
            while d > 1 {
                if f * f > d {
                    out.insert(d);
                    break;
                }
                if d.is_multiple_of(f) {
                    out.insert(f);
                    while d.is_multiple_of(f) {
                        d /= f;
                    }
                }
                f += 1;
            }
        }
        out.into_iter().collect()
    }

    /// Largest exponent of `p` in a coefficient denominator.
    pub fn p_exponent(&self, p: u64) -> u32 {
        self.coeffs
            .values()
            .map(|r| valuation(*r.denom() as u64, p))
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "0");
        }
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .map(|(x, r)| format!("{r}*x{x}"))
            .collect();
        write!(f, "{}", terms.join(" + "))
    }
}

impl Serialize for GroupElement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<(Point, i64, i64)> = self
            .coeffs
            .iter()
            .map(|(&x, r)| (x, *r.numer(), *r.denom()))
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroupElement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let rows = Vec::<(Point, i64, i64)>::deserialize(d)?;
        let mut out = GroupElement::zero();
        let mut seen = BTreeSet::new();
        for (x, n, den) in rows {
            if den <= 0 {
                return Err(D::Error::custom(format!(
                    "denominator of point {x} must be positive"
                )));
            }
            if n.gcd(&den) != 1 {
                return Err(D::Error::custom(format!(
                    "fraction {n}/{den} at point {x} is not reduced"
                )));
            }
            if !seen.insert(x) {
                return Err(D::Error::custom(format!("point {x} listed twice")));
            }
            out.add_term(x, Rational64::new(n, den));
        }
        Ok(out)
    }
}

fn valuation(mut n: u64, p: u64) -> u32 {
    let mut v = 0;
    while n > 0 && n.is_multiple_of(p) {
        n /= p;
        v += 1;
    }
    v
}

/// `q ∈ ℚ_p`: `p` does not divide the reduced denominator.
pub fn rational_in_qp(p: u64, q: &Rational64) -> bool {
    q.denom() % p as i64 != 0
}

/// `q ∈ ℚ⊙_p`: positive with `p`-valuation exactly zero.
pub fn rational_in_qp_odot(p: u64, q: &Rational64) -> bool {
    q.is_positive() && rational_in_qp(p, q) && q.numer() % p as i64 != 0
}

/// A witness for the `p`-local part of `G₁` membership:
/// `element ≡ Σ rᵢ (Σ_ℓ q_ℓ yⁱ_ℓ)` modulo `p`-integral vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivisibilityCertificate {
    pub element: GroupElement,
    pub prime: u64,
    pub exponent: u32,
    pub weights: Vec<u64>,
    pub decomposition: Vec<(Rational64, Tuple)>,
}

impl DivisibilityCertificate {
    /// Replays the decomposition with exact arithmetic.
    pub fn replay(&self) -> bool {
        let mut rest = self.element.clone();
        for (r, t) in &self.decomposition {
            if r.denom() % (self.prime as i64) != 0 && !r.is_integer() {
                return false;
            }
            rest = rest.sub(&GroupElement::weighted(t, &self.weights).scale(*r));
        }
        rest.supp_p(self.prime).is_empty()
    }
}

/// Outcome of a `G₁` membership query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct G1Membership {
    pub member: bool,
    /// One certificate per denominator prime when `member` holds.
    pub certificates: Vec<DivisibilityCertificate>,
    /// On failure, the first prime at which membership fails.
    pub failing_prime: Option<u64>,
}

/// A class of tuples together with its weights.
pub type WeightedClass = (Vec<Tuple>, Vec<u64>);

/// The class and weights a registry prime stands for at a stage.
pub fn class_of_prime(
    stage: &SystemStage,
    reg: &PrimeRegistry,
    p: u64,
) -> Result<Option<WeightedClass>, GroupError> {
    match reg.lookup_prime(p) {
        None => Ok(None),
        Some(ClassKey::G0Element { .. }) => Err(GroupError::NotAClassPrime(p)),
        Some(ClassKey::ClassTuple { rep, q, .. }) => {
            if rep.iter().any(|x| !stage.y_set().contains(x)) {
                return Err(GroupError::StageMismatch {
                    p,
                    rep: rep.clone(),
                });
            }
            Ok(Some((
                stage.tuple_classes(rep.len()).class_of(rep),
                q.clone(),
            )))
        }
    }
}

/// `p`-local membership: is `a` congruent, modulo `p`-integral vectors, to a
/// combination of `p^{-M}(Σ q_ℓ y_ℓ)` over the given tuples? Returns the
/// decomposition on success.
pub fn local_membership(
    p: u64,
    a: &GroupElement,
    tuples: &[Tuple],
    q: &[u64],
) -> Option<Vec<(Rational64, Tuple)>> {
    let gens: Vec<GroupElement> = tuples
        .iter()
        .map(|t| GroupElement::weighted(t, q))
        .collect();
    let coeffs = local_span_solve(p, a, &gens)?;
    Some(
        coeffs
            .into_iter()
            .zip(tuples)
            .filter(|(c, _)| !c.is_zero())
            .map(|(c, t)| (c, t.clone()))
            .collect(),
    )
}

/// Solves `a ≡ Σ c_i g_i` modulo `p`-integral vectors for integral generators
/// `g_i`, with every `c_i ∈ p^{-M}ℤ` where `p^M` is the largest `p`-power in a
/// denominator of `a`.
pub fn local_span_solve(
    p: u64,
    a: &GroupElement,
    gens: &[GroupElement],
) -> Option<Vec<Rational64>> {
    let m = a.p_exponent(p);
    if m == 0 {
        return Some(vec![Rational64::zero(); gens.len()]);
    }
    let modulus = (p as u128).pow(m);
    let mut coords: BTreeSet<Point> = a.supp();
    for g in gens {
        coords.extend(g.supp());
    }
    let coords: Vec<Point> = coords.into_iter().collect();
    let reduce = |r: Rational64| -> u128 {
        let den = *r.denom() as u128;
        let v = valuation(den as u64, p);
        let unit = den / (p as u128).pow(v);
        let scaled =
            r.numer().rem_euclid(modulus as i64) as u128 * (p as u128).pow(m - v) % modulus;
        scaled * inverse_mod(unit % modulus, modulus) % modulus
    };
    let cols: Vec<Vec<u128>> = gens
        .iter()
        .map(|g| {
            coords
                .iter()
                .map(|&x| (g.coeff(x).to_integer().rem_euclid(modulus as i64)) as u128)
                .collect()
        })
        .collect();
    let target: Vec<u128> = coords.iter().map(|&x| reduce(a.coeff(x))).collect();
    let sol = solve_mod_prime_power(p, m, &cols, &target)?;
    let pm = (p as i64).pow(m);
    Some(sol.iter().map(|&c| Rational64::new(c as i64, pm)).collect())
}

/// Decides `a ∈ G₁[𝔪]` at a stage, with certificates.
pub fn in_g1(
    stage: &SystemStage,
    reg: &PrimeRegistry,
    a: &GroupElement,
) -> Result<G1Membership, GroupError> {
    let mut certificates = Vec::new();
    for p in a.denominator_primes() {
        let fail = G1Membership {
            member: false,
            certificates: Vec::new(),
            failing_prime: Some(p),
        };
        let Some((class, q)) = class_of_prime(stage, reg, p)? else {
            return Ok(fail);
        };
        match local_membership(p, a, &class, &q) {
            None => return Ok(fail),
            Some(decomposition) => certificates.push(DivisibilityCertificate {
                element: a.clone(),
                prime: p,
                exponent: a.p_exponent(p),
                weights: q,
                decomposition,
            }),
        }
    }
    Ok(G1Membership {
        member: true,
        certificates,
        failing_prime: None,
    })
}

/// Membership in `G₍₁,𝒰₎`: `a ∈ G₁` with every support point in a block of `𝒰`.
pub fn in_g1u(
    stage: &SystemStage,
    reg: &PrimeRegistry,
    u_set: &BTreeSet<Point>,
    a: &GroupElement,
) -> Result<bool, GroupError> {
    if !in_g1(stage, reg, a)?.member {
        return Err(GroupError::NotInG1);
    }
    Ok(a.supp()
        .iter()
        .all(|&x| u_set.contains(&crate::system::block_of(x))))
}

fn to_big(r: &Rational64) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// Coordinates of elements over the union of their supports.
fn coordinates(elems: &[&GroupElement]) -> (Vec<Point>, Vec<Vec<BigRational>>) {
    let pts: BTreeSet<Point> = elems.iter().flat_map(|e| e.supp()).collect();
    let pts: Vec<Point> = pts.into_iter().collect();
    let vecs = elems
        .iter()
        .map(|e| pts.iter().map(|&x| to_big(&e.coeff(x))).collect())
        .collect();
    (pts, vecs)
}

/// The least `1 ≤ n ≤ n_bound` with `n·b` an integer combination of `gens`.
pub fn pure_closure_multiplier(
    gens: &[GroupElement],
    b: &GroupElement,
    n_bound: u64,
) -> Option<u64> {
    let mut all: Vec<&GroupElement> = gens.iter().collect();
    all.push(b);
    let (_, mut vecs) = coordinates(&all);
    let target = vecs.pop().expect("target row");
    let n = lattice_multiplier(&vecs, &target)?;
    (n <= BigInt::from(n_bound)).then(|| n.try_into().expect("bounded"))
}

/// `∃ 1 ≤ n ≤ n_bound`: `n·b ∈ ⟨gens⟩`.
pub fn pure_closure_member(gens: &[GroupElement], b: &GroupElement, n_bound: u64) -> bool {
    pure_closure_multiplier(gens, b, n_bound).is_some()
}

/// Whether `b` lies in the rational span of `gens`.
pub fn in_rational_span(gens: &[GroupElement], b: &GroupElement) -> bool {
    let mut all: Vec<&GroupElement> = gens.iter().collect();
    all.push(b);
    let (_, mut vecs) = coordinates(&all);
    let target = vecs.pop().expect("target row");
    solve_rational(&vecs, &target).is_some()
}

/// `f̂_ḡ`: coefficient-preserving transport along `f_ḡ`.
pub fn lift_fhat(
    stage: &SystemStage,
    chain: &Chain,
    a: &GroupElement,
) -> Result<GroupElement, GroupError> {
    let f = stage
        .f_of(chain)
        .ok_or_else(|| GroupError::UnknownChain(chain.to_string()))?;
    lift_along(f, a)
}

/// Transport along an explicit point map.
pub fn lift_along(
    f: &BTreeMap<Point, Point>,
    a: &GroupElement,
) -> Result<GroupElement, GroupError> {
    let mut out = GroupElement::zero();
    for (&x, &r) in a.coeffs() {
        let y = *f.get(&x).ok_or(GroupError::OutsideDomain(x))?;
        out.add_term(y, r);
    }
    Ok(out)
}

/// Exponent bound used to confirm unbounded divisibility.
pub const DIVISIBILITY_BOUND: u32 = 6;

/// Assigned class primes `p` with `a ∈ G₍₁,p₎`: `a` lies in the rational span
/// of the class combinations and `p^{-m}a ∈ G₁` for `m ≤ bound`.
pub fn prime_signature(
    stage: &SystemStage,
    reg: &PrimeRegistry,
    a: &GroupElement,
    bound: u32,
) -> Result<BTreeSet<u64>, GroupError> {
    if !in_g1(stage, reg, a)?.member {
        return Err(GroupError::NotInG1);
    }
    let mut out = BTreeSet::new();
    for (p, key) in reg.entries() {
        let ClassKey::ClassTuple { rep, .. } = key else {
            continue;
        };
        if rep.iter().any(|x| !stage.y_set().contains(x)) {
            continue;
        }
        let (class, q) = class_of_prime(stage, reg, p)?.expect("assigned");
        let gens: Vec<GroupElement> = class
            .iter()
            .map(|t| GroupElement::weighted(t, &q))
            .collect();
        if a.is_zero() || !in_rational_span(&gens, a) {
            continue;
        }
        let divisible = (1..=bound).all(|m| {
            let scaled = a.scale(Rational64::new(1, (p as i64).pow(m)));
            local_membership(p, &scaled, &class, &q).is_some()
        });
        if divisible {
            out.insert(p);
        }
    }
    Ok(out)
}
