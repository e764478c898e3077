//! Exact linear algebra used by the membership deciders: rational row
//! reduction, linear congruences over `Z/p^m`, subspaces over `F_p`, and
//! integer lattice membership.

#![allow(clippy::needless_range_loop)]

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Solves `Σ c_i gens_i = target` over the rationals; all vectors have the
/// same length. Returns one solution if any exists.
pub fn solve_rational(
    gens: &[Vec<BigRational>],
    target: &[BigRational],
) -> Option<Vec<BigRational>> {
    let rows = target.len();
    let cols = gens.len();
    // augmented matrix: one row per coordinate
    let mut m: Vec<Vec<BigRational>> = (0..rows)
        .map(|r| {
            let mut row: Vec<BigRational> = gens.iter().map(|g| g[r].clone()).collect();
            row.push(target[r].clone());
            row
        })
        .collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for x in m[r].iter_mut() {
            *x = &*x * &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in c..=cols {
                    let d = &f * &m[r][j];
                    m[i][j] = &m[i][j] - d;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows {
            break;
        }
    }
    if m[r..].iter().any(|row| !row[cols].is_zero()) {
        return None;
    }
    let mut sol = vec![BigRational::zero(); cols];
    for (i, &c) in pivots.iter().enumerate() {
        sol[c] = m[i][cols].clone();
    }
    Some(sol)
}

/// Rank of a family of rational vectors.
pub fn rank_rational(vectors: &[Vec<BigRational>]) -> usize {
    let mut rows: Vec<Vec<BigRational>> = vectors.to_vec();
    let width = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..width {
        let Some(p) = (rank..rows.len()).find(|&i| !rows[i][c].is_zero()) else {
            continue;
        };
        rows.swap(rank, p);
        for i in rank + 1..rows.len() {
            if !rows[i][c].is_zero() {
                let f = &rows[i][c] / &rows[rank][c];
                for j in c..width {
                    let d = &f * &rows[rank][j];
                    rows[i][j] = &rows[i][j] - d;
                }
            }
        }
        rank += 1;
    }
    rank
}

fn valuation(mut x: u128, p: u128, cap: u32) -> u32 {
    let mut v = 0;
    while v < cap && x.is_multiple_of(p) {
        x /= p;
        v += 1;
    }
    v
}

/// Inverse of a unit modulo `modulus`.
pub fn inverse_mod(a: u128, modulus: u128) -> u128 {
    let (g, x, _) = extended_gcd(a as i128, modulus as i128);
    assert_eq!(g, 1, "{a} is not a unit modulo {modulus}");
    x.rem_euclid(modulus as i128) as u128
}

fn extended_gcd(a: i128, b: i128) -> (i128, i128, i128) {
    if b == 0 {
        (a, 1, 0)
    } else {
        let (g, x, y) = extended_gcd(b, a.rem_euclid(b));
        (g, y, x - (a.div_euclid(b)) * y)
    }
}

/// Solves `Σ c_j gens_j ≡ target (mod p^m)` by column reduction with
/// valuation pivoting over the chain ring `Z/p^m`. Entries must already be
/// reduced into `0..p^m`. Returns coefficients in `0..p^m`.
pub fn solve_mod_prime_power(
    p: u64,
    m: u32,
    gens: &[Vec<u128>],
    target: &[u128],
) -> Option<Vec<u128>> {
    let p = p as u128;
    let q = p.pow(m);
    let rows = target.len();
    let n = gens.len();
    let mut work: Vec<Vec<u128>> = gens
        .iter()
        .map(|g| g.iter().map(|x| x % q).collect())
        .collect();
    let mut coef: Vec<Vec<u128>> = (0..n)
        .map(|j| {
            let mut c = vec![0; n];
            c[j] = 1;
            c
        })
        .collect();
    let mut t: Vec<u128> = target.iter().map(|x| x % q).collect();
    let mut sol = vec![0u128; n];
    let mut active: Vec<bool> = vec![true; rows];
    let sub = |a: u128, b: u128| (a + q - b % q) % q;
    let mul = |a: u128, b: u128| (a % q) * (b % q) % q;
    loop {
        // pivot with least valuation among active rows
        let mut best: Option<(u32, usize, usize)> = None;
        for r in (0..rows).filter(|&r| active[r]) {
            for j in 0..n {
                let e = work[j][r];
                if e != 0 {
                    let v = valuation(e, p, m);
                    if best.is_none_or(|(bv, _, _)| v < bv) {
                        best = Some((v, r, j));
                    }
                }
            }
        }
        let Some((v, r, j)) = best else { break };
        let pv = p.pow(v);
        let unit = work[j][r] / pv;
        let uinv = inverse_mod(unit % q, q);
        for k in 0..n {
            if k == j || work[k][r] == 0 {
                continue;
            }
            let f = mul(work[k][r] / pv, uinv);
            for i in 0..rows {
                work[k][i] = sub(work[k][i], mul(f, work[j][i]));
            }
            for i in 0..n {
                coef[k][i] = sub(coef[k][i], mul(f, coef[j][i]));
            }
        }
        if !t[r].is_multiple_of(pv) {
            return None;
        }
        let c = mul(t[r] / pv, uinv);
        for i in 0..rows {
            t[i] = sub(t[i], mul(c, work[j][i]));
        }
        for i in 0..n {
            sol[i] = (sol[i] + mul(c, coef[j][i])) % q;
        }
        let scale = p.pow(m - v);
        for i in 0..rows {
            work[j][i] = mul(work[j][i], scale);
        }
        for i in 0..n {
            coef[j][i] = mul(coef[j][i], scale);
        }
        active[r] = false;
    }
    t.iter().all(|&x| x == 0).then_some(sol)
}

/// A subspace of `F_p^n` kept in reduced echelon form.
#[derive(Debug, Clone)]
pub struct FpSpace {
    p: u64,
    width: usize,
    rows: Vec<Vec<u64>>,
    pivots: Vec<usize>,
}

impl FpSpace {
    pub fn new(p: u64, width: usize) -> Self {
        Self {
            p,
            width,
            rows: Vec::new(),
            pivots: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn basis(&self) -> &[Vec<u64>] {
        &self.rows
    }

    fn reduce(&self, v: &mut [u64]) {
        for (row, &c) in self.rows.iter().zip(&self.pivots) {
            if v[c] != 0 {
                let f = v[c];
                for (x, y) in v.iter_mut().zip(row) {
                    *x = (*x + self.p * self.p - f * y % self.p) % self.p;
                }
            }
        }
    }

    pub fn contains(&self, v: &[u64]) -> bool {
        let mut w = v.to_vec();
        self.reduce(&mut w);
        w.iter().all(|&x| x == 0)
    }

    /// Adds a vector; returns whether the dimension grew.
    pub fn insert(&mut self, v: &[u64]) -> bool {
        assert_eq!(v.len(), self.width);
        let mut w: Vec<u64> = v.iter().map(|x| x % self.p).collect();
        self.reduce(&mut w);
        let Some(c) = w.iter().position(|&x| x != 0) else {
            return false;
        };
        let inv = inverse_mod(w[c] as u128, self.p as u128) as u64;
        for x in w.iter_mut() {
            *x = *x * inv % self.p;
        }
        for (row, _) in self.rows.iter_mut().zip(&self.pivots) {
            if row[c] != 0 {
                let f = row[c];
                for (x, y) in row.iter_mut().zip(&w) {
                    *x = (*x + self.p * self.p - f * y % self.p) % self.p;
                }
            }
        }
        self.rows.push(w);
        self.pivots.push(c);
        true
    }

    /// A basis of the vectors of this space vanishing outside `allowed`.
    pub fn restricted_to(&self, allowed: &[bool]) -> Vec<Vec<u64>> {
        let mut rows = self.rows.clone();
        let mut used = vec![false; rows.len()];
        for c in (0..self.width).filter(|&c| !allowed[c]) {
            let Some(piv) = (0..rows.len()).find(|&i| !used[i] && rows[i][c] != 0) else {
                continue;
            };
            used[piv] = true;
            let inv = inverse_mod(rows[piv][c] as u128, self.p as u128) as u64;
            let prow: Vec<u64> = rows[piv].iter().map(|x| x * inv % self.p).collect();
            for (i, row) in rows.iter_mut().enumerate() {
                if i != piv && row[c] != 0 {
                    let f = row[c];
                    for (x, y) in row.iter_mut().zip(&prow) {
                        *x = (*x + self.p * self.p - f * y % self.p) % self.p;
                    }
                }
            }
        }
        rows.into_iter()
            .zip(used)
            .filter(|(_, u)| !u)
            .map(|(r, _)| r)
            .collect()
    }
}

/// Integer row echelon form of the lattice spanned by `gens` (a basis).
pub fn integer_echelon(gens: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
    let width = gens.first().map_or(0, Vec::len);
    let mut rows: Vec<Vec<BigInt>> = gens
        .iter()
        .filter(|g| g.iter().any(|x| !x.is_zero()))
        .cloned()
        .collect();
    let mut out = Vec::new();
    for c in 0..width {
        loop {
            let nz: Vec<usize> = (0..rows.len()).filter(|&i| !rows[i][c].is_zero()).collect();
            if nz.len() <= 1 {
                break;
            }
            // smallest absolute entry reduces the others
            let piv = *nz
                .iter()
                .min_by_key(|&&i| rows[i][c].abs())
                .expect("nonempty");
            let prow = rows[piv].clone();
            for &i in &nz {
                if i != piv {
                    let f = rows[i][c].div_floor(&prow[c]);
                    for (x, y) in rows[i].iter_mut().zip(&prow) {
                        *x -= &f * y;
                    }
                }
            }
        }
        if let Some(i) = (0..rows.len()).find(|&i| !rows[i][c].is_zero()) {
            out.push(rows.remove(i));
        }
        rows.retain(|r| r.iter().any(|x| !x.is_zero()));
    }
    out
}

/// Least `n ≥ 1` with `n·target` in the integer lattice spanned by `gens`,
/// or `None` when `target` is outside their rational span.
pub fn lattice_multiplier(gens: &[Vec<BigRational>], target: &[BigRational]) -> Option<BigInt> {
    let mut denom = BigInt::one();
    for x in gens.iter().flatten().chain(target) {
        denom = denom.lcm(x.denom());
    }
    let scale = |v: &[BigRational]| -> Vec<BigInt> {
        v.iter()
            .map(|x| (x * BigRational::from_integer(denom.clone())).to_integer())
            .collect()
    };
    let basis = integer_echelon(&gens.iter().map(|g| scale(g)).collect::<Vec<_>>());
    let mut residual: Vec<BigRational> = scale(target)
        .into_iter()
        .map(BigRational::from_integer)
        .collect();
    let mut n = BigInt::one();
    for row in &basis {
        let c = row.iter().position(|x| !x.is_zero()).expect("nonzero row");
        let coeff = &residual[c] / BigRational::from_integer(row[c].clone());
        n = n.lcm(coeff.denom());
        for (r, x) in residual.iter_mut().zip(row) {
            *r = &*r - &coeff * BigRational::from_integer(x.clone());
        }
    }
    residual.iter().all(Zero::is_zero).then_some(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn rational_solve_and_rank() {
        let gens = vec![vec![q(1, 1), q(0, 1)], vec![q(1, 1), q(1, 1)]];
        let sol = solve_rational(&gens, &[q(3, 1), q(1, 2)]).unwrap();
        assert_eq!(sol, vec![q(5, 2), q(1, 2)]);
        assert_eq!(rank_rational(&gens), 2);
        assert!(solve_rational(&[vec![q(1, 1), q(1, 1)]], &[q(1, 1), q(0, 1)]).is_none());
    }

    #[test]
    fn congruence_solver() {
        // 2·c ≡ 6 (mod 8) has c = 3
        let sol = solve_mod_prime_power(2, 3, &[vec![2]], &[6]).unwrap();
        assert_eq!(sol[0] * 2 % 8, 6);
        // 2·c ≡ 1 (mod 8) has no solution
        assert!(solve_mod_prime_power(2, 3, &[vec![2]], &[1]).is_none());
        // x + y, x − y generate (1, 0)? over Z/9 yes since 2 is a unit
        let sol = solve_mod_prime_power(3, 2, &[vec![1, 1], vec![1, 8]], &[1, 0]).unwrap();
        assert_eq!((sol[0] + sol[1]) % 9, 1);
        assert_eq!((sol[0] + 8 * sol[1]) % 9, 0);
    }

    #[test]
    fn fp_space_restriction() {
        let mut s = FpSpace::new(3, 3);
        s.insert(&[1, 1, 0]);
        s.insert(&[0, 1, 1]);
        // vectors vanishing on coordinate 1: (1, 0, 2)
        let r = s.restricted_to(&[true, false, true]);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0][1], 0);
        assert!(s.contains(&r[0]));
    }

    #[test]
    fn lattice_multipliers() {
        let g = vec![vec![q(2, 1), q(0, 1)]];
        assert_eq!(lattice_multiplier(&g, &[q(1, 1), q(0, 1)]), Some(2.into()));
        assert_eq!(lattice_multiplier(&g, &[q(0, 1), q(1, 1)]), None);
        let g = vec![vec![q(2, 1), q(2, 1)], vec![q(0, 1), q(3, 1)]];
        assert_eq!(lattice_multiplier(&g, &[q(1, 1), q(1, 1)]), Some(2.into()));
    }
}
