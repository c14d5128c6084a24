//! Brute-force expectations over every arrangement of a composition.
//!
//! A symbol energy `|a^p_t|^2` is a sum of squared amplitudes, each living at
//! some (block, position). Products of energies expand into monomials; blocks
//! are independent, so each monomial's expectation factorizes into one
//! enumeration per block. Within a block only the multiset of exponents
//! matters (positions are exchangeable), which keys the cache.

use std::collections::{BTreeMap, HashMap};

use megn::stats::{AmplitudeComposition, Mapping};

/// A squared amplitude at `(block, position)`.
type Var = (usize, usize);
/// Exponents of squared amplitudes.
type Monomial = BTreeMap<Var, u32>;
type Poly = Vec<(u64, Monomial)>;

pub struct Oracle {
    /// integer `u^2` levels, one per position of the canonical block
    squares: Vec<u64>,
    n: usize,
    mapping: Mapping,
    ms: usize,
    /// all distinct arrangements of `squares`
    arrangements: Vec<Vec<u64>>,
    cache: HashMap<Vec<u32>, f64>,
}

fn arrangements(items: &[u64]) -> Vec<Vec<u64>> {
    let mut v = items.to_vec();
    v.sort_unstable();
    let mut out = vec![v.clone()];
    // lexicographic next-permutation visits each distinct arrangement once
    loop {
        let Some(i) = (0..v.len().saturating_sub(1)).rev().find(|&i| v[i] < v[i + 1]) else { break };
        let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).unwrap();
        v.swap(i, j);
        v[i + 1..].reverse();
        out.push(v.clone());
    }
    out
}

impl Oracle {
    /// `comp` must have integer amplitude levels.
    pub fn new(comp: &AmplitudeComposition, mapping: Mapping) -> Self {
        let squares: Vec<u64> = comp.multiset().iter().map(|&u| (u * u).round() as u64).collect();
        let n = squares.len();
        Oracle {
            arrangements: arrangements(&squares),
            squares,
            n,
            mapping,
            ms: n / mapping.h(),
            cache: HashMap::new(),
        }
    }

    pub fn period(&self) -> usize {
        self.ms
    }

    /// `E[prod_i u_i^(2 k_i)]` over distinct positions of one block.
    fn block_expectation(&mut self, powers: &[u32]) -> f64 {
        let mut key = powers.to_vec();
        key.sort_unstable();
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        assert!(key.len() <= self.n);
        let mut sum: u128 = 0;
        for a in &self.arrangements {
            let mut p: u128 = 1;
            for (i, &k) in key.iter().enumerate() {
                p *= (a[i] as u128).pow(k);
            }
            sum += p;
        }
        let v = sum as f64 / self.arrangements.len() as f64;
        self.cache.insert(key, v);
        v
    }

    fn var(&self, t: usize, pol: usize, quad: usize) -> Var {
        let (ms, k) = (self.ms, t % self.ms);
        match self.mapping {
            Mapping::OneD => (4 * (t / ms) + 2 * pol + quad, k),
            Mapping::TwoD => (2 * (t / ms) + pol, 2 * k + quad),
            Mapping::FourD => (t / ms, 4 * k + 2 * pol + quad),
        }
    }

    fn energy(&self, t: usize, pol: usize) -> Poly {
        (0..2).map(|q| (1, Monomial::from([(self.var(t, pol, q), 1)]))).collect()
    }

    fn mul(a: &Poly, b: &Poly) -> Poly {
        let mut out: BTreeMap<Monomial, u64> = BTreeMap::new();
        for (ca, ma) in a {
            for (cb, mb) in b {
                let mut m = ma.clone();
                for (v, k) in mb {
                    *m.entry(*v).or_default() += k;
                }
                *out.entry(m).or_default() += ca * cb;
            }
        }
        out.into_iter().map(|(m, c)| (c, m)).collect()
    }

    fn expect(&mut self, p: &Poly) -> f64 {
        let mut total = 0.0;
        for (c, m) in p {
            let mut blocks: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
            for (&(b, _), &k) in m {
                blocks.entry(b).or_default().push(k);
            }
            let mut v = *c as f64;
            for powers in blocks.values() {
                v *= self.block_expectation(powers);
            }
            total += v;
        }
        total
    }

    /// `E[prod |a^{pol_i}_{t_i}|^(2 k_i)]` for factors `(t, pol, k)`.
    pub fn moment(&mut self, factors: &[(usize, usize, u32)]) -> f64 {
        let mut p: Poly = vec![(1, Monomial::new())];
        for &(t, pol, k) in factors {
            for _ in 0..k {
                p = Self::mul(&p, &self.energy(t, pol));
            }
        }
        self.expect(&p)
    }

    /// Average of `moment` over the `Ms` slots of one period, each factor's
    /// slot offset by `w`.
    pub fn time_average(&mut self, factors: &[(usize, usize, u32)]) -> f64 {
        let ms = self.ms;
        let mut s = 0.0;
        for w in 0..ms {
            let shifted: Vec<_> = factors.iter().map(|&(t, p, k)| (t + w, p, k)).collect();
            s += self.moment(&shifted);
        }
        s / ms as f64
    }

    /// Raw `E[u_1^2 u_2^2]`, `E[u_1^2 u_2^4]`, `E[u_1^2 u_2^2 u_3^2]`.
    pub fn rho(&mut self) -> (f64, f64, f64) {
        let r1 = self.block_expectation(&[1, 1]);
        let r2 = self.block_expectation(&[1, 2]);
        let r3 = if self.n >= 3 { self.block_expectation(&[1, 1, 1]) } else { f64::NAN };
        (r1, r2, r3)
    }
}
