//! Monomial dictionary: every product of coordinates with total degree up to
//! `max_degree`, in graded order with the constant term first.
//!
//! Inside a grade, terms follow descending lexicographic order of their
//! exponent vectors, i.e. `z1², z1 z2, …, z2², …`. Each term is stored as its
//! non-decreasing list of coordinate indices ("factors"), which enumerates in
//! exactly that order as combinations with repetition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const DEFAULT_MAX_TERMS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub input_dim: usize,
    pub max_degree: usize,
    /// Only pure powers `z_i^k` (no cross terms).
    #[serde(default)]
    pub diagonal_only: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    spec: DictionarySpec,
    factors: Vec<Vec<u32>>,
}

/// `C(D + d, d)`, the number of monomials of total degree `≤ d` in `D`
/// variables. `None` on overflow.
pub fn dictionary_size(input_dim: usize, max_degree: usize) -> Option<u128> {
    let (n, k) = ((input_dim + max_degree) as u128, max_degree as u128);
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

impl Dictionary {
    pub fn new(input_dim: usize, max_degree: usize) -> Result<Self> {
        Self::build(
            DictionarySpec {
                input_dim,
                max_degree,
                diagonal_only: false,
            },
            DEFAULT_MAX_TERMS,
        )
    }

    pub fn build(spec: DictionarySpec, max_terms: usize) -> Result<Self> {
        if spec.input_dim == 0 {
            return Err(Error::InvalidArgument("dictionary input_dim must be >= 1".into()));
        }
        let count = if spec.diagonal_only {
            Some(1 + spec.input_dim as u128 * spec.max_degree as u128)
        } else {
            dictionary_size(spec.input_dim, spec.max_degree)
        };
        match count {
            Some(c) if c <= max_terms as u128 => {}
            Some(c) => return Err(Error::DictionaryTooLarge { terms: c, cap: max_terms }),
            None => return Err(Error::DictionaryTooLarge { terms: u128::MAX, cap: max_terms }),
        }

        let d = spec.input_dim as u32;
        let mut factors = vec![Vec::new()];
        let mut grade: Vec<Vec<u32>> = vec![Vec::new()];
        for _ in 0..spec.max_degree {
            let mut next = Vec::new();
            for term in &grade {
                let start = term.last().copied().unwrap_or(0);
                for i in start..d {
                    if spec.diagonal_only && term.last().is_some_and(|&l| l != i) {
                        continue;
                    }
                    let mut t = term.clone();
                    t.push(i);
                    next.push(t);
                }
            }
            factors.extend(next.iter().cloned());
            grade = next;
        }
        Ok(Dictionary { spec, factors })
    }

    pub fn spec(&self) -> DictionarySpec {
        self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn max_degree(&self) -> usize {
        self.spec.max_degree
    }

    /// Number of dictionary functions `M`.
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Coordinate indices multiplied together in term `m`.
    pub fn factors(&self, m: usize) -> &[u32] {
        &self.factors[m]
    }

    pub fn exponents(&self, m: usize) -> Vec<u32> {
        let mut e = vec![0; self.spec.input_dim];
        for &i in &self.factors[m] {
            e[i as usize] += 1;
        }
        e
    }

    /// Human-readable term name, e.g. `z1^2*z3`.
    pub fn term_name(&self, m: usize) -> String {
        let e = self.exponents(m);
        let parts: Vec<String> = e
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(i, &p)| if p == 1 { format!("z{}", i + 1) } else { format!("z{}^{}", i + 1, p) })
            .collect();
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join("*")
        }
    }

    pub fn lift_into(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        if z.len() != self.spec.input_dim {
            return Err(Error::dims("lift", self.spec.input_dim, z.len()));
        }
        if out.len() != self.len() {
            return Err(Error::dims("lift", self.len(), out.len()));
        }
        for (o, f) in out.iter_mut().zip(&self.factors) {
            *o = f.iter().fold(1.0, |acc, &i| acc * z[i as usize]);
        }
        Ok(())
    }

    /// Evaluates every dictionary function at `z`.
    pub fn lift(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.lift_into(z, &mut out)?;
        Ok(out)
    }

    /// Lifts each row of `z` (`N × D`) into an `N × M` matrix.
    pub fn lift_rows(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        if z.cols() != self.spec.input_dim {
            return Err(Error::dims("lift_rows", self.spec.input_dim, z.cols()));
        }
        let mut out = DenseMatrix::zeros(z.rows(), self.len());
        for i in 0..z.rows() {
            self.lift_into(z.row(i), out.row_mut(i))?;
        }
        Ok(out)
    }
}

impl Serialize for Dictionary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.spec.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dictionary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = DictionarySpec::deserialize(d)?;
        Dictionary::build(spec, DEFAULT_MAX_TERMS).map_err(serde::de::Error::custom)
    }
}
