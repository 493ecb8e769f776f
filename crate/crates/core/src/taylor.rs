//! Taylor-polynomial loss parameterizations.
//!
//! A [`TaylorLossSpec`] stores the expansion center and one coefficient per
//! retained multi-index. Coefficients play the role of the partial
//! derivatives `∂^α f(a)`, so evaluation is
//!
//! ```text
//! f̂(x) = Σ_α  coeff_α / α! · (x − a)^α
//! ```
//!
//! Multi-indices are stored in graded lexicographic order: by total degree,
//! then lexicographically descending on the exponent vector, so `(1, 0)`
//! precedes `(0, 1)`. This order is part of the serialized format.

use serde::{Deserialize, Serialize};

use crate::error::TaylorError;

/// Highest expansion order accepted by [`TaylorLossSpec`].
pub const MAX_ORDER: usize = 5;

/// Exponent vector `α = (α_1, …, α_n)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    /// `|α|`
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `α!`, computed exactly.
    pub fn factorial(&self) -> u64 {
        self.0.iter().map(|&e| factorial(e)).product()
    }

    /// Every multi-index in `n` variables with `|α| ≤ k`, in canonical order.
    pub fn enumerate(n: usize, k: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for degree in 0..=k as u32 {
            let mut current = vec![0u32; n];
            compositions(degree, 0, &mut current, &mut out);
        }
        out
    }
}

// Emits all compositions of `remaining` into the slots `pos..`, largest
// leading exponent first.
fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    let n = current.len();
    if n == 0 {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    if pos == n - 1 {
        current[pos] = remaining;
        out.push(MultiIndex(current.clone()));
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        compositions(remaining - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

fn factorial(e: u32) -> u64 {
    (1..=e as u64).product()
}

/// Number of parameters of an order-`k` expansion in `n` variables:
/// `n + C(n + k, k)` (center plus one coefficient per multi-index).
pub fn param_count(n: usize, k: usize) -> Result<usize, TaylorError> {
    if n == 0 {
        return Err(TaylorError::InvalidArity(n));
    }
    let coefficients = binomial(n + k, k).ok_or(TaylorError::Range { n, k })?;
    usize::try_from(coefficients)
        .ok()
        .and_then(|c| c.checked_add(n))
        .ok_or(TaylorError::Range { n, k })
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        // acc * (n - k + i) is always divisible by i at this point.
        acc = acc.checked_mul(n as u128 - k as u128 + i)? / i;
    }
    Some(acc)
}

#[derive(Debug, Clone, PartialEq)]
struct Term {
    index: MultiIndex,
    inv_factorial: f64,
}

/// A parameterized Taylor-polynomial loss in `arity` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaylorRecord", into = "TaylorRecord")]
pub struct TaylorLossSpec {
    arity: usize,
    order: usize,
    center: Vec<f64>,
    coefficients: Vec<f64>,
    trim_variable: Option<usize>,
    terms: Vec<Term>,
}

/// On-disk layout of a [`TaylorLossSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaylorRecord {
    arity: usize,
    order: usize,
    center: Vec<f64>,
    coefficients: Vec<f64>,
    trimmed: bool,
    trim_variable: Option<usize>,
}

impl TryFrom<TaylorRecord> for TaylorLossSpec {
    type Error = TaylorError;

    fn try_from(r: TaylorRecord) -> Result<Self, Self::Error> {
        match (r.trimmed, r.trim_variable) {
            (false, None) => TaylorLossSpec::new(r.arity, r.order, r.center, r.coefficients),
            (true, Some(v)) => {
                TaylorLossSpec::new_trimmed(r.arity, r.order, v, r.center, r.coefficients)
            }
            _ => Err(TaylorError::InconsistentTrim),
        }
    }
}

impl From<TaylorLossSpec> for TaylorRecord {
    fn from(s: TaylorLossSpec) -> Self {
        TaylorRecord {
            arity: s.arity,
            order: s.order,
            center: s.center,
            coefficients: s.coefficients,
            trimmed: s.trim_variable.is_some(),
            trim_variable: s.trim_variable,
        }
    }
}

fn retained_indices(n: usize, k: usize, trim_variable: Option<usize>) -> Vec<MultiIndex> {
    let all = MultiIndex::enumerate(n, k);
    match trim_variable {
        None => all,
        Some(v) => all.into_iter().filter(|a| a.0[v] != 0).collect(),
    }
}

fn make_terms(indices: Vec<MultiIndex>) -> Vec<Term> {
    indices
        .into_iter()
        .map(|index| {
            let inv_factorial = 1.0 / index.factorial() as f64;
            Term { index, inv_factorial }
        })
        .collect()
}

impl TaylorLossSpec {
    /// Untrimmed spec; `coefficients` follow the canonical multi-index order.
    pub fn new(
        arity: usize,
        order: usize,
        center: Vec<f64>,
        coefficients: Vec<f64>,
    ) -> Result<Self, TaylorError> {
        Self::build(arity, order, None, center, coefficients)
    }

    /// Trimmed spec: only multi-indices with a nonzero exponent in
    /// `trim_variable` carry coefficients.
    pub fn new_trimmed(
        arity: usize,
        order: usize,
        trim_variable: usize,
        center: Vec<f64>,
        coefficients: Vec<f64>,
    ) -> Result<Self, TaylorError> {
        Self::build(arity, order, Some(trim_variable), center, coefficients)
    }

    /// Spec with all coefficients zero.
    pub fn zeros(arity: usize, order: usize, center: Vec<f64>) -> Result<Self, TaylorError> {
        let count = param_count(arity, order)? - arity;
        Self::new(arity, order, center, vec![0.0; count])
    }

    fn build(
        arity: usize,
        order: usize,
        trim_variable: Option<usize>,
        center: Vec<f64>,
        coefficients: Vec<f64>,
    ) -> Result<Self, TaylorError> {
        if arity == 0 {
            return Err(TaylorError::InvalidArity(arity));
        }
        if order > MAX_ORDER {
            return Err(TaylorError::OrderTooHigh(order));
        }
        if let Some(v) = trim_variable {
            if v >= arity {
                return Err(TaylorError::VariableOutOfRange { index: v, arity });
            }
        }
        if center.len() != arity {
            return Err(TaylorError::ArityMismatch {
                expected: arity,
                got: center.len(),
            });
        }
        let indices = retained_indices(arity, order, trim_variable);
        if coefficients.len() != indices.len() {
            return Err(TaylorError::CoefficientCount {
                expected: indices.len(),
                got: coefficients.len(),
            });
        }
        if center.iter().chain(&coefficients).any(|v| !v.is_finite()) {
            return Err(TaylorError::NonFinite);
        }
        Ok(TaylorLossSpec {
            arity,
            order,
            center,
            coefficients,
            trim_variable,
            terms: make_terms(indices),
        })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn is_trimmed(&self) -> bool {
        self.trim_variable.is_some()
    }

    pub fn trim_variable(&self) -> Option<usize> {
        self.trim_variable
    }

    /// Retained multi-indices, aligned with [`coefficients`](Self::coefficients).
    pub fn indices(&self) -> impl Iterator<Item = &MultiIndex> {
        self.terms.iter().map(|t| &t.index)
    }

    /// Center entries plus coefficients.
    pub fn param_count(&self) -> usize {
        self.arity + self.coefficients.len()
    }

    /// Coefficient of a particular multi-index, if retained.
    pub fn coefficient(&self, index: &[u32]) -> Option<f64> {
        self.terms
            .iter()
            .position(|t| t.index.0 == index)
            .map(|i| self.coefficients[i])
    }

    fn check_point(&self, point: &[f64]) -> Result<(), TaylorError> {
        if point.len() != self.arity {
            return Err(TaylorError::ArityMismatch {
                expected: self.arity,
                got: point.len(),
            });
        }
        Ok(())
    }

    // powers[i][e] = (x_i − a_i)^e for e in 0..=order
    fn powers(&self, point: &[f64]) -> Vec<Vec<f64>> {
        point
            .iter()
            .zip(&self.center)
            .map(|(x, a)| {
                let d = x - a;
                let mut p = Vec::with_capacity(self.order + 1);
                let mut acc = 1.0;
                for _ in 0..=self.order {
                    p.push(acc);
                    acc *= d;
                }
                p
            })
            .collect()
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, TaylorError> {
        self.check_point(point)?;
        let powers = self.powers(point);
        let value = self
            .terms
            .iter()
            .zip(&self.coefficients)
            .map(|(term, c)| {
                let mono: f64 = term
                    .index
                    .0
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| powers[i][e as usize])
                    .product();
                c * term.inv_factorial * mono
            })
            .sum();
        Ok(value)
    }

    /// Exact partial derivatives of [`evaluate`](Self::evaluate) with
    /// respect to each input variable.
    pub fn gradient(&self, point: &[f64]) -> Result<Vec<f64>, TaylorError> {
        self.check_point(point)?;
        let powers = self.powers(point);
        let mut grad = vec![0.0; self.arity];
        for (term, c) in self.terms.iter().zip(&self.coefficients) {
            let scale = c * term.inv_factorial;
            for (j, g) in grad.iter_mut().enumerate() {
                let ej = term.index.0[j];
                if ej == 0 {
                    continue;
                }
                let mut mono = ej as f64 * powers[j][ej as usize - 1];
                for (i, &e) in term.index.0.iter().enumerate() {
                    if i != j {
                        mono *= powers[i][e as usize];
                    }
                }
                *g += scale * mono;
            }
        }
        Ok(grad)
    }

    /// Drops every term whose exponent in `variable` is zero; those terms
    /// have zero derivative with respect to `variable`.
    pub fn trim(&self, variable: usize) -> Result<TaylorLossSpec, TaylorError> {
        if variable >= self.arity {
            return Err(TaylorError::VariableOutOfRange {
                index: variable,
                arity: self.arity,
            });
        }
        match self.trim_variable {
            Some(v) if v == variable => return Ok(self.clone()),
            Some(_) => return Err(TaylorError::InconsistentTrim),
            None => {}
        }
        let coefficients = self
            .terms
            .iter()
            .zip(&self.coefficients)
            .filter(|(t, _)| t.index.0[variable] != 0)
            .map(|(_, &c)| c)
            .collect();
        Self::new_trimmed(
            self.arity,
            self.order,
            variable,
            self.center.clone(),
            coefficients,
        )
    }
}

/// Untrimmed order-`k` bivariate expansion of `f(x, y) = x·ln(y)` around
/// `center = (x0, y0)`; variable 0 is the target, variable 1 the prediction.
pub fn crossentropy_taylor(k: usize, center: [f64; 2]) -> Result<TaylorLossSpec, TaylorError> {
    let [x0, y0] = center;
    if !(y0 > 0.0) {
        return Err(TaylorError::Domain(format!(
            "cross-entropy expansion needs y > 0, got {y0}"
        )));
    }
    let coefficients = MultiIndex::enumerate(2, k)
        .iter()
        .map(|alpha| {
            let (a, b) = (alpha.0[0], alpha.0[1]);
            // ∂_y^b ln(y) = (−1)^(b−1) (b−1)! / y^b for b ≥ 1
            let dy_ln = |b: u32| -> f64 {
                if b == 0 {
                    y0.ln()
                } else {
                    let sign = if b % 2 == 1 { 1.0 } else { -1.0 };
                    sign * factorial(b - 1) as f64 / y0.powi(b as i32)
                }
            };
            match a {
                0 => x0 * dy_ln(b),
                1 => dy_ln(b),
                _ => 0.0,
            }
        })
        .collect();
    TaylorLossSpec::new(2, k, center.to_vec(), coefficients)
}

/// Third-order univariate loss with no constant term:
/// `c1·(u − center) + c2·(u − center)² + c3·(u − center)³`.
///
/// The coefficients multiply plain powers, so `c_j` equals the Taylor
/// derivative parameter divided by `j!`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnivariateCubicLoss {
    pub center: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl UnivariateCubicLoss {
    pub const PARAMS: usize = 4;

    pub fn new(center: f64, c1: f64, c2: f64, c3: f64) -> Self {
        UnivariateCubicLoss { center, c1, c2, c3 }
    }

    pub fn from_slice(p: &[f64]) -> Self {
        UnivariateCubicLoss::new(p[0], p[1], p[2], p[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.center, self.c1, self.c2, self.c3]
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        let d = u - self.center;
        d * (self.c1 + d * (self.c2 + d * self.c3))
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        let d = u - self.center;
        self.c1 + d * (2.0 * self.c2 + 3.0 * self.c3 * d)
    }

    /// The equivalent trimmed `n = 1, k = 3` spec.
    pub fn to_spec(self) -> TaylorLossSpec {
        TaylorLossSpec::new_trimmed(
            1,
            3,
            0,
            vec![self.center],
            vec![self.c1, 2.0 * self.c2, 6.0 * self.c3],
        )
        .expect("cubic layout is always valid")
    }

    /// Inverse of [`to_spec`](Self::to_spec).
    pub fn from_spec(spec: &TaylorLossSpec) -> Result<Self, TaylorError> {
        if spec.arity() != 1 || spec.order() != 3 || spec.trim_variable() != Some(0) {
            return Err(TaylorError::InconsistentTrim);
        }
        let c = spec.coefficients();
        Ok(UnivariateCubicLoss::new(
            spec.center()[0],
            c[0],
            c[1] / 2.0,
            c[2] / 6.0,
        ))
    }
}
