//! Difference-spline (D-spline) temporal interpolation on a uniform grid.
//!
//! For a delay `tau` measured backwards from the current time, a history
//! `y_r = y(t_k - r dt)` is interpolated as `y(t_k - tau) = sum_r omega_r(tau) y_r`.
//! On each interval `[tau_k, tau_{k+1})` the interpolant is the degree-`4q+1`
//! two-point Hermite interpolant matching derivatives `0..=2q` of the
//! degree-`2q` Lagrange polynomials on the stencils of its two endpoints.
//! Interior stencils are centered (`k-q..=k+q`); for `k < q` the stencil is
//! `0..=2q`. The resulting basis is cardinal, `C^{2q}`, and reproduces
//! polynomials of degree `2q`.
//!
//! Tables are built once, exactly in rational arithmetic, in the scaled
//! variable `s = tau / dt`, so they do not depend on `dt`.

use crate::{Error, Result};

/// Largest number of nonzero basis functions at any delay (`2q + 2` for `q = 4`).
pub const MAX_STENCIL: usize = 10;

/// Basis values at one delay: `omega_r` for `r in first..first + len`.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub first: usize,
    pub len: usize,
    pub values: [f64; MAX_STENCIL],
    /// Weights for the time derivative of the interpolant, `-d omega_r / d tau`.
    pub time_derivs: [f64; MAX_STENCIL],
}

impl Stencil {
    pub fn last(&self) -> usize {
        self.first + self.len - 1
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..self.len).map(move |i| (self.first + i, self.values[i], self.time_derivs[i]))
    }
}

#[derive(Clone, Debug)]
pub struct DSplineBasis {
    q: usize,
    dt: f64,
    ncoef: usize,
    /// `boundary[k]` holds `2q + 1` polynomials (nodes `0..=2q`) for interval `k < q`.
    boundary: Vec<Vec<f64>>,
    /// Polynomials for node offsets `r - k` in `-q..=q+1`, valid for `k >= q`.
    interior: Vec<f64>,
}

impl DSplineBasis {
    /// Basis with half-order `q` in `1..=3` (reproduction degree `2q`).
    pub fn new(q: usize, dt: f64) -> Result<Self> {
        Self::build(q, dt, false)
    }

    /// Like [`DSplineBasis::new`] but also admits `q = 4`, whose stability
    /// window in the marching schemes is much narrower.
    pub fn new_experimental(q: usize, dt: f64) -> Result<Self> {
        Self::build(q, dt, true)
    }

    fn build(q: usize, dt: f64, experimental: bool) -> Result<Self> {
        let max_q = if experimental { 4 } else { 3 };
        if q == 0 || q > max_q {
            return Err(Error::UnsupportedOrder(q));
        }
        assert!(dt > 0.0 && dt.is_finite(), "time step must be positive");
        let ncoef = 4 * q + 2;
        let boundary = (0..q)
            .map(|k| {
                let (first, polys) = interval_polynomials(q, k);
                debug_assert_eq!(first, 0);
                // The node 2q+1 polynomial vanishes identically here.
                polys[..(2 * q + 1) * ncoef].to_vec()
            })
            .collect();
        let (first, interior) = interval_polynomials(q, q);
        debug_assert_eq!(first, 0);
        Ok(Self {
            q,
            dt,
            ncoef,
            boundary,
            interior,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of basis functions that can be nonzero at one delay.
    pub fn stencil_width(&self) -> usize {
        2 * self.q + 2
    }

    /// Largest node index touched by delays up to `tau`.
    pub fn max_node_for_delay(&self, tau: f64) -> usize {
        let k = (tau / self.dt).floor() as usize;
        if k < self.q {
            2 * self.q
        } else {
            k + self.q + 1
        }
    }

    /// Locates `tau` and returns `(first node, polynomial table, count, local y)`.
    fn locate(&self, tau: f64) -> (usize, &[f64], usize, f64) {
        let s = tau / self.dt;
        let k = s.floor() as usize;
        let x = s - k as f64 - 0.5;
        if k < self.q {
            (0, &self.boundary[k], 2 * self.q + 1, x)
        } else {
            (k - self.q, &self.interior, 2 * self.q + 2, x)
        }
    }

    /// All nonzero basis values and time-derivative weights at delay `tau >= 0`.
    pub fn stencil(&self, tau: f64) -> Stencil {
        debug_assert!(tau >= 0.0, "negative delay {tau}");
        let (first, table, len, x) = self.locate(tau.max(0.0));
        let mut st = Stencil {
            first,
            len,
            values: [0.0; MAX_STENCIL],
            time_derivs: [0.0; MAX_STENCIL],
        };
        let inv_dt = 1.0 / self.dt;
        for (i, coef) in table.chunks_exact(self.ncoef).take(len).enumerate() {
            let (v, d) = horner_with_derivative(coef, x);
            st.values[i] = v;
            st.time_derivs[i] = -d * inv_dt;
        }
        st
    }

    fn single(&self, r: usize, tau: f64, derivative: bool) -> Result<f64> {
        if tau < 0.0 || tau.is_nan() {
            return Err(Error::NegativeDelay(tau));
        }
        let (first, table, len, x) = self.locate(tau);
        if r < first || r >= first + len {
            return Ok(0.0);
        }
        let coef = &table[(r - first) * self.ncoef..(r - first + 1) * self.ncoef];
        let (v, d) = horner_with_derivative(coef, x);
        Ok(if derivative { d / self.dt } else { v })
    }

    /// `omega_r(tau)`.
    pub fn eval(&self, r: usize, tau: f64) -> Result<f64> {
        self.single(r, tau, false)
    }

    /// `d omega_r / d tau`.
    pub fn eval_deriv(&self, r: usize, tau: f64) -> Result<f64> {
        self.single(r, tau, true)
    }

    /// Interpolates a history `history[r] = y(t_k - r dt)` at `t_k - tau`.
    ///
    /// Returns the value and the derivative with respect to absolute time `t`
    /// (which is minus the derivative in the delay variable).
    pub fn interpolate(&self, history: &[f64], tau: f64) -> Result<(f64, f64)> {
        if tau < 0.0 || tau.is_nan() {
            return Err(Error::NegativeDelay(tau));
        }
        let st = self.stencil(tau);
        if st.last() >= history.len() {
            return Err(Error::InsufficientHistory {
                needed: st.last() + 1,
                available: history.len(),
            });
        }
        Ok(st.iter().fold((0.0, 0.0), |(v, d), (r, w, wd)| {
            (v + w * history[r], d + wd * history[r])
        }))
    }

    /// Coefficients (ascending powers of the centered local variable
    /// `y = tau/dt - k - 1/2`)
    /// of the polynomial piece of `omega_r` on interval `k`, or `None` when
    /// `omega_r` vanishes there.
    pub fn piece(&self, k: usize, r: usize) -> Option<&[f64]> {
        let (first, table, len) = if k < self.q {
            (0, &self.boundary[k][..], 2 * self.q + 1)
        } else {
            (k - self.q, &self.interior[..], 2 * self.q + 2)
        };
        (r >= first && r < first + len)
            .then(|| &table[(r - first) * self.ncoef..(r - first + 1) * self.ncoef])
    }
}

fn horner_with_derivative(coef: &[f64], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for &c in coef.iter().rev() {
        d = d * x + v;
        v = v * x + c;
    }
    (v, d)
}

/// Nodes of the difference stencil of node `k`.
fn stencil_nodes(q: usize, k: usize) -> std::ops::RangeInclusive<usize> {
    if k >= q {
        k - q..=k + q
    } else {
        0..=2 * q
    }
}

/// Exact polynomial arithmetic used only while building the tables.
mod exact {
    use num::{BigInt, BigRational, One, ToPrimitive, Zero};

    pub type Rat = BigRational;
    pub type Poly = Vec<Rat>;

    pub fn int(v: i64) -> Rat {
        Rat::from_integer(BigInt::from(v))
    }

    pub fn half() -> Rat {
        Rat::new(BigInt::one(), BigInt::from(2))
    }

    pub fn mul(a: &[Rat], b: &[Rat]) -> Poly {
        let mut out = vec![Rat::zero(); a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    pub fn add_scaled(acc: &mut Poly, p: &[Rat], scale: &Rat) {
        if acc.len() < p.len() {
            acc.resize(p.len(), Rat::zero());
        }
        for (a, c) in acc.iter_mut().zip(p) {
            *a += c * scale;
        }
    }

    /// `p(x + shift)` as a polynomial in `x`.
    pub fn compose_linear(p: &[Rat], slope: &Rat, shift: &Rat) -> Poly {
        let mut out = vec![Rat::zero()];
        let mut power = vec![Rat::one()];
        let lin = vec![shift.clone(), slope.clone()];
        for c in p {
            add_scaled(&mut out, &power, c);
            power = mul(&power, &lin);
        }
        out
    }

    pub fn derivative_at(p: &[Rat], order: usize, x: &Rat) -> Rat {
        let mut acc = Rat::zero();
        for i in (order..p.len()).rev() {
            let falling: i64 = ((i - order + 1)..=i).map(|v| v as i64).product();
            acc = acc * x + &p[i] * int(falling);
        }
        acc
    }

    pub fn to_f64(p: &[Rat], len: usize) -> Vec<f64> {
        let mut out: Vec<f64> = p.iter().map(|c| c.to_f64().unwrap()).collect();
        out.resize(len, 0.0);
        out
    }
}

/// Lagrange basis polynomial of `node` on integer `nodes`, in the variable
/// `y = s - center`.
fn lagrange_poly(nodes: &[usize], node: usize, center: &exact::Rat) -> exact::Poly {
    use exact::*;
    let yr = int(node as i64) - center;
    let mut poly = vec![int(1)];
    for &m in nodes.iter().filter(|&&m| m != node) {
        let ym = int(m as i64) - center;
        let denom = &yr - &ym;
        poly = mul(&poly, &[-(&ym / &denom), int(1) / denom]);
    }
    poly
}

/// Cardinal two-point Hermite basis on `y in [-1/2, 1/2]` with `m` conditions
/// per endpoint: `h0[l]` has `l`-th derivative 1 at the left end and all other
/// listed derivatives zero at both ends; `h1[l]` likewise for the right end.
///
/// In `x = y + 1/2`: `h0[l](x) = x^l / l! (1 - x)^m sum_{j < m - l} C(m - 1 + j, j) x^j`
/// and `h1[l](x) = (-1)^l h0[l](1 - x)`.
fn hermite_basis(m: usize) -> (Vec<exact::Poly>, Vec<exact::Poly>) {
    use exact::*;
    let binomial = |n: usize, k: usize| -> Rat {
        (0..k).fold(int(1), |acc, i| acc * int((n - i) as i64) / int((i + 1) as i64))
    };
    let one_minus_x_pow: Poly = (0..=m)
        .map(|i| binomial(m, i) * int(if i % 2 == 0 { 1 } else { -1 }))
        .collect();
    let mut h0 = Vec::with_capacity(m);
    let mut h1 = Vec::with_capacity(m);
    let mut factorial = int(1);
    for l in 0..m {
        if l > 0 {
            factorial *= int(l as i64);
        }
        let mut series = vec![int(0); l];
        series.extend((0..m - l).map(|j| binomial(m - 1 + j, j) / &factorial));
        let in_x = mul(&series, &one_minus_x_pow);
        let sign = int(if l % 2 == 0 { 1 } else { -1 });
        let reflected: Poly = compose_linear(&in_x, &int(-1), &int(1))
            .into_iter()
            .map(|c| c * &sign)
            .collect();
        h0.push(compose_linear(&in_x, &int(1), &half()));
        h1.push(compose_linear(&reflected, &int(1), &half()));
    }
    (h0, h1)
}

/// Builds the local polynomials `omega_{k+1/2, r}` for interval `k` in the
/// centered variable `y = s - k - 1/2`, for the consecutive node range
/// covering `S_k u S_{k+1}`. Returns the first node and the concatenated
/// coefficients. The construction is exact; only the final coefficients are
/// rounded.
fn interval_polynomials(q: usize, k: usize) -> (usize, Vec<f64>) {
    use exact::*;
    let ncoef = 4 * q + 2;
    let left: Vec<usize> = stencil_nodes(q, k).collect();
    let right: Vec<usize> = stencil_nodes(q, k + 1).collect();
    let first = left[0].min(right[0]);
    let last = left[left.len() - 1].max(right[right.len() - 1]);

    let m = 2 * q + 1;
    let (h0, h1) = hermite_basis(m);
    let center = int(k as i64) + half();
    let y_left = -half();
    let y_right = half();

    let mut out = Vec::with_capacity((last - first + 1) * ncoef);
    for r in first..=last {
        let mut coef: Poly = vec![int(0)];
        for (stencil, h, y) in [(&left, &h0, &y_left), (&right, &h1, &y_right)] {
            if stencil.contains(&r) {
                let lag = lagrange_poly(stencil, r, &center);
                for (l, basis) in h.iter().enumerate() {
                    add_scaled(&mut coef, basis, &derivative_at(&lag, l, y));
                }
            }
        }
        out.extend(to_f64(&coef, ncoef));
    }
    (first, out)
}
