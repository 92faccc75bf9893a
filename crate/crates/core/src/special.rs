//! Special functions: harmonic numbers, log-gamma, beta, regularized incomplete
//! beta, beta-prime distribution and negative-binomial moments.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest `n` for which harmonic numbers come from the cached exact sum.
pub const HARMONIC_TABLE_LIMIT: u64 = 1 << 20;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const CF_MAX_ITER: usize = 20_000;

/// Prefix sums `H_0..=H_limit`, built with compensated summation.
#[derive(Clone, Debug)]
pub struct HarmonicTable<T> {
    prefix: Vec<T>,
}

impl<T: Real> HarmonicTable<T> {
    pub fn new(limit: u64) -> Self {
        let mut prefix = Vec::with_capacity(limit as usize + 1);
        prefix.push(T::zero());
        let mut sum = T::zero();
        let mut comp = T::zero();
        for k in 1..=limit {
            let term = T::one() / T::count(k);
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp = comp + ((sum - t) + term);
            } else {
                comp = comp + ((term - t) + sum);
            }
            sum = t;
            prefix.push(sum + comp);
        }
        Self { prefix }
    }

    pub fn limit(&self) -> u64 {
        self.prefix.len() as u64 - 1
    }

    /// `H_n` if `n` is within the table.
    pub fn get(&self, n: u64) -> Option<T> {
        self.prefix.get(n as usize).copied()
    }
}

fn global_harmonic_table() -> &'static HarmonicTable<f64> {
    static TABLE: OnceLock<HarmonicTable<f64>> = OnceLock::new();
    TABLE.get_or_init(|| HarmonicTable::new(HARMONIC_TABLE_LIMIT))
}

/// Asymptotic expansion of `H_n`, accurate to far below `f64` resolution for
/// `n` beyond the table limit.
pub fn harmonic_asymptotic<T: Real>(n: u64) -> T {
    let x = T::count(n);
    let inv2 = T::one() / (x * x);
    let series = inv2
        * (T::lit(-1.0 / 12.0)
            + inv2 * (T::lit(1.0 / 120.0) + inv2 * (T::lit(-1.0 / 252.0) + inv2 * T::lit(1.0 / 240.0))));
    x.ln() + T::lit(EULER_GAMMA) + T::one() / (T::lit(2.0) * x) + series
}

/// Harmonic number `H_n = 1 + 1/2 + ... + 1/n`, with `H_0 = 0`.
pub fn harmonic<T: Real>(n: u64) -> T {
    if n <= HARMONIC_TABLE_LIMIT {
        T::lit(global_harmonic_table().prefix[n as usize])
    } else {
        harmonic_asymptotic(n)
    }
}

fn lanczos_ln_gamma<T: Real>(x: T) -> T {
    // Valid for x >= 1/2.
    let xm1 = x - T::one();
    let mut acc = T::lit(LANCZOS_COEFFS[0]);
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc = acc + T::lit(c) / (xm1 + T::count(i as u64));
    }
    let t = xm1 + T::lit(LANCZOS_G + 0.5);
    T::lit(0.5) * (T::lit(2.0) * T::PI()).ln() + (xm1 + T::lit(0.5)) * t.ln() - t + acc.ln()
}

fn stirling_ln_gamma<T: Real>(x: T) -> T {
    let inv = T::one() / x;
    let inv2 = inv * inv;
    let series = inv
        * (T::lit(1.0 / 12.0)
            + inv2
                * (T::lit(-1.0 / 360.0)
                    + inv2
                        * (T::lit(1.0 / 1260.0)
                            + inv2 * (T::lit(-1.0 / 1680.0) + inv2 * T::lit(1.0 / 1188.0)))));
    (x - T::lit(0.5)) * x.ln() - x + T::lit(0.5) * (T::lit(2.0) * T::PI()).ln() + series
}

/// `ln|Γ(x)|` together with the sign of `Γ(x)`.
pub fn ln_gamma_signed<T: Real>(x: T) -> Result<(T, T)> {
    if !x.is_finite() {
        return Err(Error::domain(format!("ln_gamma of non-finite {x}")));
    }
    if x <= T::zero() && x == x.floor() {
        return Err(Error::domain(format!("gamma pole at {x}")));
    }
    if x < T::lit(0.5) {
        let s = (T::PI() * x).sin();
        let (lg, _) = ln_gamma_signed(T::one() - x)?;
        let sign = if s < T::zero() { -T::one() } else { T::one() };
        return Ok((T::PI().ln() - s.abs().ln() - lg, sign));
    }
    let v = if x >= T::lit(10.0) {
        stirling_ln_gamma(x)
    } else {
        lanczos_ln_gamma(x)
    };
    Ok((v, T::one()))
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma<T: Real>(x: T) -> Result<T> {
    if !(x > T::zero()) {
        return Err(Error::domain(format!("ln_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_signed(x)?.0)
}

/// `ln B(a, b)` for `a, b > 0`.
pub fn ln_beta<T: Real>(a: T, b: T) -> Result<T> {
    if !(a > T::zero() && b > T::zero()) {
        return Err(Error::domain(format!("ln_beta requires a, b > 0, got ({a}, {b})")));
    }
    Ok(ln_gamma(a)? + ln_gamma(b)? - ln_gamma(a + b)?)
}

/// `B(a, b) = Γ(a)Γ(b)/Γ(a+b)`, defined away from the gamma poles.
pub fn beta<T: Real>(a: T, b: T) -> Result<T> {
    let (la, sa) = ln_gamma_signed(a)?;
    let (lb, sb) = ln_gamma_signed(b)?;
    let (lab, sab) = ln_gamma_signed(a + b)?;
    Ok(sa * sb * sab * (la + lb - lab).exp())
}

fn beta_cf<T: Real>(x: T, a: T, b: T) -> Result<T> {
    let tiny = T::min_positive_value() / T::epsilon();
    let eps = T::epsilon();
    let qab = a + b;
    let qap = a + T::one();
    let qam = a - T::one();
    let mut c = T::one();
    let mut d = T::one() - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = T::one() / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let mf = T::count(m as u64);
        let m2 = mf + mf;
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = T::one() + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = T::one() + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        h = h * d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = T::one() + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = T::one() + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let del = d * c;
        h = h * del;
        if (del - T::one()).abs() <= eps {
            return Ok(h);
        }
    }
    Err(Error::Convergence(format!(
        "incomplete beta continued fraction at x={x}, a={a}, b={b}"
    )))
}

/// `I_x(a, b)` with `y = 1 - x` supplied separately to keep precision near 1.
fn inc_beta_xy<T: Real>(x: T, y: T, a: T, b: T) -> Result<T> {
    if x <= T::zero() {
        return Ok(T::zero());
    }
    if y <= T::zero() {
        return Ok(T::one());
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b)?;
    let front = ln_front.exp();
    if x > a / (a + b) {
        Ok(T::one() - front * beta_cf(y, b, a)? / b)
    } else {
        Ok(front * beta_cf(x, a, b)? / a)
    }
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn reg_inc_beta<T: Real>(x: T, a: T, b: T) -> Result<T> {
    if !(a > T::zero() && b > T::zero()) {
        return Err(Error::domain(format!("reg_inc_beta requires a, b > 0, got ({a}, {b})")));
    }
    if !(x >= T::zero() && x <= T::one()) {
        return Err(Error::domain(format!("reg_inc_beta requires x in [0, 1], got {x}")));
    }
    inc_beta_xy(x, T::one() - x, a, b)
}

/// Density of the beta-prime distribution with shape parameters `(a, b)`.
pub fn beta_prime_pdf<T: Real>(z: T, a: T, b: T) -> Result<T> {
    if !(a > T::zero() && b > T::zero()) {
        return Err(Error::domain(format!("beta-prime shapes must be positive, got ({a}, {b})")));
    }
    if z.is_nan() {
        return Err(Error::domain("beta-prime density at NaN"));
    }
    if z <= T::zero() {
        return Ok(T::zero());
    }
    let ln = (a - T::one()) * z.ln() - (a + b) * z.ln_1p() - ln_beta(a, b)?;
    Ok(ln.exp())
}

/// Distribution function of the beta-prime distribution, `I_{z/(1+z)}(a, b)`.
pub fn beta_prime_cdf<T: Real>(z: T, a: T, b: T) -> Result<T> {
    if !(a > T::zero() && b > T::zero()) {
        return Err(Error::domain(format!("beta-prime shapes must be positive, got ({a}, {b})")));
    }
    if z.is_nan() {
        return Err(Error::domain("beta-prime cdf at NaN"));
    }
    if z <= T::zero() {
        return Ok(T::zero());
    }
    if z.is_infinite() {
        return Ok(T::one());
    }
    let y = T::one() / (T::one() + z);
    let x = z * y;
    inc_beta_xy(x, y, a, b)
}

/// Moments of the number of Bernoulli(`p`) draws needed for `r` successes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NegBinMoments<T> {
    pub successes: u64,
    pub prob: T,
}

impl<T: Real> NegBinMoments<T> {
    pub fn new(successes: u64, prob: T) -> Result<Self> {
        if successes < 1 {
            return Err(Error::domain("negative-binomial moments need at least one success"));
        }
        if !(prob > T::zero() && prob <= T::one()) {
            return Err(Error::domain(format!("success probability must be in (0, 1], got {prob}")));
        }
        Ok(Self { successes, prob })
    }

    fn r(&self) -> T {
        T::count(self.successes)
    }

    /// `E[N] = r/p`.
    pub fn mean(&self) -> T {
        self.r() / self.prob
    }

    /// `Var[N] = r(1-p)/p²`.
    pub fn variance(&self) -> T {
        self.r() * (T::one() - self.prob) / (self.prob * self.prob)
    }

    /// `E[1/(N-1)] = p/(r-1)`, requires `r >= 2`.
    pub fn mean_inv_minus_one(&self) -> Result<T> {
        if self.successes < 2 {
            return Err(Error::domain("E[1/(N-1)] requires r >= 2"));
        }
        Ok(self.prob / (self.r() - T::one()))
    }

    /// Upper bound `p²(1-p)/((r-1)²(r-2+2p))` on `Var[1/(N-1)]`, requires `r >= 3`.
    pub fn var_inv_minus_one_upper(&self) -> Result<T> {
        if self.successes < 3 {
            return Err(Error::domain("Var[1/(N-1)] bound requires r >= 3"));
        }
        let r = self.r();
        let p = self.prob;
        let rm1 = r - T::one();
        Ok(p * p * (T::one() - p) / (rm1 * rm1 * (r - T::lit(2.0) + T::lit(2.0) * p)))
    }
}

/// Lower and upper bounds on `E[1/N]` for `N` negative binomial with `r >= 3`.
pub fn mean_inv_bounds<T: Real>(successes: u64, prob: T) -> Result<(T, T)> {
    if successes < 3 {
        return Err(Error::domain("E[1/N] bounds require r >= 3"));
    }
    if !(prob > T::zero() && prob <= T::one()) {
        return Err(Error::domain(format!("success probability must be in (0, 1], got {prob}")));
    }
    let r = T::count(successes);
    let lead = prob / (r - T::one());
    let lo = lead * (T::one() - prob / (r - T::lit(2.0)));
    let hi = lead * (T::one() - prob / (r - T::one() + prob));
    Ok((lo, hi))
}
