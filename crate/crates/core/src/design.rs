//! Design constants, the error function, the curvature criterion, and the
//! second-stage solve and rounding.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest first-stage success count considered by [`select_suf1`].
pub const PILOT_SEARCH_CAP: u64 = 1_000_000;

/// The four estimated quantities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// Relative risk `p1/p2`.
    Rr,
    /// Log relative risk.
    Lrr,
    /// Odds ratio `p1(1-p2)/(p2(1-p1))`.
    Or,
    /// Log odds ratio.
    Lor,
}

/// Constants `(c1, c2, c12)` of the error function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorConstants<T> {
    pub c1: T,
    pub c2: T,
    pub c12: T,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Rr,
        EstimatorKind::Lrr,
        EstimatorKind::Or,
        EstimatorKind::Lor,
    ];

    pub fn constants<T: Real>(self) -> ErrorConstants<T> {
        let (c1, c2, c12) = match self {
            EstimatorKind::Rr => (2.0, 0.0, 1.0),
            EstimatorKind::Lrr => (1.0, 1.0, 0.0),
            EstimatorKind::Or => (2.0, 2.0, 1.0),
            EstimatorKind::Lor => (1.25, 1.25, 0.0),
        };
        ErrorConstants {
            c1: T::lit(c1),
            c2: T::lit(c2),
            c12: T::lit(c12),
        }
    }

    /// Failure-count reduction in the odds-ratio second stage.
    pub fn alpha(self) -> u64 {
        match self {
            EstimatorKind::Or => 2,
            _ => 0,
        }
    }

    /// Mean raw draws per first-stage trial: 1, or 3/2 with the factory.
    pub fn stage1_cost<T: Real>(self) -> T {
        if self.uses_factory() {
            T::lit(1.5)
        } else {
            T::one()
        }
    }

    /// Whether the first stage observes factory outputs.
    pub fn uses_factory(self) -> bool {
        matches!(self, EstimatorKind::Or | EstimatorKind::Lor)
    }

    /// Logarithmic kinds are judged by absolute, the others by relative, MSE.
    pub fn is_log(self) -> bool {
        matches!(self, EstimatorKind::Lrr | EstimatorKind::Lor)
    }

    /// The estimand for success probabilities `(p1, p2)`.
    pub fn true_value<T: Real>(self, p1: T, p2: T) -> T {
        let rr = p1 / p2;
        let or = rr * (T::one() - p2) / (T::one() - p1);
        match self {
            EstimatorKind::Rr => rr,
            EstimatorKind::Lrr => rr.ln(),
            EstimatorKind::Or => or,
            EstimatorKind::Lor => or.ln(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Rr => "rr",
            EstimatorKind::Lrr => "lrr",
            EstimatorKind::Or => "or",
            EstimatorKind::Lor => "lor",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rr" => Ok(EstimatorKind::Rr),
            "lrr" => Ok(EstimatorKind::Lrr),
            "or" => Ok(EstimatorKind::Or),
            "lor" => Ok(EstimatorKind::Lor),
            other => Err(Error::config("kind", format!("unknown estimator kind {other:?}"))),
        }
    }
}

/// The error function `1/(n1-c1) + 1/(n2-c2) + c12/((n1-c1)(n2-c2))`.
pub fn error_fn<T: Real>(kind: EstimatorKind, n1: T, n2: T) -> Result<T> {
    let c = kind.constants::<T>();
    let u = n1 - c.c1;
    let v = n2 - c.c2;
    if !(u > T::zero() && v > T::zero()) {
        return Err(Error::domain(format!(
            "error function needs n1 > {} and n2 > {}, got ({n1}, {n2})",
            c.c1, c.c2
        )));
    }
    Ok(T::one() / u + T::one() / v + c.c12 / (u * v))
}

/// Pilot success gap `c1 - c2` as an integer.
fn pilot_gap(kind: EstimatorKind) -> u64 {
    match kind {
        EstimatorKind::Rr => 2,
        _ => 0,
    }
}

/// `a1 + c1` for first-stage count `n`, computed without cancellation.
fn shifted_offset<T: Real>(kind: EstimatorKind, target: T, n: u64, allowance: T) -> T {
    let c = kind.constants::<T>();
    let nf = T::count(n);
    if kind.uses_factory() {
        let k = T::lit(1.5) * nf + c.c1 + allowance;
        -T::one() / (nf * target) + k * (nf - T::one()) / nf
    } else {
        let d = c.c1 - c.c2;
        let sq = ((nf - T::one()) * (nf + d - T::one()) / (nf * (nf + d))).sqrt();
        let sq_minus_one = (T::one() - T::lit(2.0) * nf - d) / (nf * (nf + d) * (sq + T::one()));
        sq_minus_one / target + (nf + c.c1 + allowance) * sq
    }
}

/// Curvature criterion: the second-stage solution is convex in the pilot ratio
/// exactly when this is non-negative.
pub fn curvature_fn<T: Real>(kind: EstimatorKind, target: T, pilot1: u64, allowance: T) -> T {
    let t = shifted_offset(kind, target, pilot1, allowance);
    target * t * t + T::lit(2.0) * t - kind.constants::<T>().c12
}

fn check_target<T: Real>(target: T) -> Result<()> {
    if !(target > T::zero() && target.is_finite()) {
        return Err(Error::config("tarvar", format!("must be positive and finite, got {target}")));
    }
    if target > T::one() {
        log::warn!("target error {target} exceeds 1");
    }
    Ok(())
}

/// Smallest first-stage success count `n >= 3` with non-negative curvature.
pub fn select_suf1<T: Real>(kind: EstimatorKind, target: T) -> Result<u64> {
    check_target(target)?;
    let ok = |n: u64| curvature_fn(kind, target, n, T::one()) >= T::zero();
    if ok(3) {
        return Ok(3);
    }
    if !ok(PILOT_SEARCH_CAP) {
        return Err(Error::domain(format!(
            "no first-stage count up to {PILOT_SEARCH_CAP} satisfies the curvature criterion at target {target}"
        )));
    }
    let (mut lo, mut hi) = (3u64, PILOT_SEARCH_CAP);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// All constants fixed before sampling starts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DesignParams<T> {
    pub kind: EstimatorKind,
    /// Target (relative) mean-square error.
    pub target: T,
    /// Target ratio of expected sample sizes, population 1 over 2.
    pub size_ratio: T,
    /// First-stage success counts.
    pub pilot: [u64; 2],
    /// Multiplier of the pilot ratio in the second-stage ratio equation.
    pub gain: T,
    /// Additive offsets in the second-stage ratio equation.
    pub offsets: [T; 2],
    /// Shift subtracted from first-stage counts in the pilot ratio.
    pub pilot_shift: T,
    /// Allowance for rounding up the second-stage counts.
    pub rounding_allowance: T,
}

impl<T: Real> DesignParams<T> {
    /// Design with the first-stage count chosen by [`select_suf1`].
    pub fn derive(kind: EstimatorKind, target: T, size_ratio: T) -> Result<Self> {
        let pilot1 = select_suf1(kind, target)?;
        Self::with_pilot(kind, target, size_ratio, pilot1)
    }

    /// Design with an explicit first-stage count for population 1.
    pub fn with_pilot(kind: EstimatorKind, target: T, size_ratio: T, pilot1: u64) -> Result<Self> {
        check_target(target)?;
        if !(size_ratio > T::zero() && size_ratio.is_finite()) {
            return Err(Error::config(
                "tarsara",
                format!("must be positive and finite, got {size_ratio}"),
            ));
        }
        if pilot1 < 3 {
            return Err(Error::domain(format!("first-stage count must be at least 3, got {pilot1}")));
        }
        let c = kind.constants::<T>();
        let allowance = T::one();
        let a1 = shifted_offset(kind, target, pilot1, allowance) - c.c1;
        let gap = pilot_gap(kind);
        let n = T::count(pilot1);
        let (a2, gain) = if kind.uses_factory() {
            (a1, size_ratio)
        } else {
            let d = T::count(gap);
            let g = size_ratio * (n * (n - T::one()) / ((n + d) * (n + d - T::one()))).sqrt();
            (a1 + d, g)
        };
        Ok(Self {
            kind,
            target,
            size_ratio,
            pilot: [pilot1, pilot1 + gap],
            gain,
            offsets: [a1, a2],
            pilot_shift: T::lit(0.5),
            rounding_allowance: allowance,
        })
    }

    /// Pilot ratio from first-stage counts.
    pub fn pilot_ratio(&self, counts: [u64; 2]) -> Result<T> {
        let d1 = T::count(counts[0]) - self.pilot_shift;
        let d2 = T::count(counts[1]) - self.pilot_shift;
        if !(d1 > T::zero() && d2 > T::zero()) {
            return Err(Error::domain(format!("first-stage counts {counts:?} too small")));
        }
        Ok(d2 / d1)
    }

    /// Curvature at this design's first-stage count.
    pub fn curvature(&self) -> T {
        curvature_fn(self.kind, self.target, self.pilot[0], self.rounding_allowance)
    }
}

/// Real-valued solution of the second-stage equations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondStageReal<T> {
    pub sus: [T; 2],
    pub discriminant: T,
}

/// Rounded second-stage success counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SecondStageParams {
    pub sus: [u64; 2],
}

/// Root of `e x² - b x - c = 0` with the `+sqrt` sign, free of cancellation.
fn upper_root<T: Real>(e: T, b: T, c: T, sqrt_disc: T) -> T {
    if b >= T::zero() {
        (b + sqrt_disc) / (T::lit(2.0) * e)
    } else {
        T::lit(2.0) * c / (sqrt_disc - b)
    }
}

/// Coefficients `(Du, Dv, Dw)` with discriminant `Du W² + Dv W + Dw`.
pub fn discriminant_coeffs<T: Real>(design: &DesignParams<T>) -> [T; 3] {
    let c = design.kind.constants::<T>();
    let e = design.target;
    let p = e * (design.offsets[1] + c.c2) + T::one();
    let q = e * (design.offsets[0] + c.c1) + T::one();
    let g = design.gain;
    let two = T::lit(2.0);
    [g * g * p * p, two * g * (two * (T::one() + e * c.c12) - p * q), q * q]
}

/// Solves `error_fn = target` jointly with the ratio equation for pilot ratio `w`.
pub fn solve_sus<T: Real>(design: &DesignParams<T>, w: T) -> Result<SecondStageReal<T>> {
    if !(w > T::zero() && w.is_finite()) {
        return Err(Error::domain(format!("pilot ratio must be positive and finite, got {w}")));
    }
    let c = design.kind.constants::<T>();
    let e = design.target;
    let a = design.offsets[0] + c.c1;
    let b = design.offsets[1] + c.c2;
    let k = design.gain * w;
    let p = e * b + T::one();
    let q = e * a + T::one();
    let two = T::lit(2.0);
    // Written as a sum of non-negative terms.
    let kpq = k * p - q;
    let disc = kpq * kpq + T::lit(4.0) * k * (T::one() + e * c.c12);
    let sd = disc.sqrt();
    let u = upper_root(e, kpq + two, a - k * b + k * c.c12, sd);
    let kv = k * (two - p) + q;
    let v = if kv >= T::zero() {
        (kv + sd) / (two * e * k)
    } else {
        two * (k * b - a + c.c12) / (sd - kv)
    };
    if !(u > T::zero() && v > T::zero() && u.is_finite() && v.is_finite()) {
        return Err(Error::Internal(format!(
            "second-stage solve left the valid branch at w={w}: ({u}, {v})"
        )));
    }
    Ok(SecondStageReal {
        sus: [u + c.c1, v + c.c2],
        discriminant: disc,
    })
}

/// Affine approximation `sus1 ≈ i1 + s1 W`, `sus2 ≈ i2 + s2 / W`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirstOrderCoeffs<T> {
    pub intercept: [T; 2],
    pub slope: [T; 2],
}

impl<T: Real> FirstOrderCoeffs<T> {
    pub fn evaluate(&self, w: T) -> [T; 2] {
        [
            self.intercept[0] + self.slope[0] * w,
            self.intercept[1] + self.slope[1] / w,
        ]
    }
}

pub fn first_order_coeffs<T: Real>(design: &DesignParams<T>) -> FirstOrderCoeffs<T> {
    let c = design.kind.constants::<T>();
    let inv = T::one() / design.target;
    FirstOrderCoeffs {
        intercept: [inv + c.c1, inv + c.c2],
        slope: [
            design.gain * (inv + design.offsets[1] + c.c2),
            (inv + design.offsets[0] + c.c1) / design.gain,
        ],
    }
}

fn admissible<T: Real>(kind: EstimatorKind, target: T, n: [u64; 2]) -> bool {
    error_fn(kind, T::count(n[0]), T::count(n[1])).is_ok_and(|g| g <= target)
}

/// Randomized rounding of the real second-stage solution.
///
/// Tries one mixed floor/ceiling pair chosen at random, then the other, then
/// both ceilings.
pub fn round_sus<T: Real, R: Rng + ?Sized>(
    real: &SecondStageReal<T>,
    design: &DesignParams<T>,
    rng: &mut R,
) -> Result<SecondStageParams> {
    let to_u64 = |x: T| {
        x.to_u64()
            .ok_or_else(|| Error::domain(format!("second-stage count {x} out of range")))
    };
    let fl = [to_u64(real.sus[0].floor())?, to_u64(real.sus[1].floor())?];
    let ce = [to_u64(real.sus[0].ceil())?, to_u64(real.sus[1].ceil())?];
    let first_up = rng.gen::<bool>();
    let mixed = [[ce[0], fl[1]], [fl[0], ce[1]]];
    let order = if first_up { [mixed[0], mixed[1]] } else { [mixed[1], mixed[0]] };
    for cand in order {
        if admissible(design.kind, design.target, cand) {
            return Ok(SecondStageParams { sus: cand });
        }
    }
    let mut cand = ce;
    for _ in 0..64 {
        if admissible(design.kind, design.target, cand) {
            return Ok(SecondStageParams { sus: cand });
        }
        cand = [cand[0] + 1, cand[1] + 1];
    }
    Err(Error::Internal(format!(
        "no admissible rounding of {:?}",
        real.sus
    )))
}
