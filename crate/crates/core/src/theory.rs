//! Closed-form bounds and approximations: average sample size, efficiency,
//! expected number of groups, first-stage ratio moments and the variance
//! decomposition of the sample-size difference.

use crate::design::{first_order_coeffs, select_suf1, DesignParams, EstimatorKind};
use crate::error::{Error, Result};
use crate::group::GroupConfig;
use crate::scalar::Real;
use crate::special::ln_beta;

fn check_positive<T: Real>(field: &str, x: T) -> Result<()> {
    if x > T::zero() && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive and finite, got {x}")))
    }
}

fn check_prob<T: Real>(field: &str, p: T) -> Result<()> {
    if p > T::zero() && p < T::one() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie strictly between 0 and 1, got {p}")))
    }
}

/// Ratio and scale parameters of `(p1, p2)` for `kind`.
///
/// Relative-risk kinds use `(p1/p2, sqrt(p1 p2))`; odds-ratio kinds use the
/// same with each `p` replaced by `p(1-p)`.
pub fn ratio_scale<T: Real>(kind: EstimatorKind, p1: T, p2: T) -> Result<(T, T)> {
    check_prob("p1", p1)?;
    check_prob("p2", p2)?;
    let (q1, q2) = if kind.uses_factory() {
        (p1 * (T::one() - p1), p2 * (T::one() - p2))
    } else {
        (p1, p2)
    };
    Ok((q1 / q2, (q1 * q2).sqrt()))
}

/// `(p1, p2) = (s sqrt(r), s / sqrt(r))`.
pub fn probs_from_ratio_scale<T: Real>(ratio: T, scale: T) -> Result<(T, T)> {
    check_positive("ratio", ratio)?;
    check_positive("scale", scale)?;
    let sr = ratio.sqrt();
    let (p1, p2) = (scale * sr, scale / sr);
    check_prob("p1", p1)?;
    check_prob("p2", p2)?;
    Ok((p1, p2))
}

/// `1/ε + κ n + c1 + Δ` with `κ` the first-stage cost.
fn size_constant<T: Real>(kind: EstimatorKind, target: T, pilot: u64) -> T {
    T::one() / target + kind.stage1_cost::<T>() * T::count(pilot) + kind.constants::<T>().c1 + T::one()
}

/// Upper bounds on `E[N_i] · scale`, for `i = 1, 2`.
pub fn avg_size_bound<T: Real>(kind: EstimatorKind, target: T, size_ratio: T, ratio: T) -> Result<[T; 2]> {
    check_positive("tarsara", size_ratio)?;
    check_positive("ratio", ratio)?;
    let n = select_suf1(kind, target)?;
    let k = size_constant(kind, target, n);
    let x = (size_ratio * ratio).sqrt();
    let f = T::one() / x + x;
    let sq = size_ratio.sqrt();
    Ok([k * f * sq, k * f / sq])
}

/// Lower bound on the element efficiency.
pub fn efficiency_bound_element<T: Real>(
    kind: EstimatorKind,
    target: T,
    size_ratio: T,
    ratio: T,
    scale: T,
) -> Result<T> {
    check_positive("tarsara", size_ratio)?;
    check_positive("ratio", ratio)?;
    check_positive("scale", scale)?;
    let n = select_suf1(kind, target)?;
    let c1 = kind.constants::<T>().c1;
    let lead = T::one() / (T::one() + target * (kind.stage1_cost::<T>() * T::count(n) + c1 + T::one()));
    if kind.uses_factory() {
        return Ok(lead);
    }
    let sq = size_ratio.sqrt();
    let x = (size_ratio * ratio).sqrt();
    Ok(lead * (T::one() - scale * (T::one() / sq + sq) / (T::one() / x + x)))
}

/// `(x - 1) + sqrt((x - 1)² + c)` without cancellation.
fn shifted_root_sum<T: Real>(x: T, c: T) -> T {
    let b = x - T::one();
    let r = (b * b + c).sqrt();
    if b >= T::zero() {
        b + r
    } else {
        c / (r - b)
    }
}

/// Pilot ratio, relative to the true ratio, at which both populations' expected
/// group demands are equal.
pub fn crossing_ratio<T: Real>(kind: EstimatorKind, target: T, size_ratio: T, ratio: T) -> Result<T> {
    check_positive("tarsara", size_ratio)?;
    check_positive("ratio", ratio)?;
    let n = select_suf1(kind, target)?;
    Ok(crossing_ratio_at(kind, n, size_ratio * ratio))
}

fn crossing_ratio_at<T: Real>(kind: EstimatorKind, n: u64, x: T) -> T {
    let nf = T::count(n);
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    if kind.uses_factory() {
        let c = four * x * (nf - T::one()) * (nf - T::one()) / (nf * nf);
        nf / (two * x * (nf - T::one())) * shifted_root_sum(x, c)
    } else {
        let d = T::count(if kind == EstimatorKind::Rr { 2 } else { 0 });
        let c = four * x * (nf - T::one()) * (nf + d - T::one()) / (nf * (nf + d));
        (nf + d) / (two * x * (nf - T::one())) * shifted_root_sum(x, c)
    }
}

/// Approximate `E[G] · scale`, split into the symmetric part and the
/// correction from the maximum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupsApprox<T> {
    pub base: T,
    pub correction: T,
}

impl<T: Real> GroupsApprox<T> {
    pub fn total(&self) -> T {
        self.base + self.correction
    }
}

/// Approximation of the expected number of groups, normalized by the scale.
pub fn expected_groups_approx<T: Real>(
    kind: EstimatorKind,
    target: T,
    groups: GroupConfig,
    ratio: T,
) -> Result<GroupsApprox<T>> {
    check_positive("ratio", ratio)?;
    let n = select_suf1(kind, target)?;
    let size_ratio = groups.size_ratio::<T>();
    let k = size_constant(kind, target, n);
    let w = crossing_ratio_at(kind, n, size_ratio * ratio);
    let m1 = T::count(groups.sizes[0]);
    let m2 = T::count(groups.sizes[1]);
    let sr = ratio.sqrt();
    let nf = T::count(n);
    let base = k * (T::one() / (m1 * sr) + sr / m2);
    let (a, b) = if kind.uses_factory() {
        (nf, nf)
    } else {
        let d = T::count(if kind == EstimatorKind::Rr { 2 } else { 0 });
        (nf + d, nf)
    };
    // W^(a-1) / ((W+1)^(a+b-1) B(a, b))
    let dens = ((a - T::one()) * w.ln() - (a + b - T::one()) * w.ln_1p() - ln_beta(a, b)?).exp();
    let tail = T::one() / (b * m1 * sr) + w * sr / (a * m2);
    Ok(GroupsApprox {
        base,
        correction: k * dens * tail,
    })
}

/// Approximate group efficiency from success probabilities.
pub fn efficiency_group_approx<T: Real>(
    kind: EstimatorKind,
    target: T,
    groups: GroupConfig,
    p1: T,
    p2: T,
) -> Result<T> {
    let (ratio, scale) = ratio_scale(kind, p1, p2)?;
    let g = expected_groups_approx(kind, target, groups, ratio)?.total();
    Ok(group_efficiency_numerator(kind, groups, p1, p2)? * scale / (target * g))
}

/// `sum_i (1 - p_i)/(m_i p_i)` or, for odds-ratio kinds, `sum_i 1/(m_i p_i (1 - p_i))`.
fn group_efficiency_numerator<T: Real>(kind: EstimatorKind, groups: GroupConfig, p1: T, p2: T) -> Result<T> {
    check_prob("p1", p1)?;
    check_prob("p2", p2)?;
    let m1 = T::count(groups.sizes[0]);
    let m2 = T::count(groups.sizes[1]);
    Ok(if kind.uses_factory() {
        T::one() / (m1 * p1 * (T::one() - p1)) + T::one() / (m2 * p2 * (T::one() - p2))
    } else {
        (T::one() - p1) / (m1 * p1) + (T::one() - p2) / (m2 * p2)
    })
}

fn check_mse<T: Real>(mse: T) -> Result<()> {
    if mse > T::zero() && mse.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("efficiency undefined for MSE {mse}")))
    }
}

/// Empirical element efficiency from mean sample sizes and (relative) MSE.
pub fn empirical_efficiency_element<T: Real>(
    kind: EstimatorKind,
    p1: T,
    p2: T,
    mean_sizes: [T; 2],
    mse: T,
) -> Result<T> {
    check_prob("p1", p1)?;
    check_prob("p2", p2)?;
    check_mse(mse)?;
    let [e1, e2] = mean_sizes;
    let num = if kind.uses_factory() {
        T::one() / (e1 * p1 * (T::one() - p1)) + T::one() / (e2 * p2 * (T::one() - p2))
    } else {
        (T::one() - p1) / (e1 * p1) + (T::one() - p2) / (e2 * p2)
    };
    Ok(num / mse)
}

/// Empirical group efficiency from the mean number of groups and (relative) MSE.
pub fn empirical_efficiency_group<T: Real>(
    kind: EstimatorKind,
    groups: GroupConfig,
    p1: T,
    p2: T,
    mean_groups: T,
    mse: T,
) -> Result<T> {
    check_mse(mse)?;
    Ok(group_efficiency_numerator(kind, groups, p1, p2)? / (mean_groups * mse))
}

/// Bound on the conditional MSE given second-stage targets `sus`.
///
/// Relative MSE for the ratio kinds, using the probability-dependent factors;
/// absolute MSE for the log kinds, where the uniform bound is returned.
pub fn conditional_mse_bound<T: Real>(kind: EstimatorKind, sus: [u64; 2], p1: T, p2: T) -> Result<T> {
    check_prob("p1", p1)?;
    check_prob("p2", p2)?;
    let c = kind.constants::<T>();
    let n1 = T::count(sus[0]);
    let n2 = T::count(sus[1]);
    if !(n1 > c.c1 && n2 > c.c2) {
        return Err(Error::domain(format!("targets {sus:?} invalid for {kind}")));
    }
    let two = T::lit(2.0);
    Ok(match kind {
        EstimatorKind::Rr => {
            let f1 = (T::one() - p1) / (n1 - two + two * p1) + T::one();
            let f2 = (T::one() - p2) / n2 + T::one();
            f1 * f2 - T::one()
        }
        EstimatorKind::Or => {
            let q1 = p1 * (T::one() - p1);
            let q2 = p2 * (T::one() - p2);
            let f1 = (T::one() - q1 / (n1 - two + two * p1)) / (n1 - two) + T::one();
            let f2 = (T::one() - q2 / (n2 - two * p2)) / (n2 - two) + T::one();
            f1 * f2 - T::one()
        }
        EstimatorKind::Lrr | EstimatorKind::Lor => crate::design::error_fn(kind, n1, n2)?,
    })
}

/// Approximate moments of the pilot ratio `W` for first-stage counts `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioMoments<T> {
    pub mean: T,
    pub mean_inv: T,
    pub var: T,
    pub var_inv: T,
    /// Covariance of `W` and `-1/W`.
    pub cov_neg_inv: T,
}

/// Small-probability moments of the pilot ratio with true ratio `ratio`.
pub fn stage1_ratio_moments<T: Real>(pilot: [u64; 2], ratio: T) -> Result<RatioMoments<T>> {
    if pilot[0] < 3 || pilot[1] < 3 {
        return Err(Error::domain(format!("ratio moments need counts >= 3, got {pilot:?}")));
    }
    check_positive("ratio", ratio)?;
    let n1 = T::count(pilot[0]);
    let n2 = T::count(pilot[1]);
    let one = T::one();
    let two = T::lit(2.0);
    let s = n1 + n2 - one;
    Ok(RatioMoments {
        mean: n2 * ratio / (n1 - one),
        mean_inv: n1 / ((n2 - one) * ratio),
        var: n2 * s * ratio * ratio / ((n1 - two) * (n1 - one) * (n1 - one)),
        var_inv: n1 * s / ((n2 - two) * (n2 - one) * (n2 - one) * ratio * ratio),
        cov_neg_inv: s / ((n1 - one) * (n2 - one)),
    })
}

/// Exact bounds on `E[W]` for the relative-risk pilot ratio.
pub fn stage1_ratio_mean_bounds<T: Real>(pilot: [u64; 2], p1: T, p2: T) -> Result<(T, T)> {
    if pilot[0] < 3 {
        return Err(Error::domain("mean bounds need n1 >= 3"));
    }
    check_prob("p1", p1)?;
    check_prob("p2", p2)?;
    let half = T::lit(0.5);
    let n1 = T::count(pilot[0]);
    let n2 = T::count(pilot[1]);
    let one = T::one();
    let lead = n2 * (p1 / p2) / (n1 - one) * (one - half * p2 / n2);
    let lo = lead * (one - p1 / (n1 - T::lit(2.0)));
    let hi = lead * (one - half * p1 / (n1 - one + p1));
    Ok((lo, hi))
}

/// Variance of the factory-based first-stage draw count.
pub fn factory_count_variance<T: Real>(successes: u64, pbreve: T) -> T {
    (T::lit(9.0) - T::lit(14.0) * pbreve) * T::count(successes) / (T::lit(4.0) * pbreve * pbreve)
}

/// The four normalized summands bounding the variance of `N1/m1 - N2/m2`.
///
/// Normalized by `scale² m1 m2`, in the small-probability limit. The fourth
/// is the Cauchy–Schwarz bound on the cross term.
pub fn variance_decomposition<T: Real>(
    kind: EstimatorKind,
    target: T,
    size_ratio: T,
    ratio: T,
) -> Result<[T; 4]> {
    check_positive("tarsara", size_ratio)?;
    check_positive("ratio", ratio)?;
    let n = select_suf1(kind, target)?;
    let c = kind.constants::<T>();
    let nf = T::count(n);
    let x = size_ratio * ratio;
    let one = T::one();
    let two = T::lit(2.0);
    let inv = one / target;
    let k = size_constant(kind, target, n);
    let (s1, s2, s3) = if kind.uses_factory() {
        let alpha = T::count(kind.alpha());
        let s1 = T::lit(9.0 / 4.0) * nf * (one / x + x);
        let s2 = (inv + c.c1 + one) / x + x * (inv + c.c1 + one - alpha) + two * k;
        let s3 = k * k * (two * nf - one) * ((x + one / x) / (nf * (nf - two)) + two / (nf * nf));
        (s1, s2, s3)
    } else {
        let d = c.c1 - c.c2;
        let s1 = nf / x + (nf + d) * x;
        let s2 = (inv + c.c1 + one) / x + x * (inv + c.c2 + one) + two * (inv + nf + c.c1 + one);
        let s3 = k * k
            * (two * nf + d - one)
            * (x / ((nf - two) * (nf + d)) + one / (x * nf * (nf + d - two)) + two / (nf * (nf + d)));
        (s1, s2, s3)
    };
    Ok([s1, s2, s3, two * (s1 * s3).sqrt()])
}

/// Third summand rebuilt from the first-order coefficients and ratio moments.
pub fn variance_ratio_term<T: Real>(kind: EstimatorKind, target: T, size_ratio: T, ratio: T) -> Result<T> {
    let design = DesignParams::derive(kind, target, size_ratio)?;
    let fo = first_order_coeffs(&design);
    let mo = stage1_ratio_moments(design.pilot, ratio)?;
    let x = size_ratio * ratio;
    let (s1, s2) = (fo.slope[0], fo.slope[1]);
    Ok(s1 * s1 * mo.var / x + x * s2 * s2 * mo.var_inv + T::lit(2.0) * s1 * s2 * mo.cov_neg_inv)
}

/// How sample sizes are paired in a theory evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SizeMode<T> {
    Element { size_ratio: T },
    Grouped(GroupConfig),
}

impl<T: Real> SizeMode<T> {
    pub fn size_ratio(&self) -> T {
        match self {
            SizeMode::Element { size_ratio } => *size_ratio,
            SizeMode::Grouped(g) => g.size_ratio(),
        }
    }

    pub fn groups(&self) -> Option<GroupConfig> {
        match self {
            SizeMode::Element { .. } => None,
            SizeMode::Grouped(g) => Some(*g),
        }
    }
}

/// All theoretical quantities for one configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryPoint<T> {
    pub kind: EstimatorKind,
    pub target: T,
    pub mode: SizeMode<T>,
    pub p: [T; 2],
    pub ratio: T,
    pub scale: T,
    pub pilot: [u64; 2],
    /// Bounds on the normalized mean sample sizes.
    pub size_bound: [T; 2],
    pub efficiency_bound: T,
    pub crossing_ratio: T,
    /// Normalized approximate mean number of groups.
    pub groups_approx: Option<T>,
    pub group_efficiency: Option<T>,
}

impl<T: Real> TheoryPoint<T> {
    pub fn compute(kind: EstimatorKind, target: T, mode: SizeMode<T>, p1: T, p2: T) -> Result<Self> {
        let design = DesignParams::derive(kind, target, mode.size_ratio())?;
        let (ratio, scale) = ratio_scale(kind, p1, p2)?;
        let size_ratio = mode.size_ratio();
        let (groups_approx, group_efficiency) = match mode.groups() {
            Some(g) => (
                Some(expected_groups_approx(kind, target, g, ratio)?.total()),
                Some(efficiency_group_approx(kind, target, g, p1, p2)?),
            ),
            None => (None, None),
        };
        Ok(Self {
            kind,
            target,
            mode,
            p: [p1, p2],
            ratio,
            scale,
            pilot: design.pilot,
            size_bound: avg_size_bound(kind, target, size_ratio, ratio)?,
            efficiency_bound: efficiency_bound_element(kind, target, size_ratio, ratio, scale)?,
            crossing_ratio: crossing_ratio(kind, target, size_ratio, ratio)?,
            groups_approx,
            group_efficiency,
        })
    }
}
