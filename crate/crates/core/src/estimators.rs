//! The two-stage estimation procedure and the point estimators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::design::{error_fn, round_sus, solve_sus, DesignParams, EstimatorKind, SecondStageParams, SecondStageReal};
use crate::error::{Error, Result};
use crate::sampling::{ibs_count, ibs_failures_count, Population, SampleLedger, SampleSource, Stage, StreamKey, StreamTag};
use crate::scalar::Real;
use crate::special::harmonic;

/// Auxiliary randomness, kept apart from the observation streams.
#[derive(Clone, Debug)]
pub struct AuxStreams<R> {
    /// Coin choosing the factory branch.
    pub factory: R,
    /// Coin choosing the rounding order.
    pub rounding: R,
}

impl AuxStreams<ChaCha8Rng> {
    pub fn from_key(key: StreamKey) -> Self {
        Self {
            factory: key.rng(StreamTag::Factory),
            rounding: key.rng(StreamTag::Rounding),
        }
    }
}

/// Outcome of the first stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageOneResult<T> {
    /// Trials needed per population; factory outputs for the odds-ratio kinds.
    pub counts: [u64; 2],
    /// Pilot ratio estimate.
    pub ratio: T,
}

/// Second-stage draw counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageTwoCounts {
    /// One inverse binomial run per population.
    Single([u64; 2]),
    /// A success-targeted and a failure-targeted run per population.
    Split { successes: [u64; 2], failures: [u64; 2] },
}

/// Full record of one estimation run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateResult<T> {
    pub kind: EstimatorKind,
    pub estimate: T,
    pub stage1: StageOneResult<T>,
    pub sus_real: SecondStageReal<T>,
    pub sus: SecondStageParams,
    pub stage2: StageTwoCounts,
    pub ledger: SampleLedger,
}

/// Turns Bernoulli(p) draws into one Bernoulli(p(1-p)) output.
///
/// Uses 3/2 input draws on average, for every `p`.
pub fn bernoulli_factory_pq<S, R>(source: &mut S, pop: Population, rng: &mut R) -> Result<bool>
where
    S: SampleSource + ?Sized,
    R: Rng + ?Sized,
{
    let first = source.draw(pop)?;
    if rng.gen::<bool>() {
        if !first {
            return Ok(false);
        }
        Ok(!source.draw(pop)?)
    } else {
        if first {
            return Ok(false);
        }
        source.draw(pop)
    }
}

fn factory_ibs<S, R>(source: &mut S, pop: Population, successes: u64, rng: &mut R) -> Result<u64>
where
    S: SampleSource + ?Sized,
    R: Rng + ?Sized,
{
    let cap = source.draw_cap();
    let mut hits = 0;
    let mut outputs = 0u64;
    while hits < successes {
        if outputs >= cap {
            return Err(Error::DrawCap {
                population: pop,
                cap,
                ledger: *source.ledger(),
            });
        }
        outputs += 1;
        hits += u64::from(bernoulli_factory_pq(source, pop, rng)?);
    }
    Ok(outputs)
}

/// First stage: inverse binomial sampling for the pilot counts.
pub fn run_stage1<T, S, R>(design: &DesignParams<T>, source: &mut S, factory_rng: &mut R) -> Result<StageOneResult<T>>
where
    T: Real,
    S: SampleSource + ?Sized,
    R: Rng + ?Sized,
{
    source.set_stage(Stage::One);
    let mut counts = [0u64; 2];
    for pop in Population::BOTH {
        let target = design.pilot[pop.index()];
        counts[pop.index()] = if design.kind.uses_factory() {
            factory_ibs(source, pop, target, factory_rng)?
        } else {
            ibs_count(source, pop, target)?
        };
    }
    Ok(StageOneResult {
        counts,
        ratio: design.pilot_ratio(counts)?,
    })
}

/// Second stage for rounded success counts `sus`.
pub fn run_stage2<S: SampleSource + ?Sized>(
    kind: EstimatorKind,
    sus: SecondStageParams,
    source: &mut S,
) -> Result<StageTwoCounts> {
    let c = kind.constants::<f64>();
    let [n1, n2] = sus.sus;
    if !(n1 as f64 > c.c1 && n2 as f64 > c.c2) {
        return Err(Error::domain(format!("second-stage counts {:?} invalid for {kind}", sus.sus)));
    }
    source.set_stage(Stage::Two);
    if kind.uses_factory() {
        let alpha = kind.alpha();
        let s1 = ibs_count(source, Population::One, n1)?;
        let f1 = ibs_failures_count(source, Population::One, n1 - alpha)?;
        let s2 = ibs_count(source, Population::Two, n2 - alpha)?;
        let f2 = ibs_failures_count(source, Population::Two, n2)?;
        Ok(StageTwoCounts::Split {
            successes: [s1, s2],
            failures: [f1, f2],
        })
    } else {
        let m1 = ibs_count(source, Population::One, n1)?;
        let m2 = ibs_count(source, Population::Two, n2)?;
        Ok(StageTwoCounts::Single([m1, m2]))
    }
}

/// Point estimate from second-stage targets and draw counts.
pub fn point_estimate<T: Real>(kind: EstimatorKind, sus: SecondStageParams, counts: &StageTwoCounts) -> Result<T> {
    let [n1, n2] = sus.sus;
    let f = T::count;
    let h = |n: u64| harmonic::<T>(n - 1);
    match (kind, counts) {
        (EstimatorKind::Rr, StageTwoCounts::Single([m1, m2])) => {
            Ok(f(n1 - 1) * f(*m2) / (f(n2) * f(m1 - 1)))
        }
        (EstimatorKind::Lrr, StageTwoCounts::Single([m1, m2])) => {
            Ok((h(n1) - h(*m1)) + (h(*m2) - h(n2)))
        }
        (EstimatorKind::Or, StageTwoCounts::Split { successes: [s1, s2], failures: [f1, f2] }) => {
            let num = f(n1 - 1) * f(n2 - 1) * f(*f1) * f(*s2);
            let den = f(n1 - 2) * f(n2 - 2) * f(s1 - 1) * f(f2 - 1);
            Ok(num / den)
        }
        (EstimatorKind::Lor, StageTwoCounts::Split { successes: [s1, s2], failures: [f1, f2] }) => {
            Ok((h(*f1) - h(*s1)) + (h(*s2) - h(*f2)))
        }
        _ => Err(Error::domain(format!("second-stage counts do not match estimator {kind}"))),
    }
}

/// Runs both stages and returns the estimate with its full record.
pub fn estimate<T, S, R>(design: &DesignParams<T>, source: &mut S, aux: &mut AuxStreams<R>) -> Result<EstimateResult<T>>
where
    T: Real,
    S: SampleSource + ?Sized,
    R: Rng,
{
    let stage1 = run_stage1(design, source, &mut aux.factory)?;
    let sus_real = solve_sus(design, stage1.ratio)?;
    let sus = round_sus(&sus_real, design, &mut aux.rounding)?;
    debug_assert!(error_fn(design.kind, T::count(sus.sus[0]), T::count(sus.sus[1]))? <= design.target);
    let stage2 = run_stage2(design.kind, sus, source)?;
    let estimate = point_estimate(design.kind, sus, &stage2)?;
    Ok(EstimateResult {
        kind: design.kind,
        estimate,
        stage1,
        sus_real,
        sus,
        stage2,
        ledger: *source.ledger(),
    })
}
