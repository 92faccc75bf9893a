//! Group sampling: observations arrive in fixed-size batches from both
//! populations, and the element-level procedure consumes them from buffers.

use std::collections::VecDeque;

use rand::Rng;

use crate::design::DesignParams;
use crate::error::{Error, Result};
use crate::estimators::{estimate, AuxStreams, EstimateResult};
use crate::sampling::{Population, SampleLedger, SampleSource, Stage};
use crate::scalar::Real;

/// Buffered observations above which a warning is logged.
pub const BUFFER_WARN_BITS: usize = 100_000_000;

/// Observations per group from each population.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GroupConfig {
    pub sizes: [u64; 2],
}

impl GroupConfig {
    pub fn new(m1: u64, m2: u64) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::config("groups", format!("group sizes must be positive, got ({m1}, {m2})")));
        }
        Ok(Self { sizes: [m1, m2] })
    }

    /// The sample-size ratio implied by the group composition.
    pub fn size_ratio<T: Real>(&self) -> T {
        T::count(self.sizes[0]) / T::count(self.sizes[1])
    }

    /// Groups needed to serve element demands `demand`.
    pub fn groups_for(&self, demand: [u64; 2]) -> u64 {
        demand[0]
            .div_ceil(self.sizes[0])
            .max(demand[1].div_ceil(self.sizes[1]))
    }
}

/// Group accounting after a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupUsage {
    pub groups: u64,
    /// Observations consumed by the estimator.
    pub demand: [u64; 2],
    /// Observations acquired but never used.
    pub discarded: [u64; 2],
}

/// Wraps an element source and acquires its observations group by group.
///
/// The ledger of this source counts observations consumed; the inner source's
/// ledger counts observations acquired.
#[derive(Debug)]
pub struct GroupedSource<S> {
    inner: S,
    config: GroupConfig,
    buffers: [VecDeque<bool>; 2],
    groups: u64,
    ledger: SampleLedger,
    stage: Stage,
    warned: bool,
}

impl<S: SampleSource> GroupedSource<S> {
    pub fn new(inner: S, config: GroupConfig) -> Self {
        Self {
            inner,
            config,
            buffers: [VecDeque::new(), VecDeque::new()],
            groups: 0,
            ledger: SampleLedger::default(),
            stage: Stage::One,
            warned: false,
        }
    }

    pub fn config(&self) -> GroupConfig {
        self.config
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn into_inner(self) -> S {
        self.inner
    }

    pub fn usage(&self) -> GroupUsage {
        GroupUsage {
            groups: self.groups,
            demand: self.ledger.totals(),
            discarded: [self.buffers[0].len() as u64, self.buffers[1].len() as u64],
        }
    }

    fn fetch_group(&mut self) -> Result<()> {
        for pop in Population::BOTH {
            for _ in 0..self.config.sizes[pop.index()] {
                let bit = self.inner.draw(pop)?;
                self.buffers[pop.index()].push_back(bit);
            }
        }
        self.groups += 1;
        let buffered = self.buffers[0].len() + self.buffers[1].len();
        if buffered > BUFFER_WARN_BITS && !self.warned {
            log::warn!("{buffered} observations buffered after {} groups", self.groups);
            self.warned = true;
        }
        Ok(())
    }
}

impl<S: SampleSource> SampleSource for GroupedSource<S> {
    fn draw(&mut self, pop: Population) -> Result<bool> {
        let i = pop.index();
        if self.buffers[i].is_empty() {
            self.fetch_group()?;
        }
        let bit = self.buffers[i]
            .pop_front()
            .ok_or_else(|| Error::Internal("empty group buffer after fetch".into()))?;
        self.ledger.record(pop, self.stage);
        Ok(bit)
    }
    fn ledger(&self) -> &SampleLedger {
        &self.ledger
    }
    fn stage(&self) -> Stage {
        self.stage
    }
    fn set_stage(&mut self, stage: Stage) {
        self.stage = stage;
        self.inner.set_stage(stage);
    }
    fn draw_cap(&self) -> u64 {
        self.inner.draw_cap()
    }
}

/// Estimate together with its group accounting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupedEstimate<T> {
    pub result: EstimateResult<T>,
    pub usage: GroupUsage,
}

/// Runs the estimator on grouped observations.
///
/// The design's size ratio must equal `m1/m2`.
pub fn estimate_grouped<T, S, R>(
    design: &DesignParams<T>,
    source: &mut GroupedSource<S>,
    aux: &mut AuxStreams<R>,
) -> Result<GroupedEstimate<T>>
where
    T: Real,
    S: SampleSource,
    R: Rng,
{
    let want = source.config().size_ratio::<T>();
    if ((design.size_ratio - want) / want).abs() > T::lit(1e-12) {
        return Err(Error::config(
            "tarsara",
            format!("design ratio {} differs from group ratio {want}", design.size_ratio),
        ));
    }
    let result = estimate(design, source, aux)?;
    Ok(GroupedEstimate {
        result,
        usage: source.usage(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::EstimatorKind;
    use crate::sampling::{ScriptedSource, StreamKey, SyntheticSource};

    #[test]
    fn group_config_validation() {
        assert!(GroupConfig::new(0, 1).is_err());
        let g = GroupConfig::new(2, 5).unwrap();
        assert_eq!(g.size_ratio::<f64>(), 0.4);
        assert_eq!(g.groups_for([7, 5]), 4);
        assert_eq!(g.groups_for([1, 11]), 3);
    }

    #[test]
    fn groups_follow_demand() {
        let inner = ScriptedSource::constant(true, false);
        let mut g = GroupedSource::new(inner, GroupConfig::new(3, 1).unwrap());
        for _ in 0..4 {
            g.draw(Population::One).unwrap();
        }
        let u = g.usage();
        assert_eq!(u.groups, 2);
        assert_eq!(u.demand, [4, 0]);
        assert_eq!(u.discarded, [2, 2]);
        assert_eq!(g.inner().ledger().totals(), [6, 2]);
    }

    #[test]
    fn mismatched_ratio_is_rejected() {
        let d = DesignParams::derive(EstimatorKind::Rr, 0.1f64, 1.0).unwrap();
        let key = StreamKey::new(0, 0, 0);
        let inner = SyntheticSource::from_key(0.3, 0.3, key).unwrap();
        let mut g = GroupedSource::new(inner, GroupConfig::new(2, 1).unwrap());
        let err = estimate_grouped(&d, &mut g, &mut AuxStreams::from_key(key)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
