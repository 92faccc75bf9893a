//! Observation sources, the per-population sample ledger, inverse binomial
//! sampling and keyed random streams.

use std::fmt;
use std::io::{BufRead, Write};

use rand::distributions::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default per-call draw budget for inverse binomial sampling.
pub const DEFAULT_DRAW_CAP: u64 = 1_000_000_000;

/// One of the two sampled populations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Population {
    One,
    Two,
}

impl Population {
    pub const BOTH: [Population; 2] = [Population::One, Population::Two];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Population::One => 0,
            Population::Two => 1,
        }
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

/// Estimation stage a draw is attributed to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Stage {
    #[default]
    One,
    Two,
}

impl Stage {
    #[inline]
    fn index(self) -> usize {
        match self {
            Stage::One => 0,
            Stage::Two => 1,
        }
    }
}

/// Draw counts per population and stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleLedger {
    counts: [[u64; 2]; 2],
}

impl SampleLedger {
    #[inline]
    pub fn record(&mut self, pop: Population, stage: Stage) {
        self.counts[pop.index()][stage.index()] += 1;
    }

    pub fn count(&self, pop: Population, stage: Stage) -> u64 {
        self.counts[pop.index()][stage.index()]
    }

    /// All draws from `pop`.
    pub fn total(&self, pop: Population) -> u64 {
        let c = self.counts[pop.index()];
        c[0] + c[1]
    }

    pub fn totals(&self) -> [u64; 2] {
        [self.total(Population::One), self.total(Population::Two)]
    }

    pub fn stage_totals(&self, stage: Stage) -> [u64; 2] {
        [self.count(Population::One, stage), self.count(Population::Two, stage)]
    }
}

/// A supplier of Bernoulli observations from two populations.
///
/// Every successful `draw` records exactly one ledger entry for the
/// population and current stage.
pub trait SampleSource {
    fn draw(&mut self, pop: Population) -> Result<bool>;
    fn ledger(&self) -> &SampleLedger;
    fn stage(&self) -> Stage;
    fn set_stage(&mut self, stage: Stage);

    /// Per-call limit used by inverse binomial sampling.
    fn draw_cap(&self) -> u64 {
        DEFAULT_DRAW_CAP
    }
}

impl<S: SampleSource + ?Sized> SampleSource for &mut S {
    #[inline]
    fn draw(&mut self, pop: Population) -> Result<bool> {
        (**self).draw(pop)
    }
    fn ledger(&self) -> &SampleLedger {
        (**self).ledger()
    }
    fn stage(&self) -> Stage {
        (**self).stage()
    }
    fn set_stage(&mut self, stage: Stage) {
        (**self).set_stage(stage)
    }
    fn draw_cap(&self) -> u64 {
        (**self).draw_cap()
    }
}

#[inline]
fn ibs_until<S: SampleSource + ?Sized>(
    source: &mut S,
    pop: Population,
    target: u64,
    want: bool,
) -> Result<u64> {
    if target == 0 {
        return Err(Error::domain("inverse binomial sampling needs a positive target"));
    }
    let cap = source.draw_cap();
    let mut hits = 0u64;
    let mut draws = 0u64;
    while hits < target {
        if draws >= cap {
            return Err(Error::DrawCap {
                population: pop,
                cap,
                ledger: *source.ledger(),
            });
        }
        let bit = source.draw(pop)?;
        draws += 1;
        hits += u64::from(bit == want);
    }
    Ok(draws)
}

/// Draws from `pop` until `successes` successes; returns the number of draws.
pub fn ibs_count<S: SampleSource + ?Sized>(source: &mut S, pop: Population, successes: u64) -> Result<u64> {
    ibs_until(source, pop, successes, true)
}

/// Draws from `pop` until `failures` failures; returns the number of draws.
pub fn ibs_failures_count<S: SampleSource + ?Sized>(
    source: &mut S,
    pop: Population,
    failures: u64,
) -> Result<u64> {
    ibs_until(source, pop, failures, false)
}

/// Sub-stream identifiers within one replication.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum StreamTag {
    PopulationOne = 1,
    PopulationTwo = 2,
    Rounding = 3,
    Factory = 4,
}

impl StreamTag {
    pub fn population(pop: Population) -> Self {
        match pop {
            Population::One => StreamTag::PopulationOne,
            Population::Two => StreamTag::PopulationTwo,
        }
    }
}

/// Key of a counter-based random stream: one per (seed, cell, replication, tag).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub cell: u64,
    pub replication: u64,
}

const STREAM_DOMAIN: [u8; 16] = *b"seqratio/streams";

impl StreamKey {
    pub fn new(seed: u64, cell: u64, replication: u64) -> Self {
        Self { seed, cell, replication }
    }

    /// The generator for sub-stream `tag`; independent of any other stream.
    pub fn rng(&self, tag: StreamTag) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.cell.to_le_bytes());
        key[16..].copy_from_slice(&STREAM_DOMAIN);
        let mut rng = ChaCha8Rng::from_seed(key);
        debug_assert!(self.replication < 1 << 56);
        rng.set_stream((self.replication << 8) | tag as u64);
        rng
    }
}

fn check_prob(field: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must lie strictly between 0 and 1, got {p}")))
    }
}

/// Pseudo-random Bernoulli observations with known success probabilities.
#[derive(Clone, Debug)]
pub struct SyntheticSource {
    dists: [Bernoulli; 2],
    probs: [f64; 2],
    rngs: [ChaCha8Rng; 2],
    ledger: SampleLedger,
    stage: Stage,
    cap: u64,
}

impl SyntheticSource {
    /// Source with one independent stream per population.
    pub fn new(p1: f64, p2: f64, rng1: ChaCha8Rng, rng2: ChaCha8Rng) -> Result<Self> {
        check_prob("p1", p1)?;
        check_prob("p2", p2)?;
        let dist = |p: f64| Bernoulli::new(p).map_err(|e| Error::domain(e.to_string()));
        Ok(Self {
            dists: [dist(p1)?, dist(p2)?],
            probs: [p1, p2],
            rngs: [rng1, rng2],
            ledger: SampleLedger::default(),
            stage: Stage::One,
            cap: DEFAULT_DRAW_CAP,
        })
    }

    /// Source whose population streams come from `key`.
    pub fn from_key(p1: f64, p2: f64, key: StreamKey) -> Result<Self> {
        Self::new(
            p1,
            p2,
            key.rng(StreamTag::PopulationOne),
            key.rng(StreamTag::PopulationTwo),
        )
    }

    pub fn with_draw_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn probs(&self) -> [f64; 2] {
        self.probs
    }
}

impl SampleSource for SyntheticSource {
    #[inline]
    fn draw(&mut self, pop: Population) -> Result<bool> {
        let i = pop.index();
        self.ledger.record(pop, self.stage);
        Ok(self.dists[i].sample(&mut self.rngs[i]))
    }
    fn ledger(&self) -> &SampleLedger {
        &self.ledger
    }
    fn stage(&self) -> Stage {
        self.stage
    }
    fn set_stage(&mut self, stage: Stage) {
        self.stage = stage;
    }
    fn draw_cap(&self) -> u64 {
        self.cap
    }
}

/// Fixed bit sequences per population, optionally repeated forever.
#[derive(Clone, Debug, Default)]
pub struct ScriptedSource {
    bits: [Vec<bool>; 2],
    pos: [usize; 2],
    cycle: bool,
    ledger: SampleLedger,
    stage: Stage,
    cap: Option<u64>,
}

impl ScriptedSource {
    pub fn new(bits1: Vec<bool>, bits2: Vec<bool>) -> Self {
        Self {
            bits: [bits1, bits2],
            ..Self::default()
        }
    }

    /// Every draw from population `i` returns `bits[i]`.
    pub fn constant(bit1: bool, bit2: bool) -> Self {
        Self {
            bits: [vec![bit1], vec![bit2]],
            cycle: true,
            ..Self::default()
        }
    }

    /// Repeats each sequence once it is used up.
    pub fn cycled(mut self) -> Self {
        self.cycle = true;
        self
    }

    pub fn with_draw_cap(mut self, cap: u64) -> Self {
        self.cap = Some(cap);
        self
    }
}

impl SampleSource for ScriptedSource {
    fn draw(&mut self, pop: Population) -> Result<bool> {
        let i = pop.index();
        let seq = &self.bits[i];
        if self.pos[i] >= seq.len() {
            if self.cycle && !seq.is_empty() {
                self.pos[i] = 0;
            } else {
                return Err(Error::SourceExhausted {
                    population: pop,
                    ledger: self.ledger,
                });
            }
        }
        let bit = seq[self.pos[i]];
        self.pos[i] += 1;
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
    }
    fn draw_cap(&self) -> u64 {
        self.cap.unwrap_or(DEFAULT_DRAW_CAP)
    }
}

/// Line protocol: writes `? 1` or `? 2`, reads back `1` or `0`.
#[derive(Debug)]
pub struct ExternalSource<R, W> {
    reader: R,
    writer: W,
    line: String,
    ledger: SampleLedger,
    stage: Stage,
    cap: u64,
}

impl<R: BufRead, W: Write> ExternalSource<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            reader,
            writer,
            line: String::new(),
            ledger: SampleLedger::default(),
            stage: Stage::One,
            cap: DEFAULT_DRAW_CAP,
        }
    }

    pub fn with_draw_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn into_inner(self) -> (R, W) {
        (self.reader, self.writer)
    }
}

impl<R: BufRead, W: Write> SampleSource for ExternalSource<R, W> {
    fn draw(&mut self, pop: Population) -> Result<bool> {
        writeln!(self.writer, "? {pop}")?;
        self.writer.flush()?;
        self.line.clear();
        let n = self.reader.read_line(&mut self.line)?;
        if n == 0 {
            return Err(Error::SourceExhausted {
                population: pop,
                ledger: self.ledger,
            });
        }
        let bit = match self.line.trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Protocol(format!(
                    "expected `0` or `1` for population {pop}, got {other:?}"
                )))
            }
        };
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
    }
    fn draw_cap(&self) -> u64 {
        self.cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn ibs_degenerate_sources() {
        let mut s = ScriptedSource::constant(true, false);
        assert_eq!(ibs_count(&mut s, Population::One, 5).unwrap(), 5);
        assert_eq!(ibs_failures_count(&mut s, Population::Two, 4).unwrap(), 4);
        assert_eq!(s.ledger().totals(), [5, 4]);
        let mut s = ScriptedSource::new(vec![true], vec![]);
        assert_eq!(ibs_count(&mut s, Population::One, 1).unwrap(), 1);
    }

    #[test]
    fn ibs_counts_scripted_sequence() {
        let bits = vec![false, true, false, false, true, true];
        let mut s = ScriptedSource::new(bits.clone(), bits);
        assert_eq!(ibs_count(&mut s, Population::One, 3).unwrap(), 6);
        assert_eq!(ibs_failures_count(&mut s, Population::Two, 3).unwrap(), 4);
    }

    #[test]
    fn ibs_rejects_zero_target() {
        let mut s = ScriptedSource::constant(true, true);
        assert!(ibs_count(&mut s, Population::One, 0).is_err());
    }

    #[test]
    fn draw_cap_aborts_with_ledger() {
        let mut s = ScriptedSource::constant(false, false).with_draw_cap(100);
        s.set_stage(Stage::Two);
        match ibs_count(&mut s, Population::Two, 1) {
            Err(Error::DrawCap { population, cap, ledger }) => {
                assert_eq!(population, Population::Two);
                assert_eq!(cap, 100);
                assert_eq!(ledger.count(Population::Two, Stage::Two), 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exhaustion_reports_partial_ledger() {
        let mut s = ScriptedSource::new(vec![false, false], vec![]);
        let err = ibs_count(&mut s, Population::One, 1).unwrap_err();
        assert_eq!(err.ledger().unwrap().total(Population::One), 2);
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn ledger_attributes_stage() {
        let mut s = ScriptedSource::constant(true, true);
        ibs_count(&mut s, Population::One, 3).unwrap();
        s.set_stage(Stage::Two);
        ibs_count(&mut s, Population::One, 2).unwrap();
        ibs_count(&mut s, Population::Two, 4).unwrap();
        let l = s.ledger();
        assert_eq!(l.count(Population::One, Stage::One), 3);
        assert_eq!(l.count(Population::One, Stage::Two), 2);
        assert_eq!(l.count(Population::Two, Stage::Two), 4);
        assert_eq!(l.totals(), [5, 4]);
    }

    #[test]
    fn external_protocol_round_trip() {
        let input = b"1\n0\n 1 \n".to_vec();
        let mut out = Vec::new();
        {
            let mut src = ExternalSource::new(&input[..], &mut out);
            assert_eq!(ibs_count(&mut src, Population::Two, 2).unwrap(), 3);
            assert!(matches!(
                src.draw(Population::One),
                Err(Error::SourceExhausted { .. })
            ));
        }
        assert_eq!(String::from_utf8(out).unwrap(), "? 2\n? 2\n? 2\n? 1\n");
    }

    #[test]
    fn external_protocol_rejects_garbage() {
        let input = b"yes\n".to_vec();
        let mut src = ExternalSource::new(&input[..], Vec::new());
        let err = src.draw(Population::One).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        assert_eq!(err.exit_code(), 3);
        assert_eq!(src.ledger().totals(), [0, 0]);
    }

    #[test]
    fn synthetic_rejects_boundary_probabilities() {
        let key = StreamKey::new(1, 0, 0);
        assert!(SyntheticSource::from_key(0.0, 0.5, key).is_err());
        assert!(SyntheticSource::from_key(0.5, 1.0, key).is_err());
        assert!(SyntheticSource::from_key(0.5, f64::NAN, key).is_err());
    }

    #[test]
    fn streams_are_keyed_and_reproducible() {
        let k = StreamKey::new(7, 3, 11);
        let a = k.rng(StreamTag::Rounding).next_u64();
        assert_eq!(a, k.rng(StreamTag::Rounding).next_u64());
        assert_ne!(a, k.rng(StreamTag::Factory).next_u64());
        assert_ne!(a, StreamKey::new(7, 3, 12).rng(StreamTag::Rounding).next_u64());
        assert_ne!(a, StreamKey::new(7, 4, 11).rng(StreamTag::Rounding).next_u64());
        assert_ne!(a, StreamKey::new(8, 3, 11).rng(StreamTag::Rounding).next_u64());
    }
}
