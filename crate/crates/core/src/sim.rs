//! Monte Carlo experiments over parameter grids, summary statistics and CSV
//! output.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::design::{DesignParams, EstimatorKind};
use crate::error::{Error, Result};
use crate::estimators::{estimate, AuxStreams, EstimateResult};
use crate::group::{estimate_grouped, GroupedSource};
use crate::sampling::{Stage, StreamKey, SyntheticSource, DEFAULT_DRAW_CAP};
use crate::theory::{
    empirical_efficiency_element, empirical_efficiency_group, ratio_scale, SizeMode, TheoryPoint,
};

/// Replications per work unit; fixed so results do not depend on thread count.
pub const CHUNK: u64 = 1024;

/// Default replications per cell, and with `--full`.
pub const DEFAULT_REPS: u64 = 100_000;
pub const FULL_REPS: u64 = 1_000_000;

/// A grid of cells: every target crossed with every probability pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub kind: EstimatorKind,
    pub targets: Vec<f64>,
    pub mode: SizeMode<f64>,
    pub grid: Vec<[f64; 2]>,
    pub reps: u64,
    pub seed: u64,
    pub threads: Option<usize>,
    pub draw_cap: u64,
}

impl ExperimentSpec {
    pub fn new(kind: EstimatorKind, targets: Vec<f64>, mode: SizeMode<f64>, grid: Vec<[f64; 2]>) -> Self {
        Self {
            kind,
            targets,
            mode,
            grid,
            reps: DEFAULT_REPS,
            seed: 1,
            threads: None,
            draw_cap: DEFAULT_DRAW_CAP,
        }
    }

    pub fn reps(mut self, reps: u64) -> Self {
        self.reps = reps;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::config("tarvar", "no target values"));
        }
        if self.grid.is_empty() {
            return Err(Error::config("grid", "no probability pairs"));
        }
        if self.reps == 0 {
            return Err(Error::config("reps", "must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be positive"));
        }
        for &[p1, p2] in &self.grid {
            ratio_scale(self.kind, p1, p2)?;
        }
        for &t in &self.targets {
            DesignParams::derive(self.kind, t, self.mode.size_ratio())?;
        }
        Ok(())
    }
}

/// Stable identifier of a cell configuration, used to key its streams.
pub fn cell_id(kind: EstimatorKind, target: f64, mode: &SizeMode<f64>, p: [f64; 2]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(kind.as_str().as_bytes());
    eat(&target.to_bits().to_le_bytes());
    match mode {
        SizeMode::Element { size_ratio } => {
            eat(b"e");
            eat(&size_ratio.to_bits().to_le_bytes());
        }
        SizeMode::Grouped(g) => {
            eat(b"g");
            eat(&g.sizes[0].to_le_bytes());
            eat(&g.sizes[1].to_le_bytes());
        }
    }
    eat(&p[0].to_bits().to_le_bytes());
    eat(&p[1].to_bits().to_le_bytes());
    h
}

/// Running mean and second central moment, mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64 / n as f64);
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Everything kept from one replication.
#[derive(Clone, Copy, Debug)]
struct RepRecord {
    estimate: f64,
    demand: [u64; 2],
    stage1: [u64; 2],
    groups: Option<u64>,
    identity_ok: bool,
    discard_ok: bool,
    sus_real: [f64; 2],
    sus: [u64; 2],
    abs_diff: f64,
    abs_diff_surrogate: f64,
}

/// Aggregated statistics of one cell.
#[derive(Clone, Debug, Default)]
pub struct CellAccumulator {
    pub error: Moments,
    pub sq_error: Moments,
    pub estimate: Moments,
    pub size: [Moments; 2],
    pub size_total: [u64; 2],
    pub stage1: [Moments; 2],
    pub groups: Moments,
    pub groups_total: u64,
    pub sus_real: [Moments; 2],
    pub sus_hist: [BTreeMap<u64, u64>; 2],
    pub identity_violations: u64,
    pub discard_violations: u64,
    pub abs_diff: Moments,
    pub abs_diff_surrogate: Moments,
}

impl CellAccumulator {
    fn push(&mut self, rec: &RepRecord, truth: f64, relative: bool) {
        let e = if relative {
            (rec.estimate - truth) / truth
        } else {
            rec.estimate - truth
        };
        self.error.push(e);
        self.sq_error.push(e * e);
        self.estimate.push(rec.estimate);
        for i in 0..2 {
            self.size[i].push(rec.demand[i] as f64);
            self.size_total[i] += rec.demand[i];
            self.stage1[i].push(rec.stage1[i] as f64);
            self.sus_real[i].push(rec.sus_real[i]);
            *self.sus_hist[i].entry(rec.sus[i]).or_default() += 1;
        }
        if let Some(g) = rec.groups {
            self.groups.push(g as f64);
            self.groups_total += g;
            self.abs_diff.push(rec.abs_diff);
            self.abs_diff_surrogate.push(rec.abs_diff_surrogate);
        }
        self.identity_violations += u64::from(!rec.identity_ok);
        self.discard_violations += u64::from(!rec.discard_ok);
    }

    fn merge(&mut self, o: &CellAccumulator) {
        self.error.merge(&o.error);
        self.sq_error.merge(&o.sq_error);
        self.estimate.merge(&o.estimate);
        for i in 0..2 {
            self.size[i].merge(&o.size[i]);
            self.size_total[i] += o.size_total[i];
            self.stage1[i].merge(&o.stage1[i]);
            self.sus_real[i].merge(&o.sus_real[i]);
            for (k, v) in &o.sus_hist[i] {
                *self.sus_hist[i].entry(*k).or_default() += v;
            }
        }
        self.groups.merge(&o.groups);
        self.groups_total += o.groups_total;
        self.identity_violations += o.identity_violations;
        self.discard_violations += o.discard_violations;
        self.abs_diff.merge(&o.abs_diff);
        self.abs_diff_surrogate.merge(&o.abs_diff_surrogate);
    }

    /// Most frequent rounded target for population `i` and its frequency.
    pub fn sus_mode(&self, i: usize) -> (u64, f64) {
        let total: u64 = self.sus_hist[i].values().sum();
        let (k, c) = self.sus_hist[i]
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(k, c)| (*k, *c))
            .unwrap_or((0, 0));
        (k, c as f64 / total.max(1) as f64)
    }
}

/// Plain decimal notation with the shortest digits that round-trip.
fn decimal<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn decimal_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.collect_str(x),
        None => s.serialize_none(),
    }
}

/// One CSV row; shared by simulation and theory output.
///
/// Empirical columns are empty for theory rows, group columns for element runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: String,
    pub mode: String,
    #[serde(serialize_with = "decimal")]
    pub target: f64,
    #[serde(serialize_with = "decimal")]
    pub size_ratio: f64,
    pub m1: Option<u64>,
    pub m2: Option<u64>,
    #[serde(serialize_with = "decimal")]
    pub p1: f64,
    #[serde(serialize_with = "decimal")]
    pub p2: f64,
    #[serde(serialize_with = "decimal")]
    pub ratio: f64,
    #[serde(serialize_with = "decimal")]
    pub scale: f64,
    pub pilot1: u64,
    pub pilot2: u64,
    #[serde(serialize_with = "decimal")]
    pub true_value: f64,
    pub reps: Option<u64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mean_estimate: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub se_estimate: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub bias: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub se_bias: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mse: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub se_mse: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mean_n1: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub se_n1: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mean_n2: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub se_n2: Option<f64>,
    pub total_n1: Option<u64>,
    pub total_n2: Option<u64>,
    #[serde(serialize_with = "decimal_opt")]
    pub observed_size_ratio: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub norm_n1: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub norm_n2: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mean_stage1_n1: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub se_stage1_n1: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mean_stage1_n2: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub se_stage1_n2: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mean_sus1_real: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub sd_sus1_real: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mean_sus2_real: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub sd_sus2_real: Option<f64>,
    pub mode_sus1: Option<u64>,
    #[serde(serialize_with = "decimal_opt")]
    pub p_mode_sus1: Option<f64>,
    pub mode_sus2: Option<u64>,
    #[serde(serialize_with = "decimal_opt")]
    pub p_mode_sus2: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub efficiency: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mean_groups: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub se_groups: Option<f64>,
    pub total_groups: Option<u64>,
    #[serde(serialize_with = "decimal_opt")]
    pub norm_groups: Option<f64>,
    pub identity_violations: Option<u64>,
    pub discard_violations: Option<u64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mean_abs_diff: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub mean_abs_diff_surrogate: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub group_efficiency: Option<f64>,
    #[serde(serialize_with = "decimal")]
    pub bound_n1: f64,
    #[serde(serialize_with = "decimal")]
    pub bound_n2: f64,
    #[serde(serialize_with = "decimal")]
    pub efficiency_bound: f64,
    #[serde(serialize_with = "decimal")]
    pub crossing_ratio: f64,
    #[serde(serialize_with = "decimal_opt")]
    pub groups_approx: Option<f64>,
    #[serde(serialize_with = "decimal_opt")]
    pub group_efficiency_approx: Option<f64>,
}

impl SummaryRow {
    /// Theory-only row.
    pub fn from_theory(tp: &TheoryPoint<f64>) -> Self {
        let (mode, m) = match tp.mode {
            SizeMode::Element { .. } => ("element", None),
            SizeMode::Grouped(g) => ("group", Some(g.sizes)),
        };
        SummaryRow {
            kind: tp.kind.to_string(),
            mode: mode.into(),
            target: tp.target,
            size_ratio: tp.mode.size_ratio(),
            m1: m.map(|m| m[0]),
            m2: m.map(|m| m[1]),
            p1: tp.p[0],
            p2: tp.p[1],
            ratio: tp.ratio,
            scale: tp.scale,
            pilot1: tp.pilot[0],
            pilot2: tp.pilot[1],
            true_value: tp.kind.true_value(tp.p[0], tp.p[1]),
            bound_n1: tp.size_bound[0],
            bound_n2: tp.size_bound[1],
            efficiency_bound: tp.efficiency_bound,
            crossing_ratio: tp.crossing_ratio,
            groups_approx: tp.groups_approx,
            group_efficiency_approx: tp.group_efficiency,
            ..Default::default()
        }
    }
}

/// Summary and raw aggregates of one cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub row: SummaryRow,
    pub acc: CellAccumulator,
}

fn stage2_mean(kind: EstimatorKind, sus: [u64; 2], p: [f64; 2]) -> [f64; 2] {
    let n = sus.map(|v| v as f64);
    if kind.uses_factory() {
        let a = kind.alpha() as f64;
        [
            n[0] / p[0] + (n[0] - a) / (1.0 - p[0]),
            (n[1] - a) / p[1] + n[1] / (1.0 - p[1]),
        ]
    } else {
        [n[0] / p[0], n[1] / p[1]]
    }
}

fn run_replication(
    spec: &ExperimentSpec,
    design: &DesignParams<f64>,
    cell: u64,
    p: [f64; 2],
    rep: u64,
) -> Result<RepRecord> {
    let key = StreamKey::new(spec.seed, cell, rep);
    let inner = SyntheticSource::from_key(p[0], p[1], key)?.with_draw_cap(spec.draw_cap);
    let mut aux = AuxStreams::from_key(key);
    let (r, groups): (EstimateResult<f64>, _) = match spec.mode {
        SizeMode::Element { .. } => {
            let mut src = inner;
            (estimate(design, &mut src, &mut aux)?, None)
        }
        SizeMode::Grouped(g) => {
            let mut src = GroupedSource::new(inner, g);
            let ge = estimate_grouped(design, &mut src, &mut aux)?;
            (ge.result, Some((g, ge.usage)))
        }
    };
    let demand = r.ledger.totals();
    let mut rec = RepRecord {
        estimate: r.estimate,
        demand,
        stage1: r.ledger.stage_totals(Stage::One),
        groups: None,
        identity_ok: true,
        discard_ok: true,
        sus_real: r.sus_real.sus,
        sus: r.sus.sus,
        abs_diff: f64::NAN,
        abs_diff_surrogate: f64::NAN,
    };
    if let Some((g, usage)) = groups {
        rec.groups = Some(usage.groups);
        rec.identity_ok = usage.groups == g.groups_for(demand) && usage.demand == demand;
        rec.discard_ok = (0..2).all(|i| usage.groups * g.sizes[i] == demand[i] + usage.discarded[i])
            && (0..2).any(|i| usage.discarded[i] < g.sizes[i]);
        let m = g.sizes.map(|v| v as f64);
        rec.abs_diff = (demand[0] as f64 / m[0] - demand[1] as f64 / m[1]).abs();
        let cost = design.kind.stage1_cost::<f64>();
        let q = if design.kind.uses_factory() {
            [p[0] * (1.0 - p[0]), p[1] * (1.0 - p[1])]
        } else {
            p
        };
        let s2 = stage2_mean(design.kind, r.sus.sus, p);
        let e1 = cost * design.pilot[0] as f64 / q[0] + s2[0];
        let e2 = cost * design.pilot[1] as f64 / q[1] + s2[1];
        rec.abs_diff_surrogate = (e1 / m[0] - e2 / m[1]).abs();
    }
    Ok(rec)
}

fn run_cell(spec: &ExperimentSpec, target: f64, p: [f64; 2]) -> Result<CellResult> {
    let kind = spec.kind;
    let design = DesignParams::derive(kind, target, spec.mode.size_ratio())?;
    let cell = cell_id(kind, target, &spec.mode, p);
    let truth = kind.true_value(p[0], p[1]);
    let relative = !kind.is_log();
    let chunks = spec.reps.div_ceil(CHUNK);
    let parts: Vec<Result<CellAccumulator>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = CellAccumulator::default();
            for rep in c * CHUNK..((c + 1) * CHUNK).min(spec.reps) {
                let rec = run_replication(spec, &design, cell, p, rep)?;
                acc.push(&rec, truth, relative);
            }
            Ok(acc)
        })
        .collect();
    let mut acc = CellAccumulator::default();
    for part in parts {
        acc.merge(&part?);
    }
    let tp = TheoryPoint::compute(kind, target, spec.mode, p[0], p[1])?;
    Ok(CellResult {
        row: summarize(&tp, &acc),
        acc,
    })
}

/// Spread statistics are absent below two replications.
fn se(m: &Moments) -> Option<f64> {
    (m.n >= 2).then(|| m.se())
}

fn sd(m: &Moments) -> Option<f64> {
    (m.n >= 2).then(|| m.sd())
}

fn summarize(tp: &TheoryPoint<f64>, acc: &CellAccumulator) -> SummaryRow {
    let mut row = SummaryRow::from_theory(tp);
    let kind = tp.kind;
    let [p1, p2] = tp.p;
    let mse = acc.sq_error.mean;
    let sizes = [acc.size[0].mean, acc.size[1].mean];
    row.reps = Some(acc.error.n);
    row.mean_estimate = Some(acc.estimate.mean);
    row.se_estimate = se(&acc.estimate);
    row.bias = Some(acc.error.mean);
    row.se_bias = se(&acc.error);
    row.mse = Some(mse);
    row.se_mse = se(&acc.sq_error);
    row.mean_n1 = Some(sizes[0]);
    row.se_n1 = se(&acc.size[0]);
    row.mean_n2 = Some(sizes[1]);
    row.se_n2 = se(&acc.size[1]);
    row.total_n1 = Some(acc.size_total[0]);
    row.total_n2 = Some(acc.size_total[1]);
    row.observed_size_ratio = Some(sizes[0] / sizes[1]);
    row.norm_n1 = Some(sizes[0] * tp.scale);
    row.norm_n2 = Some(sizes[1] * tp.scale);
    row.mean_stage1_n1 = Some(acc.stage1[0].mean);
    row.se_stage1_n1 = se(&acc.stage1[0]);
    row.mean_stage1_n2 = Some(acc.stage1[1].mean);
    row.se_stage1_n2 = se(&acc.stage1[1]);
    row.mean_sus1_real = Some(acc.sus_real[0].mean);
    row.sd_sus1_real = sd(&acc.sus_real[0]);
    row.mean_sus2_real = Some(acc.sus_real[1].mean);
    row.sd_sus2_real = sd(&acc.sus_real[1]);
    let (m1, f1) = acc.sus_mode(0);
    let (m2, f2) = acc.sus_mode(1);
    row.mode_sus1 = Some(m1);
    row.p_mode_sus1 = Some(f1);
    row.mode_sus2 = Some(m2);
    row.p_mode_sus2 = Some(f2);
    row.efficiency = empirical_efficiency_element(kind, p1, p2, sizes, mse).ok();
    if let SizeMode::Grouped(g) = tp.mode {
        let mg = acc.groups.mean;
        row.mean_groups = Some(mg);
        row.se_groups = se(&acc.groups);
        row.total_groups = Some(acc.groups_total);
        row.norm_groups = Some(mg * tp.scale);
        row.identity_violations = Some(acc.identity_violations);
        row.discard_violations = Some(acc.discard_violations);
        row.mean_abs_diff = Some(acc.abs_diff.mean);
        row.mean_abs_diff_surrogate = Some(acc.abs_diff_surrogate.mean);
        row.group_efficiency = empirical_efficiency_group(kind, g, p1, p2, mg, mse).ok();
    }
    row
}

/// Runs every cell of `spec`; cells are processed in grid order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let body = || -> Result<Vec<CellResult>> {
        let mut out = Vec::with_capacity(spec.targets.len() * spec.grid.len());
        for &t in &spec.targets {
            for &p in &spec.grid {
                out.push(run_cell(spec, t, p)?);
            }
        }
        Ok(out)
    };
    match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Internal(e.to_string()))?
            .install(body),
        None => body(),
    }
}

/// Theory rows for every cell of a grid.
pub fn theory_rows(
    kind: EstimatorKind,
    targets: &[f64],
    mode: SizeMode<f64>,
    grid: &[[f64; 2]],
) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for &t in targets {
        for &[p1, p2] in grid {
            rows.push(SummaryRow::from_theory(&TheoryPoint::compute(kind, t, mode, p1, p2)?));
        }
    }
    Ok(rows)
}

/// Writes rows as CSV to `path`; refuses to create a file for no rows.
pub fn write_csv_file(rows: &[SummaryRow], path: &std::path::Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::config("out", "no rows to write"));
    }
    let file = std::fs::File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    write_csv(rows, std::io::BufWriter::new(file))
}

/// Writes rows as CSV with a header line.
pub fn write_csv<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
