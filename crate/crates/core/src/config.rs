//! Run configuration: a flat TOML file overlaid by command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::design::{first_order_coeffs, DesignParams, EstimatorKind};
use crate::error::{Error, Result};
use crate::estimators::{EstimateResult, StageTwoCounts};
use crate::group::{GroupConfig, GroupUsage};
use crate::sampling::{Stage, DEFAULT_DRAW_CAP};
use crate::sim::{ExperimentSpec, DEFAULT_REPS, FULL_REPS};
use crate::theory::{probs_from_ratio_scale, SizeMode};

/// A scalar or a list of scalars.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn into_vec(self) -> Vec<f64> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Every setting, each optional until resolved.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub kind: Option<String>,
    pub tarvar: Option<OneOrMany>,
    pub tarsara: Option<f64>,
    pub groups: Option<[u64; 2]>,
    pub p1: Option<OneOrMany>,
    pub p2: Option<OneOrMany>,
    pub ratio: Option<OneOrMany>,
    pub scale: Option<OneOrMany>,
    pub reps: Option<u64>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub full: Option<bool>,
    pub draw_cap: Option<u64>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident, $($f:ident),*) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Settings in `top` take precedence over `self`.
    pub fn overlay(self, top: Settings) -> Settings {
        let base = self;
        overlay_fields!(
            base, top, kind, tarvar, tarsara, groups, p1, p2, ratio, scale, reps, seed, threads, out,
            full, draw_cap
        )
    }

    pub fn kind(&self) -> Result<EstimatorKind> {
        self.kind
            .as_deref()
            .ok_or_else(|| Error::config("kind", "required"))?
            .parse()
    }

    pub fn targets(&self) -> Result<Vec<f64>> {
        let t = self
            .tarvar
            .clone()
            .ok_or_else(|| Error::config("tarvar", "required"))?
            .into_vec();
        if t.is_empty() {
            return Err(Error::config("tarvar", "empty list"));
        }
        Ok(t)
    }

    pub fn mode(&self) -> Result<SizeMode<f64>> {
        match (self.tarsara, self.groups) {
            (Some(_), Some(_)) => Err(Error::config("groups", "conflicts with tarsara")),
            (_, Some([m1, m2])) => Ok(SizeMode::Grouped(GroupConfig::new(m1, m2)?)),
            (r, None) => {
                let r = r.unwrap_or(1.0);
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::config("tarsara", format!("must be positive, got {r}")));
                }
                Ok(SizeMode::Element { size_ratio: r })
            }
        }
    }

    /// Probability pairs, from zipped `p1`/`p2` lists or `ratio`/`scale` lists.
    pub fn grid(&self) -> Result<Vec<[f64; 2]>> {
        let list = |v: &Option<OneOrMany>| v.clone().map(OneOrMany::into_vec);
        let zip = |a: Vec<f64>, b: Vec<f64>, field: &str| -> Result<Vec<(f64, f64)>> {
            if a.len() != b.len() || a.is_empty() {
                return Err(Error::config(field, "lists must be non-empty and of equal length"));
            }
            Ok(a.into_iter().zip(b).collect())
        };
        match (list(&self.p1), list(&self.p2), list(&self.ratio), list(&self.scale)) {
            (Some(a), Some(b), None, None) => Ok(zip(a, b, "p2")?.into_iter().map(|(x, y)| [x, y]).collect()),
            (None, None, Some(r), Some(s)) => zip(r, s, "scale")?
                .into_iter()
                .map(|(r, s)| probs_from_ratio_scale(r, s).map(|(x, y)| [x, y]))
                .collect(),
            (None, None, None, None) => Err(Error::config("p1", "give p1/p2 or ratio/scale")),
            _ => Err(Error::config("p1", "give either p1 and p2, or ratio and scale")),
        }
    }

    pub fn reps(&self) -> u64 {
        self.reps.unwrap_or(if self.full.unwrap_or(false) {
            FULL_REPS
        } else {
            DEFAULT_REPS
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn draw_cap(&self) -> u64 {
        self.draw_cap.unwrap_or(DEFAULT_DRAW_CAP)
    }

    pub fn experiment(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::new(self.kind()?, self.targets()?, self.mode()?, self.grid()?)
            .reps(self.reps())
            .seed(self.seed())
            .threads(self.threads);
        spec.draw_cap = self.draw_cap();
        Ok(spec)
    }
}

/// `key=value` lines describing a design, in a fixed order.
pub fn design_report(d: &DesignParams<f64>) -> String {
    let c = d.kind.constants::<f64>();
    let fo = first_order_coeffs(d);
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("kind", d.kind.to_string());
    kv("tarvar", d.target.to_string());
    kv("tarsara", d.size_ratio.to_string());
    kv("c1", c.c1.to_string());
    kv("c2", c.c2.to_string());
    kv("c12", c.c12.to_string());
    kv("alpha", d.kind.alpha().to_string());
    kv("stage1_cost", d.kind.stage1_cost::<f64>().to_string());
    kv("pilot1", d.pilot[0].to_string());
    kv("pilot2", d.pilot[1].to_string());
    kv("gain", d.gain.to_string());
    kv("offset1", d.offsets[0].to_string());
    kv("offset2", d.offsets[1].to_string());
    kv("pilot_shift", d.pilot_shift.to_string());
    kv("rounding_allowance", d.rounding_allowance.to_string());
    kv("curvature", d.curvature().to_string());
    kv("intercept1", fo.intercept[0].to_string());
    kv("intercept2", fo.intercept[1].to_string());
    kv("slope1", fo.slope[0].to_string());
    kv("slope2", fo.slope[1].to_string());
    s
}

/// `key=value` lines describing one estimation run.
pub fn estimate_report(r: &EstimateResult<f64>, groups: Option<GroupUsage>) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("kind", r.kind.to_string());
    kv("estimate", r.estimate.to_string());
    kv("stage1_count1", r.stage1.counts[0].to_string());
    kv("stage1_count2", r.stage1.counts[1].to_string());
    kv("pilot_ratio", r.stage1.ratio.to_string());
    kv("sus1_real", r.sus_real.sus[0].to_string());
    kv("sus2_real", r.sus_real.sus[1].to_string());
    kv("sus1", r.sus.sus[0].to_string());
    kv("sus2", r.sus.sus[1].to_string());
    match r.stage2 {
        StageTwoCounts::Single(m) => {
            kv("stage2_count1", m[0].to_string());
            kv("stage2_count2", m[1].to_string());
        }
        StageTwoCounts::Split { successes, failures } => {
            kv("stage2_success_count1", successes[0].to_string());
            kv("stage2_failure_count1", failures[0].to_string());
            kv("stage2_success_count2", successes[1].to_string());
            kv("stage2_failure_count2", failures[1].to_string());
        }
    }
    let st1 = r.ledger.stage_totals(Stage::One);
    let tot = r.ledger.totals();
    kv("draws_stage1_pop1", st1[0].to_string());
    kv("draws_stage1_pop2", st1[1].to_string());
    kv("draws_pop1", tot[0].to_string());
    kv("draws_pop2", tot[1].to_string());
    if let Some(g) = groups {
        kv("groups", g.groups.to_string());
        kv("discarded1", g.discarded[0].to_string());
        kv("discarded2", g.discarded[1].to_string());
    }
    s
}
