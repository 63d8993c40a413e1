//! Pretraining cost estimate for a low-rank model from per-length speedups.
//!
//! The overall factor for rank `r` is the schedule-weighted mean
//! `Σ_k P_k · E[k][r]`, where `P_k` is the share of pretraining spent at
//! sequence length `k`. Compute, price and CO₂ of the baseline are divided by it.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRACTION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub seq_len: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PretrainSchedule {
    pub segments: Vec<Segment>,
}

impl PretrainSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let s = PretrainSchedule { segments };
        s.validate()?;
        Ok(s)
    }

    /// 90% of steps at length 128, 10% at length 512.
    pub fn bert() -> Self {
        PretrainSchedule {
            segments: vec![
                Segment {
                    seq_len: 128,
                    fraction: 0.9,
                },
                Segment {
                    seq_len: 512,
                    fraction: 0.1,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config("schedule has no segments".into()));
        }
        if let Some(s) = self.segments.iter().find(|s| !(s.fraction > 0.0) || !s.fraction.is_finite()) {
            return Err(Error::Config(format!("fraction for length {} must be positive", s.seq_len)));
        }
        let total: f64 = self.segments.iter().map(|s| s.fraction).sum();
        if (total - 1.0).abs() > FRACTION_TOL {
            return Err(Error::Config(format!("schedule fractions sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Speedup factor by sequence length, then rank.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EfficiencyTable {
    pub entries: BTreeMap<usize, BTreeMap<usize, f64>>,
}

impl EfficiencyTable {
    pub fn insert(&mut self, seq_len: usize, rank: usize, factor: f64) -> Result<()> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::Config(format!("efficiency factor must be positive, got {factor}")));
        }
        self.entries.entry(seq_len).or_default().insert(rank, factor);
        Ok(())
    }

    pub fn get(&self, seq_len: usize, rank: usize) -> Option<f64> {
        self.entries.get(&seq_len)?.get(&rank).copied()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, row) in &self.entries {
            for (r, &e) in row {
                if !(e > 0.0) || !e.is_finite() {
                    return Err(Error::Config(format!("E[{k}][{r}] = {e} is not positive")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineCost {
    pub compute_pfs_day: f64,
    pub usd_low: f64,
    pub usd_high: f64,
    pub co2_kg: f64,
}

impl BaselineCost {
    /// BERT-base pretraining: 2.24 petaflop/s-days, $2,074 to $6,912, 652.3 kg CO₂.
    pub fn bert_base() -> Self {
        BaselineCost {
            compute_pfs_day: 2.24,
            usd_low: 2074.0,
            usd_high: 6912.0,
            co2_kg: 652.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.compute_pfs_day, self.usd_low, self.usd_high, self.co2_kg];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("baseline costs must be positive: {self:?}")));
        }
        if self.usd_low > self.usd_high {
            return Err(Error::Config("usd_low exceeds usd_high".into()));
        }
        Ok(())
    }
}

/// How per-length speedups are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// `Σ P_k E_k`.
    #[default]
    Arithmetic,
    /// `1 / Σ (P_k / E_k)`: total time when each segment runs `E_k` times faster.
    Harmonic,
}

pub fn overall_efficiency(sched: &PretrainSchedule, table: &EfficiencyTable, rank: usize) -> Result<f64> {
    overall_efficiency_with(sched, table, rank, Aggregation::Arithmetic)
}

pub fn overall_efficiency_with(sched: &PretrainSchedule, table: &EfficiencyTable, rank: usize, agg: Aggregation) -> Result<f64> {
    sched.validate()?;
    table.validate()?;
    let mut acc = 0.0;
    for s in &sched.segments {
        let e = table
            .get(s.seq_len, rank)
            .ok_or_else(|| Error::Config(format!("no efficiency entry for length {} and rank {rank}", s.seq_len)))?;
        acc += match agg {
            Aggregation::Arithmetic => s.fraction * e,
            Aggregation::Harmonic => s.fraction / e,
        };
    }
    Ok(match agg {
        Aggregation::Arithmetic => acc,
        Aggregation::Harmonic => 1.0 / acc,
    })
}

/// Every cost divided by `eff`.
pub fn scaled_costs(base: &BaselineCost, eff: f64) -> Result<BaselineCost> {
    if !(eff > 0.0) || !eff.is_finite() {
        return Err(Error::Config(format!("efficiency factor must be positive, got {eff}")));
    }
    base.validate()?;
    Ok(BaselineCost {
        compute_pfs_day: base.compute_pfs_day / eff,
        usd_low: base.usd_low / eff,
        usd_high: base.usd_high / eff,
        co2_kg: base.co2_kg / eff,
    })
}

/// JSON input document of the estimator.
///
/// Either `efficiency` (per-length table, combined through `schedule`) or
/// `overall` (per-rank factors used directly) must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorInput {
    #[serde(default = "PretrainSchedule::bert")]
    pub schedule: PretrainSchedule,
    #[serde(default)]
    pub efficiency: Option<EfficiencyTable>,
    #[serde(default)]
    pub overall: Option<BTreeMap<usize, f64>>,
    #[serde(default = "BaselineCost::bert_base")]
    pub baseline: BaselineCost,
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "default_model_name")]
    pub model: String,
}

fn default_model_name() -> String {
    "BERT_BASE".into()
}

/// One row of the cost table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub model: String,
    pub rank: Option<usize>,
    pub efficiency: f64,
    pub cost: BaselineCost,
}

pub const CSV_HEADER: [&str; 7] = [
    "model",
    "rank",
    "efficiency_factor",
    "compute_pfs_day",
    "usd_low",
    "usd_high",
    "co2_kg",
];

/// Baseline row followed by one row per rank, in descending rank order.
pub fn estimate(input: &EstimatorInput) -> Result<Vec<CostRow>> {
    input.baseline.validate()?;
    let mut factors: BTreeMap<usize, f64> = BTreeMap::new();
    match (&input.efficiency, &input.overall) {
        (Some(_), Some(_)) => return Err(Error::Config("give either `efficiency` or `overall`, not both".into())),
        (None, None) => return Err(Error::Config("one of `efficiency` or `overall` is required".into())),
        (Some(table), None) => {
            let ranks: Vec<usize> = match &input.ranks {
                Some(r) => r.clone(),
                None => {
                    let mut all: Vec<usize> = table.entries.values().flat_map(|row| row.keys().copied()).collect();
                    all.sort_unstable();
                    all.dedup();
                    all
                }
            };
            for r in ranks {
                factors.insert(r, overall_efficiency_with(&input.schedule, table, r, input.aggregation)?);
            }
        }
        (None, Some(overall)) => {
            for (&r, &e) in overall {
                if input.ranks.as_ref().map_or(true, |rs| rs.contains(&r)) {
                    factors.insert(r, e);
                }
            }
        }
    }
    let mut rows = vec![CostRow {
        model: input.model.clone(),
        rank: None,
        efficiency: 1.0,
        cost: input.baseline,
    }];
    for (&r, &e) in factors.iter().rev() {
        rows.push(CostRow {
            model: format!("LRT-{}", input.model),
            rank: Some(r),
            efficiency: e,
            cost: scaled_costs(&input.baseline, e)?,
        });
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[CostRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record([
            row.model.clone(),
            row.rank.map_or_else(|| "-".to_string(), |r| r.to_string()),
            format!("{:.2}", row.efficiency),
            format!("{:.2}", row.cost.compute_pfs_day),
            format!("{:.0}", row.cost.usd_low),
            format!("{:.0}", row.cost.usd_high),
            format!("{:.1}", row.cost.co2_kg),
        ])?;
    }
    w.flush()?;
    Ok(())
}
