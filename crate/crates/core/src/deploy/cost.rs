use crate::error::{Error, Result};

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {v}")))
    }
}

/// Hourly price and sustained throughput of one instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostModel {
    pub hourly_cost_usd: f64,
    pub units_per_s: f64,
}

impl CostModel {
    pub fn new(hourly_cost_usd: f64, units_per_s: f64) -> Result<Self> {
        Ok(Self {
            hourly_cost_usd: positive("hourly cost", hourly_cost_usd)?,
            units_per_s: positive("throughput", units_per_s)?,
        })
    }

    pub fn cost_per_billion(&self) -> f64 {
        self.hourly_cost_usd * 1e9 / (self.units_per_s * 3600.0)
    }
}

/// Dollars per 10^9 units: `hourly / (units_per_s * 3600) * 1e9`.
pub fn cost_per_billion(hourly_cost_usd: f64, units_per_s: f64) -> Result<f64> {
    Ok(CostModel::new(hourly_cost_usd, units_per_s)?.cost_per_billion())
}

pub fn speedup(new: f64, old: f64) -> Result<f64> {
    Ok(positive("new rate", new)? / positive("old rate", old)?)
}

/// Instances needed to sustain `target` units/s: `ceil(target / per_instance)`.
pub fn required_replicas(target_units_per_s: f64, per_instance_units_per_s: f64) -> Result<u64> {
    let t = positive("target throughput", target_units_per_s)?;
    let p = positive("per-instance throughput", per_instance_units_per_s)?;
    Ok((t / p).ceil() as u64)
}

/// Four fractional digits. The formatter rounds the exact binary value, so
/// true decimal ties resolve half-to-even.
pub fn format_usd(v: f64) -> String {
    format!("{v:.4}")
}
