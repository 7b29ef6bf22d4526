//! Cost tables: instance, hourly cost, experiment, parameters, throughput,
//! cost per billion units and optimal batch size.

use crate::deploy::cost::{cost_per_billion, format_usd};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct CostRow {
    pub instance: String,
    pub hourly_cost_usd: f64,
    pub experiment: String,
    pub total_params: String,
    pub units_per_s: f64,
    pub optimal_batch: Option<usize>,
}

impl CostRow {
    pub fn cost_per_billion(&self) -> Result<f64> {
        cost_per_billion(self.hourly_cost_usd, self.units_per_s)
    }
}

/// Published BERT-tiny deployment measurements: a full-width model against
/// a 0.125-width model with dendrites, on a T4 GPU instance and a 4-vCPU
/// instance.
pub fn reference_rows() -> Vec<CostRow> {
    let row = |instance: &str, hourly, experiment: &str, params: &str, tps, batch| CostRow {
        instance: instance.into(),
        hourly_cost_usd: hourly,
        experiment: experiment.into(),
        total_params: params.into(),
        units_per_s: tps,
        optimal_batch: Some(batch),
    };
    vec![
        row(
            "n1-standard-2 (T4 GPU)",
            0.31,
            "Original Model",
            "4.38M",
            1_581_885.0,
            3072,
        ),
        row(
            "n1-standard-2 (T4 GPU)",
            0.31,
            "Reduced Model with Dendrites",
            "496K",
            59_604_227.0,
            86016,
        ),
        row("c2-standard-4 (CPU)", 0.17, "Original Model", "4.38M", 107_001.0, 32),
        row(
            "c2-standard-4 (CPU)",
            0.17,
            "Reduced Model with Dendrites",
            "496K",
            16_319_841.0,
            768,
        ),
    ]
}

const HEADERS: [&str; 7] = [
    "Instance",
    "Hourly Cost",
    "Experiment",
    "Total Parameters",
    "Units per second",
    "Cost per B units",
    "Optimal Batch Size",
];

fn cells(rows: &[CostRow]) -> Result<Vec<[String; 7]>> {
    rows.iter()
        .map(|r| {
            Ok([
                r.instance.clone(),
                format!("${:.2}", r.hourly_cost_usd),
                r.experiment.clone(),
                r.total_params.clone(),
                format!("{:.0}", r.units_per_s),
                format!("${}", format_usd(r.cost_per_billion()?)),
                r.optimal_batch.map_or(String::new(), |b| b.to_string()),
            ])
        })
        .collect()
}

/// Aligned plain-text table.
pub fn render_table(rows: &[CostRow]) -> Result<String> {
    let body = cells(rows)?;
    let mut widths = HEADERS.map(str::len);
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cols: Vec<&str>| -> String {
        let mut s = cols
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };
    let mut out = line(HEADERS.to_vec());
    out.push_str(&line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    ));
    for r in &body {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    Ok(out)
}

pub fn render_csv(rows: &[CostRow]) -> Result<String> {
    let mut out = String::from(
        "instance,hourly_cost_usd,experiment,total_params,units_per_s,cost_per_billion_usd,optimal_batch\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.instance,
            r.hourly_cost_usd,
            r.experiment,
            r.total_params,
            r.units_per_s,
            format_usd(r.cost_per_billion()?),
            r.optimal_batch.map_or(String::new(), |b| b.to_string())
        ));
    }
    Ok(out)
}
