//! Power sampling, energy integration and carbon accounting.
//!
//! Energies are kept in kWh as `f64` throughout; tables print them in
//! two-digit scientific notation (`1.56e-1`).

mod powercap;
mod session;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use powercap::PowercapReader;
pub use session::{load_trace, record_session, simulate_session, EnergySession, PowerSource, SessionRecord};

/// Default emissions factor in kgCO2eq per kWh.
pub const DEFAULT_GRID_INTENSITY: f64 = 0.205;

pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Seconds since the session started.
    pub timestamp: f64,
    pub cpu_w: f64,
    pub gpu_w: f64,
    pub ram_w: f64,
}

impl PowerSample {
    pub fn validate(&self) -> Result<()> {
        let watts = [self.cpu_w, self.gpu_w, self.ram_w];
        if !self.timestamp.is_finite() || watts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "power sample at t={} has negative or non-finite values",
                self.timestamp
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub duration_s: f64,
    pub cpu_kwh: f64,
    pub gpu_kwh: f64,
    pub ram_kwh: f64,
    pub total_kwh: f64,
}

impl EnergyBreakdown {
    /// Builds a breakdown whose total is the component sum.
    pub fn from_components(duration_s: f64, cpu_kwh: f64, gpu_kwh: f64, ram_kwh: f64) -> Self {
        Self {
            duration_s,
            cpu_kwh,
            gpu_kwh,
            ram_kwh,
            total_kwh: cpu_kwh + gpu_kwh + ram_kwh,
        }
    }
}

/// Trapezoidal integral of each power channel, in kWh.
///
/// Power is held at the first sample's value before it and at the last
/// sample's value from there until `duration_s`.
pub fn integrate_energy(samples: &[PowerSample], duration_s: f64) -> Result<EnergyBreakdown> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples(samples.len()));
    }
    for s in samples {
        s.validate()?;
    }
    if let Some(w) = samples.windows(2).find(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::InvalidArgument(format!(
            "timestamps must increase strictly ({} then {})",
            w[0].timestamp, w[1].timestamp
        )));
    }
    let first = samples[0];
    let last = samples[samples.len() - 1];
    if first.timestamp < 0.0 || duration_s < last.timestamp {
        return Err(Error::InvalidArgument(format!(
            "duration {duration_s} s does not cover samples spanning [{}, {}]",
            first.timestamp, last.timestamp
        )));
    }

    let channel = |watts: fn(&PowerSample) -> f64| -> f64 {
        let mut joules = watts(&first) * first.timestamp;
        for w in samples.windows(2) {
            joules += 0.5 * (watts(&w[0]) + watts(&w[1])) * (w[1].timestamp - w[0].timestamp);
        }
        joules += watts(&last) * (duration_s - last.timestamp);
        joules / JOULES_PER_KWH
    };
    Ok(EnergyBreakdown::from_components(
        duration_s,
        channel(|s| s.cpu_w),
        channel(|s| s.gpu_w),
        channel(|s| s.ram_w),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionsReport {
    pub breakdown: EnergyBreakdown,
    /// kgCO2eq per kWh.
    pub grid_intensity: f64,
    pub emissions_kg: f64,
    pub rate_kg_per_s: f64,
}

pub fn compute_emissions(breakdown: &EnergyBreakdown, grid_intensity: f64) -> Result<EmissionsReport> {
    if !breakdown.duration_s.is_finite() || breakdown.duration_s <= 0.0 {
        return Err(Error::ZeroDuration);
    }
    if !grid_intensity.is_finite() || grid_intensity < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "grid intensity must be non-negative, got {grid_intensity}"
        )));
    }
    let emissions_kg = breakdown.total_kwh * grid_intensity;
    Ok(EmissionsReport {
        breakdown: *breakdown,
        grid_intensity,
        emissions_kg,
        rate_kg_per_s: emissions_kg / breakdown.duration_s,
    })
}

/// Group means and the A/B ratios between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub mean_duration_a: f64,
    pub mean_duration_b: f64,
    pub mean_energy_a: f64,
    pub mean_energy_b: f64,
    pub mean_emissions_a: f64,
    pub mean_emissions_b: f64,
    pub duration_ratio: f64,
    pub energy_ratio: f64,
    pub emissions_ratio: f64,
}

pub fn compare_sessions(group_a: &[EmissionsReport], group_b: &[EmissionsReport]) -> Result<RatioReport> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mean = |g: &[EmissionsReport], f: fn(&EmissionsReport) -> f64| g.iter().map(f).sum::<f64>() / g.len() as f64;
    let mean_duration_a = mean(group_a, |r| r.breakdown.duration_s);
    let mean_duration_b = mean(group_b, |r| r.breakdown.duration_s);
    let mean_energy_a = mean(group_a, |r| r.breakdown.total_kwh);
    let mean_energy_b = mean(group_b, |r| r.breakdown.total_kwh);
    let mean_emissions_a = mean(group_a, |r| r.emissions_kg);
    let mean_emissions_b = mean(group_b, |r| r.emissions_kg);
    Ok(RatioReport {
        mean_duration_a,
        mean_duration_b,
        mean_energy_a,
        mean_energy_b,
        mean_emissions_a,
        mean_emissions_b,
        duration_ratio: mean_duration_a / mean_duration_b,
        energy_ratio: mean_energy_a / mean_energy_b,
        emissions_ratio: mean_emissions_a / mean_emissions_b,
    })
}

pub const EMISSIONS_COLUMNS: [&str; 7] = [
    "Duration (s)",
    "Energy Consumed (kWh)",
    "CPU Energy (kWh)",
    "GPU Energy (kWh)",
    "RAM Energy (kWh)",
    "Emissions (kgCO2eq)",
    "Emissions Rate (kgCO2eq/s)",
];

/// Seven-column plain-text table, one row per labelled report.
pub fn emissions_table(rows: &[(String, EmissionsReport)]) -> String {
    let label_width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(std::iter::once("Experiment".len()))
        .max()
        .unwrap_or(10);
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}", "Experiment");
    for col in EMISSIONS_COLUMNS {
        let _ = write!(out, "  {col:>w$}", w = col.len());
    }
    out.push('\n');
    for (label, r) in rows {
        let b = &r.breakdown;
        let cells = [
            format!("{:.2}", b.duration_s),
            format!("{:.2e}", b.total_kwh),
            format!("{:.2e}", b.cpu_kwh),
            format!("{:.2e}", b.gpu_kwh),
            format!("{:.2e}", b.ram_kwh),
            format!("{:.2e}", r.emissions_kg),
            format!("{:.2e}", r.rate_kg_per_s),
        ];
        let _ = write!(out, "{label:<label_width$}");
        for (cell, col) in cells.iter().zip(EMISSIONS_COLUMNS) {
            let _ = write!(out, "  {cell:>w$}", w = col.len());
        }
        out.push('\n');
    }
    out
}
