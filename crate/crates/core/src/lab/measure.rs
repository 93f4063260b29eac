//! Band-retention measurements: transfer function and rate/window sweep.

use serde::{Deserialize, Serialize};

use super::systems::AudioSystem;
use crate::dsp::{band_energy, make_probe, resample, retention, AudioBuffer, BandSpec, ProbeKind};
use crate::error::{Error, Result};

/// Probe set and analysis settings shared by every measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub probes: Vec<ProbeKind>,
    pub version: u32,
    pub duration_s: f64,
    pub seed: u64,
}

impl ProbeSet {
    pub fn from_config(a: &crate::pipeline::AnalysisConfig) -> Self {
        Self {
            probes: a.probes.clone(),
            version: a.probe_set_version,
            duration_s: a.probe_duration_s,
            seed: a.probe_seed,
        }
    }

    pub fn describe(&self) -> String {
        let names: Vec<String> = self.probes.iter().map(ProbeKind::describe).collect();
        format!("v{}: {}", self.version, names.join("; "))
    }
}

/// Input energy below this fraction of the probe's total energy counts as
/// "no energy in the band".
pub const MIN_BAND_ENERGY_FRACTION: f64 = 1e-9;

/// Retention of one band in one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub mode: String,
    pub center_hz: f64,
    pub half_width_hz: f64,
    pub retention: f64,
    /// Probes that contributed to the average.
    pub probes_used: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferReport {
    /// `(mode, checkpoint id)` for every mode in the report.
    pub checkpoints: Vec<(String, String)>,
    pub probe_set: String,
    pub rows: Vec<TransferRow>,
    /// One message per (probe, band) pair left out of an average.
    pub rejected: Vec<String>,
}

impl TransferReport {
    pub fn retention(&self, mode: &str, center_hz: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.center_hz == center_hz)
            .map(|r| r.retention)
    }

    /// Mean retention across the bands of `mode`.
    pub fn mean(&self, mode: &str) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.mode == mode).map(|r| r.retention).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn modes(&self) -> Vec<String> {
        let mut m: Vec<String> = Vec::new();
        for r in &self.rows {
            if !m.contains(&r.mode) {
                m.push(r.mode.clone());
            }
        }
        m
    }

    /// Concatenates two reports measured with the same probe set.
    pub fn merge(mut self, other: TransferReport) -> Result<Self> {
        if self.probe_set != other.probe_set {
            return Err(Error::Config("cannot merge reports with different probe sets".into()));
        }
        self.checkpoints.extend(other.checkpoints);
        self.rows.extend(other.rows);
        self.rejected.extend(other.rejected);
        Ok(self)
    }
}

/// Per-band retention averaged over the probes with energy in the band.
/// Returns the per-band means and rejection messages.
fn band_retentions(
    system: &dyn AudioSystem,
    inputs: &[(String, AudioBuffer)],
    analysis_rate: u32,
    bands: &[BandSpec],
) -> Result<(Vec<(f64, usize)>, Vec<String>)> {
    let native = system.native_rate();
    let mut sums = vec![(0.0, 0usize); bands.len()];
    let mut rejected = Vec::new();
    for (desc, x) in inputs {
        // the system sees the samples as if they were at its native rate
        let as_native = AudioBuffer::new(x.samples.clone(), native)?;
        let y = system.process(&as_native)?.fit_to(x.len());
        let y = AudioBuffer::new(y.samples, analysis_rate)?;
        let total = x.energy();
        for (b, band) in bands.iter().enumerate() {
            let ein = band_energy(x, *band)?;
            if !(ein > MIN_BAND_ENERGY_FRACTION * total * x.len() as f64) {
                rejected.push(format!(
                    "{desc}: no input energy in {} ± {} Hz",
                    band.center_hz, band.half_width_hz
                ));
                continue;
            }
            let r = retention(x, &y, *band)?;
            if !r.is_finite() {
                return Err(Error::NonFinite { op: "retention" });
            }
            sums[b].0 += r;
            sums[b].1 += 1;
        }
    }
    Ok((sums.into_iter().map(|(s, n)| (if n > 0 { s / n as f64 } else { f64::NAN }, n)).collect(), rejected))
}

fn native_probes(system: &dyn AudioSystem, probes: &ProbeSet) -> Result<Vec<(String, AudioBuffer)>> {
    probes
        .probes
        .iter()
        .map(|p| Ok((p.describe(), make_probe(p, probes.duration_s, system.native_rate(), probes.seed)?)))
        .collect()
}

/// Runs every probe through `system` and averages band retention over
/// probes. A band that no probe excites is an error.
pub fn measure_transfer(
    system: &dyn AudioSystem,
    mode: &str,
    checkpoint_id: &str,
    bands: &[BandSpec],
    probes: &ProbeSet,
) -> Result<TransferReport> {
    let rate = system.native_rate();
    for b in bands {
        b.validate(rate)?;
    }
    let inputs = native_probes(system, probes)?;
    let (means, rejected) = band_retentions(system, &inputs, rate, bands)?;
    let mut rows = Vec::new();
    for (band, (r, n)) in bands.iter().zip(means) {
        if n == 0 {
            return Err(Error::UndefinedRetention {
                center_hz: band.center_hz,
                half_width_hz: band.half_width_hz,
            });
        }
        rows.push(TransferRow {
            mode: mode.to_string(),
            center_hz: band.center_hz,
            half_width_hz: band.half_width_hz,
            retention: r,
            probes_used: n,
        });
    }
    Ok(TransferReport {
        checkpoints: vec![(mode.to_string(), checkpoint_id.to_string())],
        probe_set: probes.describe(),
        rows,
        rejected,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub mode: String,
    pub ratio: f64,
    /// Mean retention over the bands that fit under the ratio's Nyquist.
    pub score: f64,
    /// `|score(ratio) − score(1.0)|`.
    pub drop: f64,
    pub bands_used: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub checkpoints: Vec<(String, String)>,
    pub probe_set: String,
    pub ratios: Vec<f64>,
    pub rows: Vec<RobustnessRow>,
    pub warnings: Vec<String>,
}

/// What the score axis measures. "Average attention rate" could also name an
/// attention statistic of the LM; retention is the reading taken here.
pub const ROBUSTNESS_METRIC: &str =
    "mean band retention across probe bands (reading of 'average attention rate')";

impl RobustnessReport {
    pub fn row(&self, mode: &str, ratio: f64) -> Option<&RobustnessRow> {
        self.rows.iter().find(|r| r.mode == mode && r.ratio == ratio)
    }
}

/// Sweeps window-length ratios: at ratio `r` the probe is resampled to
/// `r × native` Hz while keeping `N` samples (its duration scales by
/// `1/r`), pushed through the system at the native rate, and measured at
/// `r × native` Hz. Bands above the new Nyquist are dropped with a
/// warning.
pub fn measure_robustness(
    systems: &[(&str, &str, &dyn AudioSystem)],
    ratios: &[f64],
    bands: &[BandSpec],
    probes: &ProbeSet,
) -> Result<RobustnessReport> {
    if !ratios.contains(&1.0) {
        return Err(Error::Config("robustness ratios must include 1.0".into()));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::Config(format!("ratio {r} must be positive")));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &(mode, _, system) in systems {
        let native = system.native_rate();
        let base = native_probes(system, probes)?;
        let mut scores = Vec::new();
        for &r in ratios {
            let rate = (r * native as f64).round() as u32;
            let kept: Vec<BandSpec> = bands.iter().copied().filter(|b| b.fits(rate)).collect();
            for b in bands.iter().filter(|b| !b.fits(rate)) {
                let w = format!(
                    "{mode} ratio {r}: band {} ± {} Hz above Nyquist {} Hz, dropped",
                    b.center_hz,
                    b.half_width_hz,
                    rate as f64 / 2.0
                );
                log::warn!("{w}");
                warnings.push(w);
            }
            if kept.is_empty() {
                return Err(Error::Config(format!("ratio {r} leaves no band under Nyquist")));
            }
            let inputs: Vec<(String, AudioBuffer)> = if r == 1.0 {
                base.clone()
            } else {
                base.iter()
                    .map(|(d, x)| {
                        let n = x.len();
                        let full = make_probe_for_ratio(probes, d, x, r, native)?;
                        Ok((d.clone(), resample(&full, rate)?.fit_to(n)))
                    })
                    .collect::<Result<_>>()?
            };
            let (means, _) = band_retentions(system, &inputs, rate, &kept)?;
            let used: Vec<f64> = means.iter().filter(|(_, n)| *n > 0).map(|(m, _)| *m).collect();
            if used.is_empty() {
                return Err(Error::Config(format!("ratio {r}: no band received probe energy")));
            }
            scores.push((r, used.iter().sum::<f64>() / used.len() as f64, used.len()));
        }
        let s1 = scores.iter().find(|(r, ..)| *r == 1.0).expect("ratio 1.0 present").1;
        for (r, s, n) in scores {
            rows.push(RobustnessRow {
                mode: mode.to_string(),
                ratio: r,
                score: s,
                drop: (s - s1).abs(),
                bands_used: n,
            });
        }
    }
    Ok(RobustnessReport {
        checkpoints: systems.iter().map(|(m, id, _)| (m.to_string(), id.to_string())).collect(),
        probe_set: probes.describe(),
        ratios: ratios.to_vec(),
        rows,
        warnings,
    })
}

/// The native-rate probe with duration `N / (r·native)` seconds, so that
/// resampling to `r·native` Hz yields about `N` samples.
fn make_probe_for_ratio(probes: &ProbeSet, desc: &str, x: &AudioBuffer, r: f64, native: u32) -> Result<AudioBuffer> {
    let kind = probes
        .probes
        .iter()
        .find(|p| p.describe() == desc)
        .ok_or_else(|| Error::Config(format!("unknown probe {desc}")))?;
    let dur = x.len() as f64 / (r * native as f64);
    make_probe(kind, dur, native, probes.seed)
}
