//! Reference power and PV generation curves.

use crate::config::{PvSource, RunConfig};
use crate::env::MINUTES_PER_DAY;
use crate::seeding::{self, stream};
use crate::{CaseId, Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

/// Per-day curves at delta_s resolution plus the day-type label.
#[derive(Debug, Clone, PartialEq)]
pub struct DayProfile {
    pub reference_kw: Vec<f64>,
    pub pv_kw: Vec<f64>,
    /// 3 = clear, 2 = partly cloudy, 1 = overcast.
    pub day_type: u8,
}

impl DayProfile {
    pub fn zeros(len: usize) -> Self {
        DayProfile { reference_kw: vec![0.0; len], pv_kw: vec![0.0; len], day_type: 3 }
    }

    pub fn len(&self) -> usize {
        self.reference_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference_kw.is_empty()
    }
}

fn grid_len(delta_s: u32) -> usize {
    (MINUTES_PER_DAY / delta_s) as usize
}

/// Constant-power reference distributing `daily_energy_kwh` over 24 h.
pub fn flat_reference(daily_energy_kwh: f64, delta_s: u32) -> Result<Vec<f64>> {
    if !(daily_energy_kwh > 0.0) {
        return Err(Error::Config("daily energy must be positive".into()));
    }
    Ok(vec![daily_energy_kwh / 24.0; grid_len(delta_s)])
}

/// Reference with a reduced-power window [start, end), constant elsewhere so
/// that total daily energy equals `daily_energy_kwh`.
pub fn ramp_reference(
    daily_energy_kwh: f64,
    ramp_start_min: u32,
    ramp_end_min: u32,
    ramp_floor_kw: f64,
    delta_s: u32,
) -> Result<Vec<f64>> {
    if !(daily_energy_kwh > 0.0) {
        return Err(Error::Config("daily energy must be positive".into()));
    }
    if ramp_start_min > ramp_end_min || ramp_end_min > MINUTES_PER_DAY || ramp_floor_kw < 0.0 {
        return Err(Error::Config("ramp window must satisfy 0 <= start <= end <= 1440".into()));
    }
    let window_h = f64::from(ramp_end_min - ramp_start_min) / 60.0;
    let floor_energy = ramp_floor_kw * window_h;
    if floor_energy > daily_energy_kwh {
        return Err(Error::Config(format!(
            "ramp floor energy {floor_energy:.1} kWh exceeds daily energy {daily_energy_kwh:.1} kWh"
        )));
    }
    let outside_h = 24.0 - window_h;
    let outside_kw = if outside_h > 0.0 {
        (daily_energy_kwh - floor_energy) / outside_h
    } else {
        ramp_floor_kw
    };
    Ok((0..grid_len(delta_s))
        .map(|g| {
            let t = g as u32 * delta_s;
            if (ramp_start_min..ramp_end_min).contains(&t) {
                ramp_floor_kw
            } else {
                outside_kw
            }
        })
        .collect())
}

/// Day-type scale factors for synthetic PV.
pub fn day_type_scale(day_type: u8) -> Result<f64> {
    match day_type {
        1 => Ok(0.30),
        2 => Ok(0.65),
        3 => Ok(1.00),
        other => Err(Error::Config(format!("day_type must be 1..3, got {other}"))),
    }
}

/// Synthetic half-sine PV curve with optional multiplicative noise
/// (N(1, 0.05) clamped at zero, one draw per grid point).
pub fn synth_pv(
    day_type: u8,
    peak_kw: f64,
    sunrise_min: u32,
    sunset_min: u32,
    noise_seed: Option<u64>,
    delta_s: u32,
) -> Result<Vec<f64>> {
    if sunrise_min >= sunset_min || sunset_min > MINUTES_PER_DAY {
        return Err(Error::Config("require sunrise < sunset <= 1440".into()));
    }
    let scale = day_type_scale(day_type)?;
    let daylight = f64::from(sunset_min - sunrise_min);
    let mut rng = noise_seed.map(|s| seeding::rng(s, stream::PV_NOISE, 0));
    let noise_dist = Normal::new(1.0, 0.05).expect("valid");
    Ok((0..grid_len(delta_s))
        .map(|g| {
            let t = g as u32 * delta_s;
            let clean = if (sunrise_min..=sunset_min).contains(&t) {
                let x = f64::from(t - sunrise_min) / daylight;
                scale * peak_kw * (std::f64::consts::PI * x).sin()
            } else {
                0.0
            };
            match rng.as_mut() {
                Some(rng) => clean * f64::max(noise_dist.sample(rng), 0.0),
                None => clean,
            }
        })
        .collect())
}

/// Draw a day type with probabilities {1: 0.2, 2: 0.3, 3: 0.5}.
pub fn sample_day_type(master_seed: u64, day: u64) -> u8 {
    let mut rng = seeding::rng(master_seed, stream::DAY_TYPE, day);
    let x: f64 = rng.gen();
    if x < 0.2 {
        1
    } else if x < 0.5 {
        2
    } else {
        3
    }
}

/// Load a PV curve from a `minute,kw` CSV, linearly interpolated onto the
/// delta_s grid. Negative readings are clamped to zero; the clamp count is
/// returned alongside the curve.
pub fn load_pv_csv(path: &Path, delta_s: u32) -> Result<(Vec<f64>, usize)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "minute,kw" => {}
        _ => return Err(Error::Parse(format!("{}: expected header 'minute,kw'", path.display()))),
    }
    let mut samples: Vec<(u32, f64)> = Vec::new();
    let mut warnings = 0usize;
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (m, kw) = line.split_once(',').ok_or_else(|| {
            Error::Parse(format!("{}:{}: expected 'minute,kw'", path.display(), lineno + 1))
        })?;
        let minute: u32 = m.trim().parse().map_err(|_| {
            Error::Parse(format!("{}:{}: bad minute '{m}'", path.display(), lineno + 1))
        })?;
        let mut kw: f64 = kw.trim().parse().map_err(|_| {
            Error::Parse(format!("{}:{}: bad kw value '{kw}'", path.display(), lineno + 1))
        })?;
        if minute >= MINUTES_PER_DAY {
            return Err(Error::Parse(format!(
                "{}:{}: minute {minute} out of range",
                path.display(),
                lineno + 1
            )));
        }
        if let Some(&(prev, _)) = samples.last() {
            if minute <= prev {
                return Err(Error::Parse(format!(
                    "{}:{}: non-monotone timestamp {minute} after {prev}",
                    path.display(),
                    lineno + 1
                )));
            }
        }
        if kw < 0.0 {
            kw = 0.0;
            warnings += 1;
        }
        samples.push((minute, kw));
    }
    if samples.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    let mut curve = Vec::with_capacity(grid_len(delta_s));
    let mut idx = 0usize;
    for g in 0..grid_len(delta_s) {
        let t = g as u32 * delta_s;
        while idx + 1 < samples.len() && samples[idx + 1].0 <= t {
            idx += 1;
        }
        let value = if t <= samples[0].0 {
            samples[0].1
        } else if idx + 1 >= samples.len() {
            samples[samples.len() - 1].1
        } else {
            let (t0, v0) = samples[idx];
            let (t1, v1) = samples[idx + 1];
            let w = f64::from(t - t0) / f64::from(t1 - t0);
            v0 * (1.0 - w) + v1 * w
        };
        curve.push(value);
    }
    Ok((curve, warnings))
}

/// Assemble the reference/PV curves for one day of a configured run.
///
/// Cases 0 and 1 have no PV; case 2 has no reference. Synthetic PV draws a
/// fresh day type and noise stream per day; a measured CSV day is reused
/// verbatim every day and labeled clear.
pub fn build_day_profile(cfg: &RunConfig, day: u64) -> Result<DayProfile> {
    let delta_s = cfg.fleet.delta_s;
    let zeros = vec![0.0; grid_len(delta_s)];
    match cfg.case {
        CaseId::LoadFollow => Ok(DayProfile {
            reference_kw: flat_reference(cfg.daily_energy_kwh, delta_s)?,
            pv_kw: zeros,
            day_type: 3,
        }),
        CaseId::Ramp => Ok(DayProfile {
            reference_kw: ramp_reference(
                cfg.daily_energy_kwh,
                cfg.ramp_start_min,
                cfg.ramp_end_min,
                cfg.ramp_floor_kw,
                delta_s,
            )?,
            pv_kw: zeros,
            day_type: 3,
        }),
        CaseId::PvCoincidence => match &cfg.pv_source {
            PvSource::Synthetic => {
                let day_type = sample_day_type(cfg.seed, day);
                let noise_seed =
                    cfg.pv_noise.then(|| seeding::derive(cfg.seed, stream::PV_NOISE, day));
                Ok(DayProfile {
                    reference_kw: zeros,
                    pv_kw: synth_pv(
                        day_type,
                        cfg.pv_peak_kw,
                        cfg.sunrise_min,
                        cfg.sunset_min,
                        noise_seed,
                        delta_s,
                    )?,
                    day_type,
                })
            }
            PvSource::File(path) => {
                let (pv_kw, _clamped) = load_pv_csv(path, delta_s)?;
                Ok(DayProfile { reference_kw: zeros, pv_kw, day_type: 3 })
            }
        },
    }
}
