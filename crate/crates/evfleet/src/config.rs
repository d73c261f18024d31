//! Run configuration: built-in defaults, flat key=value config files, and
//! command-line overrides.

use crate::env::{DeadlineMode, FleetConfig};
use crate::forest::ForestParams;
use crate::{CaseId, Error, Result};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Where the case-2 PV curve comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PvSource {
    /// Synthetic half-sine with seeded noise and sampled day types.
    Synthetic,
    /// A single measured day loaded from CSV, reused every day.
    File(PathBuf),
}

/// Fully resolved configuration for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case: CaseId,
    pub days: u64,
    pub fleet: FleetConfig,
    pub gamma: f64,
    pub k_max: usize,
    pub epsilon_floor: f64,
    pub c0: f64,
    pub forest: ForestParams,
    /// Pre-purchased daily energy shaping the reference curve (kWh).
    pub daily_energy_kwh: f64,
    pub ramp_start_min: u32,
    pub ramp_end_min: u32,
    pub ramp_floor_kw: f64,
    pub pv_peak_kw: f64,
    pub sunrise_min: u32,
    pub sunset_min: u32,
    pub pv_noise: bool,
    pub pv_source: PvSource,
    /// Greedy evaluation days appended after training.
    pub eval_days: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Built-in defaults for the given case.
    pub fn defaults(case: CaseId) -> Self {
        let deadline_mode = match case {
            CaseId::PvCoincidence => DeadlineMode::HomeDepartureOnly,
            _ => DeadlineMode::EveryDeparture,
        };
        RunConfig {
            case,
            days: match case {
                CaseId::PvCoincidence => 60,
                _ => 75,
            },
            fleet: FleetConfig { deadline_mode, ..FleetConfig::default() },
            gamma: 0.95,
            k_max: 25,
            epsilon_floor: 0.05,
            c0: 2.5,
            // Q-regression wants different trees than generic tabular data:
            // every feature is a split candidate at every node (the action
            // column must stay visible or its effect gets attributed to
            // correlated state features) and trees grow until the leaf-size
            // floor. The floor is per-case: the quadratic tracking rewards
            // (cases 0/1) need fine action resolution, while the PV reward
            // is flat in the action wherever PV is absent or saturated, so
            // coarser leaves keep that flatness from being overfit into
            // noise that the action argmax would amplify.
            forest: ForestParams {
                features_per_split: Some(11),
                max_depth: None,
                min_samples_leaf: match case {
                    CaseId::PvCoincidence => 20,
                    _ => 2,
                },
                ..ForestParams::default()
            },
            daily_energy_kwh: 750.0,
            ramp_start_min: 1020,
            ramp_end_min: 1260,
            ramp_floor_kw: 0.0,
            pv_peak_kw: 350.0,
            sunrise_min: 360,
            sunset_min: 1140,
            pv_noise: true,
            pv_source: PvSource::Synthetic,
            eval_days: 10,
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fleet.validate()?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if self.k_max == 0 || self.days == 0 {
            return Err(Error::Config("k_max and days must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_floor) {
            return Err(Error::Config("epsilon_floor must be in [0, 1]".into()));
        }
        if self.c0 <= 0.0 {
            return Err(Error::Config("c0 must be positive".into()));
        }
        if self.case == CaseId::PvCoincidence {
            if let PvSource::File(p) = &self.pv_source {
                if !p.exists() {
                    return Err(Error::Config(format!("PV file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Apply one `key=value` setting.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
        }
        match key {
            "case" => self.case = CaseId::from_index(num(key, value)?)?,
            "days" => self.days = num(key, value)?,
            "evs" => self.fleet.n_evs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "k_max" => self.k_max = num(key, value)?,
            "delta_s" => self.fleet.delta_s = num(key, value)?,
            "delta_c" => self.fleet.delta_c = num(key, value)?,
            "epsilon_floor" => self.epsilon_floor = num(key, value)?,
            "c0" => self.c0 = num(key, value)?,
            "n_trees" => self.forest.n_trees = num(key, value)?,
            "min_samples_leaf" => self.forest.min_samples_leaf = num(key, value)?,
            "max_depth" => {
                let d: i64 = num(key, value)?;
                self.forest.max_depth = (d >= 0).then(|| d as usize);
            }
            "features_per_split" => {
                let f: i64 = num(key, value)?;
                self.forest.features_per_split = (f > 0).then(|| f as usize);
            }
            "bootstrap" => self.forest.bootstrap = num::<u8>(key, value)? != 0,
            "battery_kwh" => self.fleet.spec.battery_capacity_kwh = num(key, value)?,
            "max_charge_kw" => self.fleet.spec.max_charge_power_kw = num(key, value)?,
            "mu_departure" => self.fleet.mu_departure = num(key, value)?,
            "sigma_departure" => self.fleet.sigma_departure = num(key, value)?,
            "mu_arrival" => self.fleet.mu_arrival = num(key, value)?,
            "sigma_arrival" => self.fleet.sigma_arrival = num(key, value)?,
            "daily_sigma" => self.fleet.daily_sigma = num(key, value)?,
            "travel_minutes" => self.fleet.travel_minutes = num(key, value)?,
            "soc_loss_mean" => self.fleet.soc_loss_mean = num(key, value)?,
            "soc_loss_sigma" => self.fleet.soc_loss_sigma = num(key, value)?,
            "soc_loss_min" => self.fleet.soc_loss_min = num(key, value)?,
            "soc_loss_max" => self.fleet.soc_loss_max = num(key, value)?,
            "deadline_mode" => {
                self.fleet.deadline_mode = match value {
                    "every_departure" => DeadlineMode::EveryDeparture,
                    "home_departure_only" => DeadlineMode::HomeDepartureOnly,
                    other => {
                        return Err(Error::Config(format!("unknown deadline_mode '{other}'")))
                    }
                }
            }
            "daily_energy_kwh" => self.daily_energy_kwh = num(key, value)?,
            "ramp_start" => self.ramp_start_min = num(key, value)?,
            "ramp_end" => self.ramp_end_min = num(key, value)?,
            "ramp_floor_kw" => self.ramp_floor_kw = num(key, value)?,
            "pv_peak_kw" => self.pv_peak_kw = num(key, value)?,
            "sunrise" => self.sunrise_min = num(key, value)?,
            "sunset" => self.sunset_min = num(key, value)?,
            "pv_noise" => self.pv_noise = num::<u8>(key, value)? != 0,
            "pv_file" => self.pv_source = PvSource::File(PathBuf::from(value)),
            "eval_days" => self.eval_days = num(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}

/// Parse a flat `key=value` file (# comments, blank lines allowed) into an
/// ordered map. Values are applied later so flags can take precedence.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Resolve a full config: case defaults, then file settings, then overrides.
pub fn resolve_config(
    case: Option<u32>,
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    let file_map = match file {
        Some(p) => parse_config_file(p)?,
        None => BTreeMap::new(),
    };
    let case_index = match case {
        Some(c) => c,
        None => match file_map.get("case") {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{v}' for key 'case'")))?,
            None => return Err(Error::Config("no case given (flag --case or config key)".into())),
        },
    };
    let mut cfg = RunConfig::defaults(CaseId::from_index(case_index)?);
    for (k, v) in &file_map {
        if k == "case" {
            continue;
        }
        cfg.apply_kv(k, v)?;
    }
    for (k, v) in overrides {
        cfg.apply_kv(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
