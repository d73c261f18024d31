//! Discrete-time EV fleet environment.
//!
//! Vehicles follow a daily commute cycle home → work → home with stochastic
//! departure/arrival times and trip SOC losses. The environment exposes the
//! aggregate MDP interface: a feature-vector state, an integer action (number
//! of EVs to charge), priority-based dispatch with forced charging of
//! critical vehicles, and per-step rewards.

mod sim;
mod state;

pub use sim::{FleetSim, StepOutcome, TraceRow};
pub use state::{
    available_and_critical, build_state, feasible_actions, freedom, priority_order, ActionSet,
    FleetState, Transition,
};

use crate::seeding::{self, stream};
use crate::{Error, Result};
use rand_distr::{Distribution, Normal};

pub const MINUTES_PER_DAY: u32 = 1440;

/// Battery rating shared by the whole fleet.
///
/// The default capacity is 50/3 kWh (16.67 kWh), which makes a
/// full charge at 5 kW exactly 200 minutes and one 10-minute step exactly
/// +5 % SOC.
#[derive(Debug, Clone, Copy)]
pub struct EvSpec {
    pub battery_capacity_kwh: f64,
    pub max_charge_power_kw: f64,
}

impl Default for EvSpec {
    fn default() -> Self {
        EvSpec { battery_capacity_kwh: 50.0 / 3.0, max_charge_power_kw: 5.0 }
    }
}

impl EvSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.battery_capacity_kwh > 0.0) || !(self.max_charge_power_kw > 0.0) {
            return Err(Error::Config("battery capacity and charge power must be positive".into()));
        }
        Ok(())
    }

    /// SOC percent gained by charging at full power for `minutes`.
    pub fn soc_gain(&self, minutes: u32) -> f64 {
        self.max_charge_power_kw * (f64::from(minutes) / 60.0) / self.battery_capacity_kwh * 100.0
    }
}

/// Minutes of charging needed to reach 100 % SOC, rounded up to the grid.
///
/// `ceil(((100 - soc)/100 * capacity / power * 60) / delta_s) * delta_s`,
/// with a small relative tolerance so exact grid multiples do not round up
/// an extra step through floating-point noise.
pub fn required_minutes(soc: f64, spec: &EvSpec, delta_s: u32) -> u32 {
    debug_assert!((0.0..=100.0 + 1e-9).contains(&soc));
    let exact =
        (100.0 - soc).max(0.0) / 100.0 * spec.battery_capacity_kwh / spec.max_charge_power_kw
            * 60.0;
    let steps = (exact / f64::from(delta_s) - 1e-9).ceil().max(0.0);
    steps as u32 * delta_s
}

/// Which departures demand a full battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeadlineMode {
    /// Every unplug event (work and home departures) requires 100 % SOC.
    EveryDeparture,
    /// Only the morning home departure requires 100 % SOC; the available
    /// window at work includes the overnight window that follows.
    HomeDepartureOnly,
}

/// Where a vehicle currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    HomePlugged,
    WorkPlugged,
    Traveling,
}

/// One day's realized trip times (minute-of-day, multiples of delta_s) and
/// per-trip SOC losses in percent.
#[derive(Debug, Clone, Copy)]
pub struct DayRealization {
    pub home_departure: u32,
    pub work_arrival: u32,
    pub work_departure: u32,
    pub home_arrival: u32,
    pub trip_soc_loss_morning: f64,
    pub trip_soc_loss_evening: f64,
}

/// One vehicle.
#[derive(Debug, Clone)]
pub struct EvAgent {
    pub id: usize,
    /// Per-EV mean departure/arrival minute-of-day (mu_i^d, mu_i^a).
    pub mean_departure: u32,
    pub mean_arrival: u32,
    pub sigma_departure: f64,
    pub sigma_arrival: f64,
    pub soc: f64,
    pub location: Location,
    /// Absolute minute of the next departure by which 100 % SOC is required.
    pub next_deadline: u64,
    pub today: DayRealization,
    /// Absolute minute of tomorrow's home departure (declared by the driver).
    pub tomorrow_departure: u64,
}

/// Fleet-level sampling and dynamics parameters.
#[derive(Debug, Clone)]
pub struct FleetConfig {
    pub n_evs: usize,
    pub spec: EvSpec,
    /// Fleet-level mean/sigma of per-EV mean departure and arrival (minutes).
    pub mu_departure: f64,
    pub sigma_departure: f64,
    pub mu_arrival: f64,
    pub sigma_arrival: f64,
    /// Per-EV day-to-day sigma for both departure and arrival.
    pub daily_sigma: f64,
    /// One-way commute duration in minutes (fixed, a delta_s multiple).
    pub travel_minutes: u32,
    pub soc_loss_mean: f64,
    pub soc_loss_sigma: f64,
    pub soc_loss_min: f64,
    pub soc_loss_max: f64,
    pub delta_s: u32,
    pub delta_c: u32,
    pub deadline_mode: DeadlineMode,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            n_evs: 100,
            spec: EvSpec::default(),
            mu_departure: 480.0,
            sigma_departure: 60.0,
            mu_arrival: 1080.0,
            sigma_arrival: 60.0,
            daily_sigma: 20.0,
            travel_minutes: 30,
            soc_loss_mean: 22.5,
            soc_loss_sigma: 5.0,
            soc_loss_min: 5.0,
            soc_loss_max: 40.0,
            delta_s: 10,
            delta_c: 20,
            deadline_mode: DeadlineMode::EveryDeparture,
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_evs == 0 {
            return Err(Error::Config("fleet size must be at least 1".into()));
        }
        if self.delta_s == 0 || MINUTES_PER_DAY % self.delta_s != 0 {
            return Err(Error::Config(format!(
                "delta_s must divide {MINUTES_PER_DAY}, got {}",
                self.delta_s
            )));
        }
        if self.delta_c == 0 || self.delta_c % self.delta_s != 0 {
            return Err(Error::Config(format!(
                "delta_c ({}) must be a positive multiple of delta_s ({})",
                self.delta_c, self.delta_s
            )));
        }
        if self.sigma_departure < 0.0 || self.sigma_arrival < 0.0 || self.daily_sigma < 0.0 {
            return Err(Error::Config("sigma values must be non-negative".into()));
        }
        if self.mu_departure >= self.mu_arrival {
            return Err(Error::Config(
                "mean departure must precede mean arrival (work window would be empty)".into(),
            ));
        }
        if self.travel_minutes % self.delta_s != 0 {
            return Err(Error::Config("travel_minutes must be a delta_s multiple".into()));
        }
        if !(0.0 < self.soc_loss_min
            && self.soc_loss_min <= self.soc_loss_max
            && self.soc_loss_max < 50.0)
        {
            return Err(Error::Config(
                "trip SOC loss bounds must satisfy 0 < min <= max < 50".into(),
            ));
        }
        Ok(())
    }

    pub fn steps_per_day(&self) -> usize {
        (MINUTES_PER_DAY / self.delta_s) as usize
    }

    pub fn control_steps_per_day(&self) -> usize {
        (MINUTES_PER_DAY / self.delta_c) as usize
    }

    /// Round up to the next delta_s multiple, clamped to at least delta_s.
    fn ceil_grid(&self, x: f64) -> u32 {
        let steps = (x / f64::from(self.delta_s)).ceil().max(1.0);
        steps as u32 * self.delta_s
    }
}

/// Margin added to window feasibility checks during sampling, in control
/// steps. One step covers the forced-charging trigger; the rest absorbs the
/// coarser slot rounding used by the oracle benchmark.
const WINDOW_MARGIN_CONTROL_STEPS: u32 = 3;

fn window_margin(cfg: &FleetConfig) -> u32 {
    WINDOW_MARGIN_CONTROL_STEPS * cfg.delta_c
}

/// Sample the per-EV mean schedules for a fleet.
///
/// Deterministic for a fixed seed. Per-EV means are redrawn (up to 100
/// attempts) until the work and overnight windows leave room for worst-case
/// charging demand.
pub fn sample_fleet(cfg: &FleetConfig, seed: u64) -> Result<Vec<EvAgent>> {
    cfg.validate()?;
    let mut rng = seeding::rng(seed, stream::FLEET, 0);
    let dep_dist = normal(cfg.mu_departure, cfg.sigma_departure)?;
    let arr_dist = normal(cfg.mu_arrival, cfg.sigma_arrival)?;
    let margin = window_margin(cfg);
    let worst_one_trip = required_minutes(100.0 - cfg.soc_loss_max, &cfg.spec, cfg.delta_s);
    let worst_two_trips =
        required_minutes(100.0 - 2.0 * cfg.soc_loss_max, &cfg.spec, cfg.delta_s);

    let mut fleet = Vec::with_capacity(cfg.n_evs);
    for id in 0..cfg.n_evs {
        let mut found = None;
        for _ in 0..100 {
            let dep = cfg.ceil_grid(dep_dist.sample(&mut rng));
            let arr = cfg.ceil_grid(arr_dist.sample(&mut rng));
            if dep < cfg.delta_s || arr > MINUTES_PER_DAY - cfg.delta_s || dep >= arr {
                continue;
            }
            let work_window = arr.saturating_sub(dep + 2 * cfg.travel_minutes);
            let overnight = dep + MINUTES_PER_DAY - arr;
            if work_window >= worst_one_trip + margin && overnight >= worst_two_trips + margin {
                found = Some((dep, arr));
                break;
            }
        }
        let (dep, arr) = found.ok_or_else(|| {
            Error::Infeasible(format!(
                "could not sample a feasible mean schedule for EV {id} in 100 attempts"
            ))
        })?;
        let placeholder = DayRealization {
            home_departure: dep,
            work_arrival: dep + cfg.travel_minutes,
            work_departure: arr - cfg.travel_minutes,
            home_arrival: arr,
            trip_soc_loss_morning: 0.0,
            trip_soc_loss_evening: 0.0,
        };
        fleet.push(EvAgent {
            id,
            mean_departure: dep,
            mean_arrival: arr,
            sigma_departure: cfg.daily_sigma,
            sigma_arrival: cfg.daily_sigma,
            soc: 100.0,
            location: Location::HomePlugged,
            next_deadline: u64::from(dep),
            today: placeholder,
            tomorrow_departure: u64::from(dep),
        });
    }
    Ok(fleet)
}

/// Sample one day's trip realization for each EV.
///
/// For `day > 0` the previous day's realization (stored in each agent's
/// `today`) constrains the overnight window: tomorrow's departure must leave
/// room to recover the worst-case SOC reachable after both of today's trips.
pub fn sample_day(
    fleet: &[EvAgent],
    day: u64,
    cfg: &FleetConfig,
    seed: u64,
) -> Result<Vec<DayRealization>> {
    if fleet.is_empty() {
        return Err(Error::Config("fleet is empty".into()));
    }
    let mut rng = seeding::rng(seed, stream::DAY, day);
    let margin = window_margin(cfg);
    let mut out = Vec::with_capacity(fleet.len());
    for ev in fleet {
        let dep_dist = normal(f64::from(ev.mean_departure), ev.sigma_departure)?;
        let arr_dist = normal(f64::from(ev.mean_arrival), ev.sigma_arrival)?;
        let loss_dist = normal(cfg.soc_loss_mean, cfg.soc_loss_sigma)?;
        let mut found = None;
        for _ in 0..100 {
            let dep = cfg.ceil_grid(dep_dist.sample(&mut rng));
            let home_arr = cfg.ceil_grid(arr_dist.sample(&mut rng));
            let loss_m = loss_dist.sample(&mut rng).clamp(cfg.soc_loss_min, cfg.soc_loss_max);
            let loss_e = loss_dist.sample(&mut rng).clamp(cfg.soc_loss_min, cfg.soc_loss_max);
            let work_arr = dep + cfg.travel_minutes;
            if home_arr > MINUTES_PER_DAY - cfg.delta_s
                || home_arr < work_arr + cfg.travel_minutes
            {
                continue;
            }
            let work_dep = home_arr - cfg.travel_minutes;
            if work_dep <= work_arr {
                continue;
            }
            // Work window must fit a full recharge of the morning loss.
            let need_work = required_minutes(100.0 - loss_m, &cfg.spec, cfg.delta_s);
            if work_dep - work_arr < need_work + margin {
                continue;
            }
            // Overnight window (previous arrival to this departure) must fit
            // a recharge from the worst SOC the previous day can end with.
            if day > 0 {
                let prev = &ev.today;
                let worst_soc = 100.0
                    - prev.trip_soc_loss_morning
                    - prev.trip_soc_loss_evening;
                let need_night = required_minutes(worst_soc, &cfg.spec, cfg.delta_s);
                if dep + MINUTES_PER_DAY - prev.home_arrival < need_night + margin {
                    continue;
                }
            }
            found = Some(DayRealization {
                home_departure: dep,
                work_arrival: work_arr,
                work_departure: work_dep,
                home_arrival: home_arr,
                trip_soc_loss_morning: loss_m,
                trip_soc_loss_evening: loss_e,
            });
            break;
        }
        out.push(found.ok_or_else(|| {
            Error::Infeasible(format!(
                "no feasible realization for EV {} on day {day} after 100 attempts",
                ev.id
            ))
        })?);
    }
    Ok(out)
}

fn normal(mean: f64, sigma: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sigma).map_err(|e| Error::Config(format!("bad normal parameters: {e}")))
}
