//! The sequential fleet state machine.

use super::state::{available_and_critical, build_state, is_full, priority_order, FleetState};
use super::{
    sample_day, sample_fleet, DayRealization, DeadlineMode, EvAgent, FleetConfig, Location,
    MINUTES_PER_DAY,
};
use crate::profiles::DayProfile;
use crate::{CaseId, Error, Result};

/// One trace row per delta_s step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub day: u64,
    pub minute: u32,
    pub p_ref_kw: f64,
    pub pv_kw: f64,
    pub charge_kw: f64,
    pub forced_kw: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub reward: f64,
}

/// Result of advancing the environment one delta_s step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub trace: TraceRow,
}

/// Sequential simulation of the fleet over consecutive days.
///
/// Day realizations are sampled one day ahead so the declared next-morning
/// departure is always known when a vehicle plugs in at home. `fleet_seed`
/// fixes the fleet's mean schedules; `day_seed` fixes realizations, so
/// evaluation days can reuse a training fleet with fresh stochasticity.
pub struct FleetSim {
    cfg: FleetConfig,
    case: CaseId,
    fleet: Vec<EvAgent>,
    day_seed: u64,
    day: u64,
    /// Absolute minute; day_start = day * 1440.
    now: u64,
    profile: DayProfile,
    tomorrow: Vec<DayRealization>,
    started: bool,
}

impl FleetSim {
    pub fn new(cfg: FleetConfig, case: CaseId, fleet_seed: u64, day_seed: u64) -> Result<Self> {
        let fleet = sample_fleet(&cfg, fleet_seed)?;
        let steps = cfg_steps(&cfg);
        Ok(FleetSim {
            cfg,
            case,
            fleet,
            day_seed,
            day: 0,
            now: 0,
            profile: DayProfile::zeros(steps),
            tomorrow: Vec::new(),
            started: false,
        })
    }

    pub fn config(&self) -> &FleetConfig {
        &self.cfg
    }

    pub fn fleet(&self) -> &[EvAgent] {
        &self.fleet
    }

    pub fn day(&self) -> u64 {
        self.day
    }

    pub fn minute(&self) -> u64 {
        self.now
    }

    /// Today's realizations, in fleet order.
    pub fn realizations(&self) -> Vec<DayRealization> {
        self.fleet.iter().map(|ev| ev.today).collect()
    }

    /// Install the profile for `day` and roll trip realizations forward.
    /// Days must be visited in order starting from 0.
    pub fn begin_day(&mut self, day: u64, profile: DayProfile) -> Result<()> {
        if profile.len() != cfg_steps(&self.cfg) {
            return Err(Error::Config("profile resolution does not match delta_s".into()));
        }
        if !self.started {
            if day != 0 {
                return Err(Error::Config("simulation must start at day 0".into()));
            }
            let today = sample_day(&self.fleet, 0, &self.cfg, self.day_seed)?;
            for (ev, r) in self.fleet.iter_mut().zip(today) {
                ev.today = r;
            }
            self.tomorrow = sample_day(&self.fleet, 1, &self.cfg, self.day_seed)?;
            for (ev, r) in self.fleet.iter_mut().zip(&self.tomorrow) {
                ev.tomorrow_departure = u64::from(MINUTES_PER_DAY) + u64::from(r.home_departure);
                ev.next_deadline = u64::from(ev.today.home_departure);
            }
            self.started = true;
        } else {
            if day != self.day + 1 || self.now != day * u64::from(MINUTES_PER_DAY) {
                return Err(Error::Config(format!(
                    "days must advance sequentially (at day {}, minute {})",
                    self.day, self.now
                )));
            }
            self.day = day;
            let day_start = day * u64::from(MINUTES_PER_DAY);
            for (ev, r) in self.fleet.iter_mut().zip(&self.tomorrow) {
                ev.today = *r;
                ev.next_deadline = day_start + u64::from(r.home_departure);
            }
            self.tomorrow = sample_day(&self.fleet, day + 1, &self.cfg, self.day_seed)?;
            for (ev, r) in self.fleet.iter_mut().zip(&self.tomorrow) {
                ev.tomorrow_departure =
                    day_start + u64::from(MINUTES_PER_DAY) + u64::from(r.home_departure);
            }
        }
        self.profile = profile;
        Ok(())
    }

    fn day_start(&self) -> u64 {
        self.day * u64::from(MINUTES_PER_DAY)
    }

    /// Current state tuple.
    pub fn state(&self) -> Result<FleetState> {
        build_state(
            &self.fleet,
            self.now,
            self.day_start(),
            &self.cfg,
            &self.profile.pv_kw,
            self.profile.day_type,
        )
    }

    /// Advance one delta_s step, charging `action` vehicles (clamped into
    /// the current feasible range, with critical vehicles always served).
    pub fn step(&mut self, action: u32) -> Result<StepOutcome> {
        let day_start = self.day_start();
        let tod = (self.now - day_start) as u32;
        if tod >= MINUTES_PER_DAY {
            return Err(Error::Config("day is exhausted; call begin_day first".into()));
        }
        self.process_events(tod, day_start)?;

        let (available, critical) = available_and_critical(&self.fleet, self.now, day_start, &self.cfg);
        let n_min = critical.len();
        let n_max = available.len();
        let n_charge = (action as usize).clamp(n_min, n_max.max(n_min)).min(n_max);
        let order = priority_order(&self.fleet, &available, self.now, day_start, &self.cfg);

        let critical_set: Vec<bool> = {
            let mut mask = vec![false; self.fleet.len()];
            for &i in &critical {
                mask[i] = true;
            }
            mask
        };

        let step_gain = self.cfg.spec.soc_gain(self.cfg.delta_s);
        let hours = f64::from(self.cfg.delta_s) / 60.0;
        let mut charge_kw = 0.0;
        let mut forced_kw = 0.0;
        for &i in order.iter().take(n_charge) {
            let ev = &mut self.fleet[i];
            let gain = step_gain.min(100.0 - ev.soc).max(0.0);
            ev.soc = (ev.soc + gain).min(100.0);
            if is_full(ev.soc) {
                ev.soc = 100.0;
            }
            let energy_kwh = gain / 100.0 * self.cfg.spec.battery_capacity_kwh;
            let power = energy_kwh / hours;
            charge_kw += power;
            if critical_set[i] {
                forced_kw += power;
            }
        }

        let grid = (tod / self.cfg.delta_s) as usize;
        let p_ref = self.profile.reference_kw[grid];
        let pv = self.profile.pv_kw[grid];
        let reward = match self.case {
            CaseId::PvCoincidence => pv.min(charge_kw),
            _ => -(p_ref - charge_kw).powi(2),
        };

        let trace = TraceRow {
            day: self.day,
            minute: tod,
            p_ref_kw: p_ref,
            pv_kw: pv,
            charge_kw,
            forced_kw,
            n_min,
            n_max,
            reward,
        };
        self.now += u64::from(self.cfg.delta_s);
        Ok(StepOutcome { reward, trace })
    }

    /// Departure and arrival events scheduled at this minute.
    fn process_events(&mut self, tod: u32, day_start: u64) -> Result<()> {
        for ev in &mut self.fleet {
            match ev.location {
                Location::HomePlugged if tod == ev.today.home_departure => {
                    if !is_full(ev.soc) {
                        return Err(Error::InvariantBreach(format!(
                            "EV {} departs home on day {} at {:.2} % SOC",
                            ev.id, self.day, ev.soc
                        )));
                    }
                    ev.soc = 100.0;
                    ev.location = Location::Traveling;
                }
                Location::Traveling if tod == ev.today.work_arrival => {
                    ev.soc = (ev.soc - ev.today.trip_soc_loss_morning).max(0.0);
                    ev.location = Location::WorkPlugged;
                    ev.next_deadline = match self.cfg.deadline_mode {
                        DeadlineMode::EveryDeparture => {
                            day_start + u64::from(ev.today.work_departure)
                        }
                        DeadlineMode::HomeDepartureOnly => ev.tomorrow_departure,
                    };
                }
                Location::WorkPlugged if tod == ev.today.work_departure => {
                    if self.cfg.deadline_mode == DeadlineMode::EveryDeparture && !is_full(ev.soc)
                    {
                        return Err(Error::InvariantBreach(format!(
                            "EV {} departs work on day {} at {:.2} % SOC",
                            ev.id, self.day, ev.soc
                        )));
                    }
                    ev.location = Location::Traveling;
                }
                Location::Traveling if tod == ev.today.home_arrival => {
                    ev.soc = (ev.soc - ev.today.trip_soc_loss_evening).max(0.0);
                    ev.location = Location::HomePlugged;
                    ev.next_deadline = ev.tomorrow_departure;
                }
                _ => {}
            }
            debug_assert!((0.0..=100.0).contains(&ev.soc));
        }
        Ok(())
    }
}

fn cfg_steps(cfg: &FleetConfig) -> usize {
    (MINUTES_PER_DAY / cfg.delta_s) as usize
}
