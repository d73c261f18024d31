//! State features, availability sets, freedom and dispatch priority.

use super::{required_minutes, DeadlineMode, EvAgent, FleetConfig, Location, MINUTES_PER_DAY};
use crate::{CaseId, Error, Result};

/// A vehicle counts as full slightly below 100.0 to absorb float rounding.
pub(crate) const FULL_SOC_EPS: f64 = 1e-6;

pub(crate) fn is_full(soc: f64) -> bool {
    soc >= 100.0 - FULL_SOC_EPS
}

/// Contiguous integer action set {lo, ..., hi}; {0} when no EV is available.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSet {
    pub lo: u32,
    pub hi: u32,
}

impl ActionSet {
    pub fn contains(&self, a: u32) -> bool {
        (self.lo..=self.hi).contains(&a)
    }

    pub fn clamp(&self, a: u32) -> u32 {
        a.clamp(self.lo, self.hi)
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> {
        self.lo..=self.hi
    }
}

/// The aggregate state tuple. The PV indicators are populated for case 2
/// only and ignored by the 8-feature layout of cases 0/1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetState {
    /// Minute of day (0..1440, delta_s multiple).
    pub t: u32,
    /// |U|: vehicles that must be charged now.
    pub n_min: usize,
    /// |V|: vehicles that can be charged now.
    pub n_max: usize,
    /// Total remaining required charging minutes over the whole fleet.
    pub total_required_min: f64,
    pub fr_ave: f64,
    pub fr_2: f64,
    pub fr_5: f64,
    pub fr_10: f64,
    /// Sum of PV output over the past hour, sampled at delta_c spacing.
    pub i1: f64,
    /// Day type: 3 clear, 2 partly cloudy, 1 overcast.
    pub i2: u8,
}

impl FleetState {
    pub fn feasible(&self) -> ActionSet {
        feasible_actions(self.n_min, self.n_max)
    }

    /// Feature vector used by the Q regressor (without the action column).
    pub fn features(&self, case: CaseId) -> Vec<f64> {
        let mut v = vec![
            f64::from(self.t),
            self.n_min as f64,
            self.n_max as f64,
            self.total_required_min,
            self.fr_ave,
            self.fr_2,
            self.fr_5,
            self.fr_10,
        ];
        if case == CaseId::PvCoincidence {
            v.push(self.i1);
            v.push(f64::from(self.i2));
        }
        v
    }
}

/// One batch sample: interval reward between two consecutive control steps.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: FleetState,
    pub action: u32,
    pub reward: f64,
    pub next_state: FleetState,
    pub next_feasible: ActionSet,
}

/// `{n_min, ..., n_max}` when `n_max > 0`, `{0}` otherwise.
pub fn feasible_actions(n_min: usize, n_max: usize) -> ActionSet {
    debug_assert!(n_min <= n_max);
    if n_max == 0 {
        ActionSet { lo: 0, hi: 0 }
    } else {
        ActionSet { lo: n_min as u32, hi: n_max as u32 }
    }
}

/// Remaining plugged-in minutes before the active deadline (t_i^a).
///
/// Returns `None` for traveling vehicles. Under `HomeDepartureOnly` a
/// work-plugged vehicle's window extends across the evening trip into the
/// overnight window that ends at tomorrow's declared departure.
pub(crate) fn available_minutes(
    ev: &EvAgent,
    now: u64,
    day_start: u64,
    mode: DeadlineMode,
) -> Option<i64> {
    match (ev.location, mode) {
        (Location::Traveling, _) => None,
        (Location::HomePlugged, _) => Some(ev.next_deadline as i64 - now as i64),
        (Location::WorkPlugged, DeadlineMode::EveryDeparture) => {
            Some(ev.next_deadline as i64 - now as i64)
        }
        (Location::WorkPlugged, DeadlineMode::HomeDepartureOnly) => {
            let work_dep = day_start + u64::from(ev.today.work_departure);
            let home_arr = day_start + u64::from(ev.today.home_arrival);
            let overnight = ev.next_deadline as i64 - home_arr as i64;
            Some(work_dep as i64 - now as i64 + overnight)
        }
    }
}

/// Slack before forced charging becomes necessary: t_i^a - t_i^r.
pub(crate) fn slack_minutes(
    ev: &EvAgent,
    now: u64,
    day_start: u64,
    cfg: &FleetConfig,
) -> Option<i64> {
    let ta = available_minutes(ev, now, day_start, cfg.deadline_mode)?;
    let tr = i64::from(required_minutes(ev.soc, &cfg.spec, cfg.delta_s));
    Some(ta - tr)
}

/// Per-EV freedom ratio in [0, 1]; 1 for traveling or already-full vehicles.
pub fn freedom(ev: &EvAgent, now: u64, day_start: u64, cfg: &FleetConfig) -> Result<f64> {
    let Some(ta) = available_minutes(ev, now, day_start, cfg.deadline_mode) else {
        return Ok(1.0);
    };
    if is_full(ev.soc) {
        return Ok(1.0);
    }
    let tr = i64::from(required_minutes(ev.soc, &cfg.spec, cfg.delta_s));
    if ta <= 0 {
        return Err(Error::InvariantBreach(format!(
            "EV {} has no available window (t_a={ta}) but needs {tr} min at minute {now}",
            ev.id
        )));
    }
    Ok(((ta - tr) as f64 / ta as f64).clamp(0.0, 1.0))
}

/// The available set V (plugged, below full) and critical set U (slack at
/// most delta_c), as index lists into the fleet slice.
pub fn available_and_critical(
    fleet: &[EvAgent],
    now: u64,
    day_start: u64,
    cfg: &FleetConfig,
) -> (Vec<usize>, Vec<usize>) {
    let mut available = Vec::new();
    let mut critical = Vec::new();
    for (i, ev) in fleet.iter().enumerate() {
        if ev.location == Location::Traveling || is_full(ev.soc) {
            continue;
        }
        available.push(i);
        let slack = slack_minutes(ev, now, day_start, cfg).expect("plugged EV has a window");
        if slack <= i64::from(cfg.delta_c) {
            critical.push(i);
        }
    }
    (available, critical)
}

/// Fleet indices of V ordered by ascending slack, ties by ascending id.
pub fn priority_order(
    fleet: &[EvAgent],
    available: &[usize],
    now: u64,
    day_start: u64,
    cfg: &FleetConfig,
) -> Vec<usize> {
    let mut keyed: Vec<(i64, usize)> = available
        .iter()
        .map(|&i| {
            let slack = slack_minutes(&fleet[i], now, day_start, cfg).expect("available EV");
            (slack, i)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Linear-interpolation percentile of a sorted slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = rank - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Assemble the state tuple at absolute minute `now`.
///
/// `pv_today` is the realized PV curve of the current day at delta_s
/// resolution; the past-hour indicator sums the samples at
/// {t-60, t-60+delta_c, ..., t} with zero padding before the day start.
pub fn build_state(
    fleet: &[EvAgent],
    now: u64,
    day_start: u64,
    cfg: &FleetConfig,
    pv_today: &[f64],
    day_type: u8,
) -> Result<FleetState> {
    let t = (now - day_start) as u32;
    debug_assert!(t < MINUTES_PER_DAY || t % MINUTES_PER_DAY == 0);
    let t = t % MINUTES_PER_DAY;
    let (available, critical) = available_and_critical(fleet, now, day_start, cfg);

    let mut freedoms = Vec::with_capacity(fleet.len());
    let mut total_required = 0.0;
    for ev in fleet {
        freedoms.push(freedom(ev, now, day_start, cfg)?);
        total_required += f64::from(required_minutes(ev.soc, &cfg.spec, cfg.delta_s));
    }
    let fr_ave = freedoms.iter().sum::<f64>() / freedoms.len() as f64;
    freedoms.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());

    let mut i1 = 0.0;
    let mut k = i64::from(t) - 60;
    while k <= i64::from(t) {
        if k >= 0 {
            i1 += pv_today[(k as u32 / cfg.delta_s) as usize % pv_today.len()];
        }
        k += i64::from(cfg.delta_c);
    }

    Ok(FleetState {
        t,
        n_min: critical.len(),
        n_max: available.len(),
        total_required_min: total_required,
        fr_ave,
        fr_2: percentile(&freedoms, 2.0),
        fr_5: percentile(&freedoms, 5.0),
        fr_10: percentile(&freedoms, 10.0),
        i1,
        i2: day_type,
    })
}
