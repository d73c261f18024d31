//! Clairvoyant one-day benchmark scheduler.
//!
//! Given the realized trips, losses, and curves of a day up front, it places
//! per-EV charging steps to maximize the same reward the environment pays.
//! Solved by earliest-deadline greedy placement plus local exchange, with an
//! exhaustive validator for tiny instances.

use crate::env::{DayRealization, DeadlineMode, EvAgent, FleetConfig, MINUTES_PER_DAY};
use crate::profiles::DayProfile;
use crate::{CaseId, Error, Result};

/// One schedulable charging step of one vehicle. The last step toward a full
/// battery may carry a partial power.
#[derive(Debug, Clone)]
struct Unit {
    ev: usize,
    power_kw: f64,
    mandatory: bool,
    /// Allowed step ranges [start, end), ascending.
    windows: Vec<(usize, usize)>,
    /// Latest allowed step + 1, for deadline ordering.
    deadline: usize,
}

/// Per-EV cap on steps placed inside a range (the work window of a vehicle
/// whose only hard deadline is tomorrow's departure).
#[derive(Debug, Clone, Copy)]
struct RangeCap {
    ev: usize,
    start: usize,
    end: usize,
    cap: usize,
}

/// A one-day scheduling instance at simulation-step resolution.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    steps: usize,
    case: CaseId,
    reference_kw: Vec<f64>,
    pv_kw: Vec<f64>,
    units: Vec<Unit>,
    caps: Vec<RangeCap>,
    n_evs: usize,
}

/// The oracle's answer: aggregate charging power per step and the objective
/// value (the sum of per-step rewards the environment would pay).
#[derive(Debug, Clone)]
pub struct OracleSchedule {
    pub power_kw: Vec<f64>,
    pub objective: f64,
    /// (ev, step, power) for every placed unit.
    pub assignments: Vec<(usize, usize, f64)>,
}

/// Specification of one schedulable charging step, for building instances
/// directly (validation and benchmarking against the exhaustive solver).
#[derive(Debug, Clone)]
pub struct UnitSpec {
    pub ev: usize,
    pub power_kw: f64,
    pub mandatory: bool,
    /// Allowed step ranges [start, end), ascending.
    pub windows: Vec<(usize, usize)>,
}

/// Split a SOC deficit (percent) into charging steps: full-power steps plus
/// one trailing partial. `gain` is the SOC percent added by one full step.
fn deficit_units(deficit_pct: f64, gain: f64, power_kw: f64) -> Vec<f64> {
    if deficit_pct <= 1e-9 {
        return Vec::new();
    }
    let n = ((deficit_pct / gain) - 1e-9).ceil().max(1.0) as usize;
    let mut powers = vec![power_kw; n];
    let frac = (deficit_pct - (n - 1) as f64 * gain) / gain;
    powers[n - 1] = power_kw * frac.clamp(0.0, 1.0);
    powers
}

impl OracleInstance {
    /// Build the instance for the day the fleet currently has installed.
    ///
    /// Every vehicle is assumed full at the day start (evaluation days begin
    /// with a fresh fleet). Steps that may be deferred past the horizon into
    /// tomorrow's pre-departure window are optional.
    pub fn from_day(
        fleet: &[EvAgent],
        cfg: &FleetConfig,
        profile: &DayProfile,
        case: CaseId,
        day_start: u64,
    ) -> Result<Self> {
        let steps = (MINUTES_PER_DAY / cfg.delta_s) as usize;
        if profile.len() != steps {
            return Err(Error::Config("profile resolution does not match delta_s".into()));
        }
        let gain = cfg.spec.soc_gain(cfg.delta_s);
        let power = cfg.spec.max_charge_power_kw;
        let step_of = |minute: u32| (minute / cfg.delta_s) as usize;
        let mut units = Vec::new();
        let mut caps = Vec::new();
        for ev in fleet {
            let d: &DayRealization = &ev.today;
            let work = (step_of(d.work_arrival), step_of(d.work_departure));
            let home = (step_of(d.home_arrival), steps);
            let day_end = day_start + u64::from(MINUTES_PER_DAY);
            let post_steps =
                (ev.tomorrow_departure.saturating_sub(day_end) / u64::from(cfg.delta_s)) as usize;
            match cfg.deadline_mode {
                DeadlineMode::EveryDeparture => {
                    // Work window: the morning loss must be recovered in full.
                    for p in deficit_units(d.trip_soc_loss_morning, gain, power) {
                        units.push(Unit {
                            ev: ev.id,
                            power_kw: p,
                            mandatory: true,
                            windows: vec![work],
                            deadline: work.1,
                        });
                    }
                    // Evening window: recover the evening loss; steps that fit
                    // before tomorrow's departure may slip past the horizon.
                    let evening = deficit_units(d.trip_soc_loss_evening, gain, power);
                    let mand = evening.len().saturating_sub(post_steps);
                    for (i, p) in evening.into_iter().enumerate() {
                        units.push(Unit {
                            ev: ev.id,
                            power_kw: p,
                            mandatory: i < mand,
                            windows: vec![home],
                            deadline: home.1,
                        });
                    }
                }
                DeadlineMode::HomeDepartureOnly => {
                    // One pool covering both trip losses, placeable at work or
                    // at home, with the work share capped by the morning loss.
                    let total =
                        deficit_units(d.trip_soc_loss_morning + d.trip_soc_loss_evening, gain, power);
                    let work_cap = ((d.trip_soc_loss_morning / gain) - 1e-9).ceil().max(0.0) as usize;
                    caps.push(RangeCap { ev: ev.id, start: work.0, end: work.1, cap: work_cap });
                    let mand = total.len().saturating_sub(post_steps);
                    for (i, p) in total.into_iter().enumerate() {
                        units.push(Unit {
                            ev: ev.id,
                            power_kw: p,
                            mandatory: i < mand,
                            windows: vec![work, home],
                            deadline: home.1,
                        });
                    }
                }
            }
        }
        Ok(OracleInstance {
            steps,
            case,
            reference_kw: profile.reference_kw.clone(),
            pv_kw: profile.pv_kw.clone(),
            units,
            caps,
            n_evs: fleet.len(),
        })
    }

    /// Build an instance from explicit unit specifications.
    pub fn hand_built(
        case: CaseId,
        steps: usize,
        reference_kw: Vec<f64>,
        pv_kw: Vec<f64>,
        specs: Vec<UnitSpec>,
    ) -> Result<Self> {
        if reference_kw.len() != steps || pv_kw.len() != steps {
            return Err(Error::Config("curve length does not match step count".into()));
        }
        let mut units = Vec::with_capacity(specs.len());
        for s in specs {
            if s.windows.is_empty() || s.windows.iter().any(|&(lo, hi)| lo >= hi || hi > steps) {
                return Err(Error::Config("unit window out of range".into()));
            }
            let deadline = s.windows.iter().map(|w| w.1).max().unwrap();
            units.push(Unit {
                ev: s.ev,
                power_kw: s.power_kw,
                mandatory: s.mandatory,
                windows: s.windows,
                deadline,
            });
        }
        let n_evs = units.iter().map(|u| u.ev + 1).max().unwrap_or(1);
        Ok(OracleInstance { steps, case, reference_kw, pv_kw, units, caps: Vec::new(), n_evs })
    }

    /// Per-step reward at aggregate power `p`.
    fn obj_at(&self, t: usize, p: f64) -> f64 {
        match self.case {
            CaseId::PvCoincidence => self.pv_kw[t].min(p),
            _ => -(self.reference_kw[t] - p).powi(2),
        }
    }

    fn total_objective(&self, power: &[f64]) -> f64 {
        (0..self.steps).map(|t| self.obj_at(t, power[t])).sum()
    }
}

/// Mutable solver state.
struct Solver<'a> {
    inst: &'a OracleInstance,
    /// Assigned step per unit (usize::MAX = unplaced).
    slot: Vec<usize>,
    power: Vec<f64>,
    /// occupied[ev * steps + t]
    occupied: Vec<bool>,
    /// Placed count per cap.
    cap_used: Vec<usize>,
}

const UNPLACED: usize = usize::MAX;

impl<'a> Solver<'a> {
    fn new(inst: &'a OracleInstance) -> Self {
        Solver {
            inst,
            slot: vec![UNPLACED; inst.units.len()],
            power: vec![0.0; inst.steps],
            occupied: vec![false; inst.n_evs * inst.steps],
            cap_used: vec![0; inst.caps.len()],
        }
    }

    fn cap_index(&self, ev: usize, t: usize) -> Option<usize> {
        self.inst
            .caps
            .iter()
            .position(|c| c.ev == ev && (c.start..c.end).contains(&t))
    }

    fn cap_ok(&self, ev: usize, t: usize) -> bool {
        match self.cap_index(ev, t) {
            Some(i) => self.cap_used[i] < self.inst.caps[i].cap,
            None => true,
        }
    }

    fn gain_add(&self, t: usize, p: f64) -> f64 {
        self.inst.obj_at(t, self.power[t] + p) - self.inst.obj_at(t, self.power[t])
    }

    fn place(&mut self, u: usize, t: usize) {
        debug_assert_eq!(self.slot[u], UNPLACED);
        let unit = &self.inst.units[u];
        debug_assert!(!self.occupied[unit.ev * self.inst.steps + t]);
        self.slot[u] = t;
        self.power[t] += unit.power_kw;
        self.occupied[unit.ev * self.inst.steps + t] = true;
        if let Some(i) = self.cap_index(unit.ev, t) {
            self.cap_used[i] += 1;
        }
    }

    fn unplace(&mut self, u: usize) {
        let t = self.slot[u];
        debug_assert_ne!(t, UNPLACED);
        let unit = &self.inst.units[u];
        self.slot[u] = UNPLACED;
        self.power[t] -= unit.power_kw;
        self.occupied[unit.ev * self.inst.steps + t] = false;
        if let Some(i) = self.cap_index(unit.ev, t) {
            self.cap_used[i] -= 1;
        }
    }

    /// Best feasible free step for a unit; ties resolved to the earliest.
    fn best_step(&self, u: usize) -> Option<(usize, f64)> {
        let unit = &self.inst.units[u];
        let mut best: Option<(usize, f64)> = None;
        for &(lo, hi) in &unit.windows {
            for t in lo..hi {
                if self.occupied[unit.ev * self.inst.steps + t] || !self.cap_ok(unit.ev, t) {
                    continue;
                }
                let g = self.gain_add(t, unit.power_kw);
                if best.map_or(true, |(_, bg)| g > bg + 1e-12) {
                    best = Some((t, g));
                }
            }
        }
        best
    }

    fn greedy(&mut self, variant: usize) -> Result<()> {
        // Mandatory units first; the inner order is varied across restarts
        // (0: earliest deadline, 1: latest deadline, 2: largest power).
        let mut order: Vec<usize> = (0..self.inst.units.len()).collect();
        match variant {
            0 => order
                .sort_by_key(|&u| (!self.inst.units[u].mandatory, self.inst.units[u].deadline, u)),
            1 => order.sort_by_key(|&u| {
                (!self.inst.units[u].mandatory, usize::MAX - self.inst.units[u].deadline, u)
            }),
            _ => order.sort_by_key(|&u| {
                let unit = &self.inst.units[u];
                (!unit.mandatory, (-unit.power_kw * 1e6) as i64, u)
            }),
        }
        for u in order {
            let unit = &self.inst.units[u];
            match self.best_step(u) {
                Some((t, g)) => {
                    if unit.mandatory || g > 1e-12 {
                        self.place(u, t);
                    }
                }
                None if unit.mandatory => {
                    return Err(Error::Infeasible(format!(
                        "no feasible step for a mandatory charge of EV {}",
                        unit.ev
                    )));
                }
                None => {}
            }
        }
        Ok(())
    }

    fn objective(&self) -> f64 {
        (0..self.inst.steps).map(|t| self.inst.obj_at(t, self.power[t])).sum()
    }

    /// Single-unit move / add / drop / same-EV swap local search.
    fn exchange(&mut self) {
        let mut prev_obj = self.objective();
        for _pass in 0..500 {
            let mut improved = false;
            for u in 0..self.inst.units.len() {
                let t = self.slot[u];
                let p = self.inst.units[u].power_kw;
                if t == UNPLACED {
                    if let Some((t2, g)) = self.best_step(u) {
                        if g > 1e-9 {
                            self.place(u, t2);
                            improved = true;
                        }
                    }
                    continue;
                }
                // Try moving to a better step (evaluated with u removed).
                self.unplace(u);
                let (t2, g2) = match self.best_step(u) {
                    Some(x) => x,
                    None => (t, self.gain_add(t, p)),
                };
                let keep_gain = self.gain_add(t, p);
                if g2 > keep_gain + 1e-9 {
                    self.place(u, t2);
                    improved = true;
                } else if !self.inst.units[u].mandatory && keep_gain < -1e-9 && g2 < -1e-9 {
                    // Dropping an optional unit pays.
                    improved = true;
                } else {
                    self.place(u, t);
                }
            }
            if self.small_instance() {
                improved |= self.pairwise_replace();
            } else {
                improved |= self.pairwise_swaps();
            }
            if !improved {
                break;
            }
            if !self.small_instance() {
                // At fleet scale, stop once a full pass stops paying its way;
                // the tail of micro-improvements is not worth the quadratic
                // sweeps it costs.
                let obj = self.objective();
                if obj - prev_obj < 1e-6 * (1.0 + prev_obj.abs()) {
                    break;
                }
                prev_obj = obj;
            }
        }
    }

    fn small_instance(&self) -> bool {
        self.inst.units.len() <= 64 && self.inst.steps <= 64
    }

    /// Pairwise step swaps, including across vehicles with unequal powers
    /// (a single move cannot express those). Cheap enough for fleet scale.
    fn pairwise_swaps(&mut self) -> bool {
        let mut improved = false;
        {
            for a in 0..self.inst.units.len() {
                for b in (a + 1)..self.inst.units.len() {
                    let (ua, ub) = (&self.inst.units[a], &self.inst.units[b]);
                    if (ua.power_kw - ub.power_kw).abs() < 1e-12 {
                        continue; // equal powers: a swap changes nothing
                    }
                    let (ta, tb) = (self.slot[a], self.slot[b]);
                    if ta == UNPLACED || tb == UNPLACED || ta == tb {
                        continue;
                    }
                    let in_windows = |unit: &Unit, t: usize| {
                        unit.windows.iter().any(|&(lo, hi)| (lo..hi).contains(&t))
                    };
                    if !in_windows(ua, tb) || !in_windows(ub, ta) {
                        continue;
                    }
                    let before = self.inst.obj_at(ta, self.power[ta])
                        + self.inst.obj_at(tb, self.power[tb]);
                    let after = self
                        .inst
                        .obj_at(ta, self.power[ta] - ua.power_kw + ub.power_kw)
                        + self.inst.obj_at(tb, self.power[tb] - ub.power_kw + ua.power_kw);
                    if after <= before + 1e-9 {
                        continue;
                    }
                    self.unplace(a);
                    self.unplace(b);
                    let (ev_a, ev_b) = (self.inst.units[a].ev, self.inst.units[b].ev);
                    let feasible = !self.occupied[ev_a * self.inst.steps + tb]
                        && !self.occupied[ev_b * self.inst.steps + ta]
                        && self.cap_ok(ev_a, tb);
                    if feasible {
                        self.place(a, tb);
                        if self.cap_ok(ev_b, ta) {
                            self.place(b, ta);
                            improved = true;
                        } else {
                            self.unplace(a);
                            self.place(a, ta);
                            self.place(b, tb);
                        }
                    } else {
                        self.place(a, ta);
                        self.place(b, tb);
                    }
                }
            }
        }
        improved
    }

    /// All placements a unit may take: every window step, plus staying
    /// unplaced for optional units.
    fn spot_options(&self, u: usize) -> Vec<usize> {
        let unit = &self.inst.units[u];
        let mut v: Vec<usize> = unit.windows.iter().flat_map(|&(lo, hi)| lo..hi).collect();
        if !unit.mandatory {
            v.push(UNPLACED);
        }
        v
    }

    fn feasible_spot(&self, u: usize, t: usize) -> bool {
        let unit = &self.inst.units[u];
        unit.windows.iter().any(|&(lo, hi)| (lo..hi).contains(&t))
            && !self.occupied[unit.ev * self.inst.steps + t]
            && self.cap_ok(unit.ev, t)
    }

    /// Exhaustive joint re-placement of every unit pair. Quadratic in the
    /// instance size, so reserved for small instances, where it resolves the
    /// two-unit coordination that single moves and swaps cannot.
    fn pairwise_replace(&mut self) -> bool {
        let mut improved_any = false;
        let n = self.inst.units.len();
        for a in 0..n {
            for b in (a + 1)..n {
                let (orig_a, orig_b) = (self.slot[a], self.slot[b]);
                if orig_a != UNPLACED {
                    self.unplace(a);
                }
                if orig_b != UNPLACED {
                    self.unplace(b);
                }
                let mut best = (f64::NEG_INFINITY, UNPLACED, UNPLACED);
                for sa in self.spot_options(a) {
                    if sa != UNPLACED {
                        if !self.feasible_spot(a, sa) {
                            continue;
                        }
                        self.place(a, sa);
                    }
                    for sb in self.spot_options(b) {
                        if sb != UNPLACED {
                            if !self.feasible_spot(b, sb) {
                                continue;
                            }
                            self.place(b, sb);
                        }
                        let obj = self.inst.total_objective(&self.power);
                        if obj > best.0 + 1e-12 {
                            best = (obj, sa, sb);
                        }
                        if sb != UNPLACED {
                            self.unplace(b);
                        }
                    }
                    if sa != UNPLACED {
                        self.unplace(a);
                    }
                }
                // Baseline: both back at their original spots.
                if orig_a != UNPLACED {
                    self.place(a, orig_a);
                }
                if orig_b != UNPLACED {
                    self.place(b, orig_b);
                }
                let current = self.inst.total_objective(&self.power);
                if best.0 > current + 1e-9 {
                    if orig_a != UNPLACED {
                        self.unplace(a);
                    }
                    if orig_b != UNPLACED {
                        self.unplace(b);
                    }
                    if best.1 != UNPLACED {
                        self.place(a, best.1);
                    }
                    if best.2 != UNPLACED {
                        self.place(b, best.2);
                    }
                    improved_any = true;
                }
            }
        }
        improved_any
    }

    fn schedule(&self) -> OracleSchedule {
        let assignments = self
            .inst
            .units
            .iter()
            .zip(&self.slot)
            .filter(|&(_, &t)| t != UNPLACED)
            .map(|(u, &t)| (u.ev, t, u.power_kw))
            .collect();
        OracleSchedule {
            objective: self.inst.total_objective(&self.power),
            power_kw: self.power.clone(),
            assignments,
        }
    }
}

/// Solve an instance: greedy placement plus local exchange, restarted from
/// a few deterministic greedy orders on small instances.
pub fn solve(inst: &OracleInstance) -> Result<OracleSchedule> {
    let restarts = if inst.units.len() <= 64 && inst.steps <= 64 { 3 } else { 1 };
    let mut best: Option<OracleSchedule> = None;
    for variant in 0..restarts {
        let mut s = Solver::new(inst);
        s.greedy(variant)?;
        s.exchange();
        let sched = s.schedule();
        if best.as_ref().map_or(true, |b| sched.objective > b.objective + 1e-12) {
            best = Some(sched);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Exhaustive optimum for tiny instances (unit count and window sizes small
/// enough to enumerate). Used to validate the solver in tests.
pub fn brute_force(inst: &OracleInstance) -> Result<f64> {
    let total_slots: usize = inst
        .units
        .iter()
        .map(|u| u.windows.iter().map(|&(lo, hi)| hi - lo).sum::<usize>() + 1)
        .product();
    if inst.units.len() > 8 || total_slots > 2_000_000 {
        return Err(Error::Config("instance too large for brute force".into()));
    }
    fn recurse(s: &mut Solver, u: usize, best: &mut f64) {
        if u == s.inst.units.len() {
            *best = best.max(s.inst.total_objective(&s.power));
            return;
        }
        let unit = s.inst.units[u].clone();
        if !unit.mandatory {
            recurse(s, u + 1, best);
        }
        for &(lo, hi) in &unit.windows {
            for t in lo..hi {
                if s.occupied[unit.ev * s.inst.steps + t] || !s.cap_ok(unit.ev, t) {
                    continue;
                }
                s.place(u, t);
                recurse(s, u + 1, best);
                s.unplace(u);
            }
        }
    }
    let mut s = Solver::new(inst);
    let mut best = f64::NEG_INFINITY;
    recurse(&mut s, 0, &mut best);
    if best == f64::NEG_INFINITY {
        return Err(Error::Infeasible("no feasible brute-force assignment".into()));
    }
    Ok(best)
}

/// PV-coincident share of the scheduled charging energy.
pub fn pv_utilization(sched: &OracleSchedule, pv_kw: &[f64]) -> Option<f64> {
    let charged: f64 = sched.power_kw.iter().sum();
    if charged <= 0.0 {
        return None;
    }
    let coincident: f64 =
        sched.power_kw.iter().zip(pv_kw).map(|(&p, &pv)| p.min(pv)).sum();
    Some(coincident / charged)
}
