//! End-to-end orchestration: training runs, oracle comparison on fresh
//! evaluation days, summary output, and greedy replay of a saved model.

use crate::config::RunConfig;
use crate::env::{FleetSim, TraceRow};
use crate::fqi::{run_training, QModel};
use crate::oracle::{self, OracleInstance};
use crate::profiles::build_day_profile;
use crate::report::{self, ComparisonRow};
use crate::seeding::{self, stream};
use crate::{CaseId, Result};
use std::path::Path;

/// One greedy (exploration-free) day under a fixed model.
pub struct RolloutResult {
    pub total_reward: f64,
    pub trace: Vec<TraceRow>,
    pub charged_kwh: f64,
    pub coincident_kwh: f64,
    pub forced_kwh: f64,
}

impl RolloutResult {
    pub fn pv_utilization(&self) -> Option<f64> {
        (self.charged_kwh > 0.0).then(|| self.coincident_kwh / self.charged_kwh)
    }
}

/// Run one day greedily from a fresh (fully charged) fleet.
///
/// `day_label` only tags trace rows and selects the day's profile; the
/// simulation itself runs a single day from scratch under `day_seed`.
pub fn greedy_day(
    model: &QModel,
    cfg: &RunConfig,
    day_seed: u64,
    day_label: u64,
) -> Result<RolloutResult> {
    let mut sim = FleetSim::new(cfg.fleet.clone(), model.case, cfg.seed, day_seed)?;
    let profile = build_day_profile(cfg, day_label)?;
    sim.begin_day(0, profile)?;
    let step_hours = f64::from(cfg.fleet.delta_s) / 60.0;
    let mut out = RolloutResult {
        total_reward: 0.0,
        trace: Vec::with_capacity(cfg.fleet.steps_per_day()),
        charged_kwh: 0.0,
        coincident_kwh: 0.0,
        forced_kwh: 0.0,
    };
    let mut action = 0u32;
    for step in 0..cfg.fleet.steps_per_day() {
        let tod = step as u32 * cfg.fleet.delta_s;
        if tod % cfg.fleet.delta_c == 0 {
            let s = sim.state()?;
            action = model.best_action(&s, s.feasible())?.0;
        }
        let o = sim.step(action)?;
        out.total_reward += o.reward;
        out.charged_kwh += o.trace.charge_kw * step_hours;
        out.coincident_kwh += o.trace.pv_kw.min(o.trace.charge_kw) * step_hours;
        out.forced_kwh += o.trace.forced_kw * step_hours;
        let mut row = o.trace;
        row.day = day_label;
        out.trace.push(row);
    }
    Ok(out)
}

/// Replay identical seeded days under the greedy policy and the clairvoyant
/// oracle scheduler, one comparison row per day.
pub fn evaluate_policy_vs_oracle(
    model: &QModel,
    cfg: &RunConfig,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(cfg.eval_days as usize);
    for i in 0..cfg.eval_days {
        let day_label = cfg.days + i;
        let day_seed = seeding::derive(cfg.seed, stream::EVAL, i);
        let rollout = greedy_day(model, cfg, day_seed, day_label)?;

        // The oracle sees the exact same realizations: a fresh sim with the
        // same seeds, inspected right after the day begins.
        let mut sim = FleetSim::new(cfg.fleet.clone(), model.case, cfg.seed, day_seed)?;
        let profile = build_day_profile(cfg, day_label)?;
        sim.begin_day(0, profile.clone())?;
        let inst = OracleInstance::from_day(sim.fleet(), &cfg.fleet, &profile, model.case, 0)?;
        let sched = oracle::solve(&inst)?;

        rows.push(ComparisonRow {
            day: day_label,
            policy_reward: rollout.total_reward,
            oracle_reward: sched.objective,
            policy_utilization: rollout.pv_utilization(),
            oracle_utilization: if model.case == CaseId::PvCoincidence {
                oracle::pv_utilization(&sched, &profile.pv_kw)
            } else {
                None
            },
        });
    }
    Ok(rows)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Summary phases: initial = days 0-4, mid = days 34-38, final = last 5.
fn phase_lines(
    key: &str,
    values: &[(u64, f64)],
    total_days: u64,
    lines: &mut Vec<(String, String)>,
) {
    let in_range = |lo: u64, hi: u64| {
        mean(values.iter().filter(|(d, _)| (lo..=hi).contains(d)).map(|&(_, v)| v))
    };
    let final_lo = total_days.saturating_sub(5);
    for (phase, range) in [
        ("initial", in_range(0, 4)),
        ("mid", if total_days > 38 { in_range(34, 38) } else { None }),
        ("final", in_range(final_lo, total_days)),
    ] {
        if let Some(v) = range {
            lines.push((format!("{key}_{phase}"), v.to_string()));
        }
    }
}

/// Full pipeline for one case: train, dump artifacts, benchmark, summarize.
pub fn run_case(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let training = run_training(cfg)?;
    report::write_trace_csv(&cfg.out_dir.join("trace.csv"), &training.trace)?;
    report::write_metrics_csv(&cfg.out_dir.join("metrics.csv"), &training.metrics)?;
    training.model.save(&cfg.out_dir.join("model.bin"))?;

    let comparison = evaluate_policy_vs_oracle(&training.model, cfg)?;
    report::write_comparison_csv(&cfg.out_dir.join("comparison.csv"), &comparison)?;

    let mut lines: Vec<(String, String)> = vec![
        ("case".into(), cfg.case.index().to_string()),
        ("days".into(), cfg.days.to_string()),
        ("evs".into(), cfg.fleet.n_evs.to_string()),
        ("seed".into(), cfg.seed.to_string()),
    ];
    let rewards: Vec<(u64, f64)> =
        training.metrics.iter().map(|m| (m.day, m.total_reward)).collect();
    phase_lines("reward", &rewards, cfg.days, &mut lines);
    if cfg.case == CaseId::PvCoincidence {
        let utils: Vec<(u64, f64)> = training
            .metrics
            .iter()
            .filter_map(|m| m.pv_utilization.map(|u| (m.day, u)))
            .collect();
        phase_lines("pv_utilization", &utils, cfg.days, &mut lines);
    }
    if let Some(v) = mean(comparison.iter().map(|r| r.policy_reward)) {
        lines.push(("eval_policy_reward_mean".into(), v.to_string()));
    }
    if let Some(v) = mean(comparison.iter().map(|r| r.oracle_reward)) {
        lines.push(("eval_oracle_reward_mean".into(), v.to_string()));
    }
    if let Some(v) = mean(comparison.iter().filter_map(|r| r.policy_utilization)) {
        lines.push(("eval_policy_utilization_mean".into(), v.to_string()));
    }
    if let Some(v) = mean(comparison.iter().filter_map(|r| r.oracle_utilization)) {
        lines.push(("eval_oracle_utilization_mean".into(), v.to_string()));
    }
    report::write_summary(&cfg.out_dir.join("summary.txt"), &lines)?;
    Ok(())
}

/// Greedy one-day rollout of a saved model; writes `replay_trace.csv`.
pub fn replay(model_path: &Path, seed: u64, out_dir: &Path) -> Result<()> {
    let model = QModel::load(model_path)?;
    let mut cfg = RunConfig::defaults(model.case);
    cfg.seed = seed;
    std::fs::create_dir_all(out_dir)?;
    let day_seed = seeding::derive(seed, stream::EVAL, 0);
    let rollout = greedy_day(&model, &cfg, day_seed, cfg.days)?;
    report::write_trace_csv(&out_dir.join("replay_trace.csv"), &rollout.trace)?;
    Ok(())
}
