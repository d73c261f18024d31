//! CSV and summary writers. All files use header rows, UTF-8 and LF line
//! endings; floats are written with Rust's shortest round-trip formatting so
//! identical runs produce byte-identical files.

use crate::env::TraceRow;
use crate::fqi::DailyMetrics;
use crate::Result;
use std::io::Write;
use std::path::Path;

/// One evaluation-day comparison between the learned policy and the oracle.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub day: u64,
    pub policy_reward: f64,
    pub oracle_reward: f64,
    pub policy_utilization: Option<f64>,
    pub oracle_utilization: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "day,minute,p_ref_kw,pv_kw,charge_kw,forced_kw,n_min,n_max,reward")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.day, r.minute, r.p_ref_kw, r.pv_kw, r.charge_kw, r.forced_kw, r.n_min, r.n_max,
            r.reward
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, rows: &[DailyMetrics]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "day,epsilon,total_reward,final_convergence,pv_utilization,forced_energy_kwh")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.day,
            r.epsilon,
            r.total_reward,
            r.final_convergence,
            opt(r.pv_utilization),
            r.forced_energy_kwh
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "day,policy_reward,oracle_reward,policy_utilization,oracle_utilization")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.day,
            r.policy_reward,
            r.oracle_reward,
            opt(r.policy_utilization),
            opt(r.oracle_utilization)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Write `key value` summary lines.
pub fn write_summary(path: &Path, lines: &[(String, String)]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (k, v) in lines {
        writeln!(w, "{k} {v}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_csv_round_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let rows = vec![TraceRow {
            day: 0,
            minute: 10,
            p_ref_kw: 31.25,
            pv_kw: 0.0,
            charge_kw: 25.0,
            forced_kw: 5.0,
            n_min: 1,
            n_max: 7,
            reward: -39.0625,
        }];
        write_trace_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "day,minute,p_ref_kw,pv_kw,charge_kw,forced_kw,n_min,n_max,reward\n\
             0,10,31.25,0,25,5,1,7,-39.0625\n"
        );
    }

    #[test]
    fn metrics_csv_blank_utilization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            DailyMetrics {
                day: 0,
                epsilon: 1.0,
                total_reward: -100.5,
                final_convergence: 0.25,
                pv_utilization: None,
                forced_energy_kwh: 10.0,
            },
            DailyMetrics {
                day: 1,
                epsilon: 0.975,
                total_reward: -90.0,
                final_convergence: 0.001,
                pv_utilization: Some(0.75),
                forced_energy_kwh: 8.0,
            },
        ];
        write_metrics_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "0,1,-100.5,0.25,,10");
        assert_eq!(lines[2], "1,0.975,-90,0.001,0.75,8");
    }

    #[test]
    fn comparison_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("comparison.csv");
        let rows = vec![ComparisonRow {
            day: 0,
            policy_reward: -400.0,
            oracle_reward: -105.0,
            policy_utilization: Some(0.9),
            oracle_utilization: Some(1.0),
        }];
        write_comparison_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "day,policy_reward,oracle_reward,policy_utilization,oracle_utilization\n\
             0,-400,-105,0.9,1\n"
        );
    }
}
