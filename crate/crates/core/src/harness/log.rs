//! Run logs: line-delimited JSON records, flat CSV export and summaries.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::mapper::Pose;
use crate::planner::ForcePlan;
use crate::plant::{FailureFlags, FailureReport};
use crate::so3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub position: [f64; 3],
    /// Rotation vector (rad).
    pub rotation: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let w = so3::log_unchecked(&p.rotation);
        PoseRecord { position: [p.position.x, p.position.y, p.position.z], rotation: [w.x, w.y, w.z] }
    }
}

impl PoseRecord {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        so3::exp(&Vector3::from(self.rotation))
    }
}

/// Per-finger contact summary in the contact frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerRecord {
    /// Planned normal and tangential magnitudes (N).
    pub planned_normal: f64,
    pub planned_tangential: f64,
    /// Plant normal and tangential magnitudes (N).
    pub realized_normal: f64,
    pub realized_tangential: f64,
    /// Planned `‖f_∥‖ / (μ f_⊥)`.
    pub cone_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Monotone over the whole run, starting at 1.
    pub iteration: usize,
    pub waypoint: usize,
    /// Iteration count within the current waypoint.
    pub step: usize,
    pub q_cmd: Vec<f64>,
    pub observed: PoseRecord,
    pub desired: PoseRecord,
    /// Position error of the observation (m).
    pub pose_error: f64,
    pub rotation_error: f64,
    pub plan: Option<ForcePlan>,
    pub fingers: Vec<FingerRecord>,
    pub trd: Option<f64>,
    pub flags: FailureFlags,
    pub failures: Option<FailureReport>,
    pub solver_iterations: usize,
    pub warnings: Vec<String>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointSummary {
    pub index: usize,
    pub reached: bool,
    pub iterations: usize,
    pub final_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Success,
    Failed { iteration: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub scenario: String,
    pub seed: u64,
    pub fingers: usize,
    pub waypoints: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<IterationRecord>,
    pub waypoints: Vec<WaypointSummary>,
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(RunHeader),
    Iteration(Box<IterationRecord>),
    Waypoint(WaypointSummary),
    Outcome(RunOutcome),
}

impl RunLog {
    pub fn new(header: RunHeader) -> Self {
        RunLog { header, records: Vec::new(), waypoints: Vec::new(), outcome: RunOutcome::Success }
    }

    pub fn push(&mut self, mut r: IterationRecord) {
        r.iteration = self.records.len() + 1;
        self.records.push(r);
    }

    pub fn succeeded(&self) -> bool {
        matches!(self.outcome, RunOutcome::Success)
    }

    pub fn failure_reason(&self) -> Option<&str> {
        match &self.outcome {
            RunOutcome::Success => None,
            RunOutcome::Failed { reason, .. } => Some(reason),
        }
    }

    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> RunLog {
        let mut out = self.clone();
        for r in &mut out.records {
            r.wall_ms = 0.0;
        }
        out
    }

    pub fn any_flags(&self) -> FailureFlags {
        self.records.iter().fold(FailureFlags::default(), |acc, r| FailureFlags {
            slip: acc.slip || r.flags.slip,
            deformation: acc.deformation || r.flags.deformation,
            drop: acc.drop || r.flags.drop,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), HarnessError> {
        let mut line = |l: &Line| -> Result<(), HarnessError> {
            serde_json::to_writer(&mut w, l).map_err(|e| HarnessError::Io(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| HarnessError::Io(e.to_string()))
        };
        line(&Line::Header(self.header.clone()))?;
        for r in &self.records {
            line(&Line::Iteration(Box::new(r.clone())))?;
        }
        for s in &self.waypoints {
            line(&Line::Waypoint(s.clone()))?;
        }
        line(&Line::Outcome(self.outcome.clone()))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<RunLog, HarnessError> {
        let mut header = None;
        let mut records = Vec::new();
        let mut waypoints = Vec::new();
        let mut outcome = None;
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| HarnessError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|e| HarnessError::Parse(format!("log line {}: {e}", n + 1)))?;
            match parsed {
                Line::Header(h) => header = Some(h),
                Line::Iteration(i) => {
                    if i.iteration != records.len() + 1 {
                        return Err(HarnessError::Parse(format!("log line {}: iteration index out of order", n + 1)));
                    }
                    records.push(*i)
                }
                Line::Waypoint(s) => waypoints.push(s),
                Line::Outcome(o) => outcome = Some(o),
            }
        }
        Ok(RunLog {
            header: header.ok_or_else(|| HarnessError::Parse("log has no header line".into()))?,
            records,
            waypoints,
            outcome: outcome.ok_or_else(|| HarnessError::Parse("log has no outcome line".into()))?,
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let m = self.header.fingers;
        let mut out = csv::Writer::from_writer(w);
        let mut head = vec!["iteration".to_string(), "waypoint".into(), "pose_error_m".into()];
        for i in 0..m {
            head.push(format!("f_perp_{i}"));
        }
        for i in 0..m {
            head.push(format!("f_par_{i}"));
        }
        head.extend(["cone_ratio".into(), "trd_pct".into(), "flags".into()]);
        let io = |e: csv::Error| HarnessError::Io(e.to_string());
        out.write_record(&head).map_err(io)?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), r.waypoint.to_string(), fmt(r.pose_error)];
            for i in 0..m {
                row.push(r.fingers.get(i).map_or(String::new(), |f| fmt(f.planned_normal)));
            }
            for i in 0..m {
                row.push(r.fingers.get(i).map_or(String::new(), |f| fmt(f.planned_tangential)));
            }
            let ratio = r.fingers.iter().map(|f| f.cone_ratio).fold(f64::NAN, f64::max);
            row.push(if ratio.is_nan() { String::new() } else { fmt(ratio) });
            row.push(r.trd.map_or(String::new(), fmt));
            row.push(flag_string(&r.flags));
            out.write_record(&row).map_err(io)?;
        }
        out.flush().map_err(|e| HarnessError::Io(e.to_string()))
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.9e}")
}

fn flag_string(f: &FailureFlags) -> String {
    let mut v = Vec::new();
    if f.slip {
        v.push("slip");
    }
    if f.deformation {
        v.push("deformation");
    }
    if f.drop {
        v.push("drop");
    }
    v.join("|")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub success: bool,
    pub failure: Option<String>,
    pub iterations: usize,
    pub waypoints_reached: usize,
    pub waypoints_total: usize,
    pub final_errors: Vec<f64>,
    pub max_final_error: f64,
    pub mean_final_error: f64,
    pub max_trd: Option<f64>,
    pub max_cone_ratio: Option<f64>,
    /// Largest `|realized − planned| / planned` normal force.
    pub max_normal_mismatch: Option<f64>,
    pub flags: FailureFlags,
    pub warnings: usize,
    pub mean_wall_ms: f64,
}

impl RunReport {
    pub fn from_log(log: &RunLog) -> Self {
        let finals: Vec<f64> = log.waypoints.iter().map(|w| w.final_error).collect();
        let max_of =
            |it: &mut dyn Iterator<Item = f64>| it.fold(None, |a: Option<f64>, x| Some(a.map_or(x, |a| a.max(x))));
        let n = finals.len().max(1) as f64;
        RunReport {
            scenario: log.header.scenario.clone(),
            success: log.succeeded(),
            failure: log.failure_reason().map(str::to_string),
            iterations: log.records.len(),
            waypoints_reached: log.waypoints.iter().filter(|w| w.reached).count(),
            waypoints_total: log.header.waypoints,
            max_final_error: finals.iter().cloned().fold(0.0, f64::max),
            mean_final_error: finals.iter().sum::<f64>() / n,
            final_errors: finals,
            max_trd: max_of(&mut log.records.iter().filter_map(|r| r.trd)),
            max_cone_ratio: max_of(&mut log.records.iter().flat_map(|r| r.fingers.iter().map(|f| f.cone_ratio))),
            max_normal_mismatch: max_of(
                &mut log
                    .records
                    .iter()
                    .flat_map(|r| r.fingers.iter())
                    .filter(|f| f.planned_normal > 0.0)
                    .map(|f| (f.realized_normal - f.planned_normal).abs() / f.planned_normal),
            ),
            flags: log.any_flags(),
            warnings: log.records.iter().map(|r| r.warnings.len()).sum(),
            mean_wall_ms: log.records.iter().map(|r| r.wall_ms).sum::<f64>() / log.records.len().max(1) as f64,
        }
    }

    pub fn render(&self) -> String {
        let opt = |x: Option<f64>, unit: &str| x.map_or("-".to_string(), |v| format!("{v:.4}{unit}"));
        let mut s = String::new();
        s += &format!("scenario        {}\n", self.scenario);
        s += &format!(
            "status          {}\n",
            if self.success {
                "success".to_string()
            } else {
                format!("FAILED ({})", self.failure.as_deref().unwrap_or(""))
            }
        );
        s += &format!("iterations      {}\n", self.iterations);
        s += &format!("waypoints       {}/{} reached\n", self.waypoints_reached, self.waypoints_total);
        s += &format!(
            "final error     max {:.4} mm, mean {:.4} mm\n",
            self.max_final_error * 1e3,
            self.mean_final_error * 1e3
        );
        s += &format!("max TRD         {}\n", opt(self.max_trd, " %"));
        s += &format!("max cone ratio  {}\n", opt(self.max_cone_ratio, ""));
        s += &format!("normal mismatch {}\n", opt(self.max_normal_mismatch.map(|v| v * 100.0), " %"));
        s += &format!("flags           {}\n", if self.flags.any() { flag_string(&self.flags) } else { "none".into() });
        s += &format!("warnings        {}\n", self.warnings);
        s += &format!("mean wall time  {:.2} ms/iteration\n", self.mean_wall_ms);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(e: f64) -> IterationRecord {
        IterationRecord {
            iteration: 0,
            waypoint: 0,
            step: 1,
            q_cmd: vec![0.1, 0.2],
            observed: PoseRecord::from(&Pose::identity()),
            desired: PoseRecord { position: [e, 0.0, 0.0], rotation: [0.0; 3] },
            pose_error: e,
            rotation_error: 0.0,
            plan: None,
            fingers: vec![FingerRecord {
                planned_normal: 0.3,
                planned_tangential: 0.1,
                realized_normal: 0.31,
                realized_tangential: 0.1,
                cone_ratio: 0.5,
            }],
            trd: Some(0.0),
            flags: FailureFlags::default(),
            failures: None,
            solver_iterations: 3,
            warnings: vec![],
            wall_ms: 1.5,
        }
    }

    fn log() -> RunLog {
        let mut l = RunLog::new(RunHeader { scenario: "t".into(), seed: 1, fingers: 1, waypoints: 1, delta: 1e-3 });
        l.push(record(2e-3));
        l.push(record(5e-4));
        l.waypoints.push(WaypointSummary { index: 0, reached: true, iterations: 2, final_error: 5e-4 });
        l
    }

    #[test]
    fn jsonl_round_trip() {
        let l = log();
        let mut buf = Vec::new();
        l.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 5);
        let back = RunLog::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.records[1].iteration, 2);
    }

    #[test]
    fn csv_columns() {
        let mut buf = Vec::new();
        log().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let head = text.lines().next().unwrap();
        assert_eq!(head, "iteration,waypoint,pose_error_m,f_perp_0,f_par_0,cone_ratio,trd_pct,flags");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn report_summary() {
        let r = RunReport::from_log(&log());
        assert!(r.success);
        assert_eq!(r.waypoints_reached, 1);
        assert!((r.max_normal_mismatch.unwrap() - 0.01 / 0.3).abs() < 1e-12);
        assert!(r.render().contains("1/1 reached"));
    }

    #[test]
    fn out_of_order_log_rejected() {
        let mut buf = Vec::new();
        let mut l = log();
        l.records.swap(0, 1);
        l.write_jsonl(&mut buf).unwrap();
        assert!(matches!(RunLog::read_jsonl(&buf[..]), Err(HarnessError::Parse(_))));
    }
}
