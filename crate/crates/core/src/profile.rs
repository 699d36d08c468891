//! Per-stage latency accounting for the tracking loop.

use std::fmt;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingError {
    #[error("invalid timing input: {0}")]
    Parameter(String),
}

/// Tracking-loop stages in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    CropResize,
    InputTransfer,
    Network,
    OutputTransfer,
    CrossCorrelation,
    Upsampling,
    Locate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::CropResize,
        Stage::InputTransfer,
        Stage::Network,
        Stage::OutputTransfer,
        Stage::CrossCorrelation,
        Stage::Upsampling,
        Stage::Locate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::CropResize => "crop_resize",
            Stage::InputTransfer => "input_transfer",
            Stage::Network => "network",
            Stage::OutputTransfer => "output_transfer",
            Stage::CrossCorrelation => "cross_correlation",
            Stage::Upsampling => "upsampling",
            Stage::Locate => "locate",
        }
    }

    pub fn group(self) -> StageGroup {
        match self {
            Stage::CropResize => StageGroup::InputPreprocessing,
            Stage::InputTransfer | Stage::Network | Stage::OutputTransfer => StageGroup::NetworkExecution,
            Stage::CrossCorrelation | Stage::Upsampling | Stage::Locate => StageGroup::OutputProcessing,
        }
    }

    fn index(self) -> usize {
        Stage::ALL.iter().position(|&s| s == self).expect("listed")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageGroup {
    InputPreprocessing,
    NetworkExecution,
    OutputProcessing,
}

impl StageGroup {
    pub const ALL: [StageGroup; 3] = [
        StageGroup::InputPreprocessing,
        StageGroup::NetworkExecution,
        StageGroup::OutputProcessing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageGroup::InputPreprocessing => "input_preprocessing",
            StageGroup::NetworkExecution => "network_transfer_and_execution",
            StageGroup::OutputProcessing => "output_processing",
        }
    }
}

/// Accumulated stage durations (seconds) over `frames` frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTiming {
    seconds: [f64; 7],
    pub frames: usize,
}

impl StageTiming {
    pub fn new() -> Self {
        Self::default()
    }

    /// A single-frame sample with the given per-stage seconds, in [`Stage::ALL`] order.
    pub fn from_seconds(seconds: [f64; 7]) -> Self {
        Self { seconds, frames: 1 }
    }

    pub fn add(&mut self, stage: Stage, d: Duration) {
        self.seconds[stage.index()] += d.as_secs_f64();
    }

    pub fn get(&self, stage: Stage) -> f64 {
        self.seconds[stage.index()]
    }

    pub fn merge(&mut self, other: &StageTiming) {
        for (a, b) in self.seconds.iter_mut().zip(other.seconds) {
            *a += b;
        }
        self.frames += other.frames;
    }

    pub fn total(&self) -> f64 {
        self.seconds.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupShare {
    pub group: StageGroup,
    pub seconds: f64,
    /// Percent of the measured per-frame total.
    pub percent: f64,
}

/// Mean per-frame latencies, grouped the way the hardware/software split
/// divides the work.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub frames: usize,
    pub stage_means: Vec<(Stage, f64)>,
    pub stage_sum: f64,
    pub measured_total: f64,
    pub groups: Vec<GroupShare>,
    pub fps: f64,
}

/// Averages the samples per frame. `measured_totals[i]` is the wall time
/// that covered all of `samples[i]`'s frames.
pub fn aggregate_timings(samples: &[StageTiming], measured_totals: &[f64]) -> Result<TimingReport, TimingError> {
    if samples.is_empty() {
        return Err(TimingError::Parameter("no timing samples".into()));
    }
    if samples.len() != measured_totals.len() {
        return Err(TimingError::Parameter(format!(
            "{} samples but {} measured totals",
            samples.len(),
            measured_totals.len()
        )));
    }
    if let Some(t) = measured_totals.iter().find(|t| !(**t >= 0.0)) {
        return Err(TimingError::Parameter(format!("negative measured total {t}")));
    }
    let mut acc = StageTiming::new();
    for s in samples {
        if s.seconds.iter().any(|v| !(*v >= 0.0)) {
            return Err(TimingError::Parameter("negative stage duration".into()));
        }
        acc.merge(s);
    }
    if acc.frames == 0 {
        return Err(TimingError::Parameter("samples cover zero frames".into()));
    }
    let n = acc.frames as f64;
    let stage_means: Vec<(Stage, f64)> = Stage::ALL.iter().map(|&s| (s, acc.get(s) / n)).collect();
    let stage_sum: f64 = stage_means.iter().map(|(_, v)| v).sum();
    let measured_total = measured_totals.iter().sum::<f64>() / n;
    let groups = StageGroup::ALL
        .iter()
        .map(|&g| {
            let seconds: f64 = stage_means.iter().filter(|(s, _)| s.group() == g).map(|(_, v)| v).sum();
            let percent = if measured_total > 0.0 { 100.0 * seconds / measured_total } else { 0.0 };
            GroupShare { group: g, seconds, percent }
        })
        .collect();
    let fps = if measured_total > 0.0 { 1.0 / measured_total } else { f64::INFINITY };
    Ok(TimingReport { frames: acc.frames, stage_means, stage_sum, measured_total, groups, fps })
}

impl TimingReport {
    pub fn stage(&self, stage: Stage) -> f64 {
        self.stage_means.iter().find(|(s, _)| *s == stage).map_or(0.0, |(_, v)| *v)
    }

    pub fn group(&self, group: StageGroup) -> &GroupShare {
        self.groups.iter().find(|g| g.group == group).expect("all groups present")
    }

    /// `stage,seconds` rows followed by sum, total, group and fps rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("item,seconds,percent_of_total\n");
        let pct = |v: f64| {
            if self.measured_total > 0.0 {
                100.0 * v / self.measured_total
            } else {
                0.0
            }
        };
        for (s, v) in &self.stage_means {
            out += &format!("{},{:.6},{:.2}\n", s.name(), v, pct(*v));
        }
        out += &format!("stage_sum,{:.6},{:.2}\n", self.stage_sum, pct(self.stage_sum));
        out += &format!("measured_total,{:.6},100.00\n", self.measured_total);
        for g in &self.groups {
            out += &format!("{},{:.6},{:.2}\n", g.group.name(), g.seconds, g.percent);
        }
        out += &format!("fps,{:.3},\n", self.fps);
        out
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<34} {:>12}", "stage", "time [s]")?;
        for (s, v) in &self.stage_means {
            writeln!(f, "{:<34} {:>12.6}", s.name(), v)?;
        }
        writeln!(f, "{:<34} {:>12.6}", "sum", self.stage_sum)?;
        writeln!(f, "{:<34} {:>12.6}", "total (measured)", self.measured_total)?;
        for g in &self.groups {
            writeln!(f, "{:<34} {:>12.6} ({:.1}%)", g.group.name(), g.seconds, g.percent)?;
        }
        write!(f, "{:<34} {:>12.2}", "fps", self.fps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_an_error() {
        assert!(aggregate_timings(&[], &[]).is_err());
        assert!(aggregate_timings(&[StageTiming::from_seconds([0.0; 7])], &[]).is_err());
    }

    #[test]
    fn means_are_per_frame() {
        let mut a = StageTiming::new();
        a.add(Stage::Network, Duration::from_millis(30));
        a.frames = 3;
        let mut b = StageTiming::new();
        b.add(Stage::Network, Duration::from_millis(10));
        b.frames = 1;
        let r = aggregate_timings(&[a, b], &[0.06, 0.02]).unwrap();
        assert_eq!(r.frames, 4);
        assert!((r.stage(Stage::Network) - 0.01).abs() < 1e-12);
        assert!((r.measured_total - 0.02).abs() < 1e-12);
        assert!((r.fps - 50.0).abs() < 1e-9);
        let share = r.group(StageGroup::NetworkExecution);
        assert!((share.percent - 50.0).abs() < 1e-9);
    }

    #[test]
    fn groups_partition_stages() {
        let r = aggregate_timings(&[StageTiming::from_seconds([1.0; 7])], &[10.0]).unwrap();
        let total: f64 = r.groups.iter().map(|g| g.seconds).sum();
        assert!((total - r.stage_sum).abs() < 1e-12);
        assert!((r.group(StageGroup::InputPreprocessing).seconds - 1.0).abs() < 1e-12);
        assert!((r.group(StageGroup::NetworkExecution).seconds - 3.0).abs() < 1e-12);
        assert!((r.group(StageGroup::OutputProcessing).seconds - 3.0).abs() < 1e-12);
    }
}
