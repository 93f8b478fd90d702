use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const END_TO_END: &str = "end_to_end";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub frames: u64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub throughput_fps: f64,
    pub stalls: u64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

impl StageStats {
    pub fn empty(stage: &str) -> Self {
        Self { stage: stage.into(), frames: 0, mean_ms: 0.0, p50_ms: 0.0, p95_ms: 0.0, max_ms: 0.0, throughput_fps: 0.0, stalls: 0 }
    }

    /// Summarises per-frame latencies. `busy_s` is the time the throughput
    /// is measured against.
    pub fn from_samples(stage: &str, samples_ms: &[f64], busy_s: f64, stalls: u64) -> Self {
        if samples_ms.is_empty() {
            return Self { stalls, ..Self::empty(stage) };
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        // A positive floor keeps throughput finite for sub-resolution timings.
        let busy = busy_s.max(1e-9);
        Self {
            stage: stage.into(),
            frames: s.len() as u64,
            mean_ms: s.iter().sum::<f64>() / n,
            p50_ms: percentile(&s, 0.5),
            p95_ms: percentile(&s, 0.95),
            max_ms: *s.last().unwrap(),
            throughput_fps: n / busy,
            stalls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageStats>,
    pub end_to_end: StageStats,
    pub frames: u64,
    pub events: u64,
    pub dropped: u64,
    pub wall_s: f64,
}

impl PipelineReport {
    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Sum of mean per-frame processing time over the named stages.
    pub fn combined_mean_ms(&self, names: &[&str]) -> f64 {
        names.iter().filter_map(|n| self.stage(n)).map(|s| s.mean_ms).sum()
    }

    pub fn to_csv(&self) -> String {
        write_stats_csv(self.stages.iter().chain(std::iter::once(&self.end_to_end)))
    }
}

const HEADER: [&str; 8] = ["stage", "frames", "mean_ms", "p50_ms", "p95_ms", "max_ms", "throughput_fps", "stalls"];

pub fn write_stats_csv<'a>(rows: impl IntoIterator<Item = &'a StageStats>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.stage.clone(),
            r.frames.to_string(),
            format!("{:.6}", r.mean_ms),
            format!("{:.6}", r.p50_ms),
            format!("{:.6}", r.p95_ms),
            format!("{:.6}", r.max_ms),
            format!("{:.6}", r.throughput_fps),
            r.stalls.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is UTF-8")
}

pub fn parse_stats_csv(text: &str) -> Result<Vec<StageStats>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Parse { line: 1, message: format!("stats header must be {}", HEADER.join(",")) });
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse::<f64>().map_err(|_| Error::Parse { line, message: format!("{}: '{}' is not a number", HEADER[j], &rec[j]) })
        };
        let int = |j: usize| -> Result<u64> {
            rec[j].parse::<u64>().map_err(|_| Error::Parse { line, message: format!("{}: '{}' is not an integer", HEADER[j], &rec[j]) })
        };
        out.push(StageStats {
            stage: rec[0].to_string(),
            frames: int(1)?,
            mean_ms: num(2)?,
            p50_ms: num(3)?,
            p95_ms: num(4)?,
            max_ms: num(5)?,
            throughput_fps: num(6)?,
            stalls: int(7)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub verdict: Verdict,
    pub mean_ms: f64,
    pub budget_ms: f64,
    pub budget_fps: f64,
}

impl BenchSummary {
    pub fn text(&self) -> String {
        match self.verdict {
            Verdict::Indeterminate => format!("INDETERMINATE: no frames measured (budget {:.1} ms/frame at {} fps)", self.budget_ms, self.budget_fps),
            v => format!(
                "{}: mean {:.3} ms/frame vs budget {:.1} ms/frame ({} fps); {:.1} fps achievable",
                if v == Verdict::Pass { "PASS" } else { "FAIL" },
                self.mean_ms,
                self.budget_ms,
                self.budget_fps,
                if self.mean_ms > 0.0 { 1000.0 / self.mean_ms } else { f64::INFINITY }
            ),
        }
    }

    pub fn csv(&self) -> String {
        let v = match self.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Indeterminate => "indeterminate",
        };
        format!("verdict,mean_ms,budget_ms,budget_fps\n{v},{:.6},{:.6},{}\n", self.mean_ms, self.budget_ms, self.budget_fps)
    }
}

/// Compares end-to-end mean frame latency against `1000 / budget_fps` ms.
pub fn bench(end_to_end: &StageStats, budget_fps: f64) -> BenchSummary {
    let budget_ms = 1000.0 / budget_fps;
    let verdict = if end_to_end.frames == 0 {
        Verdict::Indeterminate
    } else if end_to_end.mean_ms <= budget_ms {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    BenchSummary { verdict, mean_ms: end_to_end.mean_ms, budget_ms, budget_fps }
}
