//! Per-repeat records and their summary statistics.

use std::fmt::Write as _;
use std::io::{Read, Write};

use anyhow::Result;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepeatStatus {
    Completed,
    /// Training finished but θ collapsed to 0 or 1.
    Collapsed,
    /// A stage failed; no error figure exists.
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub seed: u64,
    pub status: RepeatStatus,
    pub aggregate_l2: Option<f64>,
    /// Aggregate error over the reference's own L² norm.
    pub relative_l2: Option<f64>,
    pub max_abs: Option<f64>,
    pub selected_epoch: Option<usize>,
    pub failure_epoch: Option<usize>,
    pub final_theta: Option<f64>,
    pub wall_s: f64,
    pub message: String,
}

impl RepeatRecord {
    pub fn pending(repeat: usize, seed: u64) -> Self {
        Self {
            repeat,
            seed,
            status: RepeatStatus::Error,
            aggregate_l2: None,
            relative_l2: None,
            max_abs: None,
            selected_epoch: None,
            failure_epoch: None,
            final_theta: None,
            wall_s: 0.0,
            message: String::new(),
        }
    }
}

/// Median, mean, sample standard deviation and extremes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            count: n,
            median,
            mean,
            std,
            min: v[0],
            max: v[n - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub name: String,
    pub reference_norm: f64,
    pub records: Vec<RepeatRecord>,
}

impl Summary {
    pub fn new(name: String, reference_norm: f64, records: Vec<RepeatRecord>) -> Self {
        Self {
            name,
            reference_norm,
            records,
        }
    }

    pub fn count(&self, status: RepeatStatus) -> usize {
        self.records.iter().filter(|r| r.status == status).count()
    }

    fn errors_where(&self, keep: impl Fn(RepeatStatus) -> bool) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| keep(r.status))
            .filter_map(|r| r.aggregate_l2)
            .collect()
    }

    /// Aggregate L² statistics over completed repeats, collapses excluded.
    pub fn completed(&self) -> Option<Stats> {
        Stats::of(&self.errors_where(|s| s == RepeatStatus::Completed))
    }

    /// Aggregate L² statistics over every repeat that produced an error
    /// figure, collapses included.
    pub fn all_finished(&self) -> Option<Stats> {
        Stats::of(&self.errors_where(|s| s != RepeatStatus::Error))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(name: String, reference_norm: f64, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let records = rdr.deserialize().collect::<Result<Vec<RepeatRecord>, _>>()?;
        Ok(Self::new(name, reference_norm, records))
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment {}", self.name);
        let _ = writeln!(s, "reference L2 norm {}", self.reference_norm);
        let _ = writeln!(
            s,
            "repeats {}: {} completed, {} collapsed, {} errored",
            self.records.len(),
            self.count(RepeatStatus::Completed),
            self.count(RepeatStatus::Collapsed),
            self.count(RepeatStatus::Error)
        );
        for (label, stats) in [("completed", self.completed()), ("with collapses", self.all_finished())] {
            match stats {
                Some(st) => {
                    let _ = writeln!(
                        s,
                        "L2 error ({label}, n={}): median {:.6e} mean {:.6e} std {:.6e} min {:.6e} max {:.6e} (median relative {:.4})",
                        st.count,
                        st.median,
                        st.mean,
                        st.std,
                        st.min,
                        st.max,
                        st.median / self.reference_norm
                    );
                }
                None => {
                    let _ = writeln!(s, "L2 error ({label}): no repeats");
                }
            }
        }
        for r in self.records.iter().filter(|r| r.status == RepeatStatus::Error) {
            let _ = writeln!(s, "repeat {} failed: {}", r.repeat, r.message);
        }
        s
    }
}
