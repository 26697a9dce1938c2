use std::io::Write;
use std::path::Path;

use crate::data::format_float;
use crate::error::Result;
use crate::kernels::HyperParams;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// Step size used to reach this iterate; zero for the initial point.
    pub alpha: f64,
    /// Flattened parameters, same layout as [`HyperParams::as_vec`].
    pub theta: Vec<f64>,
    /// The (scaled, possibly clipped) stochastic gradient that produced this iterate.
    pub gradient: Option<Vec<f64>>,
    pub grad_norm_sq: Option<f64>,
    pub elapsed_ms: f64,
}

/// Everything recorded during a fit: one record per iterate, `θ⁽⁰⁾` included.
#[derive(Clone, Debug, PartialEq)]
pub struct FitTrace {
    pub labels: Vec<String>,
    pub records: Vec<TraceRecord>,
    pub clamp_events: usize,
    pub clip_events: usize,
    template: HyperParams,
}

impl FitTrace {
    pub(crate) fn new(theta0: &HyperParams) -> Self {
        Self {
            labels: theta0.labels(),
            records: Vec::new(),
            clamp_events: 0,
            clip_events: 0,
            template: theta0.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of optimisation steps taken.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// The last iterate as structured parameters.
    pub fn final_params(&self) -> HyperParams {
        match self.records.last() {
            Some(r) => self.template.from_flat(&r.theta).expect("trace layout matches template"),
            None => self.template.clone(),
        }
    }

    /// One parameter slot across all iterates.
    pub fn series(&self, slot: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.theta[slot]).collect()
    }

    fn has_grad_norm(&self) -> bool {
        self.records.iter().any(|r| r.grad_norm_sq.is_some())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let norm = self.has_grad_norm();
        let mut header = vec!["iter".to_string(), "alpha".to_string()];
        header.extend(self.labels.iter().cloned());
        if norm {
            header.push("grad_norm_sq".into());
        }
        header.push("elapsed_ms".into());
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.iter.to_string(), format_float(r.alpha)];
            row.extend(r.theta.iter().map(|v| format_float(*v)));
            if norm {
                row.push(r.grad_norm_sq.map(format_float).unwrap_or_default());
            }
            row.push(format_float(r.elapsed_ms));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}
