// SPDX-License-Identifier: Apache-2.0

//! Per-step transparency records.

use serde::Serialize;

use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// Position from the start of sampling, `1..=T`.
    pub step: usize,
    /// Schedule index of the noisy input, `T..=1`.
    pub t: usize,
    /// `λ(t)`; `None` for strategies without a schedule.
    pub lambda: Option<f64>,
    /// Proxy value, once finalized.
    pub proxy: Option<f64>,
    pub mask_on_frac: f64,
    pub mu_min: f64,
    pub mu_mean: f64,
    pub mu_max: f64,
    /// Whole-tensor cosine of the prompt direction with each unsafe concept's.
    pub sims: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxyRecord {
    pub per_concept: Vec<f64>,
    pub proxy: f64,
    pub p_plus: f64,
    pub argmax: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct GuidanceTrace {
    pub method: String,
    pub concept_ids: Vec<String>,
    pub steps: Vec<StepRecord>,
    pub proxy: Option<ProxyRecord>,
}

impl StepRecord {
    /// Fills the μ statistics from a weight tensor (`None` means zero).
    pub(crate) fn set_mu(&mut self, mu: Option<&Tensor3>) {
        match mu {
            Some(m) => {
                let on = m.as_slice().iter().filter(|&&v| v != 0.0).count();
                self.mask_on_frac = on as f64 / m.len() as f64;
                self.mu_min = m.min();
                self.mu_mean = m.mean();
                self.mu_max = m.max();
            }
            None => {
                self.mask_on_frac = 0.0;
                self.mu_min = 0.0;
                self.mu_mean = 0.0;
                self.mu_max = 0.0;
            }
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl GuidanceTrace {
    pub fn csv_columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = ["step", "t", "lambda", "P", "mask_on_frac", "mu_min", "mu_mean", "mu_max"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        cols.extend(self.concept_ids.iter().map(|id| format!("sim_{id}")));
        cols
    }

    /// Trace as CSV, one row per executed step.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.csv_columns()).expect("in-memory write");
        for r in &self.steps {
            let mut cells = vec![
                r.step.to_string(),
                r.t.to_string(),
                opt(r.lambda),
                opt(r.proxy),
                format!("{}", r.mask_on_frac),
                format!("{}", r.mu_min),
                format!("{}", r.mu_mean),
                format!("{}", r.mu_max),
            ];
            cells.extend(r.sims.iter().map(|s| format!("{s}")));
            w.write_record(&cells).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}
