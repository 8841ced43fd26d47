//! Evaluation indices ε₁ (filtering gain) and ε₂ (relative RMS error).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cubature::FilterBelief;
use crate::error::{Error, Result};
use crate::scenario::Dataset;

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch(format!("{what}: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::LengthMismatch(format!("{what}: empty series")));
    }
    Ok(())
}

/// `√(Σ(x̂ − xᵗ)² / Σ(xᶻ − xᵗ)²)`.
pub fn epsilon1(est: &[f64], truth: &[f64], meas: &[f64]) -> Result<f64> {
    check_lengths(est.len(), truth.len(), "estimate/truth")?;
    check_lengths(meas.len(), truth.len(), "measurement/truth")?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..truth.len() {
        num += (est[i] - truth[i]).powi(2);
        den += (meas[i] - truth[i]).powi(2);
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateDenominator);
    }
    Ok((num / den).sqrt())
}

/// `√(1/S Σ((x̂ − xᵗ)/xᵗ)²)`; a zero truth sample is an error.
pub fn epsilon2(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(est.len(), truth.len(), "estimate/truth")?;
    let mut acc = 0.0;
    for i in 0..truth.len() {
        if truth[i] == 0.0 {
            return Err(Error::ZeroTruthSample { index: i });
        }
        acc += ((est[i] - truth[i]) / truth[i]).powi(2);
    }
    Ok((acc / truth.len() as f64).sqrt())
}

/// `(1 − ε_robust/ε_plain)·100`.
pub fn improvement_percent(plain: f64, robust: f64) -> f64 {
    if plain == robust {
        return 0.0;
    }
    (1.0 - robust / plain) * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Delta,
    Omega,
}

impl Variable {
    pub const ALL: [Variable; 2] = [Variable::Delta, Variable::Omega];

    pub fn name(self) -> &'static str {
        match self {
            Variable::Delta => "delta",
            Variable::Omega => "omega",
        }
    }

    fn index(self) -> usize {
        match self {
            Variable::Delta => 0,
            Variable::Omega => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableMetrics {
    pub epsilon1: f64,
    pub epsilon2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub filter: String,
    pub samples: usize,
    pub delta: VariableMetrics,
    pub omega: VariableMetrics,
    /// Per-step absolute estimation error, δ then ω.
    pub error_trace: Vec<[f64; 2]>,
}

impl MetricReport {
    pub fn get(&self, var: Variable) -> VariableMetrics {
        match var {
            Variable::Delta => self.delta,
            Variable::Omega => self.omega,
        }
    }

    /// Long-format rows `filter,variable,metric,value`.
    pub fn csv_rows(&self, out: &mut String) {
        for var in Variable::ALL {
            let m = self.get(var);
            let _ = writeln!(out, "{},{},epsilon1,{:.16e}", self.filter, var.name(), m.epsilon1);
            let _ = writeln!(out, "{},{},epsilon2,{:.16e}", self.filter, var.name(), m.epsilon2);
        }
    }
}

/// ε₁ and ε₂ for δ and ω of one run, skipping `warmup` leading samples.
pub fn evaluate(filter: &str, run: &[FilterBelief], ds: &Dataset, warmup: usize) -> Result<MetricReport> {
    let means: Vec<[f64; 4]> = run.iter().map(|b| [b.mean[0], b.mean[1], b.mean[2], b.mean[3]]).collect();
    evaluate_means(filter, &means, ds, warmup)
}

/// [`evaluate`] on bare state means.
pub fn evaluate_means(filter: &str, means: &[[f64; 4]], ds: &Dataset, warmup: usize) -> Result<MetricReport> {
    check_lengths(means.len(), ds.len(), "run/dataset")?;
    if !ds.has_measurements() {
        return Err(Error::Config("dataset has no measurements".into()));
    }
    if warmup >= ds.len() {
        return Err(Error::Config(format!("warm-up {warmup} leaves no samples")));
    }
    let range = warmup..ds.len();
    let mut per = [VariableMetrics { epsilon1: 0.0, epsilon2: 0.0 }; 2];
    for var in Variable::ALL {
        let i = var.index();
        let est: Vec<f64> = means[range.clone()].iter().map(|m| m[i]).collect();
        let truth: Vec<f64> = ds.truth[range.clone()].iter().map(|x| x.to_array()[i]).collect();
        let meas: Vec<f64> = ds.measurements[range.clone()].iter().map(|z| z.to_array()[i]).collect();
        per[i] = VariableMetrics { epsilon1: epsilon1(&est, &truth, &meas)?, epsilon2: epsilon2(&est, &truth)? };
    }
    let error_trace = means[range.clone()]
        .iter()
        .zip(&ds.truth[range])
        .map(|(m, x)| [(m[0] - x.delta).abs(), (m[1] - x.omega).abs()])
        .collect();
    Ok(MetricReport { filter: filter.to_string(), samples: ds.len() - warmup, delta: per[0], omega: per[1], error_trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub plain: MetricReport,
    pub robust: MetricReport,
    /// Improvement in percent, `[δ, ω]` for ε₁ and ε₂.
    pub improvement_e1: [f64; 2],
    pub improvement_e2: [f64; 2],
}

pub fn compare_reports(plain: MetricReport, robust: MetricReport) -> Comparison {
    let imp = |f: fn(&VariableMetrics) -> f64| {
        [
            improvement_percent(f(&plain.delta), f(&robust.delta)),
            improvement_percent(f(&plain.omega), f(&robust.omega)),
        ]
    };
    let improvement_e1 = imp(|m| m.epsilon1);
    let improvement_e2 = imp(|m| m.epsilon2);
    Comparison { plain, robust, improvement_e1, improvement_e2 }
}

/// Evaluates both runs against the same dataset.
pub fn compare_report(
    ckf_run: &[FilterBelief],
    rckf_run: &[FilterBelief],
    ds: &Dataset,
    warmup: usize,
) -> Result<Comparison> {
    Ok(compare_reports(evaluate("ckf", ckf_run, ds, warmup)?, evaluate("rckf", rckf_run, ds, warmup)?))
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("filter,variable,metric,value\n");
        self.plain.csv_rows(&mut out);
        self.robust.csv_rows(&mut out);
        for var in Variable::ALL {
            let i = var.index();
            let _ = writeln!(out, "improvement,{},epsilon1,{:.16e}", var.name(), self.improvement_e1[i]);
            let _ = writeln!(out, "improvement,{},epsilon2,{:.16e}", var.name(), self.improvement_e2[i]);
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:<8} {:>12} {:>12} {:>12}", "variable", "metric", "CKF", "RCKF", "improv.%");
        for var in Variable::ALL {
            let (p, r) = (self.plain.get(var), self.robust.get(var));
            let i = var.index();
            let _ = writeln!(
                out,
                "{:<8} {:<8} {:>12.6} {:>12.6} {:>12.2}",
                var.name(),
                "eps1",
                p.epsilon1,
                r.epsilon1,
                self.improvement_e1[i]
            );
            let _ = writeln!(
                out,
                "{:<8} {:<8} {:>12.6} {:>12.6} {:>12.2}",
                var.name(),
                "eps2",
                p.epsilon2,
                r.epsilon2,
                self.improvement_e2[i]
            );
        }
        out
    }
}
