use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Which branch of the paired t-test produced the p-value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TTestKind {
    Regular,
    /// Every difference is zero; reported as p = 1.
    IdenticalSamples,
    /// Nonzero but constant differences; the statistic is infinite and p = 0.
    ZeroVariance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub kind: TTestKind,
    pub statistic: Real,
    pub df: usize,
    pub p_value: Real,
    pub mean_difference: Real,
}

/// Two-sided paired t-test of `a - b`.
pub fn paired_t_test(a: &[Real], b: &[Real]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired t-test needs two equal-length samples of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as Real;
    let d: Vec<Real> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<Real>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / (n - 1.0);
    let df = a.len() - 1;
    if d.iter().all(|&v| v == 0.0) {
        return Ok(TTest {
            kind: TTestKind::IdenticalSamples,
            statistic: 0.0,
            df,
            p_value: 1.0,
            mean_difference: 0.0,
        });
    }
    if var == 0.0 {
        return Ok(TTest {
            kind: TTestKind::ZeroVariance,
            statistic: mean.signum() * Real::INFINITY,
            df,
            p_value: 0.0,
            mean_difference: mean,
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = 2.0 * (1.0 - dist.cdf((t as f64).abs()));
    Ok(TTest {
        kind: TTestKind::Regular,
        statistic: t,
        df,
        p_value: p as Real,
        mean_difference: mean,
    })
}

/// Final result of one run on one case (dataset, season, seed, ...).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: String,
    pub rmse: Real,
    pub mae: Real,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub cases: Vec<CaseResult>,
    pub mean_rmse: Real,
    pub mean_mae: Real,
    pub mean_params: Real,
}

/// Paired comparison of the reference variant against another one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub variant: String,
    pub rmse: TTest,
    pub mae: TTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub reference: String,
    pub variants: Vec<VariantSummary>,
    pub comparisons: Vec<Comparison>,
}

fn mean(v: impl Iterator<Item = Real> + Clone) -> Real {
    let n = v.clone().count() as Real;
    v.sum::<Real>() / n
}

/// Per-case and average metrics for every variant plus paired t-tests of
/// the first (reference) variant against each other one. Every variant must
/// cover the same cases.
pub fn ablation_report(runs: &[(String, Vec<CaseResult>)]) -> Result<AblationReport> {
    if runs.len() < 2 {
        return Err(Error::InvalidArgument("an ablation report needs at least two variants".into()));
    }
    let case_set = |cs: &[CaseResult]| cs.iter().map(|c| c.case.clone()).collect::<BTreeSet<_>>();
    let reference = case_set(&runs[0].1);
    if reference.len() != runs[0].1.len() {
        return Err(Error::InvalidArgument(format!("variant {} lists a case twice", runs[0].0)));
    }
    for (name, cases) in &runs[1..] {
        if case_set(cases) != reference || cases.len() != reference.len() {
            return Err(Error::InvalidArgument(format!("variant {name} does not cover the same cases as {}", runs[0].0)));
        }
    }
    let sorted = |cs: &[CaseResult]| {
        let mut v = cs.to_vec();
        v.sort_by(|a, b| a.case.cmp(&b.case));
        v
    };
    let variants: Vec<VariantSummary> = runs
        .iter()
        .map(|(name, cases)| {
            let cases = sorted(cases);
            VariantSummary {
                variant: name.clone(),
                mean_rmse: mean(cases.iter().map(|c| c.rmse)),
                mean_mae: mean(cases.iter().map(|c| c.mae)),
                mean_params: mean(cases.iter().map(|c| c.params as Real)),
                cases,
            }
        })
        .collect();
    let base = &variants[0];
    let mut comparisons = Vec::new();
    for v in &variants[1..] {
        let pick = |s: &VariantSummary, f: fn(&CaseResult) -> Real| s.cases.iter().map(f).collect::<Vec<_>>();
        comparisons.push(Comparison {
            variant: v.variant.clone(),
            rmse: paired_t_test(&pick(base, |c| c.rmse), &pick(v, |c| c.rmse))?,
            mae: paired_t_test(&pick(base, |c| c.mae), &pick(v, |c| c.mae))?,
        });
    }
    Ok(AblationReport {
        reference: base.variant.clone(),
        variants,
        comparisons,
    })
}

impl AblationReport {
    /// Plain-text table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<22} {:<16} {:>12} {:>12} {:>10}", "variant", "case", "rmse", "mae", "params");
        for v in &self.variants {
            for c in &v.cases {
                let _ = writeln!(s, "{:<22} {:<16} {:>12.4} {:>12.4} {:>10}", v.variant, c.case, c.rmse, c.mae, c.params);
            }
            let _ = writeln!(s, "{:<22} {:<16} {:>12.4} {:>12.4} {:>10.1}", v.variant, "average", v.mean_rmse, v.mean_mae, v.mean_params);
        }
        let _ = writeln!(s);
        for c in &self.comparisons {
            for (metric, t) in [("rmse", &c.rmse), ("mae", &c.mae)] {
                let _ = writeln!(
                    s,
                    "{} vs {} ({metric}): t = {:.4}, df = {}, p = {:.4} [{}]",
                    self.reference,
                    c.variant,
                    t.statistic,
                    t.df,
                    t.p_value,
                    serde_json::to_value(t.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
                );
            }
        }
        s
    }
}
