//! Ablation matrices: named config variants run side by side and compared
//! with two-sample t-tests.
//!
//! A matrix file holds base keys, then `[name]` sections of overrides and
//! `sweep key = v1, v2, ...` lines (values optional for keys with a
//! standard grid):
//!
//! ```text
//! repeats = 2
//! [bfs]
//! masking = bfs
//! [random]
//! masking = random
//! sweep k
//! ```

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{FedniError, Result};
use crate::graphcons::PopulationGraph;

use super::config::{parse_pairs, ExperimentConfig};
use super::runner::{
    metric_value, run_experiment, ExperimentReport, Stat, Summary, Timings, METRICS,
};

/// Standard sweep grid for a key, if it has one.
pub fn default_grid(key: &str) -> Option<Vec<String>> {
    let v: &[&str] = match key {
        "alpha" | "beta" => &["0.01", "0.1", "0.5", "1", "2", "5"],
        "k" | "k_prime" => &["3", "5", "10", "15", "20", "25", "30", "40"],
        "inpaint_epochs" | "classify_epochs" => &["1", "5", "10", "15", "20"],
        "clients" => &["2", "3", "4", "5", "6", "7", "8", "9", "10"],
        _ => return None,
    };
    Some(v.iter().map(|s| s.to_string()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub overrides: Vec<(String, String)>,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub base: ExperimentConfig,
    pub variants: Vec<Variant>,
}

impl AblationMatrix {
    pub fn parse(text: &str) -> Result<Self> {
        let mut base_text = String::new();
        let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
        let mut in_base = true;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                in_base = false;
                sections.push((name.trim().to_string(), Vec::new()));
            } else if let Some(rest) = line.strip_prefix("sweep ") {
                in_base = false;
                let (key, values) = match rest.split_once('=') {
                    Some((k, v)) => (
                        k.trim(),
                        v.split(',').map(|s| s.trim().to_string()).collect(),
                    ),
                    None => {
                        let k = rest.trim();
                        let grid = default_grid(k).ok_or_else(|| {
                            FedniError::Config(format!(
                                "line {}: '{k}' has no standard grid",
                                no + 1
                            ))
                        })?;
                        (k, grid)
                    }
                };
                for v in values {
                    sections.push((format!("{key}={v}"), vec![(key.to_string(), v)]));
                }
            } else if in_base {
                base_text.push_str(line);
                base_text.push('\n');
            } else {
                let pairs = parse_pairs(line)?;
                let last = sections.last_mut().expect("not in base");
                last.1.extend(pairs.into_iter().map(|(_, k, v)| (k, v)));
            }
        }
        let base = ExperimentConfig::parse(&base_text)?;
        if sections.is_empty() {
            sections.push(("base".into(), Vec::new()));
        }
        let mut variants = Vec::with_capacity(sections.len());
        for (name, overrides) in sections {
            if variants.iter().any(|v: &Variant| v.name == name) {
                return Err(FedniError::Config(format!(
                    "variant '{name}' defined twice"
                )));
            }
            let mut config = base.clone();
            for (k, v) in &overrides {
                config
                    .set(k, v)
                    .map_err(|e| FedniError::Config(format!("variant '{name}': {e}")))?;
            }
            config
                .validate()
                .map_err(|e| FedniError::Config(format!("variant '{name}': {e}")))?;
            variants.push(Variant {
                name,
                overrides,
                config,
            });
        }
        Ok(Self { base, variants })
    }

    /// Applies `FEDNI_SEED` to the base and every variant.
    pub fn apply_env(&mut self) -> Result<()> {
        self.base.apply_env()?;
        for v in &mut self.variants {
            v.config.seed = self.base.seed;
        }
        Ok(())
    }
}

/// Pooled-variance two-sample t-test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

pub fn pooled_t_test(a: &[f64], b: &[f64]) -> Option<TTest> {
    let (n1, n2) = (a.len(), b.len());
    if n1 < 2 || n2 < 2 {
        return None;
    }
    let (sa, sb) = (Stat::of(a), Stat::of(b));
    let df = (n1 + n2 - 2) as f64;
    let pooled = ((n1 - 1) as f64 * sa.std.powi(2) + (n2 - 1) as f64 * sb.std.powi(2)) / df;
    let se = (pooled * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let diff = sa.mean - sb.mean;
    if se == 0.0 {
        return Some(if diff == 0.0 {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest {
                t: diff.signum() * f64::INFINITY,
                df,
                p: 0.0,
            }
        });
    }
    let t = diff / se;
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(TTest {
        t,
        df,
        p: (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub overrides: Vec<(String, String)>,
    pub summary: Summary,
    /// Per-repeat generator Fréchet distance (inpainting modes only).
    pub frechet: Stat,
    pub report: ExperimentReport,
}

impl VariantResult {
    /// Per-cell values of a classification metric, or per-repeat values of
    /// `frechet`.
    pub fn values(&self, metric: &str) -> Vec<f64> {
        if metric == "frechet" {
            return self
                .report
                .inpainting
                .iter()
                .map(|s| s.quality.frechet)
                .collect();
        }
        self.report
            .results
            .iter()
            .flat_map(|r| &r.cells)
            .filter_map(|c| metric_value(&c.metrics, metric))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub variant: String,
    pub reference: String,
    pub metric: String,
    pub mean_variant: f64,
    pub mean_reference: f64,
    pub test: Option<TTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<VariantResult>,
    /// Every later variant against the first one.
    pub comparisons: Vec<Comparison>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }
}

pub fn compare(a: &VariantResult, b: &VariantResult, metric: &str) -> Comparison {
    let (va, vb) = (a.values(metric), b.values(metric));
    Comparison {
        variant: a.name.clone(),
        reference: b.name.clone(),
        metric: metric.to_string(),
        mean_variant: Stat::of(&va).mean,
        mean_reference: Stat::of(&vb).mean,
        test: pooled_t_test(&va, &vb),
    }
}

pub fn run_ablation(
    matrix: &AblationMatrix,
    data: &PopulationGraph,
) -> Result<(AblationReport, Vec<Timings>)> {
    let mut variants = Vec::with_capacity(matrix.variants.len());
    let mut timings = Vec::with_capacity(matrix.variants.len());
    for v in &matrix.variants {
        let (report, t) = run_experiment(&v.config, data)?;
        timings.push(t);
        let frechet: Vec<f64> = report
            .inpainting
            .iter()
            .map(|s| s.quality.frechet)
            .collect();
        variants.push(VariantResult {
            name: v.name.clone(),
            overrides: v.overrides.clone(),
            summary: report.results[0].summary,
            frechet: Stat::of(&frechet),
            report,
        });
    }
    let mut comparisons = Vec::new();
    if let Some((reference, rest)) = variants.split_first() {
        for v in rest {
            for metric in METRICS.iter().copied().chain(std::iter::once("frechet")) {
                comparisons.push(compare(v, reference, metric));
            }
        }
    }
    Ok((
        AblationReport {
            variants,
            comparisons,
        },
        timings,
    ))
}
