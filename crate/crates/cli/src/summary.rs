//! Mean and standard deviation of test metrics across runs.

use smartkge::{Error, MetricsReport, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub name: &'static str,
    pub mean: f64,
    /// Population standard deviation (divisor `n`), so a single run gives 0.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub variant: String,
    pub dim: usize,
    pub n_runs: usize,
    pub metrics: Vec<MetricSummary>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// The reported scale of each metric: MRR × 1000 and hits in percent.
pub fn scaled_metrics(m: &MetricsReport) -> [(&'static str, f64); 4] {
    [
        ("mrr_x1000", 1000.0 * m.mrr),
        ("h1", 100.0 * m.hits_at_1),
        ("h3", 100.0 * m.hits_at_3),
        ("h10", 100.0 * m.hits_at_10),
    ]
}

impl Summary {
    pub fn from_reports(variant: &str, dim: usize, reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Config("cannot summarize zero runs".into()));
        }
        let scaled: Vec<[(&'static str, f64); 4]> = reports.iter().map(scaled_metrics).collect();
        let metrics = (0..4)
            .map(|i| {
                let values: Vec<f64> = scaled.iter().map(|row| row[i].1).collect();
                let (mean, std) = mean_std(&values);
                MetricSummary {
                    name: scaled[0][i].0,
                    mean,
                    std,
                }
            })
            .collect();
        Ok(Self {
            variant: variant.to_string(),
            dim,
            n_runs: reports.len(),
            metrics,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tdim\tn_runs\tmetric\tmean\tstd\n");
        for m in &self.metrics {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                self.variant, self.dim, self.n_runs, m.name, m.mean, m.std
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "# {} (d = {}, {} run{})\n\n| metric | mean ± std |\n|---|---|\n",
            self.variant,
            self.dim,
            self.n_runs,
            if self.n_runs == 1 { "" } else { "s" }
        );
        for m in &self.metrics {
            out.push_str(&format!("| {} | {:.1} ± {:.1} |\n", m.name, m.mean, m.std));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(mrr: f64, h1: f64, h3: f64, h10: f64) -> MetricsReport {
        MetricsReport {
            mrr,
            hits_at_1: h1,
            hits_at_3: h3,
            hits_at_10: h10,
            n_queries: 10,
        }
    }

    #[test]
    fn single_run_has_zero_spread() {
        let s = Summary::from_reports("smart", 16, &[report(0.5, 0.4, 0.5, 0.9)]).unwrap();
        assert!(s.metrics.iter().all(|m| m.std == 0.0));
        assert_eq!(s.metrics[0].mean, 500.0);
    }

    #[test]
    fn population_spread() {
        let s = Summary::from_reports("smart", 16, &[report(0.2, 0.0, 0.0, 0.0), report(0.4, 0.0, 0.0, 1.0)]).unwrap();
        assert!((s.metrics[0].mean - 300.0).abs() < 1e-9);
        assert!((s.metrics[0].std - 100.0).abs() < 1e-9);
        assert!((s.metrics[3].std - 50.0).abs() < 1e-9);
        assert!(s.to_markdown().contains("| mrr_x1000 | 300.0 ± 100.0 |"));
        assert_eq!(s.to_tsv().lines().count(), 5);
        assert!(Summary::from_reports("smart", 16, &[]).is_err());
    }
}
