//! Benchmark result tables and their CSV, JSON and SVG renderings.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ScenarioConfig, TrialMetrics};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub scenario: String,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub metrics: Option<TrialMetrics>,
    pub error: Option<String>,
}

/// Mean and standard error (sample SD over the square root of the count).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub se: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let se = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        };
        Some(MetricSummary { mean, se })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub n: usize,
    pub alpha: f64,
    pub completed: usize,
    pub failures: usize,
    pub stage1_fdp: Option<MetricSummary>,
    pub stage1_tpr: Option<MetricSummary>,
    pub bh_fdp: Option<MetricSummary>,
    pub bh_tpr: Option<MetricSummary>,
    pub stage2_fdp: Option<MetricSummary>,
    pub stage2_tpr: Option<MetricSummary>,
    pub discoveries: Option<MetricSummary>,
    pub bh_discoveries: Option<MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub trials: Vec<TrialRow>,
    pub aggregates: Vec<AggregateRow>,
}

fn summarize<F: Fn(&TrialMetrics) -> Option<f64>>(metrics: &[&TrialMetrics], f: F) -> Option<MetricSummary> {
    let values: Vec<f64> = metrics.iter().filter_map(|m| f(m)).collect();
    MetricSummary::of(&values)
}

impl BenchmarkTable {
    /// Builds the table from `(scenario index, trial index, outcome)` triples
    /// in any order; rows come out sorted by scenario then trial.
    pub fn from_results(grid: &[ScenarioConfig], mut results: Vec<(usize, usize, Result<TrialMetrics>)>) -> Self {
        results.sort_by_key(|&(s, t, _)| (s, t));
        let trials: Vec<TrialRow> = results
            .into_iter()
            .map(|(s, t, outcome)| {
                let cfg = &grid[s];
                let (metrics, error) = match outcome {
                    Ok(m) => (Some(m), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                TrialRow { scenario: cfg.label(), n: cfg.n, trial: t, seed: cfg.trial_seed(t), metrics, error }
            })
            .collect();
        let mut aggregates = Vec::with_capacity(grid.len());
        let mut offset = 0;
        for cfg in grid {
            let rows = &trials[offset..offset + cfg.trial_count];
            offset += cfg.trial_count;
            let ok: Vec<&TrialMetrics> = rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
            aggregates.push(AggregateRow {
                scenario: cfg.label(),
                n: cfg.n,
                alpha: cfg.alpha,
                completed: ok.len(),
                failures: rows.len() - ok.len(),
                stage1_fdp: summarize(&ok, |m| Some(m.stage1_fdp)),
                stage1_tpr: summarize(&ok, |m| Some(m.stage1_tpr)),
                bh_fdp: summarize(&ok, |m| Some(m.bh_fdp)),
                bh_tpr: summarize(&ok, |m| Some(m.bh_tpr)),
                stage2_fdp: summarize(&ok, |m| m.stage2_fdp),
                stage2_tpr: summarize(&ok, |m| m.stage2_tpr),
                discoveries: summarize(&ok, |m| Some(m.discoveries as f64)),
                bh_discoveries: summarize(&ok, |m| Some(m.bh_discoveries as f64)),
            });
        }
        BenchmarkTable { trials, aggregates }
    }

    pub fn failure_count(&self) -> usize {
        self.aggregates.iter().map(|a| a.failures).sum()
    }

    pub fn write_trials_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "scenario,n,trial,seed,status,stage1_fdp,stage1_tpr,bh_fdp,bh_tpr,stage2_fdp,stage2_tpr,discoveries,bh_discoveries"
        )?;
        for r in &self.trials {
            write!(out, "{},{},{},{},", r.scenario, r.n, r.trial, r.seed)?;
            match &r.metrics {
                Some(m) => writeln!(
                    out,
                    "ok,{},{},{},{},{},{},{},{}",
                    m.stage1_fdp,
                    m.stage1_tpr,
                    m.bh_fdp,
                    m.bh_tpr,
                    opt(m.stage2_fdp),
                    opt(m.stage2_tpr),
                    m.discoveries,
                    m.bh_discoveries
                )?,
                None => writeln!(out, "failed,,,,,,,,")?,
            }
        }
        Ok(())
    }

    pub fn write_aggregate_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let metrics = ["stage1_fdp", "stage1_tpr", "bh_fdp", "bh_tpr", "stage2_fdp", "stage2_tpr", "discoveries", "bh_discoveries"];
        let mut header = String::from("scenario,n,alpha,completed,failures");
        for m in metrics {
            write!(header, ",{m}_mean,{m}_se").expect("writing to a String");
        }
        writeln!(out, "{header}")?;
        for a in &self.aggregates {
            write!(out, "{},{},{},{},{}", a.scenario, a.n, a.alpha, a.completed, a.failures)?;
            for s in [a.stage1_fdp, a.stage1_tpr, a.bh_fdp, a.bh_tpr, a.stage2_fdp, a.stage2_tpr, a.discoveries, a.bh_discoveries] {
                match s {
                    Some(s) => write!(out, ",{},{}", s.mean, s.se)?,
                    None => write!(out, ",,")?,
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Power and FDR against sample size, one line per scenario and method,
    /// with the target level drawn as a horizontal line on the FDR panel.
    pub fn write_svg<W: Write>(&self, mut out: W) -> Result<()> {
        if self.aggregates.is_empty() {
            return Err(Error::input("nothing to plot"));
        }
        let (w, h, pad) = (420.0, 300.0, 50.0);
        let ns: Vec<f64> = self.aggregates.iter().map(|a| a.n as f64).collect();
        let (lo, hi) = ns.iter().fold((f64::INFINITY, 0.0_f64), |(l, u), &n| (l.min(n), u.max(n)));
        let (lo, hi) = (lo.ln(), hi.ln().max(lo.ln() + 1e-9));
        let xpos = |n: f64, panel: f64| panel * w + pad + (n.ln() - lo) / (hi - lo) * (w - 2.0 * pad);
        let ypos = |v: f64| h - pad - v.clamp(0.0, 1.0) * (h - 2.0 * pad);

        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{h}" font-family="sans-serif" font-size="11">"#, 2.0 * w);
        for (panel, title) in [(0.0, "power"), (1.0, "FDR")] {
            let x0 = panel * w;
            let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{title}</text>"#, x0 + w / 2.0);
            let _ = writeln!(svg, r#"<rect x="{}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#, x0 + pad, w - 2.0 * pad, h - 2.0 * pad);
            for tick in [0.0, 0.5, 1.0] {
                let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{tick}</text>"#, x0 + pad - 4.0, ypos(tick) + 4.0);
            }
            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">n (log scale)</text>"#, x0 + w / 2.0, h - 15.0);
        }
        let alpha = self.aggregates[0].alpha;
        let _ = writeln!(svg, r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="red" stroke-dasharray="4 3"/>"#, w + pad, 2.0 * w - pad, y = ypos(alpha));

        let mut scenarios: Vec<&str> = self.aggregates.iter().map(|a| a.scenario.as_str()).collect();
        scenarios.dedup();
        let palette = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
        type Pick = fn(&AggregateRow) -> Option<MetricSummary>;
        let series: [(&str, Pick, Pick); 3] = [
            ("bb-fdr", |a| a.stage1_tpr, |a| a.stage1_fdp),
            ("bh", |a| a.bh_tpr, |a| a.bh_fdp),
            ("stage2", |a| a.stage2_tpr, |a| a.stage2_fdp),
        ];
        let mut legend_y = pad + 12.0;
        for (si, scenario) in scenarios.iter().enumerate() {
            let color = palette[si % palette.len()];
            let rows: Vec<&AggregateRow> = self.aggregates.iter().filter(|a| a.scenario == *scenario).collect();
            for (k, (method, power, fdr)) in series.iter().enumerate() {
                let dash = ["", r#" stroke-dasharray="6 3""#, r#" stroke-dasharray="2 2""#][k];
                let mut drawn = false;
                for (panel, pick) in [(0.0, power), (1.0, fdr)] {
                    let pts: Vec<String> = rows
                        .iter()
                        .filter_map(|a| pick(a).map(|s| format!("{:.1},{:.1}", xpos(a.n as f64, panel), ypos(s.mean))))
                        .collect();
                    if pts.is_empty() {
                        continue;
                    }
                    drawn = true;
                    let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}"{dash}/>"#, pts.join(" "));
                }
                if drawn {
                    let _ = writeln!(svg, r#"<text x="{}" y="{legend_y}" fill="{color}">{scenario} {method}</text>"#, pad + 6.0);
                    legend_y += 13.0;
                }
            }
        }
        svg.push_str("</svg>\n");
        out.write_all(svg.as_bytes())?;
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{AlternativeKind, PriorKind};

    fn metrics(fdp: f64) -> TrialMetrics {
        TrialMetrics {
            stage1_fdp: fdp,
            stage1_tpr: 0.5,
            bh_fdp: 0.0,
            bh_tpr: 0.25,
            stage2_fdp: None,
            stage2_tpr: None,
            discoveries: 10,
            bh_discoveries: 4,
        }
    }

    #[test]
    fn aggregates_exclude_failures_and_ignore_order() {
        let grid = vec![ScenarioConfig::new(PriorKind::Linear, AlternativeKind::Ws, 100, 3)];
        let results = vec![
            (0, 2, Ok(metrics(0.2))),
            (0, 0, Ok(metrics(0.1))),
            (0, 1, Err(Error::Numerical("boom".into()))),
        ];
        let table = BenchmarkTable::from_results(&grid, results);
        assert_eq!(table.trials.iter().map(|r| r.trial).collect::<Vec<_>>(), vec![0, 1, 2]);
        let agg = &table.aggregates[0];
        assert_eq!((agg.completed, agg.failures), (2, 1));
        let s = agg.stage1_fdp.unwrap();
        assert!((s.mean - 0.15).abs() < 1e-12);
        assert!((s.se - 0.05).abs() < 1e-12);
        assert!(agg.stage2_fdp.is_none());
    }

    #[test]
    fn single_trial_table_equals_trial() {
        let grid = vec![ScenarioConfig::new(PriorKind::Constant, AlternativeKind::Ps, 50, 1)];
        let table = BenchmarkTable::from_results(&grid, vec![(0, 0, Ok(metrics(0.3)))]);
        let agg = &table.aggregates[0];
        assert_eq!(agg.stage1_fdp, Some(MetricSummary { mean: 0.3, se: 0.0 }));
        assert_eq!(agg.discoveries.unwrap().mean, 10.0);
    }

    #[test]
    fn renderings() {
        let grid = vec![
            ScenarioConfig::new(PriorKind::Linear, AlternativeKind::Ws, 100, 2),
            ScenarioConfig::new(PriorKind::Linear, AlternativeKind::Ws, 1000, 2),
        ];
        let results = (0..2).flat_map(|s| (0..2).map(move |t| (s, t, Ok(metrics(0.1))))).collect();
        let table = BenchmarkTable::from_results(&grid, results);
        let mut csv = Vec::new();
        table.write_trials_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 5);
        let mut agg = Vec::new();
        table.write_aggregate_csv(&mut agg).unwrap();
        assert_eq!(String::from_utf8(agg).unwrap().lines().count(), 3);
        let mut svg = Vec::new();
        table.write_svg(&mut svg).unwrap();
        let svg = String::from_utf8(svg).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
        let mut json = Vec::new();
        table.write_json(&mut json).unwrap();
        let back: BenchmarkTable = serde_json::from_slice(&json).unwrap();
        assert_eq!(back, table);
    }
}
