//! Steady-state selection, summary statistics and configuration comparison.
//!
//! Standard deviations are population deviations (divide by n). Quantiles
//! interpolate linearly between order statistics at rank `p * (n - 1)`.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("no measurements to select from")]
    Empty,
    #[error("comparison needs at least two configurations, got {0}")]
    TooFewConfigurations(usize),
    #[error("configuration {0:?} has no measurements")]
    NoData(String),
}

/// The second half of one repeat: the last `ceil(n / 2)` values.
pub fn second_half<T>(values: &[T]) -> &[T] {
    &values[values.len() / 2..]
}

/// Drop the warm-up half of every repeat and concatenate the rest.
pub fn select_steady_state<T: Copy>(repeats: &[Vec<T>]) -> Result<Vec<T>, StatsError> {
    let total: usize = repeats.iter().map(|r| r.len() - r.len() / 2).sum();
    if total == 0 {
        return Err(StatsError::Empty);
    }
    let mut out = Vec::with_capacity(total);
    for r in repeats {
        out.extend_from_slice(second_half(r));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub n_selected: usize,
    pub mean_ns: f64,
    pub median_ns: f64,
    pub q25_ns: f64,
    pub q75_ns: f64,
    pub min_ns: f64,
    pub max_ns: f64,
    pub stddev_ns: f64,
    pub cv_percent: f64,
    /// Mean minus the baseline mean, when a baseline is known.
    pub mean_overhead_ns: Option<f64>,
}

/// Quantile of sorted data by linear interpolation.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn summarize(
    label: &str,
    values: &[f64],
    baseline_mean: Option<f64>,
) -> Result<Summary, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    // Welford's update keeps the variance accurate for large n.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let n = values.len();
    let stddev = (m2 / n as f64).max(0.0).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(Summary {
        label: label.to_owned(),
        n_selected: n,
        mean_ns: mean,
        median_ns: quantile_sorted(&sorted, 0.5),
        q25_ns: quantile_sorted(&sorted, 0.25),
        q75_ns: quantile_sorted(&sorted, 0.75),
        min_ns: sorted[0],
        max_ns: sorted[n - 1],
        stddev_ns: stddev,
        cv_percent: if mean == 0.0 { 0.0 } else { 100.0 * stddev / mean },
        mean_overhead_ns: baseline_mean.map(|b| mean - b),
    })
}

/// Coefficient of variation in percent, population form.
pub fn cv_percent(values: &[f64]) -> Option<f64> {
    summarize("", values, None).ok().map(|s| s.cv_percent)
}

/// `numerator / denominator`, with equal values giving exactly 1 and a
/// non-positive denominator giving no ratio.
pub fn speedup_ratio(numerator: f64, denominator: f64) -> Option<f64> {
    if numerator == denominator {
        Some(1.0)
    } else if denominator > 0.0 {
        Some(numerator / denominator)
    } else {
        None
    }
}

/// Raw measurements of one configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigurationData {
    pub label: String,
    /// Elapsed nanoseconds per iteration, one vector per successful repeat.
    pub repeats: Vec<Vec<u64>>,
    /// Resident-memory samples (bytes) across all repeats.
    pub memory_bytes: Vec<u64>,
    pub failed_repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub summary: Summary,
    pub memory_cv_percent: Option<f64>,
    pub repeats: usize,
    pub failed_repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioBasis {
    /// Mean minus the baseline mean.
    Overhead,
    /// Plain means, used when no baseline configuration is present.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub basis: RatioBasis,
    /// `ratios[i][j]` = value of row i / value of row j; "row j is this many
    /// times faster than row i".
    pub ratios: Vec<Vec<Option<f64>>>,
    pub warnings: Vec<String>,
}

pub const BASELINE_LABEL: &str = "baseline";
pub const DIRECT_LABEL: &str = "direct-id";

pub const CSV_HEADER: &str =
    "config,n,mean_ns,median_ns,q25_ns,q75_ns,min_ns,max_ns,stddev_ns,cv_pct,overhead_ns";

pub fn compare(data: &[ConfigurationData]) -> Result<ComparisonTable, StatsError> {
    if data.len() < 2 {
        return Err(StatsError::TooFewConfigurations(data.len()));
    }
    let mut warnings = Vec::new();
    let mut selected = Vec::with_capacity(data.len());
    for d in data {
        let s = select_steady_state(&d.repeats).map_err(|_| StatsError::NoData(d.label.clone()))?;
        selected.push(s.into_iter().map(|v| v as f64).collect::<Vec<f64>>());
    }
    let baseline_mean = match data.iter().position(|d| d.label == BASELINE_LABEL) {
        Some(i) => Some(summarize(BASELINE_LABEL, &selected[i], None)?.mean_ns),
        None => {
            warnings.push(
                "no baseline configuration: overheads omitted, ratios compare plain means".into(),
            );
            None
        }
    };
    let mut rows = Vec::with_capacity(data.len());
    for (d, values) in data.iter().zip(&selected) {
        let summary = summarize(&d.label, values, baseline_mean)?;
        let mem: Vec<f64> = d.memory_bytes.iter().map(|&b| b as f64).collect();
        if d.failed_repeats > 0 {
            warnings.push(format!("{}: {} failed repeats excluded", d.label, d.failed_repeats));
        }
        rows.push(ComparisonRow {
            summary,
            memory_cv_percent: cv_percent(&mem),
            repeats: d.repeats.len(),
            failed_repeats: d.failed_repeats,
        });
    }
    let basis = if baseline_mean.is_some() {
        RatioBasis::Overhead
    } else {
        RatioBasis::Mean
    };
    let value = |r: &ComparisonRow| match basis {
        RatioBasis::Overhead => r.summary.mean_overhead_ns.unwrap_or(0.0),
        RatioBasis::Mean => r.summary.mean_ns,
    };
    let ratios = rows
        .iter()
        .map(|a| rows.iter().map(|b| speedup_ratio(value(a), value(b))).collect())
        .collect();
    Ok(ComparisonTable {
        rows,
        basis,
        ratios,
        warnings,
    })
}

impl ComparisonTable {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.summary.label == label)
    }

    fn index(&self, label: &str) -> Option<usize> {
        self.rows.iter().position(|r| r.summary.label == label)
    }

    /// How many times cheaper `label` is than `reference` on the ratio basis.
    pub fn ratio(&self, reference: &str, label: &str) -> Option<f64> {
        self.ratios[self.index(reference)?][self.index(label)?]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let s = &r.summary;
            let overhead = s
                .mean_overhead_ns
                .map_or_else(String::new, |o| format!("{o:.3}"));
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.4},{}",
                s.label,
                s.n_selected,
                s.mean_ns,
                s.median_ns,
                s.q25_ns,
                s.q75_ns,
                s.min_ns,
                s.max_ns,
                s.stddev_ns,
                s.cv_percent,
                overhead
            );
        }
        out
    }

    /// Five-number summaries for a box plot, one line per configuration.
    pub fn to_plot_data(&self) -> String {
        let mut out = String::new();
        out.push_str("# index config min_ns q25_ns median_ns q75_ns max_ns\n");
        out.push_str(
            "# gnuplot: plot 'FILE' using 1:4:3:7:6:xticlabels(2) with candlesticks whiskerbars, \
             '' using 1:5:5:5:5 with candlesticks notitle\n",
        );
        for (i, r) in self.rows.iter().enumerate() {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "{i} {} {:.3} {:.3} {:.3} {:.3} {:.3}",
                s.label, s.min_ns, s.q25_ns, s.median_ns, s.q75_ns, s.max_ns
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let headers = [
            "config", "n", "mean", "median", "q25", "q75", "min", "max", "stddev", "cv%",
            "overhead", "mem cv%",
        ];
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let s = &r.summary;
                vec![
                    s.label.clone(),
                    s.n_selected.to_string(),
                    format!("{:.1}", s.mean_ns),
                    format!("{:.1}", s.median_ns),
                    format!("{:.1}", s.q25_ns),
                    format!("{:.1}", s.q75_ns),
                    format!("{:.0}", s.min_ns),
                    format!("{:.0}", s.max_ns),
                    format!("{:.1}", s.stddev_ns),
                    format!("{:.2}", s.cv_percent),
                    s.mean_overhead_ns.map_or("-".into(), |o| format!("{o:.1}")),
                    r.memory_cv_percent.map_or("-".into(), |c| format!("{c:.2}")),
                ]
            })
            .collect();
        let mut out = String::new();
        out.push_str(
            "# times in ns per iteration; second half of each repeat; population stddev\n",
        );
        render_table(&mut out, &headers, &cells);

        let basis = match self.basis {
            RatioBasis::Overhead => "mean overhead",
            RatioBasis::Mean => "mean",
        };
        if let Some(d) = self.index(DIRECT_LABEL) {
            let _ = writeln!(out, "\nspeedup vs {DIRECT_LABEL} ({basis} ratio):");
            for (j, r) in self.rows.iter().enumerate() {
                if j != d {
                    let _ = writeln!(
                        out,
                        "  {:<20} {}",
                        r.summary.label,
                        fmt_ratio(self.ratios[d][j])
                    );
                }
            }
        }
        let _ = writeln!(out, "\nratio matrix ({basis}, row / column):");
        let mut headers = vec![String::new()];
        headers.extend(self.rows.iter().map(|r| r.summary.label.clone()));
        let matrix: Vec<Vec<String>> = self
            .rows
            .iter()
            .zip(&self.ratios)
            .map(|(r, row)| {
                let mut line = vec![r.summary.label.clone()];
                line.extend(row.iter().map(|&x| fmt_ratio(x)));
                line
            })
            .collect();
        let headers: Vec<&str> = headers.iter().map(String::as_str).collect();
        render_table(&mut out, &headers, &matrix);
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or("-".into(), |x| format!("{x:.2}"))
}

fn render_table(out: &mut String, headers: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let mut first = true;
        for (c, w) in cells.zip(&widths) {
            if first {
                let _ = write!(out, "{c:<w$}");
                first = false;
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(out, &mut headers.iter().copied());
    for row in rows {
        line(out, &mut row.iter().map(String::as_str));
    }
}
