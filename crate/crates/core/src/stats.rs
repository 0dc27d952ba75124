//! Two-sample distribution tests, multiple-testing correction, and
//! marginal-density summaries.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, GroupSelector};
use crate::error::{Error, Result};

/// Result of a two-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_stat: f64,
    pub p_raw: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Two-sample KS test: exact supremum ECDF distance over the merged order
/// statistics, asymptotic p-value with the small-sample effective-n
/// correction. Two-sided.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample {
            context: "ks_two_sample".into(),
        });
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(|p, q| p.total_cmp(q));
    ys.sort_unstable_by(|p, q| p.total_cmp(q));

    let (n1, n2) = (xs.len(), ys.len());
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n1 && j < n2 {
        let v = xs[i].min(ys[j]);
        // step both ECDFs past all ties at v
        while i < n1 && xs[i] == v {
            i += 1;
        }
        while j < n2 && ys[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n1f - j as f64 / n2f).abs());
    }
    // beyond the shorter sample's support the gap only shrinks toward |1 - F|
    // which was already covered at the last merged point

    let ne = n1f * n2f / (n1f + n2f);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let p_raw = kolmogorov_sf(lambda).clamp(0.0, 1.0);
    Ok(KsResult {
        d_stat: d,
        p_raw,
        n1,
        n2,
    })
}

/// Complementary CDF of the Kolmogorov distribution,
/// Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2).
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-10 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    let mut prev_term = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        if term <= 1e-12 * sum.abs() || (j > 1 && term + prev_term <= 1e-10) {
            return 2.0 * sum;
        }
        prev_term = term;
        sign = -sign;
    }
    // series failed to converge: statistic is effectively zero
    1.0
}

/// Benjamini-Yekutieli step-up adjustment, valid under arbitrary dependence.
/// Returns adjusted p-values in the original input order.
pub fn benjamini_yekutieli(p: &[f64]) -> Result<Vec<f64>> {
    for (i, &v) in p.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::PValueOutOfRange { index: i, value: v });
        }
    }
    let m = p.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mf = m as f64;
    let c: f64 = (1..=m).map(|i| 1.0 / i as f64).sum();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]).then(i.cmp(&j)));

    let mut adjusted_sorted: Vec<f64> = order
        .iter()
        .enumerate()
        .map(|(k, &i)| p[i] * mf * c / (k + 1) as f64)
        .collect();
    // step-up monotone enforcement: suffix minimum
    for k in (0..m.saturating_sub(1)).rev() {
        adjusted_sorted[k] = adjusted_sorted[k].min(adjusted_sorted[k + 1]);
    }
    let mut out = vec![0.0; m];
    for (k, &i) in order.iter().enumerate() {
        out[i] = adjusted_sorted[k].min(1.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinSpec {
    Count(usize),
    Auto,
}

/// Density-normalized histogram (sum of density * width = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Histogram with Freedman-Diaconis auto bin count (Sturges fallback when
/// the IQR is zero). A zero-width value range collapses to one unit-width
/// bin centered on the value.
pub fn marginal_density(values: &[f64], bins: BinSpec) -> Result<Histogram> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            found: values.len(),
            context: "marginal_density".into(),
        });
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    let (min, max) = (sorted[0], sorted[n - 1]);

    let sturges = || ((n as f64).log2().ceil() as usize + 1).max(1);
    let bin_count = match bins {
        BinSpec::Count(c) => {
            if c == 0 {
                return Err(Error::invalid("histogram", "bin count must be >= 1"));
            }
            c
        }
        BinSpec::Auto => {
            let iqr = percentile_sorted(&sorted, 75.0) - percentile_sorted(&sorted, 25.0);
            if iqr <= 0.0 || max == min {
                sturges()
            } else {
                let width = 2.0 * iqr / (n as f64).cbrt();
                (((max - min) / width).ceil() as usize).clamp(1, 10_000)
            }
        }
    };

    if max == min {
        // degenerate range: one bin of unit width holding everything
        return Ok(Histogram {
            edges: vec![min - 0.5, min + 0.5],
            densities: vec![1.0],
            counts: vec![n],
        });
    }

    let width = (max - min) / bin_count as f64;
    let edges: Vec<f64> = (0..=bin_count)
        .map(|i| min + width * i as f64)
        .collect();
    let mut counts = vec![0usize; bin_count];
    for &v in &sorted {
        let mut idx = ((v - min) / width) as usize;
        if idx >= bin_count {
            idx = bin_count - 1; // right edge is closed
        }
        counts[idx] += 1;
    }
    let densities = counts
        .iter()
        .map(|&c| c as f64 / (n as f64 * width))
        .collect();
    Ok(Histogram {
        edges,
        densities,
        counts,
    })
}

/// Linear-interpolation percentile of a sorted slice, q in [0, 100].
pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q / 100.0;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Significance tier on BY-adjusted p-values: `**` P < .001, `*` P < .05.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Ns,
    Significant,
    HighlySignificant,
}

impl Tier {
    pub fn from_adjusted(p_adjusted: f64) -> Tier {
        if p_adjusted < 0.001 {
            Tier::HighlySignificant
        } else if p_adjusted < 0.05 {
            Tier::Significant
        } else {
            Tier::Ns
        }
    }

    pub fn symbol(&self) -> &'static str {
        match self {
            Tier::Ns => "ns",
            Tier::Significant => "*",
            Tier::HighlySignificant => "**",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    /// 1-based PCA mode index.
    pub mode: usize,
    pub explained_variance_ratio: f64,
    pub group_a: String,
    pub group_b: String,
    pub n1: usize,
    pub n2: usize,
    pub d_stat: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub tier: Tier,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatMetadata {
    pub seed: Option<u64>,
    pub subsample: Option<String>,
    pub input: Option<String>,
}

/// Table-2-shaped report: one KS test per (PCA mode, subgroup pair), all
/// p-values BY-adjusted as a single family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub rows: Vec<StatRow>,
    pub metadata: StatMetadata,
}

/// Runs the full mode x pair KS grid on PCA coordinates and adjusts the
/// whole grid as one BY family. Rows are mode-major, pairs in input order.
///
/// `coords` rows align with `ids`; `explained_variance_ratio` must cover
/// at least `modes` entries.
pub fn run_feature_bias_test(
    coords: &Array2<f64>,
    ids: &[String],
    cohort: &Cohort,
    pairs: &[(GroupSelector, GroupSelector)],
    modes: usize,
    explained_variance_ratio: &[f64],
) -> Result<StatReport> {
    if modes == 0 || modes > coords.ncols() {
        return Err(Error::invalid(
            "modes",
            format!("{modes} requested, {} available", coords.ncols()),
        ));
    }
    if explained_variance_ratio.len() < modes {
        return Err(Error::DimensionMismatch {
            expected: modes,
            found: explained_variance_ratio.len(),
            context: "explained variance ratios".into(),
        });
    }
    if ids.len() != coords.nrows() {
        return Err(Error::DimensionMismatch {
            expected: coords.nrows(),
            found: ids.len(),
            context: "coordinate rows vs ids".into(),
        });
    }
    if pairs.is_empty() {
        return Err(Error::invalid("pairs", "no comparisons requested"));
    }

    // resolve each selector once, as coordinate row indices
    let mut selectors: Vec<&GroupSelector> = Vec::new();
    for (a, b) in pairs {
        selectors.push(a);
        selectors.push(b);
    }
    let mut resolved: Vec<Vec<usize>> = Vec::with_capacity(selectors.len());
    for sel in &selectors {
        let member_rows = cohort.select_rows(sel);
        let member_ids: std::collections::HashSet<&str> = member_rows
            .iter()
            .map(|&r| cohort.rows()[r].sample_id.as_str())
            .collect();
        let rows: Vec<usize> = ids
            .iter()
            .enumerate()
            .filter(|(_, id)| member_ids.contains(id.as_str()))
            .map(|(i, _)| i)
            .collect();
        if rows.len() < 2 {
            return Err(Error::GroupTooSmall {
                selector: sel.to_string(),
                needed: 2,
                found: rows.len(),
            });
        }
        resolved.push(rows);
    }

    let mut rows = Vec::with_capacity(modes * pairs.len());
    let mut p_raws = Vec::with_capacity(modes * pairs.len());
    for mode in 0..modes {
        for (pi, (a, b)) in pairs.iter().enumerate() {
            let take = |rows: &[usize]| -> Vec<f64> {
                rows.iter().map(|&r| coords[(r, mode)]).collect()
            };
            let sample_a = take(&resolved[2 * pi]);
            let sample_b = take(&resolved[2 * pi + 1]);
            let ks = ks_two_sample(&sample_a, &sample_b)?;
            p_raws.push(ks.p_raw);
            rows.push(StatRow {
                mode: mode + 1,
                explained_variance_ratio: explained_variance_ratio[mode],
                group_a: a.short_name(),
                group_b: b.short_name(),
                n1: ks.n1,
                n2: ks.n2,
                d_stat: ks.d_stat,
                p_raw: ks.p_raw,
                p_adjusted: f64::NAN,
                tier: Tier::Ns,
            });
        }
    }
    let adjusted = benjamini_yekutieli(&p_raws)?;
    for (row, adj) in rows.iter_mut().zip(adjusted) {
        row.p_adjusted = adj;
        row.tier = Tier::from_adjusted(adj);
    }
    Ok(StatReport {
        rows,
        metadata: StatMetadata::default(),
    })
}

impl StatReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// Table-2-layout CSV: one row per mode, one column group per comparison.
    pub fn to_csv(&self) -> String {
        use crate::cohort::csv_escape;
        use std::fmt::Write;

        let mut pairs: Vec<(String, String)> = Vec::new();
        for row in &self.rows {
            let key = (row.group_a.clone(), row.group_b.clone());
            if !pairs.contains(&key) {
                pairs.push(key);
            }
        }
        let mut out = String::from("mode,explained_variance_pct");
        for (a, b) in &pairs {
            for col in ["d_stat", "p_raw", "p_adjusted", "tier"] {
                let _ = write!(out, ",{}", csv_escape(&format!("{a} / {b} {col}")));
            }
        }
        out.push('\n');

        let mut modes: Vec<usize> = self.rows.iter().map(|r| r.mode).collect();
        modes.dedup();
        for mode in modes {
            let mode_rows: Vec<&StatRow> =
                self.rows.iter().filter(|r| r.mode == mode).collect();
            let _ = write!(
                out,
                "{mode},{:.1}",
                mode_rows[0].explained_variance_ratio * 100.0
            );
            for (a, b) in &pairs {
                let row = mode_rows
                    .iter()
                    .find(|r| &r.group_a == a && &r.group_b == b)
                    .expect("full mode x pair grid");
                let _ = write!(
                    out,
                    ",{},{},{},{}",
                    fmt_stat(row.d_stat),
                    fmt_pvalue(row.p_raw),
                    fmt_pvalue(row.p_adjusted),
                    row.tier.symbol()
                );
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_stat(v: f64) -> String {
    format!("{v:.4}")
}

/// Table-2 p-value convention: `<0.0001` below resolution.
fn fmt_pvalue(p: f64) -> String {
    if p < 0.0001 {
        "<0.0001".into()
    } else {
        let precision = if p < 0.01 { 5 } else { 4 };
        format!("{p:.precision$}")
    }
}
