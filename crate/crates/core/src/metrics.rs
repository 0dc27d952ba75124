//! ROC/AUC, fixed-FPR threshold calibration, subgroup performance tables,
//! bootstrap confidence intervals, and relative-change analysis.
//!
//! The decision rule is strict inequality: score > threshold counts as
//! positive. Thresholds are midpoints between adjacent distinct scores plus
//! sentinels at ±infinity, so the rule is unambiguous under ties.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cohort::{csv_escape, Cohort, GroupSelector};
use crate::error::{Error, Result};
use crate::sampling::{bootstrap_indices, mix_seed, stratified_resample, ResamplePlan, StratumAttr};
use crate::stats::percentile_sorted;

/// Per-sample, per-label probabilistic scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    ids: Vec<String>,
    labels: Vec<String>,
    scores: Array2<f64>,
    index: HashMap<String, usize>,
}

impl ScoreTable {
    pub fn new(ids: Vec<String>, labels: Vec<String>, scores: Array2<f64>) -> Result<Self> {
        if scores.nrows() != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                found: scores.nrows(),
                context: "score rows vs ids".into(),
            });
        }
        if scores.ncols() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                found: scores.ncols(),
                context: "score columns vs labels".into(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(
                    "score table",
                    format!("duplicate sample id {id:?} at row {}", i + 1),
                ));
            }
        }
        for ((i, j), v) in scores.indexed_iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(v) {
                return Err(Error::invalid(
                    "score table",
                    format!("score {v} out of [0, 1] at row {}, column {j}", i + 1),
                ));
            }
        }
        Ok(ScoreTable {
            ids,
            labels,
            scores,
            index,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn label_column(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id");
        for l in &self.labels {
            out.push(',');
            out.push_str(&csv_escape(l));
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(&csv_escape(id));
            for j in 0..self.labels.len() {
                out.push_str(&format!(",{}", self.scores[(i, j)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::MalformedHeader {
            path: path.into(),
            detail: e.to_string(),
        })?;
        let headers = reader
            .headers()
            .map_err(|e| Error::MalformedHeader {
                path: path.into(),
                detail: e.to_string(),
            })?
            .clone();
        if headers.is_empty() || &headers[0] != "sample_id" {
            return Err(Error::MalformedHeader {
                path: path.into(),
                detail: "first column must be sample_id".into(),
            });
        }
        let labels: Vec<String> = headers.iter().skip(1).map(String::from).collect();
        if labels.is_empty() {
            return Err(Error::MalformedHeader {
                path: path.into(),
                detail: "no label columns".into(),
            });
        }
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::ParseField {
                path: path.into(),
                row,
                column: "<record>".into(),
                value: e.to_string(),
            })?;
            ids.push(record[0].to_string());
            for (j, label) in labels.iter().enumerate() {
                let cell = &record[j + 1];
                let v: f64 = cell.parse().map_err(|_| Error::ParseField {
                    path: path.into(),
                    row,
                    column: label.clone(),
                    value: cell.to_string(),
                })?;
                values.push(v);
            }
        }
        let scores = Array2::from_shape_vec((ids.len(), labels.len()), values)
            .map_err(|e| Error::invalid("score table", e.to_string()))?;
        ScoreTable::new(ids, labels, scores)
    }
}

/// AUC in Mann-Whitney form: probability a random positive outranks a random
/// negative, ties counting one half. Equals the trapezoidal area under the
/// ROC curve.
pub fn auc(scores: &[f64], targets: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), targets.len(), "scores and targets must align");
    let n_pos = targets.iter().filter(|&&t| t).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass {
            context: format!("auc: {n_pos} positives, {n_neg} negatives"),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut wins: u64 = 0;
    let mut ties: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut pos_here: u64 = 0;
        let mut neg_here: u64 = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if targets[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        wins += pos_here * negatives_below;
        ties += pos_here * neg_here;
        negatives_below += neg_here;
        i = j;
    }
    Ok((wins as f64 + 0.5 * ties as f64) / (n_pos as f64 * n_neg as f64))
}

/// True/false positive rates at a threshold under the strict decision rule.
/// `None` when the required class is absent.
pub fn rates_at_threshold(
    scores: &[f64],
    targets: &[bool],
    threshold: f64,
) -> (Option<f64>, Option<f64>) {
    let mut pos = 0usize;
    let mut neg = 0usize;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (&s, &t) in scores.iter().zip(targets) {
        if t {
            pos += 1;
            if s > threshold {
                tp += 1;
            }
        } else {
            neg += 1;
            if s > threshold {
                fp += 1;
            }
        }
    }
    let tpr = (pos > 0).then(|| tp as f64 / pos as f64);
    let fpr = (neg > 0).then(|| fp as f64 / neg as f64);
    (tpr, fpr)
}

/// Among candidate thresholds (midpoints between adjacent distinct scores
/// plus ±infinity sentinels), returns the one whose achieved FPR is maximal
/// while not exceeding the target. Of the candidates achieving that FPR, the
/// smallest is returned, which maximizes TPR.
pub fn calibrate_threshold(scores: &[f64], targets: &[bool], target_fpr: f64) -> Result<f64> {
    assert_eq!(scores.len(), targets.len(), "scores and targets must align");
    if !(0.0..=1.0).contains(&target_fpr) {
        return Err(Error::invalid(
            "target fpr",
            format!("{target_fpr} is outside [0, 1]"),
        ));
    }
    let mut negatives: Vec<f64> = scores
        .iter()
        .zip(targets)
        .filter(|(_, &t)| !t)
        .map(|(&s, _)| s)
        .collect();
    if negatives.is_empty() {
        return Err(Error::NoNegatives);
    }
    negatives.sort_unstable_by(|a, b| a.total_cmp(b));
    let n_neg = negatives.len() as f64;

    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_unstable_by(|a, b| a.total_cmp(b));
    distinct.dedup();

    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    for w in distinct.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(f64::INFINITY);

    // achieved FPR is non-increasing in the threshold: the first candidate
    // meeting the target achieves the maximal FPR <= target
    for &t in &candidates {
        let above = negatives.partition_point(|&s| s <= t);
        let fpr = (negatives.len() - above) as f64 / n_neg;
        if fpr <= target_fpr {
            return Ok(t);
        }
    }
    unreachable!("the +infinity sentinel always achieves FPR 0");
}

/// A point estimate with an optional 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub ci: Option<(f64, f64)>,
}

impl Estimate {
    fn point(point: f64) -> Self {
        Estimate { point, ci: None }
    }
}

/// One row of the Tables-S1..S4-shaped report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model: String,
    pub label: String,
    pub group: String,
    pub auc: Option<Estimate>,
    pub tpr: Option<Estimate>,
    pub fpr: Option<Estimate>,
    pub youden_j: Option<Estimate>,
}

/// Point-estimate subgroup metrics at a fixed threshold. A group lacking the
/// class required by a metric gets that metric reported as undefined while
/// the others are still computed.
pub fn subgroup_metrics(
    model: &str,
    table: &ScoreTable,
    label: &str,
    cohort: &Cohort,
    groups: &[GroupSelector],
    threshold: f64,
) -> Result<Vec<MetricRecord>> {
    let col = table
        .label_column(label)
        .ok_or_else(|| Error::invalid("label", format!("{label:?} not in score table")))?;
    let li = cohort
        .label_index(label)
        .ok_or_else(|| Error::invalid("label", format!("{label:?} not in cohort")))?;

    let mut records = Vec::with_capacity(groups.len());
    for group in groups {
        let mut scores = Vec::new();
        let mut targets = Vec::new();
        for &crow in &cohort.select_rows(group) {
            let id = &cohort.rows()[crow].sample_id;
            let Some(srow) = table.row_of(id) else {
                continue;
            };
            if let Some(t) = cohort.label_value(crow, li) {
                scores.push(table.scores()[(srow, col)]);
                targets.push(t);
            }
        }
        records.push(metric_record(
            model,
            label,
            &group.short_name(),
            &scores,
            &targets,
            threshold,
        ));
    }
    Ok(records)
}

fn metric_record(
    model: &str,
    label: &str,
    group: &str,
    scores: &[f64],
    targets: &[bool],
    threshold: f64,
) -> MetricRecord {
    let (tpr, fpr) = rates_at_threshold(scores, targets, threshold);
    let youden = match (tpr, fpr) {
        (Some(t), Some(f)) => Some(t - f),
        _ => None,
    };
    MetricRecord {
        model: model.into(),
        label: label.into(),
        group: group.into(),
        auc: auc(scores, targets).ok().map(Estimate::point),
        tpr: tpr.map(Estimate::point),
        fpr: fpr.map(Estimate::point),
        youden_j: youden.map(Estimate::point),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiEstimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub dropped_replicates: usize,
}

/// Percentile bootstrap 95% interval of an arbitrary metric. The metric
/// receives an index multiset into the caller's data and may return `None`
/// when undefined on a replicate; undefined replicates are dropped unless
/// they exceed half of the total.
pub fn bootstrap_ci<F>(n: usize, metric: F, replicates: usize, seed: u64) -> Result<CiEstimate>
where
    F: Fn(&[usize]) -> Option<f64>,
{
    if replicates < 2 {
        return Err(Error::invalid("bootstrap", "need at least 2 replicates"));
    }
    let identity: Vec<usize> = (0..n).collect();
    let point = metric(&identity).ok_or_else(|| Error::UndefinedMetric {
        detail: "metric undefined on the original data".into(),
    })?;

    let stream = bootstrap_indices(n, replicates, seed)?;
    let mut values = Vec::with_capacity(replicates);
    for rep in stream.iter() {
        if let Some(v) = metric(&rep) {
            values.push(v);
        }
    }
    let dropped = replicates - values.len();
    finish_ci(point, values, dropped, replicates)
}

fn finish_ci(
    point: f64,
    mut values: Vec<f64>,
    dropped: usize,
    total: usize,
) -> Result<CiEstimate> {
    if dropped * 2 > total {
        return Err(Error::BootstrapUndefined { dropped, total });
    }
    if dropped > 0 {
        log::debug!("bootstrap: dropped {dropped} of {total} undefined replicates");
    }
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    let lo = percentile_sorted(&values, 2.5);
    let hi = percentile_sorted(&values, 97.5);
    // the interval always contains the point estimate
    Ok(CiEstimate {
        point,
        lo: lo.min(point),
        hi: hi.max(point),
        dropped_replicates: dropped,
    })
}

/// Per-group percentage change against the unweighted mean over all groups.
/// Groups with an undefined metric stay undefined and do not enter the mean.
pub fn relative_change(
    values: &[(String, Option<f64>)],
) -> Result<Vec<(String, Option<f64>)>> {
    let defined: Vec<f64> = values.iter().filter_map(|(_, v)| *v).collect();
    if defined.len() < 2 {
        return Err(Error::UndefinedMetric {
            detail: format!(
                "relative_change needs at least 2 defined groups, got {}",
                defined.len()
            ),
        });
    }
    let mean = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(values
        .iter()
        .map(|(g, v)| {
            let pct = match v {
                Some(v) if mean != 0.0 => Some(100.0 * (v - mean) / mean),
                _ => None,
            };
            (g.clone(), pct)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Resample patients rather than scans inside each bootstrap replicate.
    pub patient_level: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelChangeRow {
    pub model: String,
    pub group: String,
    pub pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSection {
    pub label: String,
    /// Per model: the threshold calibrated on the whole resampled sample.
    pub thresholds: Vec<(String, f64)>,
    pub resample_size: usize,
    pub records: Vec<MetricRecord>,
    pub relative_change_j: Vec<RelChangeRow>,
    pub relative_change_auc: Vec<RelChangeRow>,
}

/// Subgroup performance report in the shape of Tables S1-S4 plus the
/// relative-change analysis behind the Fig 3-4 plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub models: Vec<String>,
    pub groups: Vec<String>,
    pub labels: Vec<String>,
    pub target_fpr: f64,
    pub resample_plan: ResamplePlan,
    pub bootstrap: BootstrapConfig,
    pub sections: Vec<LabelSection>,
}

struct GroupData {
    scores: Vec<f64>,
    targets: Vec<bool>,
    /// Patient of each entry, for the patient-level bootstrap.
    patients: Vec<String>,
}

/// Builds the full subgroup performance report.
///
/// Per label, the cohort is rebalanced by `plan` extended with that label's
/// status stratum; each model's threshold is then calibrated on the whole
/// resampled sample at `target_fpr`, and per-group metrics with bootstrap
/// CIs are computed on the same resample.
pub fn build_performance_report(
    models: &[(String, ScoreTable)],
    cohort: &Cohort,
    labels: &[String],
    groups: &[GroupSelector],
    target_fpr: f64,
    plan: &ResamplePlan,
    bootstrap: &BootstrapConfig,
) -> Result<AuditReport> {
    if models.is_empty() {
        return Err(Error::invalid("report", "no score tables supplied"));
    }
    if labels.is_empty() || groups.is_empty() {
        return Err(Error::invalid("report", "labels and groups must be non-empty"));
    }

    let mut sections = Vec::with_capacity(labels.len());

    for (label_ord, label) in labels.iter().enumerate() {
        let li = cohort
            .label_index(label)
            .ok_or_else(|| Error::invalid("label", format!("{label:?} not in cohort")))?;

        let mut plan_l = plan.clone();
        if !plan_l
            .attributes
            .iter()
            .any(|a| matches!(a, StratumAttr::Label { name } if name == label))
        {
            plan_l.attributes.push(StratumAttr::Label {
                name: label.clone(),
            });
        }
        plan_l.seed = mix_seed(plan.seed, label_ord as u64);
        let resample = stratified_resample(cohort, &plan_l)?;

        let mut thresholds = Vec::new();
        let mut records = Vec::new();
        let mut rel_j = Vec::new();
        let mut rel_auc = Vec::new();

        for (model_name, table) in models {
            let col = table.label_column(label).ok_or_else(|| {
                Error::invalid(
                    "label",
                    format!("{label:?} not in score table of model {model_name:?}"),
                )
            })?;

            // whole resampled sample, in resample order
            let mut whole_scores = Vec::with_capacity(resample.indices.len());
            let mut whole_targets = Vec::with_capacity(resample.indices.len());
            for &crow in &resample.indices {
                let id = &cohort.rows()[crow].sample_id;
                let srow = table.row_of(id).ok_or_else(|| Error::Alignment {
                    detail: format!("sample {id:?} missing from score table {model_name:?}"),
                })?;
                let target = cohort
                    .label_value(crow, li)
                    .expect("label stratum excludes missing labels");
                whole_scores.push(table.scores()[(srow, col)]);
                whole_targets.push(target);
            }
            let threshold = calibrate_threshold(&whole_scores, &whole_targets, target_fpr)?;
            thresholds.push((model_name.clone(), threshold));

            let mut model_records = Vec::with_capacity(groups.len());
            for (group_ord, group) in groups.iter().enumerate() {
                let data = group_data(
                    cohort,
                    group,
                    &resample.indices,
                    &whole_scores,
                    &whole_targets,
                );
                let mut record = metric_record(
                    model_name,
                    label,
                    &group.short_name(),
                    &data.scores,
                    &data.targets,
                    threshold,
                );
                // replicate streams keyed by (label, group) only, so models
                // share them: identical tables get identical intervals and
                // cross-model comparisons are paired
                let ci_seed = mix_seed(mix_seed(bootstrap.seed, label_ord as u64), group_ord as u64);
                attach_cis(&mut record, &data, threshold, bootstrap, ci_seed)?;
                model_records.push(record);
            }

            let j_points: Vec<(String, Option<f64>)> = model_records
                .iter()
                .map(|r| (r.group.clone(), r.youden_j.map(|e| e.point)))
                .collect();
            for (group, pct) in relative_change(&j_points)? {
                rel_j.push(RelChangeRow {
                    model: model_name.clone(),
                    group,
                    pct,
                });
            }
            let auc_points: Vec<(String, Option<f64>)> = model_records
                .iter()
                .map(|r| (r.group.clone(), r.auc.map(|e| e.point)))
                .collect();
            for (group, pct) in relative_change(&auc_points)? {
                rel_auc.push(RelChangeRow {
                    model: model_name.clone(),
                    group,
                    pct,
                });
            }
            records.extend(model_records);
        }

        sections.push(LabelSection {
            label: label.clone(),
            thresholds,
            resample_size: resample.indices.len(),
            records,
            relative_change_j: rel_j,
            relative_change_auc: rel_auc,
        });
    }

    Ok(AuditReport {
        models: models.iter().map(|(n, _)| n.clone()).collect(),
        groups: groups.iter().map(GroupSelector::short_name).collect(),
        labels: labels.to_vec(),
        target_fpr,
        resample_plan: plan.clone(),
        bootstrap: *bootstrap,
        sections,
    })
}

fn group_data(
    cohort: &Cohort,
    group: &GroupSelector,
    resample_rows: &[usize],
    whole_scores: &[f64],
    whole_targets: &[bool],
) -> GroupData {
    let member_rows: std::collections::HashSet<usize> =
        cohort.select_rows(group).into_iter().collect();
    let mut data = GroupData {
        scores: Vec::new(),
        targets: Vec::new(),
        patients: Vec::new(),
    };
    for (pos, &crow) in resample_rows.iter().enumerate() {
        if member_rows.contains(&crow) {
            data.scores.push(whole_scores[pos]);
            data.targets.push(whole_targets[pos]);
            data.patients.push(cohort.rows()[crow].patient_id.clone());
        }
    }
    data
}

/// Bootstrap CIs for every defined metric of the record, sharing one stream
/// of replicate index multisets.
fn attach_cis(
    record: &mut MetricRecord,
    data: &GroupData,
    threshold: f64,
    config: &BootstrapConfig,
    seed: u64,
) -> Result<()> {
    let n = data.scores.len();
    if n == 0 {
        return Ok(()); // nothing defined, nothing to bootstrap
    }

    // patient-level resampling draws patients, then takes all their entries
    let patient_positions: Vec<Vec<usize>> = if config.patient_level {
        let mut by_patient: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
        for (pos, p) in data.patients.iter().enumerate() {
            by_patient.entry(p).or_default().push(pos);
        }
        by_patient.into_values().collect()
    } else {
        Vec::new()
    };
    let units = if config.patient_level {
        patient_positions.len()
    } else {
        n
    };

    let stream = bootstrap_indices(units, config.replicates, seed)?;
    let mut auc_values = Vec::new();
    let mut tpr_values = Vec::new();
    let mut fpr_values = Vec::new();
    let mut j_values = Vec::new();
    let mut scores = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for rep in stream.iter() {
        scores.clear();
        targets.clear();
        if config.patient_level {
            for &u in &rep {
                for &pos in &patient_positions[u] {
                    scores.push(data.scores[pos]);
                    targets.push(data.targets[pos]);
                }
            }
        } else {
            for &pos in &rep {
                scores.push(data.scores[pos]);
                targets.push(data.targets[pos]);
            }
        }
        if let Ok(v) = auc(&scores, &targets) {
            auc_values.push(v);
        }
        let (tpr, fpr) = rates_at_threshold(&scores, &targets, threshold);
        if let Some(v) = tpr {
            tpr_values.push(v);
        }
        if let Some(v) = fpr {
            fpr_values.push(v);
        }
        if let (Some(t), Some(f)) = (tpr, fpr) {
            j_values.push(t - f);
        }
    }

    let total = config.replicates;
    fn attach_one(est: &mut Option<Estimate>, values: Vec<f64>, total: usize) -> Result<()> {
        if let Some(e) = est {
            let dropped = total - values.len();
            let ci = finish_ci(e.point, values, dropped, total)?;
            e.ci = Some((ci.lo, ci.hi));
        }
        Ok(())
    }
    attach_one(&mut record.auc, auc_values, total)?;
    attach_one(&mut record.tpr, tpr_values, total)?;
    attach_one(&mut record.fpr, fpr_values, total)?;
    attach_one(&mut record.youden_j, j_values, total)?;
    Ok(())
}

fn fmt_cell(est: &Option<Estimate>) -> String {
    match est {
        None => "NA".into(),
        Some(e) => match e.ci {
            Some((lo, hi)) => format!("{:.2} ({:.2}-{:.2})", e.point, lo, hi),
            None => format!("{:.2}", e.point),
        },
    }
}

impl AuditReport {
    pub fn section(&self, label: &str) -> Option<&LabelSection> {
        self.sections.iter().find(|s| s.label == label)
    }

    /// Tables-S1..S4-shaped CSV for one label: metric blocks AUC/TPR/FPR/J,
    /// one row per model, one column per group, `0.80 (0.78-0.81)` cells.
    pub fn section_csv(&self, label: &str) -> Result<String> {
        let section = self
            .section(label)
            .ok_or_else(|| Error::invalid("report", format!("no section for {label:?}")))?;
        let mut out = String::from("metric,model");
        for g in &self.groups {
            out.push(',');
            out.push_str(&csv_escape(g));
        }
        out.push('\n');
        for (metric, pick) in [
            ("auc", 0usize),
            ("tpr", 1),
            ("fpr", 2),
            ("youden_j", 3),
        ] {
            for model in &self.models {
                out.push_str(metric);
                out.push(',');
                out.push_str(&csv_escape(model));
                for group in &self.groups {
                    let record = section
                        .records
                        .iter()
                        .find(|r| &r.model == model && &r.group == group)
                        .expect("full model x group grid");
                    let est = match pick {
                        0 => &record.auc,
                        1 => &record.tpr,
                        2 => &record.fpr,
                        _ => &record.youden_j,
                    };
                    out.push(',');
                    out.push_str(&fmt_cell(est));
                }
                out.push('\n');
            }
        }
        Ok(out)
    }

    /// Plot-ready CSV covering every label: one row per
    /// (label, metric, model, group) with point, CI and relative change.
    pub fn plot_csv(&self) -> String {
        let mut out =
            String::from("label,metric,model,group,point,ci_lo,ci_hi,relative_change_pct\n");
        let fmt_opt = |v: Option<f64>| v.map_or(String::from("NA"), |x| format!("{x}"));
        for section in &self.sections {
            for (metric, from_j) in [("youden_j", true), ("auc", false)] {
                for record in &section.records {
                    let est = if from_j { record.youden_j } else { record.auc };
                    let rel_rows = if from_j {
                        &section.relative_change_j
                    } else {
                        &section.relative_change_auc
                    };
                    let rel = rel_rows
                        .iter()
                        .find(|r| r.model == record.model && r.group == record.group)
                        .and_then(|r| r.pct);
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        csv_escape(&section.label),
                        metric,
                        csv_escape(&record.model),
                        csv_escape(&record.group),
                        fmt_opt(est.map(|e| e.point)),
                        fmt_opt(est.and_then(|e| e.ci).map(|c| c.0)),
                        fmt_opt(est.and_then(|e| e.ci).map(|c| c.1)),
                        fmt_opt(rel),
                    ));
                }
            }
        }
        out
    }
}
