//! Stratified test-set resampling, per-patient deduplication, per-group
//! subsampling, and the bootstrap index engine.
//!
//! Every operation is a pure function of (inputs, seed). Substreams are
//! derived from (seed, ordinal) with a splitmix64-style mixer so that any
//! replicate or stratum can be regenerated independently and parallel and
//! serial evaluation agree.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// splitmix64 finalizer over (seed, ordinal); the documented substream
/// derivation used everywhere in this crate.
pub fn mix_seed(seed: u64, ordinal: u64) -> u64 {
    let mut z = seed.wrapping_add(ordinal.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for substream `ordinal` of `seed`.
pub fn substream_rng(seed: u64, ordinal: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, ordinal))
}

/// One stratification factor of a [`ResamplePlan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "attr", rename_all = "lowercase")]
pub enum StratumAttr {
    Sex,
    Race,
    /// Age binned as floor(age / width).
    Age { bin_width: f64 },
    /// Binary status of one label; rows with the label missing are excluded.
    Label { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetCount {
    /// Draws exactly this many per stratum.
    Fixed(usize),
    /// Draws the lower median of the realized stratum sizes per stratum.
    Median,
}

/// Stratified resampling plan: the cross-product of the attribute values
/// defines the strata; each non-empty stratum contributes `target` indices
/// drawn uniformly with replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub attributes: Vec<StratumAttr>,
    pub target: TargetCount,
    /// When false, a combination of attribute values with no samples is an error.
    pub skip_empty: bool,
    pub seed: u64,
}

/// Ordered sample indices (repeats allowed) with the plan that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMultiset {
    pub indices: Vec<usize>,
    pub plan: ResamplePlan,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct StratumKey(Vec<String>);

impl fmt::Display for StratumKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(" / "))
    }
}

fn stratum_value(cohort: &Cohort, row: usize, attr: &StratumAttr) -> Option<String> {
    let r = &cohort.rows()[row];
    match attr {
        StratumAttr::Sex => Some(r.sex.to_string()),
        StratumAttr::Race => Some(r.race.clone()),
        StratumAttr::Age { bin_width } => {
            let bin = (r.age / bin_width).floor() as i64;
            Some(format!("age[{}-{})", bin as f64 * bin_width, (bin + 1) as f64 * bin_width))
        }
        StratumAttr::Label { name } => {
            let idx = cohort.label_index(name)?;
            r.labels[idx].map(|v| format!("{name}={}", if v { 1 } else { 0 }))
        }
    }
}

/// Balanced resampling with replacement: every realized stratum contributes
/// exactly the target count of indices. Deterministic given the plan seed;
/// stratum `i` (in sorted key order) uses substream `i`.
pub fn stratified_resample(cohort: &Cohort, plan: &ResamplePlan) -> Result<IndexMultiset> {
    if plan.attributes.is_empty() {
        return Err(Error::invalid("resample plan", "no stratification attributes"));
    }
    if let TargetCount::Fixed(0) = plan.target {
        return Err(Error::invalid("resample plan", "target count must be >= 1"));
    }
    for attr in &plan.attributes {
        if let StratumAttr::Age { bin_width } = attr {
            if !bin_width.is_finite() || *bin_width <= 0.0 {
                return Err(Error::invalid("resample plan", "age bin width must be > 0"));
            }
        }
        if let StratumAttr::Label { name } = attr {
            if cohort.label_index(name).is_none() {
                return Err(Error::invalid(
                    "resample plan",
                    format!("unknown label {name:?}"),
                ));
            }
        }
    }

    let mut strata: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    'rows: for row in 0..cohort.len() {
        let mut key = Vec::with_capacity(plan.attributes.len());
        for attr in &plan.attributes {
            match stratum_value(cohort, row, attr) {
                Some(v) => key.push(v),
                // missing label: the row belongs to no stratum
                None => continue 'rows,
            }
        }
        strata.entry(StratumKey(key)).or_default().push(row);
    }
    if strata.is_empty() {
        return Err(Error::EmptySample {
            context: "stratified_resample: no rows with all stratification attributes present"
                .into(),
        });
    }

    if !plan.skip_empty {
        // cross-product of observed values per attribute must all be realized
        let mut value_sets: Vec<Vec<String>> = Vec::new();
        for (ai, _) in plan.attributes.iter().enumerate() {
            let mut vals: Vec<String> = strata
                .keys()
                .map(|k| k.0[ai].clone())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            vals.sort();
            value_sets.push(vals);
        }
        let mut combo = vec![0usize; value_sets.len()];
        loop {
            let key = StratumKey(
                combo
                    .iter()
                    .enumerate()
                    .map(|(ai, &vi)| value_sets[ai][vi].clone())
                    .collect(),
            );
            if !strata.contains_key(&key) {
                return Err(Error::EmptyStratum {
                    stratum: key.to_string(),
                });
            }
            let mut ai = 0;
            loop {
                if ai == combo.len() {
                    break;
                }
                combo[ai] += 1;
                if combo[ai] < value_sets[ai].len() {
                    break;
                }
                combo[ai] = 0;
                ai += 1;
            }
            if ai == combo.len() {
                break;
            }
        }
    }

    let target = match plan.target {
        TargetCount::Fixed(t) => t,
        TargetCount::Median => {
            let mut sizes: Vec<usize> = strata.values().map(Vec::len).collect();
            sizes.sort_unstable();
            sizes[(sizes.len() - 1) / 2]
        }
    };

    let mut indices = Vec::with_capacity(strata.len() * target);
    for (ordinal, members) in strata.values().enumerate() {
        let mut rng = substream_rng(plan.seed, ordinal as u64);
        for _ in 0..target {
            indices.push(members[rng.random_range(0..members.len())]);
        }
    }
    Ok(IndexMultiset {
        indices,
        plan: plan.clone(),
    })
}

/// Exactly one row per distinct patient, chosen uniformly at random.
/// Patients are processed in lexicographic patient-id order; patient `i`
/// uses substream `i`. Returns row indices in ascending order.
pub fn one_scan_per_patient(cohort: &Cohort, seed: u64) -> Result<Vec<usize>> {
    if cohort.is_empty() {
        return Err(Error::EmptySample {
            context: "one_scan_per_patient".into(),
        });
    }
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (row, r) in cohort.rows().iter().enumerate() {
        by_patient.entry(r.patient_id.as_str()).or_default().push(row);
    }
    let mut chosen = Vec::with_capacity(by_patient.len());
    for (ordinal, scans) in by_patient.values().enumerate() {
        let mut rng = substream_rng(seed, ordinal as u64);
        chosen.push(scans[rng.random_range(0..scans.len())]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Attribute whose values define the groups of [`subsample_per_group`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingAttr {
    Sex,
    Race,
}

/// `per_group` rows drawn uniformly WITHOUT replacement from every value of
/// the attribute. Returns row indices in ascending order.
pub fn subsample_per_group(
    cohort: &Cohort,
    attribute: GroupingAttr,
    per_group: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (row, r) in cohort.rows().iter().enumerate() {
        let value = match attribute {
            GroupingAttr::Sex => r.sex.to_string(),
            GroupingAttr::Race => r.race.clone(),
        };
        groups.entry(value).or_default().push(row);
    }
    let mut out = Vec::with_capacity(groups.len() * per_group);
    for (ordinal, (value, members)) in groups.iter().enumerate() {
        if members.len() < per_group {
            return Err(Error::GroupTooSmall {
                selector: format!("{attribute:?}={value}"),
                needed: per_group,
                found: members.len(),
            });
        }
        let mut rng = substream_rng(seed, ordinal as u64);
        // partial Fisher-Yates over a copy of the member list
        let mut pool = members.clone();
        for j in 0..per_group {
            let k = rng.random_range(j..pool.len());
            pool.swap(j, k);
        }
        out.extend_from_slice(&pool[..per_group]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Stream of bootstrap index multisets. Replicate `r` is derived from
/// (seed, r), so any subset of replicates can be regenerated independently.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapIndices {
    n: usize,
    replicates: usize,
    seed: u64,
}

pub fn bootstrap_indices(n: usize, replicates: usize, seed: u64) -> Result<BootstrapIndices> {
    if n == 0 {
        return Err(Error::EmptySample {
            context: "bootstrap_indices".into(),
        });
    }
    if replicates == 0 {
        return Err(Error::invalid("bootstrap", "replicates must be >= 1"));
    }
    Ok(BootstrapIndices { n, replicates, seed })
}

impl BootstrapIndices {
    pub fn replicates(&self) -> usize {
        self.replicates
    }

    /// The `r`-th replicate: `n` indices drawn uniformly with replacement.
    pub fn replicate(&self, r: usize) -> Vec<usize> {
        assert!(r < self.replicates, "replicate {r} out of range");
        let mut rng = substream_rng(self.seed, r as u64);
        (0..self.n).map(|_| rng.random_range(0..self.n)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.replicates).map(|r| self.replicate(r))
    }
}
