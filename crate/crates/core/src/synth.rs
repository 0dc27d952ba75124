//! Synthetic cohort and embedding generator with controllable injected bias.
//!
//! Embeddings follow an additive Gaussian mean-shift model: isotropic noise
//! plus a disease-signal shift for positive samples plus per-attribute group
//! shifts. All magnitudes are measured in units of the noise SD, so the
//! expected PCA and KS behavior is analytically predictable. Values are
//! quantized to f32 so generated data survives the binary file format
//! bit-exactly.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, CohortRow, EmbeddingSet, Sex, Split};
use crate::error::{Error, Result};
use crate::sampling::substream_rng;

/// Scan-noise substreams live above this offset; patient-attribute
/// substreams use the patient ordinal directly.
const SCAN_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Direction {
    Axis(usize),
    Vector(Vec<f64>),
}

impl Direction {
    /// Unit vector in `dim` dimensions.
    fn unit(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            Direction::Axis(a) => {
                if *a >= dim {
                    return Err(Error::invalid(
                        "direction",
                        format!("axis {a} out of range for dim {dim}"),
                    ));
                }
                let mut v = vec![0.0; dim];
                v[*a] = 1.0;
                Ok(v)
            }
            Direction::Vector(v) => {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: v.len(),
                        context: "direction vector".into(),
                    });
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::invalid("direction", "zero vector"));
                }
                Ok(v.iter().map(|x| x / norm).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub direction: Direction,
    /// Shift length in units of the noise SD.
    pub magnitude_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLabel {
    pub name: String,
    pub direction: Direction,
    /// Added to positive samples, in units of the noise SD.
    pub magnitude_sd: f64,
    pub prevalence: f64,
    /// Per-race prevalence overrides.
    #[serde(default)]
    pub prevalence_by_race: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub dim: usize,
    /// Patients per race group.
    pub n_per_group: usize,
    pub races: Vec<String>,
    pub scans_per_patient: usize,
    pub noise_sd: f64,
    pub labels: Vec<SynthLabel>,
    pub sex_shift: Option<Shift>,
    pub race_shifts: BTreeMap<String, Shift>,
    /// (train, validation, test); must sum to 1.
    pub split_fractions: (f64, f64, f64),
    pub age_range: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            dim: 8,
            n_per_group: 500,
            races: vec!["asian".into(), "black".into(), "white".into()],
            scans_per_patient: 1,
            noise_sd: 1.0,
            labels: vec![SynthLabel {
                name: "disease".into(),
                direction: Direction::Axis(0),
                magnitude_sd: 3.0,
                prevalence: 0.3,
                prevalence_by_race: BTreeMap::new(),
            }],
            sex_shift: None,
            race_shifts: BTreeMap::new(),
            split_fractions: (0.6, 0.2, 0.2),
            age_range: (20.0, 90.0),
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("synth spec", "dim must be >= 2"));
        }
        if self.n_per_group == 0 || self.scans_per_patient == 0 || self.races.is_empty() {
            return Err(Error::invalid(
                "synth spec",
                "n_per_group, scans_per_patient and races must be non-empty",
            ));
        }
        if !self.noise_sd.is_finite() || self.noise_sd <= 0.0 {
            return Err(Error::invalid("synth spec", "noise_sd must be > 0"));
        }
        let (a, b, c) = self.split_fractions;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("synth spec", "split fractions must sum to 1"));
        }
        if !(self.age_range.0 >= 0.0 && self.age_range.1 > self.age_range.0) {
            return Err(Error::invalid("synth spec", "bad age range"));
        }
        for label in &self.labels {
            for p in std::iter::once(&label.prevalence).chain(label.prevalence_by_race.values())
            {
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::invalid(
                        "synth spec",
                        format!("prevalence {p} for {:?} outside (0, 1)", label.name),
                    ));
                }
            }
            if label.magnitude_sd < 0.0 {
                return Err(Error::invalid("synth spec", "negative magnitude"));
            }
        }
        if let Some(s) = &self.sex_shift {
            if s.magnitude_sd < 0.0 {
                return Err(Error::invalid("synth spec", "negative magnitude"));
            }
        }
        for s in self.race_shifts.values() {
            if s.magnitude_sd < 0.0 {
                return Err(Error::invalid("synth spec", "negative magnitude"));
            }
        }
        Ok(())
    }
}

/// Generates an aligned (EmbeddingSet, Cohort) pair. Deterministic given the
/// spec seed: patient `p` draws attributes from substream `p`, scan `s` draws
/// its noise from substream `SCAN_STREAM_BASE + s`.
pub fn generate(spec: &SynthSpec) -> Result<(EmbeddingSet, Cohort)> {
    spec.validate()?;
    let d = spec.dim;

    let disease_units: Vec<Vec<f64>> = spec
        .labels
        .iter()
        .map(|l| l.direction.unit(d))
        .collect::<Result<_>>()?;
    let sex_unit = spec
        .sex_shift
        .as_ref()
        .map(|s| s.direction.unit(d))
        .transpose()?;
    let race_units: BTreeMap<&String, (Vec<f64>, f64)> = spec
        .race_shifts
        .iter()
        .map(|(race, shift)| {
            shift
                .direction
                .unit(d)
                .map(|u| (race, (u, shift.magnitude_sd)))
        })
        .collect::<Result<_>>()?;

    let n_patients = spec.races.len() * spec.n_per_group;
    let n_scans = n_patients * spec.scans_per_patient;
    let mut rows = Vec::with_capacity(n_scans);
    let mut ids = Vec::with_capacity(n_scans);
    let mut matrix = Array2::zeros((n_scans, d));

    let (f_train, f_val, _) = spec.split_fractions;
    let mut scan_ordinal: u64 = 0;
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    for (race_idx, race) in spec.races.iter().enumerate() {
        for p in 0..spec.n_per_group {
            let patient_ordinal = (race_idx * spec.n_per_group + p) as u64;
            let mut attr_rng = substream_rng(spec.seed, patient_ordinal);

            let sex = if attr_rng.random_range(0..2) == 0 {
                Sex::Male
            } else {
                Sex::Female
            };
            let age =
                attr_rng.random_range(spec.age_range.0..spec.age_range.1);
            let u: f64 = attr_rng.random_range(0.0..1.0);
            let split = if u < f_train {
                Split::Train
            } else if u < f_train + f_val {
                Split::Validation
            } else {
                Split::Test
            };
            let label_values: Vec<bool> = spec
                .labels
                .iter()
                .map(|l| {
                    let prev = l
                        .prevalence_by_race
                        .get(race)
                        .copied()
                        .unwrap_or(l.prevalence);
                    attr_rng.random_range(0.0..1.0) < prev
                })
                .collect();

            // mean vector for every scan of this patient
            let mut mean = vec![0.0f64; d];
            for (li, &positive) in label_values.iter().enumerate() {
                if positive {
                    let mag = spec.labels[li].magnitude_sd * spec.noise_sd;
                    for (m, u) in mean.iter_mut().zip(&disease_units[li]) {
                        *m += mag * u;
                    }
                }
            }
            if let (Some(unit), Some(shift)) = (&sex_unit, &spec.sex_shift) {
                let coeff = match sex {
                    Sex::Female => 0.5,
                    Sex::Male => -0.5,
                };
                let mag = coeff * shift.magnitude_sd * spec.noise_sd;
                for (m, u) in mean.iter_mut().zip(unit) {
                    *m += mag * u;
                }
            }
            if let Some((unit, magnitude)) = race_units.get(race) {
                let mag = magnitude * spec.noise_sd;
                for (m, u) in mean.iter_mut().zip(unit) {
                    *m += mag * u;
                }
            }

            let patient_id = format!("p{patient_ordinal:06}");
            for _ in 0..spec.scans_per_patient {
                let mut noise_rng = substream_rng(spec.seed, SCAN_STREAM_BASE + scan_ordinal);
                let row = scan_ordinal as usize;
                for c in 0..d {
                    let v = mean[c] + spec.noise_sd * standard.sample(&mut noise_rng);
                    matrix[(row, c)] = f64::from(v as f32);
                }
                let sample_id = format!("s{scan_ordinal:06}");
                ids.push(sample_id.clone());
                rows.push(CohortRow {
                    sample_id,
                    patient_id: patient_id.clone(),
                    sex,
                    race: race.clone(),
                    age,
                    split,
                    labels: label_values.iter().map(|&v| Some(v)).collect(),
                });
                scan_ordinal += 1;
            }
        }
    }

    let label_names = spec.labels.iter().map(|l| l.name.clone()).collect();
    Ok((
        EmbeddingSet::new(ids, matrix)?,
        Cohort::new(label_names, rows)?,
    ))
}
