//! Report-builder integration checks on synthetic cohorts.

use std::collections::BTreeMap;

use ndarray::Array2;

use repr_audit::cohort::GroupSelector;
use repr_audit::metrics::{build_performance_report, BootstrapConfig, ScoreTable};
use repr_audit::sampling::{ResamplePlan, StratumAttr, TargetCount};
use repr_audit::synth::{generate, Direction, SynthLabel, SynthSpec};
use repr_audit::Sex;

fn oracle_scores(set: &repr_audit::EmbeddingSet, gain: f64) -> ScoreTable {
    let mut scores = Array2::zeros((set.len(), 1));
    for i in 0..set.len() {
        scores[(i, 0)] = 1.0 / (1.0 + (-gain * set.matrix()[(i, 0)]).exp());
    }
    ScoreTable::new(set.ids().to_vec(), vec!["disease".into()], scores).unwrap()
}

fn groups() -> Vec<GroupSelector> {
    vec![
        GroupSelector::Race("a".into()),
        GroupSelector::Race("b".into()),
        GroupSelector::Race("c".into()),
        GroupSelector::Sex(Sex::Female),
        GroupSelector::Sex(Sex::Male),
    ]
}

fn plan() -> ResamplePlan {
    ResamplePlan {
        attributes: vec![StratumAttr::Race, StratumAttr::Age { bin_width: 20.0 }],
        target: TargetCount::Median,
        skip_empty: true,
        seed: 3,
    }
}

#[test]
fn identical_score_tables_give_identical_sections() {
    let spec = SynthSpec {
        seed: 77,
        n_per_group: 150,
        races: vec!["a".into(), "b".into(), "c".into()],
        split_fractions: (0.0, 0.0, 1.0),
        ..SynthSpec::default()
    };
    let (set, cohort) = generate(&spec).unwrap();
    let table = oracle_scores(&set, 1.5);
    let report = build_performance_report(
        &[("first".into(), table.clone()), ("second".into(), table)],
        &cohort,
        &["disease".to_string()],
        &groups(),
        0.2,
        &plan(),
        &BootstrapConfig {
            replicates: 40,
            seed: 5,
            patient_level: false,
        },
    )
    .unwrap();

    let section = &report.sections[0];
    assert_eq!(section.thresholds[0].1, section.thresholds[1].1);
    for group in &report.groups {
        let first = section
            .records
            .iter()
            .find(|r| r.model == "first" && &r.group == group)
            .unwrap();
        let second = section
            .records
            .iter()
            .find(|r| r.model == "second" && &r.group == group)
            .unwrap();
        assert_eq!(first.auc, second.auc);
        assert_eq!(first.tpr, second.tpr);
        assert_eq!(first.fpr, second.fpr);
        assert_eq!(first.youden_j, second.youden_j);
    }
    // provenance echo
    assert_eq!(report.resample_plan, plan());
    assert_eq!(report.bootstrap.replicates, 40);
    assert_eq!(report.target_fpr, 0.2);
}

#[test]
fn youden_identity_holds_in_every_emitted_record() {
    let spec = SynthSpec {
        seed: 13,
        n_per_group: 120,
        races: vec!["a".into(), "b".into(), "c".into()],
        split_fractions: (0.0, 0.0, 1.0),
        ..SynthSpec::default()
    };
    let (set, cohort) = generate(&spec).unwrap();
    let report = build_performance_report(
        &[("m".into(), oracle_scores(&set, 2.0))],
        &cohort,
        &["disease".to_string()],
        &groups(),
        0.2,
        &plan(),
        &BootstrapConfig {
            replicates: 30,
            seed: 9,
            patient_level: false,
        },
    )
    .unwrap();
    let mut checked = 0;
    for record in &report.sections[0].records {
        if let (Some(tpr), Some(fpr), Some(j)) = (record.tpr, record.fpr, record.youden_j) {
            assert_eq!(j.point, tpr.point - fpr.point, "group {}", record.group);
            let (lo, hi) = j.ci.unwrap();
            assert!(lo <= j.point && j.point <= hi);
            checked += 1;
        }
    }
    assert_eq!(checked, 5);
}

#[test]
fn unbiased_cohort_has_near_zero_relative_change() {
    // no group shifts and a shared score rule: relative change is noise
    let spec = SynthSpec {
        seed: 99,
        n_per_group: 5000,
        races: vec!["a".into(), "b".into(), "c".into()],
        labels: vec![SynthLabel {
            name: "disease".into(),
            direction: Direction::Axis(0),
            magnitude_sd: 3.0,
            prevalence: 0.3,
            prevalence_by_race: BTreeMap::new(),
        }],
        split_fractions: (0.0, 0.0, 1.0),
        ..SynthSpec::default()
    };
    let (set, cohort) = generate(&spec).unwrap();
    let report = build_performance_report(
        &[("m".into(), oracle_scores(&set, 2.0))],
        &cohort,
        &["disease".to_string()],
        &groups(),
        0.2,
        &plan(),
        &BootstrapConfig {
            replicates: 20,
            seed: 1,
            patient_level: false,
        },
    )
    .unwrap();
    for row in &report.sections[0].relative_change_j {
        let pct = row.pct.unwrap();
        assert!(pct.abs() < 2.0, "group {}: {pct}%", row.group);
    }
}

#[test]
fn patient_level_bootstrap_differs_but_is_deterministic() {
    let spec = SynthSpec {
        seed: 21,
        n_per_group: 100,
        scans_per_patient: 3,
        races: vec!["a".into(), "b".into()],
        split_fractions: (0.0, 0.0, 1.0),
        ..SynthSpec::default()
    };
    let (set, cohort) = generate(&spec).unwrap();
    let table = oracle_scores(&set, 1.0);
    let build = |patient_level: bool| {
        build_performance_report(
            &[("m".into(), table.clone())],
            &cohort,
            &["disease".to_string()],
            &[
                GroupSelector::Race("a".into()),
                GroupSelector::Race("b".into()),
            ],
            0.2,
            &plan(),
            &BootstrapConfig {
                replicates: 60,
                seed: 4,
                patient_level,
            },
        )
        .unwrap()
    };
    let scan = build(false);
    let patient = build(true);
    assert_eq!(scan, build(false));
    assert_eq!(patient, build(true));
    let ci = |r: &repr_audit::metrics::AuditReport| {
        r.sections[0].records[0].auc.unwrap().ci.unwrap()
    };
    assert_ne!(ci(&scan), ci(&patient));
}

#[test]
fn section_csv_has_table_shape() {
    let spec = SynthSpec {
        seed: 31,
        n_per_group: 80,
        races: vec!["a".into(), "b".into()],
        split_fractions: (0.0, 0.0, 1.0),
        ..SynthSpec::default()
    };
    let (set, cohort) = generate(&spec).unwrap();
    let report = build_performance_report(
        &[("m".into(), oracle_scores(&set, 2.0))],
        &cohort,
        &["disease".to_string()],
        &[
            GroupSelector::Race("a".into()),
            GroupSelector::Race("b".into()),
        ],
        0.2,
        &plan(),
        &BootstrapConfig {
            replicates: 25,
            seed: 2,
            patient_level: false,
        },
    )
    .unwrap();
    let csv = report.section_csv("disease").unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "metric,model,a,b");
    // four metric blocks x one model
    assert_eq!(lines.len(), 1 + 4);
    for (i, metric) in ["auc", "tpr", "fpr", "youden_j"].iter().enumerate() {
        assert!(lines[i + 1].starts_with(&format!("{metric},m,")), "{}", lines[i + 1]);
    }
    // cells look like `0.80 (0.78-0.81)`
    let cell = lines[1].split(',').nth(2).unwrap();
    assert!(
        cell.contains('(') && cell.contains('-') && cell.contains(')'),
        "{cell}"
    );
}
