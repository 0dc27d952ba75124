//! Command implementations behind the `repr-audit` binary: inspect,
//! train-probe, evaluate, synth, summarize. Every command is deterministic
//! given its configuration and writes a manifest echoing the resolved
//! configuration, the master seed, and the toolkit version.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    check_alignment, load_cohort, load_embeddings, save_cohort, save_embeddings, Cohort,
    EmbeddingFormat, EmbeddingSet, GroupSelector,
};
use crate::config::{stage, AuditConfig};
use crate::error::{Error, Result};
use crate::metrics::{build_performance_report, AuditReport, BootstrapConfig, ScoreTable};
use crate::probes::{predict_probe, train_probe, Architecture, ProbeModel, ProbeSpec};
use crate::projection::{pca_fit, pca_transform, tsne_embed, ModeSelector, TsneConfig};
use crate::sampling::{mix_seed, one_scan_per_patient, subsample_per_group};
use crate::stats::{marginal_density, run_feature_bias_test, BinSpec, StatReport};
use crate::synth::{generate, SynthSpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Which of the JSON/CSV output pair to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Both,
    Json,
    Csv,
}

impl OutputFormat {
    fn json(&self) -> bool {
        matches!(self, OutputFormat::Both | OutputFormat::Json)
    }

    fn csv(&self) -> bool {
        matches!(self, OutputFormat::Both | OutputFormat::Csv)
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub format: Option<OutputFormat>,
}

impl Overrides {
    pub fn apply(&self, config: &mut AuditConfig) {
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
    }

    fn format(&self) -> OutputFormat {
        self.format.unwrap_or(OutputFormat::Both)
    }
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    outputs: Vec<String>,
    config: &'a C,
}

struct OutDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    fn finish<C: Serialize>(mut self, command: &str, seed: u64, config: &C) -> Result<Vec<PathBuf>> {
        let manifest = Manifest {
            tool: "repr-audit",
            version: TOOL_VERSION,
            command,
            seed,
            outputs: self
                .written
                .iter()
                .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
                .collect(),
            config,
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::invalid("manifest", e.to_string()))?;
        self.write("manifest.json", &text)?;
        Ok(self.written)
    }
}

fn load_inputs(config: &AuditConfig) -> Result<(EmbeddingSet, Cohort)> {
    let embeddings = load_embeddings(&config.data.embeddings, config.data.format)?;
    let cohort = load_cohort(&config.data.metadata)?;
    check_alignment(&embeddings, &cohort)?;
    Ok((embeddings, cohort))
}

/// Restricts the cohort to the embedding rows, in embedding order, so row
/// indices used by the sampling operations line up with matrix rows.
fn aligned_cohort(embeddings: &EmbeddingSet, cohort: &Cohort) -> Result<Cohort> {
    let rows: Vec<usize> = embeddings
        .ids()
        .iter()
        .map(|id| cohort.row_of(id).expect("alignment checked"))
        .collect();
    cohort.subset(&rows)
}

fn coords_csv(ids: &[String], coords: &Array2<f64>, prefix: &str) -> String {
    let mut out = String::from("sample_id");
    for m in 1..=coords.ncols() {
        let _ = write!(out, ",{prefix}{m}");
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(&crate::cohort::csv_escape(id));
        for j in 0..coords.ncols() {
            let _ = write!(out, ",{}", coords[(i, j)]);
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct ReportEnvelope<'a, T: Serialize> {
    version: &'static str,
    seed: u64,
    config: &'a AuditConfig,
    report: &'a T,
}

fn envelope_json<T: Serialize>(config: &AuditConfig, report: &T) -> Result<String> {
    serde_json::to_string_pretty(&ReportEnvelope {
        version: TOOL_VERSION,
        seed: config.seed,
        config,
        report,
    })
    .map_err(|e| Error::invalid("report json", e.to_string()))
}

/// Feature-space inspection: optional per-patient deduplication and
/// per-group subsampling, PCA, optional t-SNE, KS grid, marginal densities.
pub fn cmd_inspect(config: &AuditConfig, overrides: &Overrides) -> Result<Vec<PathBuf>> {
    let format = overrides.format();
    let (embeddings, cohort) = load_inputs(config)?;
    let cohort = aligned_cohort(&embeddings, &cohort)?;
    let seed = config.stage_seed(stage::INSPECT);

    // substream ordinals within the inspect stage
    let (seed_dedup, seed_subsample, seed_tsne) =
        (mix_seed(seed, 0), mix_seed(seed, 1), mix_seed(seed, 2));

    let mut rows: Vec<usize> = (0..embeddings.len()).collect();
    if config.inspect.one_scan_per_patient {
        rows = one_scan_per_patient(&cohort, seed_dedup)?;
    }
    let (set, sub) = {
        let set = embeddings.subset(&rows)?;
        let sub = cohort.subset(&rows)?;
        if config.inspect.subsample_per_group > 0 {
            let picked = subsample_per_group(
                &sub,
                config.inspect.subsample_attribute,
                config.inspect.subsample_per_group,
                seed_subsample,
            )?;
            (set.subset(&picked)?, sub.subset(&picked)?)
        } else {
            (set, sub)
        }
    };

    let mut model = pca_fit(set.matrix(), ModeSelector::VarianceTarget(config.inspect.variance_target))?;
    if model.n_modes() < config.inspect.modes {
        model = pca_fit(set.matrix(), ModeSelector::Count(config.inspect.modes))?;
    }
    let coords = pca_transform(&model, set.matrix())?;

    let pairs = config.inspect_pairs(&sub)?;
    let mut report = run_feature_bias_test(
        &coords,
        set.ids(),
        &sub,
        &pairs,
        config.inspect.modes,
        &model.explained_variance_ratio,
    )?;
    report.metadata.seed = Some(seed);
    report.metadata.subsample = Some(format!(
        "one_scan_per_patient={} subsample_per_group={} attribute={:?} n={}",
        config.inspect.one_scan_per_patient,
        config.inspect.subsample_per_group,
        config.inspect.subsample_attribute,
        set.len(),
    ));
    report.metadata.input = Some(config.data.embeddings.display().to_string());

    let mut out = OutDir::create(&config.out_dir)?;
    out.write("pca_model.json", &model.to_json())?;
    out.write("pca_coords.csv", &coords_csv(set.ids(), &coords, "mode_"))?;

    let bins = if config.inspect.marginal_bins == 0 {
        BinSpec::Auto
    } else {
        BinSpec::Count(config.inspect.marginal_bins)
    };
    let mut selectors: Vec<GroupSelector> = Vec::new();
    for (a, b) in &pairs {
        for sel in [a, b] {
            if !selectors.contains(sel) {
                selectors.push(sel.clone());
            }
        }
    }
    let mut marginals =
        String::from("projection,group,bin_lo,bin_hi,density,count\n");
    let append_marginals =
        |marginals: &mut String, coords: &Array2<f64>, prefix: &str, dims: usize| -> Result<()> {
            for dim in 0..dims {
                for sel in &selectors {
                    let rows = sub.select_rows(sel);
                    if rows.len() < 2 {
                        continue;
                    }
                    let values: Vec<f64> = rows.iter().map(|&r| coords[(r, dim)]).collect();
                    let hist = marginal_density(&values, bins)?;
                    for (bin, density) in hist.densities.iter().enumerate() {
                        let _ = writeln!(
                            marginals,
                            "{prefix}{},{},{},{},{},{}",
                            dim + 1,
                            crate::cohort::csv_escape(&sel.short_name()),
                            hist.edges[bin],
                            hist.edges[bin + 1],
                            density,
                            hist.counts[bin],
                        );
                    }
                }
            }
            Ok(())
        };
    append_marginals(&mut marginals, &coords, "mode_", config.inspect.modes)?;

    if config.inspect.tsne.enabled {
        let tsne_config = TsneConfig::new(
            config.inspect.tsne.perplexity,
            config.inspect.tsne.iterations,
            seed_tsne,
        );
        let result = tsne_embed(&coords, &tsne_config)?;
        out.write(
            "tsne_coords.csv",
            &coords_csv(set.ids(), &result.coords, "tsne_"),
        )?;
        #[derive(Serialize)]
        struct TsneMeta {
            kl_initial: f64,
            kl_final: f64,
            config: TsneConfig,
        }
        let meta = TsneMeta {
            kl_initial: result.kl_initial,
            kl_final: result.kl_final,
            config: tsne_config,
        };
        if format.json() {
            out.write("tsne.json", &envelope_json(config, &meta)?)?;
        }
        append_marginals(&mut marginals, &result.coords, "tsne_", 2)?;
    }

    if format.csv() {
        out.write("marginals.csv", &marginals)?;
        out.write("stat_report.csv", &report.to_csv())?;
    }
    if format.json() {
        out.write("stat_report.json", &envelope_json(config, &report)?)?;
    }
    out.finish("inspect", config.seed, config)
}

/// One probe spec per configured preset, hyperparameters from the config.
fn preset_spec(config: &AuditConfig, preset: &str, seed: u64) -> Result<ProbeSpec> {
    let architecture = match preset {
        "linear" => Architecture::Linear,
        "mlp3" => Architecture::Mlp {
            hidden_layers: 3,
            hidden_width: config.probes.hidden_width,
        },
        "mlp5" => Architecture::Mlp {
            hidden_layers: 5,
            hidden_width: config.probes.hidden_width,
        },
        other => return Err(Error::config(format!("unknown preset {other:?}"))),
    };
    Ok(ProbeSpec {
        architecture,
        learning_rate: config.probes.learning_rate,
        batch_size: config.probes.batch_size,
        max_epochs: config.probes.max_epochs,
        patience: config.probes.patience,
        seed,
    })
}

#[derive(Serialize, Deserialize)]
struct ProbeFile {
    version: String,
    seed: u64,
    preset: String,
    spec: ProbeSpec,
    model: serde_json::Value,
}

pub fn read_probe_model(path: &Path) -> Result<(String, ProbeModel)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ProbeFile = serde_json::from_str(&text)
        .map_err(|e| Error::invalid("probe file", format!("{}: {e}", path.display())))?;
    let model = ProbeModel::from_json(&file.model.to_string())?;
    Ok((file.preset, model))
}

fn split_pair(
    embeddings: &EmbeddingSet,
    cohort: &Cohort,
    split: crate::cohort::Split,
) -> Result<(EmbeddingSet, Cohort)> {
    let rows: Vec<usize> = (0..cohort.len())
        .filter(|&r| cohort.rows()[r].split == split)
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptySample {
            context: format!("no samples in split {split}"),
        });
    }
    Ok((embeddings.subset(&rows)?, cohort.subset(&rows)?))
}

/// Trains the configured probe presets on the train split, selecting on the
/// validation split.
pub fn cmd_train(config: &AuditConfig, _overrides: &Overrides) -> Result<Vec<PathBuf>> {
    if config.probes.labels.is_empty() {
        return Err(Error::config("probes.labels must list at least one label"));
    }
    let (embeddings, cohort) = load_inputs(config)?;
    let cohort = aligned_cohort(&embeddings, &cohort)?;
    let seed = config.stage_seed(stage::TRAIN);

    let train_pair = split_pair(&embeddings, &cohort, crate::cohort::Split::Train)?;
    let val_pair = split_pair(&embeddings, &cohort, crate::cohort::Split::Validation)?;

    let mut out = OutDir::create(&config.out_dir)?;
    for (i, preset) in config.probes.presets.iter().enumerate() {
        let spec = preset_spec(config, preset, mix_seed(seed, i as u64))?;
        let (model, log) = train_probe(
            &spec,
            (&train_pair.0, &train_pair.1),
            (&val_pair.0, &val_pair.1),
            &config.probes.labels,
        )?;
        let file = ProbeFile {
            version: TOOL_VERSION.into(),
            seed: config.seed,
            preset: preset.clone(),
            spec,
            model: serde_json::from_str(&model.to_json())
                .map_err(|e| Error::invalid("probe json", e.to_string()))?,
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::invalid("probe json", e.to_string()))?;
        out.write(&format!("probe_{preset}.json"), &text)?;
        out.write(&format!("train_log_{preset}.csv"), &log.to_csv())?;
    }
    out.finish("train-probe", config.seed, config)
}

/// Evaluates probe models and external score tables on the test split and
/// writes the Tables-S1..S4-shaped report.
pub fn cmd_evaluate(config: &AuditConfig, overrides: &Overrides) -> Result<Vec<PathBuf>> {
    let format = overrides.format();
    let (embeddings, cohort) = load_inputs(config)?;
    let cohort = aligned_cohort(&embeddings, &cohort)?;
    let seed = config.stage_seed(stage::EVALUATE);

    let (test_set, test_cohort) = split_pair(&embeddings, &cohort, crate::cohort::Split::Test)?;

    let labels = config.evaluate_labels();
    if labels.is_empty() {
        return Err(Error::config(
            "no labels to evaluate (set probes.labels or evaluate.labels)",
        ));
    }

    let mut models: Vec<(String, ScoreTable)> = Vec::new();
    let probe_paths: Vec<PathBuf> = if config.evaluate.probe_models.is_empty() {
        config
            .probes
            .presets
            .iter()
            .map(|p| config.out_dir.join(format!("probe_{p}.json")))
            .filter(|p| p.exists())
            .collect()
    } else {
        config.evaluate.probe_models.clone()
    };
    for path in &probe_paths {
        let (preset, model) = read_probe_model(path)?;
        let scores = predict_probe(&model, &test_set)?;
        models.push((preset, scores));
    }
    for external in &config.evaluate.external_scores {
        let table = ScoreTable::from_csv_path(&external.path)?;
        models.push((external.name.clone(), table));
    }
    if models.is_empty() {
        return Err(Error::config(
            "no models to evaluate: no probe files found and no external scores configured",
        ));
    }

    let groups = config.evaluate_groups(&test_cohort)?;
    let plan = config.resample.to_plan(mix_seed(seed, 0))?;
    let bootstrap = BootstrapConfig {
        replicates: config.evaluate.bootstrap_replicates,
        seed: mix_seed(seed, 1),
        patient_level: config.evaluate.patient_bootstrap,
    };
    let report: AuditReport = build_performance_report(
        &models,
        &test_cohort,
        &labels,
        &groups,
        config.evaluate.target_fpr,
        &plan,
        &bootstrap,
    )?;

    let mut out = OutDir::create(&config.out_dir)?;
    if format.json() {
        out.write("performance_report.json", &envelope_json(config, &report)?)?;
    }
    if format.csv() {
        for label in &labels {
            out.write(
                &format!("performance_{label}.csv"),
                &report.section_csv(label)?,
            )?;
        }
        out.write("plot_data.csv", &report.plot_csv())?;
    }
    out.finish("evaluate", config.seed, config)
}

/// Generates synthetic data with injected bias and writes it through the
/// standard file formats.
pub fn cmd_synth(spec_path: &Path, overrides: &Overrides) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let mut spec: SynthSpec = toml::from_str(&text)
        .map_err(|e| Error::config(format!("{}: {e}", spec_path.display())))?;
    if let Some(seed) = overrides.seed {
        spec.seed = seed;
    }
    let out_dir = overrides.out.clone().unwrap_or_else(|| "out".into());

    let (embeddings, cohort) = generate(&spec)?;
    let mut out = OutDir::create(&out_dir)?;
    let emb_path = out_dir.join("embeddings.bin");
    save_embeddings(&embeddings, &emb_path, EmbeddingFormat::Binary)?;
    out.written.push(emb_path.clone());
    out.written.push(crate::cohort::sidecar_path(&emb_path));
    if overrides.format().csv() {
        let csv_path = out_dir.join("embeddings.csv");
        save_embeddings(&embeddings, &csv_path, EmbeddingFormat::Csv)?;
        out.written.push(csv_path);
    }
    let meta_path = out_dir.join("metadata.csv");
    save_cohort(&cohort, &meta_path)?;
    out.written.push(meta_path);
    out.finish("synth", spec.seed, &spec)
}

/// Table-1-style cohort summary.
pub fn cmd_summarize(config: &AuditConfig, overrides: &Overrides) -> Result<Vec<PathBuf>> {
    let format = overrides.format();
    let cohort = load_cohort(&config.data.metadata)?;
    let summary = crate::cohort::summarize_cohort(&cohort, &config.summarize.group_by)?;
    let mut out = OutDir::create(&config.out_dir)?;
    if format.csv() {
        out.write("cohort_summary.csv", &summary.to_csv())?;
    }
    if format.json() {
        out.write("cohort_summary.json", &envelope_json(config, &summary)?)?;
    }
    out.finish("summarize", config.seed, config)
}

/// Report access for `StatReport` JSON envelopes written by [`cmd_inspect`].
pub fn read_stat_report(path: &Path) -> Result<StatReport> {
    #[derive(Deserialize)]
    struct Envelope {
        report: StatReport,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let envelope: Envelope = serde_json::from_str(&text)
        .map_err(|e| Error::invalid("stat report json", e.to_string()))?;
    Ok(envelope.report)
}
