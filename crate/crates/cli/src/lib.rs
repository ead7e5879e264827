//! Pipeline commands behind the `battery-msm` binary. Every command is a pure
//! function of its config, flags, input files and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use battery_msm::dataio::{apply_norm, fit_norm, load_csv, synth_fleet, vehicle_split, write_csv, FleetDataset, SynthConfig};
use battery_msm::downstream::{extract_features, predict_proba, raw_features, train_gbdt, FusedFeature, GbdtConfig};
use battery_msm::evalkit::{
    emit_report, emit_tsne, expected_cost, mixing_score, tsne, Aggregator, CostParams, EvaluationReport, ScoredSnippet,
    TsneConfig, TsneRow, TSNE_MAX_POINTS,
};
use battery_msm::model::{init_params, ModelConfig, ModelParams};
use battery_msm::numcore::SeededRng;
use battery_msm::pretrain::{load_checkpoint, run_pretrain, save_checkpoint, transfer_init, PretrainConfig, TransferReport};
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub const SNIPPETS_FILE: &str = "snippets.csv";
pub const META_FILE: &str = "meta.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] battery_msm::Error),
}

impl CliError {
    /// 2 usage/config, 3 I/O, 4 numerical failure, 5 inadequate data.
    pub fn exit_code(&self) -> i32 {
        use battery_msm::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                E::Shape { .. } | E::InvalidArgument(_) | E::InvalidConfig(_) | E::UnsupportedVersion { .. } => 2,
                E::Io { .. } | E::Parse { .. } | E::MalformedCheckpoint(_) => 3,
                E::NonFinite(_) => 4,
                E::Data(_) => 5,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Fraction of vehicles in the training side.
    pub train_ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_ratio: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub aggregator: Aggregator,
    pub cost: CostParams,
    pub tsne: TsneConfig,
    /// Cap on projected points; larger inputs are subsampled only when
    /// `subsample` is set.
    pub max_points: usize,
    pub subsample: bool,
    /// Mixing groups: `vehicle` or `fleet` (vehicle id minus its trailing
    /// `V<number>`).
    pub mixing_groups: MixingGroups,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            aggregator: Aggregator::Mean,
            cost: CostParams::default(),
            tsne: TsneConfig::default(),
            max_points: TSNE_MAX_POINTS,
            subsample: false,
            mixing_groups: MixingGroups::Vehicle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingGroups {
    Vehicle,
    Fleet,
}

/// Pretraining options; the seed comes from the global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub mask_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let d = PretrainConfig::default();
        Self {
            mask_rate: d.mask_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            clip_norm: d.clip_norm,
        }
    }
}

impl PretrainSection {
    fn with_seed(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            mask_rate: self.mask_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            clip_norm: self.clip_norm,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Sequence length snippets are resampled to when loading CSV files.
    pub seq_len: usize,
    pub generator: SynthConfig,
    /// Further sub-fleets appended to the generated fleet.
    pub extra_fleets: Vec<SynthConfig>,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainSection,
    pub gbdt: GbdtConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seq_len: 128,
            generator: SynthConfig::default(),
            extra_fleets: Vec::new(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainSection::default(),
            gbdt: GbdtConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    /// Reads `path`, or the defaults when `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| battery_msm::Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                Self::from_toml(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    /// Seed for one pipeline stage, derived from the global seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        SeededRng::new(self.seed).derive_str(stage).next_u64()
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::from([("global".to_string(), self.seed)]);
        for s in STAGES {
            m.insert(s.to_string(), self.stage_seed(s));
        }
        m
    }

    fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

const STAGES: [&str; 6] = ["synth", "split", "init", "pretrain", "gbdt", "tsne"];

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    battery_msm::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn load_dataset(cfg: &RunConfig, data_dir: &Path) -> Result<FleetDataset> {
    Ok(load_csv(&data_dir.join(SNIPPETS_FILE), &data_dir.join(META_FILE), cfg.seq_len)?)
}

/// Loads, splits by vehicle and z-scores with training statistics.
fn prepared(cfg: &RunConfig, data_dir: &Path) -> Result<(FleetDataset, FleetDataset, battery_msm::NormStats)> {
    let ds = load_dataset(cfg, data_dir)?;
    let (train, val, _) = vehicle_split(&ds, cfg.split.train_ratio, cfg.stage_seed("split"))?;
    let stats = fit_norm(&train)?;
    Ok((apply_norm(&train, &stats)?, apply_norm(&val, &stats)?, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub vehicles: usize,
    pub faulty: usize,
    pub snippets: usize,
}

impl std::fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "vehicles: {}\nfaulty: {}\nsnippets: {}", self.vehicles, self.faulty, self.snippets)
    }
}

pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<SynthSummary> {
    let mut fleet = synth_fleet(&cfg.generator, cfg.stage_seed("synth"))?;
    for (i, extra) in cfg.extra_fleets.iter().enumerate() {
        let seed = SeededRng::new(cfg.stage_seed("synth")).derive(i as u64 + 1).next_u64();
        fleet = fleet.concat(synth_fleet(extra, seed)?)?;
    }
    ensure_dir(out_dir)?;
    write_csv(&fleet, &out_dir.join(SNIPPETS_FILE), &out_dir.join(META_FILE))?;
    let vehicles = fleet.vehicles();
    Ok(SynthSummary {
        vehicles: vehicles.len(),
        faulty: vehicles.iter().filter(|(_, l)| *l == 1).count(),
        snippets: fleet.len(),
    })
}

#[derive(Debug)]
pub struct PretrainSummary {
    pub transfer: Option<TransferReport>,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
}

/// Writes `checkpoint.json`, `loss_history.csv` and `norm_stats.json`.
pub fn cmd_pretrain(cfg: &RunConfig, data_dir: &Path, out_dir: &Path, init_from: Option<&Path>) -> Result<PretrainSummary> {
    let (train, val, stats) = prepared(cfg, data_dir)?;
    let mcfg = ModelConfig {
        channels: train.num_channels(),
        meta_dim: train.meta_dim(),
        ..cfg.model.clone()
    };
    let init_rng = SeededRng::new(cfg.stage_seed("init"));
    let (params, transfer) = match init_from {
        None => (init_params(&mcfg, &init_rng)?, None),
        Some(path) => {
            let src = load_checkpoint(path)?;
            let (p, report) = transfer_init(&src, &mcfg, &init_rng)?;
            (p, Some(report))
        }
    };
    let (ckpt, history) = run_pretrain(&train, &val, params, &cfg.pretrain.with_seed(cfg.stage_seed("pretrain")))?;

    ensure_dir(out_dir)?;
    save_checkpoint(&ckpt, &out_dir.join(CHECKPOINT_FILE))?;
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for e in &history {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{}", e.epoch, e.train_loss, val).expect("string write");
    }
    write_file(&out_dir.join("loss_history.csv"), &csv)?;
    let mut norm = serde_json::to_string_pretty(&stats).expect("stats serialize");
    norm.push('\n');
    write_file(&out_dir.join("norm_stats.json"), &norm)?;
    let last = history.last();
    Ok(PretrainSummary {
        transfer,
        final_train_loss: last.map_or(f64::NAN, |e| e.train_loss),
        final_val_loss: last.and_then(|e| e.val_loss),
    })
}

/// Encoder for feature extraction: the checkpoint's, or a fresh random one.
fn encoder(cfg: &RunConfig, checkpoint: Option<&Path>, ds: &FleetDataset) -> Result<ModelParams> {
    match checkpoint {
        Some(path) => Ok(load_checkpoint(path)?.to_params()?),
        None => {
            let mcfg = ModelConfig {
                channels: ds.num_channels(),
                meta_dim: ds.meta_dim(),
                ..cfg.model.clone()
            };
            Ok(init_params(&mcfg, &SeededRng::new(cfg.stage_seed("init")))?)
        }
    }
}

/// Writes `report.json`, `roc.csv`, `roc.svg`, `scores.csv` and `gbdt.json`.
pub fn cmd_detect(cfg: &RunConfig, data_dir: &Path, checkpoint: Option<&Path>, out_dir: &Path) -> Result<EvaluationReport> {
    let (train, val, _) = prepared(cfg, data_dir)?;
    let params = encoder(cfg, checkpoint, &train)?;
    let ftrain = extract_features(&params, &train)?;
    let fval = extract_features(&params, &val)?;
    let model = train_gbdt(&ftrain, &cfg.gbdt, cfg.stage_seed("gbdt"))?;
    let scored = fval
        .iter()
        .map(|f| {
            Ok(ScoredSnippet {
                vehicle_id: f.vehicle_id.clone(),
                score: predict_proba(&model, &f.values)?,
                label: f.label,
            })
        })
        .collect::<battery_msm::Result<Vec<_>>>()?;
    cfg.eval.cost.validate()?;
    let mut report = EvaluationReport::evaluate(&scored, cfg.eval.aggregator, &cfg.eval.cost)?;
    report.seeds = cfg.seeds();
    report.config = cfg.echo();

    emit_report(&report, out_dir)?;
    let mut csv = String::from("snippet_id,vehicle_id,label,score\n");
    for (f, s) in fval.iter().zip(&scored) {
        writeln!(csv, "{},{},{},{}", f.snippet_id, f.vehicle_id, f.label, s.score).expect("string write");
    }
    write_file(&out_dir.join("scores.csv"), &csv)?;
    model.save(&out_dir.join("gbdt.json"))?;
    Ok(report)
}

fn fleet_of(vehicle_id: &str) -> &str {
    match vehicle_id.rsplit_once('V') {
        Some((prefix, n)) if !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) => prefix,
        _ => vehicle_id,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneSummary {
    pub mode: String,
    pub points: usize,
    pub groups: MixingGroups,
    /// Mixing of the projected features themselves.
    pub mixing_features: f64,
    /// Mixing of the 2-D projection.
    pub mixing_projection: f64,
    pub final_kl: f64,
}

/// Projects the whole (normalized) dataset. Writes `tsne.csv`, `tsne.svg`
/// and `mixing.json`.
pub fn cmd_tsne(cfg: &RunConfig, data_dir: &Path, checkpoint: Option<&Path>, raw: bool, out_dir: &Path) -> Result<TsneSummary> {
    let ds = load_dataset(cfg, data_dir)?;
    let (train, _, _) = vehicle_split(&ds, cfg.split.train_ratio, cfg.stage_seed("split"))?;
    let ds = apply_norm(&ds, &fit_norm(&train)?)?;

    let ds = if ds.len() > cfg.eval.max_points {
        if !cfg.eval.subsample {
            return Err(CliError::Config(format!(
                "{} snippets exceed eval.max_points = {}; set eval.subsample = true",
                ds.len(),
                cfg.eval.max_points
            )));
        }
        let mut rng = SeededRng::new(cfg.stage_seed("tsne")).derive_str("subsample");
        let keep = rand::seq::index::sample(&mut rng, ds.len(), cfg.eval.max_points);
        let ids: std::collections::HashSet<&str> = keep.iter().map(|i| ds.snippets()[i].snippet_id.as_str()).collect();
        ds.filter(|s| ids.contains(s.snippet_id.as_str()))
    } else {
        ds
    };

    let features: Vec<FusedFeature> = if raw {
        raw_features(&ds)
    } else {
        let params = encoder(cfg, checkpoint, &ds)?;
        extract_features(&params, &ds)?
    };
    // Only the sequence part: metadata would otherwise dominate both modes.
    let width = features[0].values.len() - ds.meta_dim();
    let x: Vec<Vec<f64>> = features.iter().map(|f| f.values[..width].to_vec()).collect();
    let out = tsne(&x, &cfg.eval.tsne, cfg.stage_seed("tsne"))?;

    let group = |f: &FusedFeature| match cfg.eval.mixing_groups {
        MixingGroups::Vehicle => f.vehicle_id.clone(),
        MixingGroups::Fleet => fleet_of(&f.vehicle_id).to_string(),
    };
    let groups: Vec<String> = features.iter().map(group).collect();
    let coords = out.embedding.data();
    let projected: Vec<Vec<f64>> = coords.chunks(2).map(<[f64]>::to_vec).collect();
    let rows: Vec<TsneRow> = features
        .iter()
        .zip(&projected)
        .map(|(f, p)| TsneRow {
            x: p[0],
            y: p[1],
            vehicle_id: f.vehicle_id.clone(),
            label: f.label,
        })
        .collect();
    let summary = TsneSummary {
        mode: if raw { "raw" } else { "embedding" }.to_string(),
        points: rows.len(),
        groups: cfg.eval.mixing_groups,
        mixing_features: mixing_score(&x, &groups)?,
        mixing_projection: mixing_score(&projected, &groups)?,
        final_kl: *out.kl_history.last().expect("kl history"),
    };
    emit_tsne(&rows, out_dir, "tsne")?;
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_file(&out_dir.join("mixing.json"), &json)?;
    Ok(summary)
}

pub fn cmd_cost(params: &CostParams, q_tp: f64, q_fp: f64) -> Result<f64> {
    for (name, q) in [("q-tp", q_tp), ("q-fp", q_fp)] {
        if !(0.0..=1.0).contains(&q) {
            return Err(CliError::Config(format!("--{name} must be in [0, 1], got {q}")));
        }
    }
    params.validate()?;
    Ok(expected_cost(params, q_tp, q_fp))
}

pub fn default_out(name: &str) -> PathBuf {
    PathBuf::from("out").join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_typos() {
        let cfg = RunConfig::from_toml("seed = 7\n[generator]\nvehicles = 12\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.generator.vehicles, 12);
        assert_eq!(cfg.model, ModelConfig::default());
        let err = RunConfig::from_toml("[pretrain]\nepochz = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("epochz"), "{err}");
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.extra_fleets.push(SynthConfig {
            id_prefix: "B".into(),
            ..SynthConfig::default()
        });
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn stage_seeds_differ_and_follow_global() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..RunConfig::default() };
        let s = a.seeds();
        assert_eq!(s.len(), STAGES.len() + 1);
        let distinct: std::collections::BTreeSet<u64> = s.values().copied().collect();
        assert_eq!(distinct.len(), s.len());
        assert_ne!(a.stage_seed("pretrain"), b.stage_seed("pretrain"));
    }

    #[test]
    fn fleet_prefix() {
        assert_eq!(fleet_of("A-V003"), "A-");
        assert_eq!(fleet_of("V017"), "");
        assert_eq!(fleet_of("car-9"), "car-9");
        assert_eq!(fleet_of("EV"), "EV");
    }

    #[test]
    fn cost_command() {
        let d = CostParams::default();
        assert!((cmd_cost(&d, 0.0, 0.0).unwrap() - 1900.0).abs() < 1e-9);
        assert!((cmd_cost(&d, 1.0, 1.0).unwrap() - 8000.0).abs() < 1e-9);
        assert!((cmd_cost(&d, 1.0, 0.0).unwrap() - 3.04).abs() < 1e-9);
        assert_eq!(cmd_cost(&d, 1.5, 0.0).unwrap_err().exit_code(), 2);
    }
}
