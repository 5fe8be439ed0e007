//! Dataset files, experiment configuration, orchestration and report output.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{dice_attack, meta_attack, AttackConfig, ConstraintConfig, Flip, DEFAULT_DEGREE_THRESHOLD};
use crate::error::{Error, Result};
use crate::eval::{evaluate, margin_gradient_scatter, EvalReport, ScatterPoint};
use crate::graph::{Features, Graph};
use crate::loss::{CaWeightParams, LossKind, LossSpec};
use crate::surrogate::SurrogateHyper;
use crate::victim::VictimHyper;

/// Overrides the directory of every output file when set.
pub const OUTPUT_DIR_ENV: &str = "CA_ATTACK_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// `edges.txt` (`i j` per line), `labels.txt` (one class index per
    /// line), optional `features.csv` (one row per node).
    #[default]
    Text,
    /// `<name>.content` (`id f1 .. fd class`) and `<name>.cites`
    /// (`cited citing`), as distributed for the citation benchmarks.
    Linqs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            labeled_fraction: 0.1,
            seed: 0,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut next = || -> Result<usize> {
            it.next()
                .ok_or_else(|| parse_err(path, ln + 1, "expected two node indices"))?
                .parse()
                .map_err(|e| parse_err(path, ln + 1, format!("{e}")))
        };
        let (i, j) = (next()?, next()?);
        edges.push((i, j));
    }
    Ok(edges)
}

fn parse_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, l)| l.trim().parse().map_err(|e| parse_err(path, ln + 1, format!("{e}"))))
        .collect()
}

fn parse_features(path: &Path, n: usize) -> Result<Array2<f64>> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, ln + 1, format!("{e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    ln + 1,
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(Error::Dimension(format!(
            "{} has {} rows but there are {} labels",
            path.display(),
            rows.len(),
            n
        )));
    }
    let d = rows.first().map_or(0, Vec::len);
    Ok(Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).expect("checked shape"))
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// Reads a graph without extracting the LCC or assigning a split.
pub fn read_raw(dir: &Path, format: DatasetFormat) -> Result<Graph> {
    match format {
        DatasetFormat::Text => {
            let labels = parse_labels(&dir.join("labels.txt"))?;
            if labels.is_empty() {
                return Err(Error::Parse {
                    path: dir.join("labels.txt").display().to_string(),
                    line: 0,
                    msg: "no labels".into(),
                });
            }
            let n = labels.len();
            let feature_path = dir.join("features.csv");
            let features = if feature_path.exists() {
                Features::new(parse_features(&feature_path, n)?)
            } else {
                Features::identity(n)
            };
            let edges = parse_edges(&dir.join("edges.txt"))?;
            let k = class_count(&labels);
            Graph::new(&edges, features, labels, k, vec![false; n])
        }
        DatasetFormat::Linqs => read_linqs(dir),
    }
}

fn find_with_extension(dir: &Path, ext: &str) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut hits: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    hits.sort();
    hits.into_iter().next().ok_or_else(|| {
        Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("no *.{ext} file")),
        )
    })
}

fn read_linqs(dir: &Path) -> Result<Graph> {
    let content_path = find_with_extension(dir, "content")?;
    let cites_path = find_with_extension(dir, "cites")?;
    let content = read(&content_path)?;
    let mut ids = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut class_names = Vec::new();
    for (ln, line) in content.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(parse_err(&content_path, ln + 1, "expected id, features, class"));
        }
        let row = fields[1..fields.len() - 1]
            .iter()
            .map(|x| {
                x.parse::<f64>()
                    .map_err(|e| parse_err(&content_path, ln + 1, format!("{e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(parse_err(&content_path, ln + 1, "inconsistent feature width"));
        }
        if ids.insert(fields[0].to_string(), rows.len()).is_some() {
            return Err(parse_err(&content_path, ln + 1, format!("duplicate id {}", fields[0])));
        }
        rows.push(row);
        class_names.push(fields[fields.len() - 1].to_string());
    }
    let mut classes: Vec<&String> = class_names.iter().collect();
    classes.sort();
    classes.dedup();
    let class_index: BTreeMap<&String, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let labels: Vec<usize> = class_names.iter().map(|c| class_index[c]).collect();
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let features = Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect()).expect("checked shape");

    let cites = read(&cites_path)?;
    let mut edges = Vec::new();
    let mut skipped = 0usize;
    for (ln, line) in cites.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(parse_err(&cites_path, ln + 1, "expected two ids"));
        }
        match (ids.get(fields[0]), ids.get(fields[1])) {
            (Some(&i), Some(&j)) if i != j => edges.push((i, j)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!(
            "{}: skipped {skipped} citations with unknown ids or self-loops",
            cites_path.display()
        );
    }
    Graph::new(&edges, Features::new(features), labels, classes.len(), vec![false; n])
}

/// Deterministic labeled/unlabeled split of `n` nodes.
pub fn random_split(n: usize, split: &SplitSpec) -> Result<Vec<bool>> {
    if !(split.labeled_fraction > 0.0 && split.labeled_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "labeled fraction {} outside (0, 1)",
            split.labeled_fraction
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two nodes to split".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed));
    let k = ((split.labeled_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut mask = vec![false; n];
    for &v in &order[..k] {
        mask[v] = true;
    }
    Ok(mask)
}

/// Reads a dataset, keeps its largest connected component, and applies a
/// seeded split.
pub fn load_dataset(dir: &Path, format: DatasetFormat, split: &SplitSpec) -> Result<Graph> {
    let lcc = read_raw(dir, format)?.largest_connected_component();
    let mask = random_split(lcc.n_nodes(), split)?;
    lcc.with_labeled_mask(mask)
}

/// `⌊fraction · edges⌋`, tolerant of representation error just below an integer.
pub fn budget_for(fraction: f64, n_edges: usize) -> usize {
    (fraction * n_edges as f64 + 1e-9).floor() as usize
}

pub fn write_text_dataset(g: &Graph, dir: &Path, with_features: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut edges = String::new();
    for (i, j) in g.edges() {
        edges.push_str(&format!("{i} {j}\n"));
    }
    let labels: String = g.labels().iter().map(|l| format!("{l}\n")).collect();
    write(&dir.join("edges.txt"), &edges)?;
    write(&dir.join("labels.txt"), &labels)?;
    if with_features {
        let mut f = String::new();
        for row in g.features().dense().rows() {
            let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            f.push_str(&cells.join(","));
            f.push('\n');
        }
        write(&dir.join("features.csv"), &f)?;
    }
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, &text)
}

pub fn read_flips(path: &Path) -> Result<Vec<Flip>> {
    serde_json::from_str(&read(path)?).map_err(|e| parse_err(path, e.line(), e.to_string()))
}

pub fn write_scatter_csv(path: &Path, points: &[ScatterPoint]) -> Result<()> {
    let mut out = String::from("node_id,margin,grad_l2\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.node, p.margin, p.grad_l2));
    }
    write(path, &out)
}

/// Places `path` under `$CA_ATTACK_OUTPUT_DIR` when that variable is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => Path::new(&dir).join(path.file_name().unwrap_or(path.as_os_str())),
        _ => path.to_path_buf(),
    }
}

/// `report.json` → `report.flips.json`.
pub fn flips_path(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map_or("report".into(), |s| s.to_string_lossy().into_owned());
    report.with_file_name(format!("{stem}.flips.json"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    #[default]
    Meta,
    Dice,
    /// No perturbation; evaluates the clean graph.
    None,
}

/// Every knob of an experiment, flat so that each field maps to one CLI flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub format: DatasetFormat,
    pub dataset_name: Option<String>,
    pub labeled_fraction: f64,
    pub split_seed: u64,
    pub attack: AttackKind,
    pub loss: LossKind,
    pub ca_enabled: bool,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub cw_kappa: f64,
    pub budget_fraction: f64,
    pub retrain_every: usize,
    pub forbid_singletons: bool,
    pub degree_test: bool,
    pub degree_test_threshold: f64,
    pub dice_delete_prob: f64,
    pub attack_seed: u64,
    /// `None` derives the step from the objective's smoothness bound.
    pub surrogate_lr: Option<f64>,
    pub surrogate_epochs: usize,
    pub surrogate_weight_decay: f64,
    pub victim_hidden: usize,
    pub victim_lr: f64,
    pub victim_epochs: usize,
    pub victim_weight_decay: f64,
    pub victim_dropout: f64,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ca = CaWeightParams::citation();
        let s = SurrogateHyper::default();
        let v = VictimHyper::default();
        ExperimentConfig {
            dataset: PathBuf::new(),
            format: DatasetFormat::Text,
            dataset_name: None,
            labeled_fraction: 0.1,
            split_seed: 0,
            attack: AttackKind::Meta,
            loss: LossKind::Nll,
            ca_enabled: false,
            alpha1: ca.alpha1,
            beta1: ca.beta1,
            alpha2: ca.alpha2,
            beta2: ca.beta2,
            cw_kappa: 0.0,
            budget_fraction: 0.05,
            retrain_every: 1,
            forbid_singletons: true,
            degree_test: false,
            degree_test_threshold: DEFAULT_DEGREE_THRESHOLD,
            dice_delete_prob: 0.5,
            attack_seed: 0,
            surrogate_lr: s.lr,
            surrogate_epochs: s.epochs,
            surrogate_weight_decay: s.weight_decay,
            victim_hidden: v.hidden,
            victim_lr: v.lr,
            victim_epochs: v.epochs,
            victim_weight_decay: v.weight_decay,
            victim_dropout: v.dropout,
            seeds: (0..10).collect(),
            output: PathBuf::from("report.json"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return Err(Error::InvalidParameter(format!(
                "budget_fraction {} outside [0, 1]",
                self.budget_fraction
            )));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "labeled_fraction {} outside (0, 1)",
                self.labeled_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::EmptySeeds);
        }
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::InvalidParameter("no dataset path".into()));
        }
        self.loss_spec().validate()?;
        self.victim_hyper().validate()
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            base: self.loss,
            ca: self.ca_enabled.then_some(CaWeightParams {
                alpha1: self.alpha1,
                beta1: self.beta1,
                alpha2: self.alpha2,
                beta2: self.beta2,
            }),
            cw_kappa: self.cw_kappa,
        }
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            labeled_fraction: self.labeled_fraction,
            seed: self.split_seed,
        }
    }

    pub fn surrogate_hyper(&self) -> SurrogateHyper {
        SurrogateHyper {
            lr: self.surrogate_lr,
            epochs: self.surrogate_epochs,
            weight_decay: self.surrogate_weight_decay,
            seed: self.attack_seed,
        }
    }

    pub fn victim_hyper(&self) -> VictimHyper {
        VictimHyper {
            hidden: self.victim_hidden,
            lr: self.victim_lr,
            epochs: self.victim_epochs,
            weight_decay: self.victim_weight_decay,
            dropout: self.victim_dropout,
            seed: 0,
        }
    }

    pub fn attack_config(&self, budget: usize) -> AttackConfig {
        AttackConfig {
            budget,
            loss: self.loss_spec(),
            retrain_every: self.retrain_every,
            surrogate: self.surrogate_hyper(),
            constraints: ConstraintConfig {
                forbid_singletons: self.forbid_singletons,
                degree_test: self.degree_test,
                degree_test_threshold: self.degree_test_threshold,
            },
            seed: self.attack_seed,
            dice_delete_prob: self.dice_delete_prob,
            ..AttackConfig::default()
        }
    }

    pub fn dataset_label(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| {
            self.dataset.file_name().map_or_else(
                || self.dataset.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            )
        })
    }

    pub fn attack_label(&self) -> String {
        match self.attack {
            AttackKind::Meta => "meta".into(),
            AttackKind::Dice => "dice".into(),
            AttackKind::None => "none".into(),
        }
    }
}

/// Which part of a run failed; each maps to a distinct exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Runtime,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Data => 3,
            Stage::Runtime => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage:?} stage: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Outputs of [`attack_stage`].
pub struct Attacked {
    pub clean: Graph,
    pub poisoned: Graph,
    pub flips: Vec<Flip>,
    pub budget: usize,
}

/// Loads the dataset and runs the configured attack.
pub fn attack_stage(cfg: &ExperimentConfig) -> std::result::Result<Attacked, StageError> {
    cfg.validate().stage(Stage::Config)?;
    let clean = load_dataset(&cfg.dataset, cfg.format, &cfg.split()).stage(Stage::Data)?;
    let budget = budget_for(cfg.budget_fraction, clean.n_edges());
    log::info!(
        "{}: {} nodes, {} edges, budget {budget}",
        cfg.dataset_label(),
        clean.n_nodes(),
        clean.n_edges()
    );
    let attack_cfg = cfg.attack_config(budget);
    let result = match cfg.attack {
        AttackKind::Meta => Some(meta_attack(&clean, &attack_cfg)),
        AttackKind::Dice => Some(dice_attack(&clean, &attack_cfg)),
        AttackKind::None => None,
    };
    let (poisoned, flips) = match result {
        Some(r) => {
            let r = r.stage(Stage::Runtime)?;
            (r.poisoned, r.flips)
        }
        None => (clean.clone(), Vec::new()),
    };
    Ok(Attacked {
        clean,
        poisoned,
        flips,
        budget,
    })
}

/// Evaluates `poisoned` and wraps the result with run metadata.
pub fn report_for(
    cfg: &ExperimentConfig,
    clean: &Graph,
    poisoned: &Graph,
    flips: Vec<Flip>,
    budget: usize,
    started: Instant,
) -> std::result::Result<EvalReport, StageError> {
    let mut report = evaluate(clean, poisoned, &cfg.victim_hyper(), &cfg.seeds).stage(Stage::Runtime)?;
    report.dataset = cfg.dataset_label();
    report.attack = cfg.attack_label();
    report.loss = cfg.loss_spec().name();
    report.budget = budget;
    report.budget_fraction = cfg.budget_fraction;
    report.flips = flips;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    report.config = serde_json::to_value(cfg).expect("serializable config");
    Ok(report)
}

/// Load, attack, evaluate; writes the report and the flip list next to it.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<EvalReport, StageError> {
    let started = Instant::now();
    let attacked = attack_stage(cfg)?;
    let report = report_for(
        cfg,
        &attacked.clean,
        &attacked.poisoned,
        attacked.flips,
        attacked.budget,
        started,
    )?;
    let out = resolve_output(&cfg.output);
    write_json(&out, &report).stage(Stage::Runtime)?;
    write_json(&flips_path(&out), &report.flips).stage(Stage::Runtime)?;
    Ok(report)
}

/// Loads the dataset and emits the margin/gradient-norm scatter as CSV.
pub fn run_scatter(cfg: &ExperimentConfig) -> std::result::Result<Vec<ScatterPoint>, StageError> {
    cfg.validate().stage(Stage::Config)?;
    let g = load_dataset(&cfg.dataset, cfg.format, &cfg.split()).stage(Stage::Data)?;
    let points = margin_gradient_scatter(&g, &cfg.loss_spec(), &cfg.surrogate_hyper()).stage(Stage::Runtime)?;
    write_scatter_csv(&resolve_output(&cfg.output), &points).stage(Stage::Runtime)?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_sized() {
        let s = SplitSpec {
            labeled_fraction: 0.1,
            seed: 4,
        };
        let a = random_split(95, &s).unwrap();
        assert_eq!(a, random_split(95, &s).unwrap());
        assert_eq!(a.iter().filter(|&&x| x).count(), 10);
        assert!(random_split(
            10,
            &SplitSpec {
                labeled_fraction: 1.0,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn budget_floors() {
        assert_eq!(budget_for(0.05, 5069), 253);
        assert_eq!(budget_for(0.10, 5069), 506);
        assert_eq!(budget_for(0.29, 100), 29);
        assert_eq!(budget_for(0.0, 100), 0);
    }

    #[test]
    fn flips_path_sits_next_to_report() {
        assert_eq!(flips_path(Path::new("out/r.json")), PathBuf::from("out/r.flips.json"));
    }

    #[test]
    fn config_rejects_bad_fractions() {
        let mut cfg = ExperimentConfig {
            dataset: "x".into(),
            ..Default::default()
        };
        assert!(cfg.validate().is_ok());
        cfg.budget_fraction = 1.5;
        assert!(cfg.validate().is_err());
        cfg.budget_fraction = 0.1;
        cfg.labeled_fraction = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig {
            dataset: "data/cora".into(),
            ca_enabled: true,
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        // partial configs fill in defaults
        let partial: ExperimentConfig = serde_json::from_str(r#"{"dataset": "d", "loss": "cw"}"#).unwrap();
        assert_eq!(partial.loss, LossKind::Cw);
        assert_eq!(partial.seeds.len(), 10);
    }
}
