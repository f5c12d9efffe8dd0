//! Staged pipeline over a working directory.
//!
//! Every stage reads its inputs from earlier stages' artifacts and writes
//! its own under the workdir (`ingest/`, `graphs/`, `labels/`, `features/`,
//! `models/`, `reports/`). Text artifacts start with a header line
//! `# geoloc artifact=<name> version=1 config=<hash>`; JSON artifacts carry
//! a `config_hash` field.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{cross_validate, render_table, write_error_cdf, CvInput, CvResult, EvalReport, DEFAULT_FOLDS};
use crate::geo::GeoPoint;
use crate::graph::{build_graphs, read_multiplex, read_node_index, write_multiplex, write_node_index, MultiplexGraph, DEFAULT_CELEBRITY_THRESHOLD};
use crate::ingest::{
    assign_all, attach_profiles, load_gazetteer, parse_profiles, parse_profiles_str, parse_records, parse_records_str, profile_distance_report, write_profiles, write_records, Gazetteer,
    GroundTruth, UserRecord, DEFAULT_MATCH_RADIUS_KM,
};
use crate::labels::{build_labels, LabelMode, LabelSpace, DEFAULT_MIN_BUCKET, DEFAULT_MIN_USERS};
use crate::models::{multiplex_embeddings, predict_graph_model, text_stage, ModelConfig, ModelKind, NodeData, Predictions, TextOptions};
use crate::synth::{generate, SynthConfig};
use crate::textfeat::{chi2_liw, load_embeddings, user_tokens, EmbeddingTable, Vocabulary};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub workdir: PathBuf,
    /// Defaults to `<workdir>/data/records.jsonl`.
    pub records: Option<PathBuf>,
    /// Defaults to `<workdir>/data/profiles.jsonl`; optional at run time.
    pub profiles: Option<PathBuf>,
    /// Defaults to `<workdir>/data/gazetteer.tsv`.
    pub gazetteer: Option<PathBuf>,
    /// Pretrained word vectors; random initialization when absent.
    pub embeddings: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            workdir: PathBuf::from("work"),
            records: None,
            profiles: None,
            gazetteer: None,
            embeddings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub match_radius_km: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            match_radius_km: DEFAULT_MATCH_RADIUS_KM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub celebrity_threshold: usize,
    pub use_follower_layer: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            celebrity_threshold: DEFAULT_CELEBRITY_THRESHOLD,
            use_follower_layer: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub mode: LabelMode,
    pub min_users: usize,
    pub min_bucket: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            mode: LabelMode::City,
            min_users: DEFAULT_MIN_USERS,
            min_bucket: DEFAULT_MIN_BUCKET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub graph: GraphConfig,
    pub labels: LabelConfig,
    pub text: TextOptions,
    pub model: ModelConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// One seed for evaluation folds, node2vec and the synthetic generator.
    pub fn set_seed(&mut self, seed: u64) {
        self.eval.seed = seed;
        self.model.n2v.seed = seed;
        self.synth.seed = seed;
    }

    fn data_path(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.paths.workdir.join("data").join(name))
    }

    pub fn records_path(&self) -> PathBuf {
        self.data_path(&self.paths.records, "records.jsonl")
    }

    pub fn profiles_path(&self) -> PathBuf {
        self.data_path(&self.paths.profiles, "profiles.jsonl")
    }

    pub fn gazetteer_path(&self) -> PathBuf {
        self.data_path(&self.paths.gazetteer, "gazetteer.tsv")
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval.k < 2 {
            return Err(Error::Config(format!("eval.k must be at least 2, got {}", self.eval.k)));
        }
        if self.graph.celebrity_threshold == 0 {
            return Err(Error::Config("graph.celebrity_threshold must be at least 1".into()));
        }
        if self.model.models.is_empty() {
            return Err(Error::Config("model.models is empty".into()));
        }
        self.model.n2v.validate()
    }
}

/// Hex SHA-256 (first 16 digits) of the config's JSON serialization. The
/// workdir is left out so a relocated workdir keeps its artifacts valid.
pub fn config_hash(cfg: &PipelineConfig) -> String {
    let mut cfg = cfg.clone();
    cfg.paths.workdir = PathBuf::new();
    let json = serde_json::to_string(&cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    hex::encode(digest)[..16].to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    BuildGraph,
    BuildLabels,
    Liw,
    Train,
    Evaluate,
    ProfileReport,
}

impl Stage {
    pub fn command(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::BuildGraph => "build-graph",
            Stage::BuildLabels => "build-labels",
            Stage::Liw => "liw",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::ProfileReport => "profile-report",
        }
    }
}

mod paths {
    pub const RECORDS: &str = "ingest/records.jsonl";
    pub const PROFILES: &str = "ingest/profiles.jsonl";
    pub const TRUTHS: &str = "ingest/truths.jsonl";
    pub const INGEST_SUMMARY: &str = "ingest/summary.json";
    pub const MULTIPLEX: &str = "graphs/multiplex.tsv";
    pub const NODES: &str = "graphs/nodes.tsv";
    pub const GRAPH_SUMMARY: &str = "graphs/summary.json";
    pub const CLASSES: &str = "labels/classes.csv";
    pub const ASSIGNMENT: &str = "labels/assignment.csv";
    pub const VOCAB: &str = "features/vocab.tsv";
    pub const LIW: &str = "features/liw.csv";
    pub const EVAL_JSON: &str = "reports/eval.json";
    pub const EVAL_TABLE: &str = "reports/eval.txt";
    pub const ERROR_CDF: &str = "reports/error_cdf.csv";
    pub const PROFILE_CDF: &str = "reports/profile_distance.csv";
    pub const PROFILE_JSON: &str = "reports/profile_report.json";
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Accept upstream artifacts built under a different config.
    pub force: bool,
    /// Run the producing stage for missing or stale upstream artifacts.
    pub build_missing: bool,
}

/// Everything the models need, in graph node order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub user_ids: Vec<String>,
    pub multiplex: MultiplexGraph,
    pub labels: LabelSpace,
    pub truth: BTreeMap<String, GeoPoint>,
    pub vocab: Vocabulary,
    pub tokens: Vec<Vec<String>>,
    pub seqs: Vec<Vec<usize>>,
    pub embeddings: EmbeddingTable,
}

impl Dataset {
    pub fn node_data<'a>(&'a self, n2v: Option<&'a Array2<f64>>) -> NodeData<'a> {
        NodeData {
            seqs: &self.seqs,
            tokens: &self.tokens,
            embeddings: &self.embeddings,
            multiplex: &self.multiplex,
            n2v,
        }
    }

    /// Labeled users with a ground truth: (node, label).
    pub fn labeled(&self) -> Vec<(usize, usize)> {
        (0..self.user_ids.len())
            .filter_map(|i| {
                let u = &self.user_ids[i];
                let l = self.labels.label_of(u)?;
                self.truth.contains_key(u).then_some((i, l))
            })
            .collect()
    }

    /// Node2vec+ embeddings when N2V-EXT is selected.
    pub fn n2v_embeddings(&self, cfg: &ModelConfig) -> Result<Option<Array2<f64>>> {
        if !cfg.models.contains(&ModelKind::N2vExt) {
            return Ok(None);
        }
        log::info!("node2vec+ walks and skip-gram over {} layers", self.multiplex.relation_count());
        multiplex_embeddings(&self.multiplex, &cfg.n2v).map(Some)
    }
}

fn token_table(users: &[UserRecord], node_ids: &[String]) -> Result<Vec<Vec<String>>> {
    let by_id: BTreeMap<&str, &UserRecord> = users.iter().map(|u| (u.user_id.as_str(), u)).collect();
    node_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|u| user_tokens(u))
                .ok_or_else(|| Error::Graph(format!("graph node `{id}` is not an ingested user")))
        })
        .collect()
}

/// Joins the stage outputs into a [`Dataset`].
#[allow(clippy::too_many_arguments)]
pub fn assemble_dataset(
    cfg: &PipelineConfig,
    users: &[UserRecord],
    node_ids: Vec<String>,
    multiplex: MultiplexGraph,
    labels: LabelSpace,
    truths: &[GroundTruth],
    vocab: Vocabulary,
) -> Result<Dataset> {
    let tokens = token_table(users, &node_ids)?;
    let max_len = cfg.model.transformer.max_len;
    let seqs: Vec<Vec<usize>> = tokens.iter().map(|t| vocab.encode(t, max_len)).collect();
    let seed = cfg.eval.seed;
    let embeddings = match &cfg.paths.embeddings {
        Some(p) => {
            let e = load_embeddings(p, &vocab, seed)?;
            log::info!("{} of {} vocabulary rows found in {}", e.found, vocab.len(), p.display());
            if e.dim() != cfg.model.transformer.d_model {
                log::warn!("embedding width {} overrides transformer.d_model {}", e.dim(), cfg.model.transformer.d_model);
            }
            e
        }
        None => EmbeddingTable::random(vocab.len(), cfg.model.transformer.d_model, seed),
    };
    Ok(Dataset {
        user_ids: node_ids,
        multiplex,
        labels,
        truth: truths.iter().map(|t| (t.user_id.clone(), t.point)).collect(),
        vocab,
        tokens,
        seqs,
        embeddings,
    })
}

fn build_vocab(users: &[UserRecord], min_freq: usize) -> Vocabulary {
    let docs: Vec<Vec<String>> = users.iter().map(user_tokens).collect();
    Vocabulary::build(docs.iter().map(Vec::as_slice), min_freq)
}

/// Every stage in memory, without touching the workdir.
pub fn prepare_dataset(cfg: &PipelineConfig, users: &[UserRecord], gazetteer: &Gazetteer) -> Result<Dataset> {
    cfg.validate()?;
    let truths = assign_all(users, gazetteer, cfg.ingest.match_radius_km);
    let built = build_graphs(users, cfg.graph.celebrity_threshold, cfg.graph.use_follower_layer)?;
    let labels = build_labels(&truths, cfg.labels.mode, cfg.labels.min_users, cfg.labels.min_bucket)?;
    let vocab = build_vocab(users, cfg.text.min_freq);
    assemble_dataset(cfg, users, built.index.internal_ids().to_vec(), built.multiplex, labels, &truths, vocab)
}

/// Cross-validation of the configured models on a dataset.
pub fn evaluate_dataset(ds: &Dataset, cfg: &PipelineConfig) -> Result<CvResult> {
    let n2v = ds.n2v_embeddings(&cfg.model)?;
    let input = CvInput {
        data: ds.node_data(n2v.as_ref()),
        user_ids: &ds.user_ids,
        labels: &ds.labels,
        truth: &ds.truth,
    };
    cross_validate(&input, &cfg.model, &cfg.text, &cfg.model.models, cfg.eval.k, cfg.eval.seed)
}

#[derive(Serialize)]
struct EvalJson<'a> {
    config_hash: &'a str,
    folds: usize,
    stratified: bool,
    reports: &'a [EvalReport],
}

/// Runs stages against one workdir.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub hash: String,
    pub opts: RunOptions,
}

fn header(name: &str, hash: &str) -> String {
    format!("# geoloc artifact={name} version={ARTIFACT_VERSION} config={hash}\n")
}

fn parse_header(line: &str) -> Option<(&str, &str)> {
    let rest = line.strip_prefix("# geoloc ")?;
    let mut name = None;
    let mut hash = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("artifact", v)) => name = Some(v),
            Some(("config", v)) => hash = Some(v),
            _ => {}
        }
    }
    Some((name?, hash?))
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, opts: RunOptions) -> Self {
        let hash = config_hash(&cfg);
        Pipeline { cfg, hash, opts }
    }

    pub fn workdir(&self) -> &Path {
        &self.cfg.paths.workdir
    }

    /// Human-readable table written by `evaluate`.
    pub fn eval_table_path(&self) -> PathBuf {
        self.path(paths::EVAL_TABLE)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.workdir().join(rel)
    }

    /// Runs `stage` and returns the files it wrote.
    pub fn run(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        self.cfg.validate()?;
        log::info!("stage {} (config {})", stage.command(), self.hash);
        match stage {
            Stage::Synth => self.synth(),
            Stage::Ingest => self.ingest(),
            Stage::BuildGraph => self.build_graph(),
            Stage::BuildLabels => self.build_labels(),
            Stage::Liw => self.liw(),
            Stage::Train => self.train(),
            Stage::Evaluate => self.evaluate(),
            Stage::ProfileReport => self.profile_report(),
        }
    }

    /// Writes through a temporary file renamed into place.
    fn write_file(&self, rel: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<PathBuf> {
        let path = self.path(rel);
        let dir = path.parent().expect("artifact paths have a directory");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = path.with_extension("tmp");
        let file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = std::io::BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn write_artifact(&self, rel: &str, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<PathBuf> {
        let head = header(name, &self.hash);
        self.write_file(rel, |w| {
            w.write_all(head.as_bytes())?;
            body(w)
        })
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value).expect("serializable");
        self.write_file(rel, |w| writeln!(w, "{text}"))
    }

    /// Reads an upstream artifact after checking its config hash.
    fn read_artifact(&self, rel: &str, producer: Stage) -> Result<String> {
        let path = self.path(rel);
        if !path.exists() {
            if !self.opts.build_missing {
                return Err(Error::MissingArtifact {
                    path,
                    producer: producer.command(),
                });
            }
            log::info!("{} is missing; running `{}`", path.display(), producer.command());
            self.run(producer)?;
        }
        let mut text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let found = text.lines().next().and_then(parse_header).map(|(_, h)| h.to_string()).unwrap_or_default();
        if found != self.hash {
            if self.opts.force {
                log::warn!("using {} built with config {found}", path.display());
            } else if self.opts.build_missing {
                log::info!("{} is stale; running `{}`", path.display(), producer.command());
                self.run(producer)?;
                text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            } else {
                return Err(Error::StaleArtifact {
                    path,
                    expected: self.hash.clone(),
                    found,
                });
            }
        }
        Ok(text)
    }

    fn raw_input(&self, path: PathBuf) -> Result<PathBuf> {
        if path.exists() {
            return Ok(path);
        }
        let default_data = path.starts_with(self.workdir().join("data"));
        if default_data && self.opts.build_missing {
            self.run(Stage::Synth)?;
            return Ok(path);
        }
        if default_data {
            return Err(Error::MissingArtifact {
                path,
                producer: Stage::Synth.command(),
            });
        }
        Err(Error::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found")))
    }

    fn synth(&self) -> Result<Vec<PathBuf>> {
        let data = generate(&self.cfg.synth)?;
        let (r, p, g) = (self.cfg.records_path(), self.cfg.profiles_path(), self.cfg.gazetteer_path());
        data.write_files(&r, &p, &g)?;
        Ok(vec![r, p, g])
    }

    fn ingest(&self) -> Result<Vec<PathBuf>> {
        let records = parse_records(self.raw_input(self.cfg.records_path())?)?;
        let gaz_path = self.raw_input(self.cfg.gazetteer_path())?;
        let (gazetteer, bad_gaz) = load_gazetteer(&gaz_path)?;
        let mut users = records.items;
        let profiles_path = self.cfg.profiles_path();
        let (bad_profiles, unmatched) = if profiles_path.exists() {
            let profiles = parse_profiles(&profiles_path)?;
            (profiles.malformed, attach_profiles(&mut users, profiles.items))
        } else {
            log::warn!("no profile file at {}; follower layer and profile report need it", profiles_path.display());
            (0, 0)
        };
        let truths = assign_all(&users, &gazetteer, self.cfg.ingest.match_radius_km);
        log::info!("{} users, {} with ground truth", users.len(), truths.len());

        let mut out = vec![
            self.write_artifact(paths::RECORDS, "records", |w| write_records(w, &users).map_err(std::io::Error::other))?,
            self.write_artifact(paths::PROFILES, "profiles", |w| write_profiles(w, &users).map_err(std::io::Error::other))?,
            self.write_artifact(paths::TRUTHS, "truths", |w| {
                for t in &truths {
                    writeln!(w, "{}", serde_json::to_string(t).expect("serializable"))?;
                }
                Ok(())
            })?,
        ];
        let summary = serde_json::json!({
            "config_hash": self.hash,
            "users": users.len(),
            "tweets": users.iter().map(|u| u.tweets.len()).sum::<usize>(),
            "malformed_records": records.malformed,
            "malformed_profiles": bad_profiles,
            "unmatched_profiles": unmatched,
            "gazetteer_entries": gazetteer.len(),
            "malformed_gazetteer_rows": bad_gaz,
            "users_with_ground_truth": truths.len(),
        });
        out.push(self.write_json(paths::INGEST_SUMMARY, &summary)?);
        Ok(out)
    }

    fn users(&self) -> Result<Vec<UserRecord>> {
        let records = self.read_artifact(paths::RECORDS, Stage::Ingest)?;
        let profiles = self.read_artifact(paths::PROFILES, Stage::Ingest)?;
        let mut users = parse_records_str(&records).items;
        attach_profiles(&mut users, parse_profiles_str(&profiles).items);
        Ok(users)
    }

    fn truths(&self) -> Result<Vec<GroundTruth>> {
        let text = self.read_artifact(paths::TRUTHS, Stage::Ingest)?;
        text.lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse(format!("{}: {e}", paths::TRUTHS))))
            .collect()
    }

    fn build_graph(&self) -> Result<Vec<PathBuf>> {
        let users = self.users()?;
        let built = build_graphs(&users, self.cfg.graph.celebrity_threshold, self.cfg.graph.use_follower_layer)?;
        let layers: Vec<_> = built
            .multiplex
            .layers()
            .iter()
            .map(|(name, a)| serde_json::json!({ "name": name, "edges": a.nnz() / 2, "weight": a.iter().map(|(_, _, w)| w).sum::<f64>() / 2.0 }))
            .collect();
        let summary = serde_json::json!({
            "config_hash": self.hash,
            "internal_users": built.index.n(),
            "all_users": built.index.m(),
            "layers": layers,
        });
        Ok(vec![
            self.write_artifact(paths::MULTIPLEX, "multiplex", |w| write_multiplex(&built.multiplex, w))?,
            self.write_artifact(paths::NODES, "nodes", |w| write_node_index(&built.index, w))?,
            self.write_json(paths::GRAPH_SUMMARY, &summary)?,
        ])
    }

    fn build_labels(&self) -> Result<Vec<PathBuf>> {
        let truths = self.truths()?;
        let l = &self.cfg.labels;
        let space = build_labels(&truths, l.mode, l.min_users, l.min_bucket)?;
        log::info!("{} {} labels over {} users", space.len(), l.mode.as_str(), space.assignment.len());
        Ok(vec![
            self.write_artifact(paths::CLASSES, "label-classes", |w| space.write_classes_csv(w))?,
            self.write_artifact(paths::ASSIGNMENT, "label-assignment", |w| space.write_assignment_csv(w))?,
        ])
    }

    fn label_space(&self) -> Result<LabelSpace> {
        let classes = self.read_artifact(paths::CLASSES, Stage::BuildLabels)?;
        let assignment = self.read_artifact(paths::ASSIGNMENT, Stage::BuildLabels)?;
        LabelSpace::read_csv(classes.as_bytes(), assignment.as_bytes())
    }

    fn liw(&self) -> Result<Vec<PathBuf>> {
        let users = self.users()?;
        let labels = self.label_space()?;
        let vocab = build_vocab(&users, self.cfg.text.min_freq);
        let mut docs = Vec::new();
        let mut targets = Vec::new();
        for u in &users {
            if let Some(l) = labels.label_of(&u.user_id) {
                docs.push(user_tokens(u));
                targets.push(l);
            }
        }
        let table = chi2_liw(&docs, &targets, labels.len(), self.cfg.text.liw_top_k, self.cfg.text.liw_min_freq)?;
        log::info!("vocabulary of {} tokens, {} LIWs", vocab.len(), table.tokens().len());
        Ok(vec![
            self.write_artifact(paths::VOCAB, "vocabulary", |w| vocab.write_tsv(w))?,
            self.write_artifact(paths::LIW, "liw", |w| table.write_csv(w))?,
        ])
    }

    /// Loads every upstream artifact into a [`Dataset`].
    pub fn dataset(&self) -> Result<Dataset> {
        let users = self.users()?;
        let truths = self.truths()?;
        let labels = self.label_space()?;
        let nodes = self.read_artifact(paths::NODES, Stage::BuildGraph)?;
        let index = read_node_index(nodes.as_bytes())?;
        let multiplex = read_multiplex(self.read_artifact(paths::MULTIPLEX, Stage::BuildGraph)?.as_bytes(), index.n())?;
        let vocab = Vocabulary::read_tsv(self.read_artifact(paths::VOCAB, Stage::Liw)?.as_bytes())?;
        assemble_dataset(&self.cfg, &users, index.internal_ids().to_vec(), multiplex, labels, &truths, vocab)
    }

    fn train(&self) -> Result<Vec<PathBuf>> {
        let ds = self.dataset()?;
        let n2v = ds.n2v_embeddings(&self.cfg.model)?;
        let data = ds.node_data(n2v.as_ref());
        let (rows, targets): (Vec<usize>, Vec<usize>) = ds.labeled().into_iter().unzip();
        let n_labels = ds.labels.len();
        let seed = self.cfg.eval.seed;
        let stage = text_stage(&data, &self.cfg.model, &self.cfg.text, &rows, &targets, n_labels, seed)?;
        let mut out = Vec::new();
        let mut summary = BTreeMap::new();
        for &kind in &self.cfg.model.models {
            let m = predict_graph_model(kind, &data, &stage, &self.cfg.model, &rows, &targets, n_labels, seed)?;
            let preds = Predictions {
                user_ids: ds.user_ids.clone(),
                probs: m.probs,
            };
            out.push(self.write_artifact(&format!("models/{}_predictions.csv", kind.key()), "predictions", |w| preds.write_csv(w))?);
            let mut parts = Vec::new();
            for (part, store) in &m.checkpoints {
                let rel = format!("models/{}.{part}.ckpt", kind.key());
                out.push(self.write_artifact(&rel, "checkpoint", |w| store.write_checkpoint(w))?);
                parts.push(serde_json::json!({ "part": part, "file": rel, "scalars": store.num_scalars() }));
            }
            summary.insert(kind.key(), parts);
        }
        let summary = serde_json::json!({
            "config_hash": self.hash,
            "training_users": rows.len(),
            "labels": n_labels,
            "transformer_epochs": stage.trans.report.train_loss.len(),
            "models": summary,
        });
        out.push(self.write_json("models/summary.json", &summary)?);
        Ok(out)
    }

    fn evaluate(&self) -> Result<Vec<PathBuf>> {
        let ds = self.dataset()?;
        let result = evaluate_dataset(&ds, &self.cfg)?;
        let table = render_table(&result.reports);
        let json = EvalJson {
            config_hash: &self.hash,
            folds: self.cfg.eval.k,
            stratified: true,
            reports: &result.reports,
        };
        let mut out = vec![
            self.write_json(paths::EVAL_JSON, &json)?,
            self.write_artifact(paths::EVAL_TABLE, "eval-table", |w| w.write_all(table.as_bytes()))?,
            self.write_artifact(paths::ERROR_CDF, "error-cdf", |w| write_error_cdf(&result.errors, w))?,
        ];
        for (kind, preds) in &result.predictions {
            let rel = format!("reports/heldout_{}.csv", kind.key());
            out.push(self.write_artifact(&rel, "heldout-predictions", |w| preds.write_csv(w))?);
        }
        Ok(out)
    }

    fn profile_report(&self) -> Result<Vec<PathBuf>> {
        let users = self.users()?;
        let truths = self.truths()?;
        let (gazetteer, _) = load_gazetteer(self.raw_input(self.cfg.gazetteer_path())?)?;
        let cdf = profile_distance_report(&users, &truths, &gazetteer);
        let mut json = serde_json::to_value(&cdf).expect("serializable");
        json["config_hash"] = serde_json::Value::String(self.hash.clone());
        if let Some(obj) = json.as_object_mut() {
            obj.remove("distances_km");
        }
        Ok(vec![
            self.write_artifact(paths::PROFILE_CDF, "profile-distance", |w| cdf.write_csv(w))?,
            self.write_json(paths::PROFILE_JSON, &json)?,
        ])
    }
}
