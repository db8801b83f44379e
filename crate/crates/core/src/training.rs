//! Curriculum training, evaluation protocols and metrics.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{rollout, total_loss, AgentError, AgentModel, Control, LossWeights, ModelConfig};
use crate::env::{run_oracle, ScriptedPolicy, MAX_STEPS};
use crate::geometry::SceneGeometry;
use crate::nn::checkpoint::{parameter_tensors, read_tensors, restore_parameters, write_tensors};
use crate::nn::Adam;
use crate::rng;
use crate::scenegen::{make_holdout, Catalog, DataLevel, HoldoutFilter, HoldoutSet, SceneGenerator, SceneType, ScenegenError};

pub const METRICS_HEADER: &str = "episode,stage,level,acc,avg_steps,loss_p,loss_a,loss_b";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Scenegen(#[from] ScenegenError),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("non-finite loss at episode {episode} (stage {stage}, episode seed {seed:#018x})")]
    Divergence { episode: u64, stage: usize, seed: u64 },
    #[error("holdout-only evaluation requested but the holdout set is empty")]
    EmptyHoldout,
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumStage {
    pub level: DataLevel,
    pub episodes: u64,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    /// Policy entropy bonus; 0 trains with the plain joint loss.
    pub entropy: f64,
}

impl CurriculumStage {
    fn validate(&self) -> Result<(), TrainError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.alpha) && positive(self.beta) && positive(self.lr)) {
            return Err(TrainError::Invalid(format!("stage {}: alpha, beta and lr must be positive", self.level)));
        }
        if !(self.entropy >= 0.0 && self.entropy.is_finite()) {
            return Err(TrainError::Invalid(format!("stage {}: entropy must be non-negative", self.level)));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { alpha: self.alpha, beta: self.beta, entropy: self.entropy }
    }
}

/// Who chooses movements during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Movement {
    /// The model's own action head.
    #[default]
    Learned,
    /// A fixed comparison policy; only the prediction path and the baseline head learn.
    Scripted(ScriptedPolicy),
}

impl Movement {
    pub fn name(self) -> &'static str {
        match self {
            Self::Learned => "learned",
            Self::Scripted(ScriptedPolicy::Passive) => "passive",
            Self::Scripted(ScriptedPolicy::Random) => "random",
            Self::Scripted(ScriptedPolicy::Exhaustive) => "exhaustive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::Learned,
            Self::Scripted(ScriptedPolicy::Passive),
            Self::Scripted(ScriptedPolicy::Random),
            Self::Scripted(ScriptedPolicy::Exhaustive),
        ]
        .into_iter()
        .find(|m| m.name() == s.to_ascii_lowercase())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub movement: Movement,
    pub stages: Vec<CurriculumStage>,
    /// Pairs held out per category family; 0 disables the holdout.
    pub holdout_per_pair: usize,
    /// Metrics row cadence, in episodes.
    pub metrics_every: u64,
    /// Rolling window width, in episodes.
    pub window: usize,
    pub out_dir: Option<PathBuf>,
}

pub const DESK_LR: f64 = 1e-3;
/// Entropy bonus per stage. The L3 stage is where moving first pays off, and
/// a policy that left the visible-only stages saturated on Stop needs the
/// larger bonus there to sample moves at all.
pub const DESK_ENTROPY: [f64; 4] = [0.05, 0.05, 0.3, 0.05];

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    fn curriculum(budgets: [u64; 4], lr: f64, entropy: [f64; 4]) -> Vec<CurriculumStage> {
        DataLevel::ALL
            .iter()
            .zip(budgets)
            .zip(entropy)
            .map(|((&level, episodes), entropy)| CurriculumStage {
                level,
                episodes,
                alpha: if level == DataLevel::L4Overall { 1e-4 } else { 1e-2 },
                beta: 1.0,
                lr,
                entropy,
            })
            .collect()
    }

    pub fn desk() -> Self {
        Self {
            seed: 1,
            model: ModelConfig::desk(),
            movement: Movement::Learned,
            stages: Self::curriculum([50_000; 4], DESK_LR, DESK_ENTROPY),
            holdout_per_pair: 0,
            metrics_every: 2000,
            window: 2000,
            out_dir: None,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            model: ModelConfig::full_scale(),
            stages: Self::curriculum([900_000, 900_000, 400_000, 400_000], 1e-4, [0.0; 4]),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        if self.stages.is_empty() {
            return Err(TrainError::Invalid("no stages".into()));
        }
        self.stages.iter().try_for_each(CurriculumStage::validate)?;
        if self.metrics_every == 0 || self.window == 0 {
            return Err(TrainError::Invalid("metrics_every and window must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses flat `key = value` lines with one `[stage.N]` section per stage.
    /// Keys not given keep their desk defaults; `[stage.N]` sections replace
    /// the default curriculum entirely.
    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::desk();
        let mut model_lines = String::new();
        let mut stages: Vec<CurriculumStage> = Vec::new();
        let mut in_stage = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let err = |msg: String| TrainError::Config { line: i + 1, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(section) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let n: usize = section
                    .strip_prefix("stage.")
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| err(format!("unknown section `{section}`")))?;
                if n != stages.len() + 1 {
                    return Err(err(format!("expected [stage.{}]", stages.len() + 1)));
                }
                let template = cfg.stages.get(n - 1).copied().unwrap_or(Self::desk().stages[3]);
                stages.push(template);
                in_stage = true;
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("bad number `{v}` for `{key}`")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| err(format!("bad integer `{v}` for `{key}`")));
            if in_stage {
                let stage = stages.last_mut().expect("section opened");
                match key {
                    "level" => stage.level = value.parse().map_err(|e: ScenegenError| err(e.to_string()))?,
                    "episodes" => stage.episodes = int(value)?,
                    "alpha" => stage.alpha = num(value)?,
                    "beta" => stage.beta = num(value)?,
                    "lr" => stage.lr = num(value)?,
                    "entropy" => stage.entropy = num(value)?,
                    _ => return Err(err(format!("unknown stage key `{key}`"))),
                }
                continue;
            }
            match key {
                "seed" => cfg.seed = int(value)?,
                "movement" => {
                    cfg.movement = Movement::parse(value).ok_or_else(|| err(format!("unknown movement `{value}`")))?
                }
                "holdout_per_pair" => cfg.holdout_per_pair = int(value)? as usize,
                "metrics_every" => cfg.metrics_every = int(value)?,
                "window" => cfg.window = int(value)? as usize,
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                "d_v" | "d_w" | "d_m" | "action_hidden" | "vocab" => {
                    int(value)?;
                    model_lines.push_str(&format!("{key} = {value}\n"));
                }
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        let mut model_text = cfg.model.to_kv();
        model_text.push_str(&model_lines);
        cfg.model = ModelConfig::from_kv(&model_text)?;
        if !stages.is_empty() {
            cfg.stages = stages;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "seed = {}\nmovement = {}\n{}holdout_per_pair = {}\nmetrics_every = {}\nwindow = {}\n",
            self.seed,
            self.movement.name(),
            self.model.to_kv(),
            self.holdout_per_pair,
            self.metrics_every,
            self.window
        );
        if let Some(dir) = &self.out_dir {
            s.push_str(&format!("out_dir = {}\n", dir.display()));
        }
        for (i, st) in self.stages.iter().enumerate() {
            s.push_str(&format!(
                "\n[stage.{}]\nlevel = {}\nepisodes = {}\nalpha = {}\nbeta = {}\nlr = {}\nentropy = {}\n",
                i + 1,
                st.level,
                st.episodes,
                st.alpha,
                st.beta,
                st.lr,
                st.entropy
            ));
        }
        s
    }

    /// `ROEP_SEED`, when set, replaces the configured seed.
    pub fn apply_env_seed(&mut self) -> Result<(), TrainError> {
        if let Ok(v) = std::env::var("ROEP_SEED") {
            self.seed = v.trim().parse().map_err(|_| TrainError::Invalid(format!("ROEP_SEED `{v}` is not an integer")))?;
        }
        Ok(())
    }
}

/// Checkpoint file stem for the model after stage `index` of `count`.
pub fn stage_checkpoint_name(stage: &CurriculumStage, index: usize, count: usize) -> String {
    if index + 1 == count {
        "Final".to_string()
    } else {
        format!("Model_{}", level_short(stage.level))
    }
}

fn level_short(level: DataLevel) -> &'static str {
    match level {
        DataLevel::L1OneVisible => "L1",
        DataLevel::L2TwoVisible => "L2",
        DataLevel::L3TwoOccluded => "L3",
        DataLevel::L4Overall => "L4",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: u64,
    pub stage: usize,
    pub level: String,
    pub acc: f64,
    pub avg_steps: f64,
    pub loss_p: f64,
    pub loss_a: f64,
    pub loss_b: f64,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.episode, self.stage, self.level, self.acc, self.avg_steps, self.loss_p, self.loss_a, self.loss_b
        )
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct EpisodeStats {
    correct: bool,
    steps: usize,
    loss_p: f64,
    loss_a: f64,
    loss_b: f64,
}

/// Fixed-width window of the most recent episodes.
#[derive(Debug)]
struct Rolling {
    width: usize,
    items: VecDeque<EpisodeStats>,
}

impl Rolling {
    fn new(width: usize) -> Self {
        Self { width, items: VecDeque::with_capacity(width) }
    }

    fn push(&mut self, s: EpisodeStats) {
        if self.items.len() == self.width {
            self.items.pop_front();
        }
        self.items.push_back(s);
    }

    fn row(&self, episode: u64, stage: usize, level: DataLevel) -> MetricsRow {
        let n = self.items.len().max(1) as f64;
        let mean = |f: fn(&EpisodeStats) -> f64| self.items.iter().map(f).sum::<f64>() / n;
        MetricsRow {
            episode,
            stage,
            level: level.name().to_string(),
            acc: mean(|s| s.correct as u8 as f64),
            avg_steps: mean(|s| s.steps as f64),
            loss_p: mean(|s| s.loss_p),
            loss_a: mean(|s| s.loss_a),
            loss_b: mean(|s| s.loss_b),
        }
    }
}

pub struct TrainOutcome {
    pub model: AgentModel,
    /// Checkpoint name and model after each stage.
    pub stage_models: Vec<(String, AgentModel)>,
    pub metrics: Vec<MetricsRow>,
    pub holdout: HoldoutSet,
}

/// Builds the training-time generator for `config` (holdout excluded).
pub fn training_generator(config: &RunConfig) -> Result<SceneGenerator, TrainError> {
    let catalog = Arc::new(Catalog::builtin());
    let holdout = if config.holdout_per_pair == 0 {
        HoldoutSet::empty()
    } else {
        make_holdout(&catalog, &mut rng::stream(config.seed, "holdout"), config.holdout_per_pair)?
    };
    Ok(SceneGenerator::new(catalog, SceneGeometry::default()).with_holdout(holdout, HoldoutFilter::TrainingOnly))
}

/// Serializes and reloads parameters, as done between curriculum stages.
pub fn handoff(model: &AgentModel) -> Result<AgentModel, TrainError> {
    let mut buf = Vec::new();
    write_tensors(&mut buf, &parameter_tensors(model.params().into_iter().map(|(_, p)| p))).map_err(AgentError::from)?;
    let tensors = read_tensors(&buf[..]).map_err(AgentError::from)?;
    let mut next = AgentModel::new(model.config, &mut rng::from_seed(0))?;
    restore_parameters(next.params_mut(), &tensors).map_err(AgentError::from)?;
    Ok(next)
}

/// Runs the curriculum. `on_row` sees each metrics row as it is produced.
pub fn train_with(config: &RunConfig, mut on_row: impl FnMut(&MetricsRow)) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let generator = training_generator(config)?;
    let mut model = AgentModel::new(config.model, &mut rng::stream(config.seed, "init"))?;
    let mut adam = Adam::new(config.stages[0].lr);
    let mut metrics = Vec::new();
    let mut stage_models = Vec::new();
    let mut global: u64 = 0;
    for (si, stage) in config.stages.iter().enumerate() {
        adam.lr = stage.lr;
        let (control, weights) = match config.movement {
            Movement::Learned => (Control::Sample, stage.weights()),
            // the action head is not used, so it is not trained
            Movement::Scripted(p) => (Control::Scripted(p), LossWeights { alpha: 0.0, ..stage.weights() }),
        };
        let mut window = Rolling::new(config.window);
        for e in 0..stage.episodes {
            let seed = rng::item_seed(config.seed, "episode", global);
            let mut r = rng::from_seed(seed);
            let sample = generator.generate(stage.level, &mut r)?;
            let traj = rollout(&model, &sample, generator.geometry(), control, &mut r);
            let loss = total_loss(&mut model, &traj, weights);
            if !loss.total.is_finite() {
                return Err(TrainError::Divergence { episode: global, stage: si + 1, seed });
            }
            adam.step(model.params_mut());
            if !model.all_finite() {
                return Err(TrainError::Divergence { episode: global, stage: si + 1, seed });
            }
            global += 1;
            window.push(EpisodeStats {
                correct: traj.correct(),
                steps: traj.steps,
                loss_p: loss.prediction,
                loss_a: loss.policy,
                loss_b: loss.baseline,
            });
            if (e + 1) % config.metrics_every == 0 || e + 1 == stage.episodes {
                let row = window.row(global, si + 1, stage.level);
                on_row(&row);
                metrics.push(row);
            }
        }
        model = handoff(&model)?;
        stage_models.push((stage_checkpoint_name(stage, si, config.stages.len()), model.clone()));
    }
    Ok(TrainOutcome { model, stage_models, metrics, holdout: generator.holdout().clone() })
}

/// Runs the curriculum, writing `metrics.csv`, stage checkpoints and the
/// holdout list into `config.out_dir` when set.
pub fn train(config: &RunConfig) -> Result<TrainOutcome, TrainError> {
    let Some(dir) = &config.out_dir else {
        return train_with(config, |_| {});
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join("metrics.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path).map_err(io_err(&csv_path))?);
    writeln!(csv, "{METRICS_HEADER}").map_err(io_err(&csv_path))?;
    let mut write_err = None;
    let result = train_with(config, |row| {
        if let Err(e) = writeln!(csv, "{}", row.csv()).and_then(|_| csv.flush()) {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(io_err(&csv_path)(e));
    }
    let outcome = result?;
    for (name, model) in &outcome.stage_models {
        model.save(&dir.join(format!("{name}.ckpt")), None)?;
    }
    let run_cfg = dir.join("run.cfg");
    std::fs::write(&run_cfg, config.to_text()).map_err(io_err(&run_cfg))?;
    let pairs: Vec<String> = outcome
        .holdout
        .iter()
        .map(|p| {
            let (a, b) = p.ids();
            let cat = Catalog::builtin();
            format!("{},{}", cat.get(a).name, cat.get(b).name)
        })
        .collect();
    let holdout_path = dir.join("holdout.txt");
    std::fs::write(&holdout_path, pairs.join("\n")).map_err(io_err(&holdout_path))?;
    Ok(outcome)
}

/// What drives an evaluation episode.
#[derive(Clone, Copy, Debug)]
pub enum EvalPolicy<'a> {
    /// Greedy model rollout.
    Model(&'a AgentModel),
    /// Scripted movement; the model's prediction head gives the answer.
    Scripted(&'a AgentModel, ScriptedPolicy),
    Oracle,
}

impl EvalPolicy<'_> {
    pub fn name(&self) -> String {
        match self {
            Self::Model(_) => "Ours".into(),
            Self::Scripted(_, p) => p.name().into(),
            Self::Oracle => "Oracle".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: String,
    pub accuracy: f64,
    pub avg_steps: f64,
    pub episodes: u64,
}

impl LevelReport {
    fn from_counts(level: &str, correct: u64, steps: u64, episodes: u64) -> Self {
        let n = episodes.max(1) as f64;
        Self { level: level.to_string(), accuracy: correct as f64 / n, avg_steps: steps as f64 / n, episodes }
    }

    /// Episode-weighted mean of several reports for the same row.
    pub fn mean(reports: &[LevelReport]) -> Self {
        let n = reports.len().max(1) as f64;
        Self {
            level: reports.first().map_or(String::new(), |r| r.level.clone()),
            accuracy: reports.iter().map(|r| r.accuracy).sum::<f64>() / n,
            avg_steps: reports.iter().map(|r| r.avg_steps).sum::<f64>() / n,
            episodes: reports.iter().map(|r| r.episodes).sum(),
        }
    }
}

impl fmt::Display for LevelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<16} acc {:6.2}%  steps {:.3}  (n={})", self.level, 100.0 * self.accuracy, self.avg_steps, self.episodes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub filter: HoldoutFilter,
    pub levels: Vec<LevelReport>,
}

/// Restricts generated scenes to one scene type; `None` follows the level's mixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalSpec {
    pub level: DataLevel,
    pub filter: HoldoutFilter,
}

/// Builds a thread pool with `workers` threads.
pub fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool")
}

/// Evaluates `policy` on `n` fresh samples of `level`. Episode `i` is seeded
/// from `(seed, level, i)`, so results do not depend on the worker count.
pub fn evaluate(
    policy: EvalPolicy<'_>,
    generator: &SceneGenerator,
    spec: EvalSpec,
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<LevelReport, TrainError> {
    if spec.filter == HoldoutFilter::HoldoutOnly && generator.holdout().is_empty() {
        return Err(TrainError::EmptyHoldout);
    }
    if n == 0 {
        return Err(TrainError::Invalid("evaluation needs at least one episode".into()));
    }
    let gen = generator.clone().with_holdout(generator.holdout().clone(), spec.filter);
    let label = match spec.filter {
        HoldoutFilter::HoldoutOnly => format!("{} (holdout)", spec.level.name()),
        _ => spec.level.name().to_string(),
    };
    let stream = format!("eval/{}", spec.level.name());
    let run = |i: u64| -> Result<(u64, u64), TrainError> {
        let mut r = rng::from_seed(rng::item_seed(seed, &stream, i));
        let sample = gen.generate(spec.level, &mut r)?;
        let (correct, steps) = match policy {
            EvalPolicy::Model(m) => {
                let t = rollout(m, &sample, gen.geometry(), Control::Greedy, &mut r);
                (t.correct(), t.steps)
            }
            EvalPolicy::Scripted(m, p) => {
                let t = rollout(m, &sample, gen.geometry(), Control::Scripted(p), &mut r);
                (t.correct(), t.steps)
            }
            EvalPolicy::Oracle => {
                let o = run_oracle(gen.catalog(), &sample, gen.geometry());
                (o.correct, o.steps)
            }
        };
        debug_assert!(steps <= MAX_STEPS);
        Ok((correct as u64, steps as u64))
    };
    let (correct, steps) = pool(workers).install(|| {
        (0..n).into_par_iter().map(run).try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))
    })?;
    Ok(LevelReport::from_counts(&label, correct, steps, n))
}

/// Evaluates `policy` on every data level.
pub fn evaluate_levels(
    policy: EvalPolicy<'_>,
    generator: &SceneGenerator,
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<EvalReport, TrainError> {
    let levels = DataLevel::ALL
        .iter()
        .map(|&level| evaluate(policy, generator, EvalSpec { level, filter: HoldoutFilter::All }, n, seed, workers))
        .collect::<Result<_, _>>()?;
    Ok(EvalReport { policy: policy.name(), filter: HoldoutFilter::All, levels })
}

/// Scripted baselines and the model on every level.
pub fn baselines_table(
    model: &AgentModel,
    generator: &SceneGenerator,
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<EvalReport>, TrainError> {
    let mut rows: Vec<EvalReport> = ScriptedPolicy::ALL
        .iter()
        .map(|&p| evaluate_levels(EvalPolicy::Scripted(model, p), generator, n, seed, workers))
        .collect::<Result<_, _>>()?;
    rows.push(evaluate_levels(EvalPolicy::Model(model), generator, n, seed, workers)?);
    Ok(rows)
}

pub const MATRIX_ROWS: [&str; 4] = ["Model_L1", "Model_L2", "Model_L3", "Final"];

/// Loads the four stage checkpoints from `dir`.
pub fn load_stage_models(dir: &Path) -> Result<Vec<(String, AgentModel)>, TrainError> {
    MATRIX_ROWS
        .iter()
        .map(|name| {
            let path = dir.join(format!("{name}.ckpt"));
            if !path.exists() {
                return Err(TrainError::MissingCheckpoint(path));
            }
            Ok((name.to_string(), AgentModel::load(&path)?.0))
        })
        .collect()
}

/// Every stage model on every level.
pub fn cross_stage_matrix(
    models: &[(String, AgentModel)],
    generator: &SceneGenerator,
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<EvalReport>, TrainError> {
    models
        .iter()
        .map(|(name, m)| {
            let mut report = evaluate_levels(EvalPolicy::Model(m), generator, n, seed, workers)?;
            report.policy = name.clone();
            Ok(report)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutRun {
    pub seed: u64,
    pub holdout_pairs: usize,
    pub rows: Vec<LevelReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub per_pair: usize,
    pub runs: Vec<HoldoutRun>,
    /// Seed-averaged rows.
    pub mean: Vec<LevelReport>,
}

impl HoldoutReport {
    pub fn row(&self, level: &str) -> Option<&LevelReport> {
        self.mean.iter().find(|r| r.level == level)
    }
}

/// The five generalization rows for a model trained with `generator`'s holdout excluded.
pub fn holdout_rows(
    model: &AgentModel,
    generator: &SceneGenerator,
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<LevelReport>, TrainError> {
    use DataLevel::*;
    use HoldoutFilter::*;
    let specs = [
        (L1OneVisible, All),
        (L2TwoVisible, TrainingOnly),
        (L3TwoOccluded, TrainingOnly),
        (L2TwoVisible, HoldoutOnly),
        (L3TwoOccluded, HoldoutOnly),
    ];
    specs
        .iter()
        .map(|&(level, filter)| {
            let mut r = evaluate(EvalPolicy::Model(model), generator, EvalSpec { level, filter }, n, seed, workers)?;
            if filter == TrainingOnly {
                r.level = format!("{} (training)", level.name());
            }
            Ok(r)
        })
        .collect()
}

/// Trains once per seed with `per_pair` pairs held out per family and
/// evaluates the five generalization rows. Seeds run in parallel.
pub fn holdout_experiment(
    base: &RunConfig,
    per_pair: usize,
    seeds: &[u64],
    n_eval: u64,
    workers: usize,
) -> Result<HoldoutReport, TrainError> {
    let runs: Vec<HoldoutRun> = pool(workers).install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let cfg = RunConfig { seed, holdout_per_pair: per_pair, out_dir: None, ..base.clone() };
                let out = train_with(&cfg, |_| {})?;
                let gen = training_generator(&cfg)?;
                let rows = holdout_rows(&out.model, &gen, n_eval, rng::derive_seed(seed, "holdout-eval"), 1)?;
                Ok(HoldoutRun { seed, holdout_pairs: gen.holdout().len(), rows })
            })
            .collect::<Result<_, TrainError>>()
    })?;
    let mean = (0..runs.first().map_or(0, |r| r.rows.len()))
        .map(|i| LevelReport::mean(&runs.iter().map(|r| r.rows[i].clone()).collect::<Vec<_>>()))
        .collect();
    Ok(HoldoutReport { per_pair, runs, mean })
}

/// Fraction of generated samples per scene type, for diagnostics.
pub fn scene_type_counts(generator: &SceneGenerator, level: DataLevel, n: u64, seed: u64) -> Result<[u64; 3], TrainError> {
    let mut counts = [0u64; 3];
    let mut r = rng::stream(seed, "type-counts");
    for _ in 0..n {
        let s = generator.generate(level, &mut r)?;
        let k = SceneType::ALL.iter().position(|t| *t == s.scene_type).expect("known type");
        counts[k] += 1;
    }
    Ok(counts)
}
