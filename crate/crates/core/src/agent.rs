//! Recurrent agent: perception encoder, word embedding, memory cell, action,
//! prediction and baseline heads, plus episode rollout and loss assembly.
//!
//! Gradient routing: the prediction loss trains the prediction head, memory,
//! perception and word embedding. The policy loss reaches only the action
//! head and the baseline loss only the baseline head; neither is propagated
//! into the memory state.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::env::{Action, Episode, Observation, ScriptedPolicy, MAX_STEPS};
use crate::geometry::SceneGeometry;
use crate::nn::checkpoint::{parameter_tensors, read_tensors, restore_parameters, write_tensors};
use crate::nn::layers::{argmax, log_softmax, relu_backward_inplace, relu_inplace, softmax, softmax_categorical};
use crate::nn::loss::{baseline_loss, bce, bce_loss, policy_entropy, reinforce_loss, PolicyStep};
use crate::nn::{Adam, Affine, Embedding, NnError, Parameter, RecurrentCell, Tensor};
use crate::scenegen::Sample;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Width of the visual representation.
    pub d_v: usize,
    /// Width of the word vector.
    pub d_w: usize,
    /// Width of the memory state.
    pub d_m: usize,
    pub action_hidden: usize,
    pub vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small widths used for CPU-scale training.
    pub fn desk() -> Self {
        Self { d_v: 64, d_w: 10, d_m: 64, action_hidden: 128, vocab: 21 }
    }

    pub fn full_scale() -> Self {
        Self { d_v: 256, d_w: 10, d_m: 256, action_hidden: 128, vocab: 21 }
    }

    pub fn obs_dim(&self) -> usize {
        Observation::dim(self.vocab)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let fields = [self.d_v, self.d_w, self.d_m, self.action_hidden, self.vocab];
        if fields.contains(&0) {
            return Err(AgentError::Config("all widths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "d_v = {}\nd_w = {}\nd_m = {}\naction_hidden = {}\nvocab = {}\n",
            self.d_v, self.d_w, self.d_m, self.action_hidden, self.vocab
        )
    }

    /// Reads `key = value` lines; unknown keys are ignored, missing keys keep defaults.
    pub fn from_kv(text: &str) -> Result<Self, AgentError> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            let Some((k, v)) = line.split_once('=') else { continue };
            let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| AgentError::Config(format!("bad value `{v}`")));
            match k.trim() {
                "d_v" => cfg.d_v = parse(v)?,
                "d_w" => cfg.d_w = parse(v)?,
                "d_m" => cfg.d_m = parse(v)?,
                "action_hidden" => cfg.action_hidden = parse(v)?,
                "vocab" => cfg.vocab = parse(v)?,
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which submodule a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Visual,
    Word,
    Memory,
    Action,
    Prediction,
    Baseline,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentModel {
    pub config: ModelConfig,
    pub perception_1: Affine,
    pub perception_2: Affine,
    pub word: Embedding,
    pub memory: RecurrentCell,
    pub action_hidden: Affine,
    pub action_out: Affine,
    pub prediction: Affine,
    pub baseline: Affine,
}

impl AgentModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, AgentError> {
        config.validate()?;
        let c = config;
        Ok(Self {
            config,
            perception_1: Affine::new("visual.l1", c.obs_dim(), c.d_v, rng),
            perception_2: Affine::new("visual.l2", c.d_v, c.d_v, rng),
            word: Embedding::new("word", c.vocab, c.d_w, rng),
            memory: RecurrentCell::new("memory", c.d_m, c.d_v + c.d_w, rng),
            action_hidden: Affine::new("action.hidden", c.d_m, c.action_hidden, rng),
            action_out: Affine::new("action.out", c.action_hidden, Action::ALL.len(), rng),
            prediction: Affine::new("prediction", c.d_m, 2, rng),
            baseline: Affine::new("baseline", c.d_m, 1, rng),
        })
    }

    pub fn params(&self) -> Vec<(ParamGroup, &Parameter)> {
        use ParamGroup::*;
        let mut out = Vec::with_capacity(16);
        out.extend(self.perception_1.params().map(|p| (Visual, p)));
        out.extend(self.perception_2.params().map(|p| (Visual, p)));
        out.push((Word, &self.word.table));
        out.extend(self.memory.params().map(|p| (Memory, p)));
        out.extend(self.action_hidden.params().map(|p| (Action, p)));
        out.extend(self.action_out.params().map(|p| (Action, p)));
        out.extend(self.prediction.params().map(|p| (Prediction, p)));
        out.extend(self.baseline.params().map(|p| (Baseline, p)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = Vec::with_capacity(16);
        out.extend(self.perception_1.params_mut());
        out.extend(self.perception_2.params_mut());
        out.push(&mut self.word.table);
        out.extend(self.memory.params_mut());
        out.extend(self.action_hidden.params_mut());
        out.extend(self.action_out.params_mut());
        out.extend(self.prediction.params_mut());
        out.extend(self.baseline.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Parameter::zero_grad);
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|(_, p)| p.value.all_finite())
    }

    fn encode(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h1 = self.perception_1.forward(obs);
        relu_inplace(&mut h1);
        let mut v = self.perception_2.forward(&h1);
        relu_inplace(&mut v);
        (h1, v)
    }

    fn act_logits(&self, m: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = self.action_hidden.forward(m);
        relu_inplace(&mut h);
        let z = self.action_out.forward(&h);
        (h, z)
    }

    /// Writes the checkpoint container to `path` and the model config next to
    /// it (same path, `.cfg` extension).
    pub fn save(&self, path: &Path, optimizer: Option<&Adam>) -> Result<(), AgentError> {
        let io = |source| AgentError::Io { path: path.to_path_buf(), source };
        let step = Tensor::from_vec(&[1], vec![optimizer.map_or(0, |a| a.step) as f64])?;
        let mut tensors = parameter_tensors(self.params().into_iter().map(|(_, p)| p));
        tensors.push(("optimizer.step".to_string(), &step));
        let file = File::create(path).map_err(io)?;
        write_tensors(BufWriter::new(file), &tensors)?;
        std::fs::write(config_path(path), self.config.to_kv()).map_err(io)?;
        Ok(())
    }

    /// Loads a checkpoint written by [`save`](Self::save); returns the model
    /// and the optimizer step count stored with it.
    pub fn load(path: &Path) -> Result<(Self, u64), AgentError> {
        let cfg_path = config_path(path);
        let text = std::fs::read_to_string(&cfg_path).map_err(|source| AgentError::Io { path: cfg_path, source })?;
        let config = ModelConfig::from_kv(&text)?;
        let file = File::open(path).map_err(|source| AgentError::Io { path: path.to_path_buf(), source })?;
        let tensors = read_tensors(BufReader::new(file))?;
        let mut model = Self::new(config, &mut crate::rng::from_seed(0))?;
        restore_parameters(model.params_mut(), &tensors)?;
        let step = tensors
            .iter()
            .find(|(n, _)| n == "optimizer.step")
            .map_or(0, |(_, t)| t.data().first().copied().unwrap_or(0.0) as u64);
        Ok((model, step))
    }
}

pub fn config_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("cfg")
}

/// How actions are chosen during a rollout.
#[derive(Clone, Copy, Debug)]
pub enum Control<'a> {
    /// Draw from the policy (training).
    Sample,
    /// Most probable action (evaluation).
    Greedy,
    /// A comparison policy; the model only supplies the prediction.
    Scripted(ScriptedPolicy),
    /// Re-execute a recorded action sequence.
    Replay(&'a [Action]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub viewpoint: usize,
    pub observation: Observation,
    pub hidden: Vec<f64>,
    pub visual: Vec<f64>,
    /// `m_t`; the previous state is the preceding record's (zero at t = 0).
    pub memory: Vec<f64>,
    pub action_hidden: Vec<f64>,
    pub action_logits: Vec<f64>,
    /// `None` at the movement cap, where no action is drawn.
    pub action: Option<Action>,
    pub log_prob: Option<f64>,
    pub baseline: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub query: usize,
    pub word: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub prediction_logits: [f64; 2],
    /// Probability of "yes".
    pub y_hat: f64,
    pub prediction: bool,
    pub label: bool,
    /// Movement steps.
    pub steps: usize,
    pub reward: f64,
    /// `R_t` for every record.
    pub returns: Vec<f64>,
}

impl Trajectory {
    pub fn correct(&self) -> bool {
        self.prediction == self.label
    }

    pub fn actions(&self) -> Vec<Action> {
        self.records.iter().filter_map(|r| r.action).collect()
    }

    pub fn baselines(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.baseline).collect()
    }
}

/// Runs one episode of `sample` with the model.
pub fn rollout<R: Rng + ?Sized>(
    model: &AgentModel,
    sample: &Sample,
    geometry: &SceneGeometry,
    control: Control<'_>,
    rng: &mut R,
) -> Trajectory {
    let (mut episode, mut obs) = Episode::reset(sample, geometry, model.config.vocab);
    let word = model.word.lookup(sample.query);
    let mut m_prev = vec![0.0; model.config.d_m];
    let mut records = Vec::with_capacity(MAX_STEPS + 1);
    let mut c = vec![0.0; model.config.d_v + model.config.d_w];
    c[model.config.d_v..].copy_from_slice(&word);
    loop {
        let (hidden, visual) = model.encode(obs.as_slice());
        c[..model.config.d_v].copy_from_slice(&visual);
        let memory = model.memory.forward_unchecked(&m_prev, &c);
        let baseline = model.baseline.forward(&memory)[0];
        let (action_hidden, action_logits) = model.act_logits(&memory);
        let t = episode.t();
        let action = (t < MAX_STEPS).then(|| match control {
            Control::Sample => {
                Action::from_index(softmax_categorical(&action_logits, rng).expect("finite logits").0)
            }
            Control::Greedy => Action::from_index(argmax(&action_logits)),
            Control::Scripted(policy) => policy.act(rng),
            Control::Replay(actions) => actions.get(t).copied().unwrap_or(Action::Stop),
        });
        let log_prob = action.map(|a| log_softmax(&action_logits)[a.index()]);
        records.push(StepRecord {
            viewpoint: episode.viewpoint().index(),
            observation: obs,
            hidden,
            visual,
            memory: memory.clone(),
            action_hidden,
            action_logits,
            action,
            log_prob,
            baseline,
        });
        m_prev = memory;
        let Some(action) = action else { break };
        let out = episode.step(action).expect("episode still running");
        match out.observation {
            Some(next) => obs = next,
            None => break,
        }
    }

    let z = model.prediction.forward(&m_prev);
    let prediction_logits = [z[0], z[1]];
    let y_hat = softmax(&prediction_logits)[0];
    let outcome = episode.finish(y_hat > 0.5);
    Trajectory {
        query: sample.query,
        word,
        returns: vec![outcome.total_reward; records.len()],
        records,
        prediction_logits,
        y_hat,
        prediction: outcome.prediction,
        label: sample.label,
        steps: outcome.steps,
        reward: outcome.total_reward,
    }
}

/// Coefficients of the joint loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Entropy bonus on the policy, inside the `α` term. Zero disables it.
    pub entropy: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta, entropy: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub prediction: f64,
    pub policy: f64,
    pub baseline: f64,
    /// Summed policy entropy over the acting steps.
    pub entropy: f64,
    pub total: f64,
}

/// Evaluates `L_p + α (L_a - η H) + β L_b` on a finished trajectory and
/// accumulates the routed gradients into the model. Does not update
/// parameters.
pub fn total_loss(model: &mut AgentModel, traj: &Trajectory, weights: LossWeights) -> LossBreakdown {
    let cfg = model.config;
    let LossWeights { alpha, beta, entropy: eta } = weights;

    // prediction loss, back through time into memory, perception and word vector
    let (loss_p, g_logits) = bce_loss(traj.label, &traj.prediction_logits);
    let last = traj.records.last().expect("at least one step");
    let mut g_m = vec![0.0; cfg.d_m];
    model.prediction.backward(&last.memory, &g_logits, Some(&mut g_m));
    let zero_m = vec![0.0; cfg.d_m];
    let mut c = vec![0.0; cfg.d_v + cfg.d_w];
    c[cfg.d_v..].copy_from_slice(&traj.word);
    let mut g_word = vec![0.0; cfg.d_w];
    for t in (0..traj.records.len()).rev() {
        let rec = &traj.records[t];
        let m_prev = if t == 0 { &zero_m } else { &traj.records[t - 1].memory };
        c[..cfg.d_v].copy_from_slice(&rec.visual);
        let (g_prev, g_c) = model.memory.backward(m_prev, &c, &rec.memory, &g_m);
        for (a, b) in g_word.iter_mut().zip(&g_c[cfg.d_v..]) {
            *a += b;
        }
        let mut g_v = g_c[..cfg.d_v].to_vec();
        relu_backward_inplace(&rec.visual, &mut g_v);
        let mut g_h = vec![0.0; cfg.d_v];
        model.perception_2.backward(&rec.hidden, &g_v, Some(&mut g_h));
        relu_backward_inplace(&rec.hidden, &mut g_h);
        model.perception_1.backward(rec.observation.as_slice(), &g_h, None);
        g_m = g_prev;
    }
    model.word.backward(traj.query, &g_word);

    // policy loss: action head only, baselines held constant
    let acted: Vec<&StepRecord> = traj.records.iter().filter(|r| r.action.is_some()).collect();
    let steps: Vec<PolicyStep> = acted
        .iter()
        .map(|r| PolicyStep { logits: r.action_logits.clone(), action: r.action.expect("filtered").index() })
        .collect();
    let returns = &traj.returns[..acted.len()];
    let baselines: Vec<f64> = acted.iter().map(|r| r.baseline).collect();
    let (loss_a, g_policy) = reinforce_loss(&steps, returns, &baselines).expect("matching lengths");
    let mut entropy = 0.0;
    if alpha != 0.0 {
        for (rec, g) in acted.iter().zip(&g_policy) {
            let (h, g_h) = policy_entropy(&rec.action_logits);
            entropy += h;
            let g: Vec<f64> = g.iter().zip(&g_h).map(|(v, e)| alpha * (v - eta * e)).collect();
            let mut g_h = vec![0.0; cfg.action_hidden];
            model.action_out.backward(&rec.action_hidden, &g, Some(&mut g_h));
            relu_backward_inplace(&rec.action_hidden, &mut g_h);
            model.action_hidden.backward(&rec.memory, &g_h, None);
        }
    }

    // baseline regression: baseline head only
    let (loss_b, g_base) = baseline_loss(&traj.returns, &traj.baselines()).expect("matching lengths");
    if beta != 0.0 {
        for (rec, g) in traj.records.iter().zip(&g_base) {
            model.baseline.backward(&rec.memory, &[beta * g], None);
        }
    }

    LossBreakdown {
        prediction: loss_p,
        policy: loss_a,
        baseline: loss_b,
        entropy,
        total: loss_p + alpha * (loss_a - eta * entropy) + beta * loss_b,
    }
}

/// Recomputes the three losses of `traj` under `model` by replaying its
/// actions. The policy term uses the recorded baselines as constants.
pub fn replay_losses(model: &AgentModel, sample: &Sample, geometry: &SceneGeometry, traj: &Trajectory) -> LossBreakdown {
    let actions = traj.actions();
    let replay = rollout(model, sample, geometry, Control::Replay(&actions), &mut crate::rng::from_seed(0));
    let loss_p = bce(traj.label, softmax(&replay.prediction_logits)[0]);
    let recorded_b = traj.baselines();
    let loss_a = -replay
        .records
        .iter()
        .zip(&recorded_b)
        .zip(&traj.returns)
        .filter_map(|((r, b), ret)| r.log_prob.map(|lp| lp * (ret - b)))
        .sum::<f64>();
    let entropy = replay.records.iter().filter(|r| r.action.is_some()).map(|r| policy_entropy(&r.action_logits).0).sum();
    let n = replay.records.len() as f64;
    let loss_b = replay.records.iter().zip(&traj.returns).map(|(r, ret)| (ret - r.baseline).powi(2)).sum::<f64>() / n;
    LossBreakdown { prediction: loss_p, policy: loss_a, baseline: loss_b, entropy, total: f64::NAN }
}

/// Human-readable one-episode trace.
pub fn describe(traj: &Trajectory, names: &[&str]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "query {} (label {})", names[traj.query], traj.label);
    for (t, r) in traj.records.iter().enumerate() {
        let seen: Vec<&str> = r.observation.identities().iter().map(|&i| names[i]).collect();
        let _ = writeln!(
            s,
            "  t={t} view={:2} sees {:?} b={:+.3} -> {}",
            r.viewpoint,
            seen,
            r.baseline,
            r.action.map_or("(cap)".to_string(), |a| format!("{a:?}"))
        );
    }
    let _ = writeln!(s, "  predict {} (p_yes {:.3}), T={}, reward {:+.3}", traj.prediction, traj.y_hat, traj.steps, traj.reward);
    s
}
