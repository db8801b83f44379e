//! Episodic environment around one sample: viewpoint state machine,
//! symbolic observations, terminal reward and scripted reference policies.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{visible_set, SceneGeometry, Viewpoint, VisibleObject};
use crate::scenegen::{Catalog, SceneType, Sample};

/// Movement budget per episode.
pub const MAX_STEPS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("movement count {0} outside 0..=6")]
    StepsOutOfRange(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    CircleLeft,
    CircleRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::CircleLeft, Action::CircleRight, Action::Stop];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

/// Fixed-length encoding of what the camera sees: two slots sorted by
/// bearing, each `[one-hot identity, apparent height, bearing]`, followed by
/// the visible count divided by two.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub const SLOTS: usize = 2;

    pub fn dim(vocab: usize) -> usize {
        Self::SLOTS * (vocab + 2) + 1
    }

    pub fn encode(visible: &[VisibleObject<'_>], vocab: usize) -> Self {
        let slot = vocab + 2;
        let mut v = vec![0.0; Self::dim(vocab)];
        for (k, obj) in visible.iter().take(Self::SLOTS).enumerate() {
            let base = k * slot;
            v[base + obj.object.id] = 1.0;
            v[base + vocab] = obj.apparent_height;
            v[base + vocab + 1] = obj.bearing;
        }
        v[Self::SLOTS * slot] = visible.len().min(Self::SLOTS) as f64 / 2.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn vocab(&self) -> usize {
        (self.0.len() - 1) / Self::SLOTS - 2
    }

    /// Catalog ids in the populated slots.
    pub fn identities(&self) -> Vec<usize> {
        let vocab = self.vocab();
        let slot = vocab + 2;
        (0..Self::SLOTS)
            .filter_map(|k| self.0[k * slot..k * slot + vocab].iter().position(|&x| x == 1.0))
            .collect()
    }

    pub fn visible_count(&self) -> usize {
        (self.0[self.0.len() - 1] * 2.0).round() as usize
    }
}

/// Result of a `step`: a fresh observation after a move, or nothing after Stop.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Option<Observation>,
    /// The episode is over and a prediction is due.
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct Episode<'a> {
    sample: &'a Sample,
    geometry: &'a SceneGeometry,
    vocab: usize,
    viewpoint: Viewpoint,
    t: usize,
    done: bool,
}

impl<'a> Episode<'a> {
    pub fn reset(sample: &'a Sample, geometry: &'a SceneGeometry, vocab: usize) -> (Self, Observation) {
        let ep = Self { sample, geometry, vocab, viewpoint: Viewpoint::new(0), t: 0, done: false };
        let obs = ep.observe();
        (ep, obs)
    }

    pub fn observe(&self) -> Observation {
        Observation::encode(&visible_set(self.viewpoint, &self.sample.objects, self.geometry), self.vocab)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        self.viewpoint = match action {
            Action::Stop => {
                self.done = true;
                return Ok(StepOutcome { observation: None, done: true });
            }
            Action::CircleLeft => self.viewpoint.left(),
            Action::CircleRight => self.viewpoint.right(),
        };
        self.t += 1;
        self.done = self.t >= MAX_STEPS;
        Ok(StepOutcome { observation: Some(self.observe()), done: self.done })
    }

    pub fn viewpoint(&self) -> Viewpoint {
        self.viewpoint
    }

    /// Movement steps taken so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn sample(&self) -> &Sample {
        self.sample
    }

    /// Closes the episode with a prediction.
    pub fn finish(&self, prediction: bool) -> Outcome {
        let correct = prediction == self.sample.label;
        Outcome { prediction, correct, steps: self.t, total_reward: terminal_reward(correct, self.t) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub prediction: bool,
    pub correct: bool,
    pub steps: usize,
    pub total_reward: f64,
}

/// Terminal reward: accuracy term `±1` plus latency bonus `1 / (T + 2)`.
pub fn reward(correct: bool, steps: usize) -> Result<f64, EnvError> {
    if steps > MAX_STEPS {
        return Err(EnvError::StepsOutOfRange(steps));
    }
    Ok(terminal_reward(correct, steps))
}

fn terminal_reward(correct: bool, steps: usize) -> f64 {
    let acc = if correct { 1.0 } else { -1.0 };
    acc + 1.0 / (steps as f64 + 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Move(Action),
    Predict(bool),
}

/// Rule agent following the reasoning table: predict when the query is seen,
/// when two objects are seen, or when the lone visible object is not larger
/// than the queried one; otherwise circle left.
pub fn oracle_policy(catalog: &Catalog, query: usize, obs: &Observation, t: usize) -> Decision {
    let ids = obs.identities();
    if ids.contains(&query) {
        return Decision::Predict(true);
    }
    if t >= MAX_STEPS || ids.len() != 1 {
        return Decision::Predict(false);
    }
    if catalog.category(ids[0]) > catalog.category(query) {
        Decision::Move(Action::CircleLeft)
    } else {
        Decision::Predict(false)
    }
}

/// Runs one episode under the oracle policy.
pub fn run_oracle(catalog: &Catalog, sample: &Sample, geometry: &SceneGeometry) -> Outcome {
    let (mut ep, mut obs) = Episode::reset(sample, geometry, catalog.len());
    loop {
        match oracle_policy(catalog, sample.query, &obs, ep.t()) {
            Decision::Predict(p) => return ep.finish(p),
            Decision::Move(a) => {
                obs = ep.step(a).expect("oracle never exceeds the cap").observation.expect("move observes");
            }
        }
    }
}

/// Comparison policies that ignore the observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScriptedPolicy {
    /// Stops immediately.
    Passive,
    /// Uniform over the three actions at each step.
    Random,
    /// Circles left until the movement cap.
    Exhaustive,
}

impl ScriptedPolicy {
    pub const ALL: [ScriptedPolicy; 3] = [ScriptedPolicy::Passive, ScriptedPolicy::Random, ScriptedPolicy::Exhaustive];

    pub fn act<R: Rng + ?Sized>(self, rng: &mut R) -> Action {
        match self {
            Self::Passive => Action::Stop,
            Self::Random => Action::from_index(rng.gen_range(0..3)),
            Self::Exhaustive => Action::CircleLeft,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Passive => "Passive",
            Self::Random => "Random",
            Self::Exhaustive => "Exhaustive",
        }
    }
}

/// Runs a scripted policy, predicting "yes" iff the query was ever seen.
pub fn run_scripted<R: Rng + ?Sized>(
    policy: ScriptedPolicy,
    catalog: &Catalog,
    sample: &Sample,
    geometry: &SceneGeometry,
    rng: &mut R,
) -> Outcome {
    let (mut ep, obs) = Episode::reset(sample, geometry, catalog.len());
    let mut seen = obs.identities().contains(&sample.query);
    while !ep.done() {
        if let Some(o) = ep.step(policy.act(rng)).expect("not done").observation {
            seen |= o.identities().contains(&sample.query);
        }
    }
    ep.finish(seen)
}

/// One line of the episode trace export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub scene_type: SceneType,
    pub query: String,
    pub label: bool,
    pub actions: Vec<Action>,
    pub viewpoints: Vec<usize>,
    pub prediction: bool,
    #[serde(rename = "T")]
    pub steps: usize,
    pub reward: f64,
}
