//! Conditional generation of (scene, query, label) samples.
//!
//! The query word and label are drawn first; a scene consistent with them and
//! with the requested scene type is then built by rejection sampling of
//! object placements.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    camera_pose, footprints_clear, occlusion_level, visible_set, GeometryError, ObjectSpec, OcclusionLevel,
    PlacedObject, Point3, SceneGeometry, SizeCategory, Viewpoint,
};

const BUILTIN_CATALOG: &str = include_str!("../data/catalog.txt");

/// Placement attempts per object pair before the pair is redrawn.
pub const PLACEMENT_RETRIES: usize = 1000;
/// Pair redraws before a (query, label, type) draw is declared unsatisfiable.
const PAIR_REDRAWS: usize = 64;
/// Query/label redraws when the holdout filter leaves no candidate pair.
const QUERY_REDRAWS: usize = 256;
/// Minimum gap between two footprints (metres).
const FOOTPRINT_MARGIN: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ScenegenError {
    #[error("catalog line {line}: {msg}")]
    CatalogParse { line: usize, msg: String },
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("holdout of {0} pairs per category family exceeds the 49 available")]
    HoldoutTooLarge(usize),
    #[error("could not draw a holdout that leaves every object in some training pair")]
    HoldoutInfeasible,
    #[error("no scene of type {scene_type:?} can satisfy the catalog and holdout constraints")]
    Unsatisfiable { scene_type: SceneType },
    #[error("unknown data level `{0}`")]
    UnknownLevel(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    objects: Vec<ObjectSpec>,
}

impl Catalog {
    /// The 21-object catalog shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_CATALOG).expect("builtin catalog is valid")
    }

    /// Parses `name category width_cm depth_cm height_cm` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ScenegenError> {
        let mut objects = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| ScenegenError::CatalogParse { line: i + 1, msg: msg.to_string() };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(err("expected 5 fields"));
            }
            let category = SizeCategory::parse(fields[1]).ok_or_else(|| err("unknown category"))?;
            let mut dims = [0.0; 3];
            for (d, f) in dims.iter_mut().zip(&fields[2..]) {
                *d = f.parse().map_err(|_| err("bad dimension"))?;
            }
            let spec = ObjectSpec::new(fields[0], category, dims[0], dims[1], dims[2])?;
            if !spec.height_matches_category() {
                return Err(err("height outside category bounds"));
            }
            objects.push(spec);
        }
        let names: BTreeSet<&str> = objects.iter().map(|o| o.name.as_str()).collect();
        if names.len() != objects.len() {
            return Err(ScenegenError::InvalidCatalog("duplicate object names".into()));
        }
        for cat in SizeCategory::ALL {
            if !objects.iter().any(|o| o.category == cat) {
                return Err(ScenegenError::InvalidCatalog(format!("no {cat} objects")));
            }
        }
        Ok(Self { objects })
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, id: usize) -> &ObjectSpec {
        &self.objects[id]
    }

    pub fn objects(&self) -> &[ObjectSpec] {
        &self.objects
    }

    pub fn category(&self, id: usize) -> SizeCategory {
        self.objects[id].category
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    pub fn ids_in(&self, cat: SizeCategory) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.objects[i].category == cat)
    }

    /// All unordered pairs of objects from different size categories.
    pub fn cross_category_pairs(&self) -> Vec<ObjectPair> {
        let mut out = Vec::new();
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                if self.category(a) != self.category(b) {
                    out.push(ObjectPair::new(a, b));
                }
            }
        }
        out
    }
}

/// Unordered pair of catalog ids, stored smaller id first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectPair(usize, usize);

impl ObjectPair {
    pub fn new(a: usize, b: usize) -> Self {
        if a <= b {
            Self(a, b)
        } else {
            Self(b, a)
        }
    }

    pub fn ids(self) -> (usize, usize) {
        (self.0, self.1)
    }

    pub fn contains(self, id: usize) -> bool {
        self.0 == id || self.1 == id
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSet {
    pairs: BTreeSet<ObjectPair>,
}

impl HoldoutSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = ObjectPair>) -> Self {
        Self { pairs: pairs.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, pair: ObjectPair) -> bool {
        self.pairs.contains(&pair)
    }

    pub fn iter(&self) -> impl Iterator<Item = ObjectPair> + '_ {
        self.pairs.iter().copied()
    }
}

/// Holds out `per_pair_count` pairs from each of the three category families
/// (large-medium, large-small, medium-small), redrawing until every object
/// still occurs in at least one training pair.
pub fn make_holdout<R: Rng + ?Sized>(
    catalog: &Catalog,
    rng: &mut R,
    per_pair_count: usize,
) -> Result<HoldoutSet, ScenegenError> {
    use SizeCategory::*;
    let families = [(Large, Medium), (Large, Small), (Medium, Small)];
    let family_pairs: Vec<Vec<ObjectPair>> = families
        .iter()
        .map(|&(a, b)| {
            catalog.ids_in(a).flat_map(|i| catalog.ids_in(b).map(move |j| ObjectPair::new(i, j))).collect()
        })
        .collect();
    if family_pairs.iter().any(|f| per_pair_count > f.len()) {
        return Err(ScenegenError::HoldoutTooLarge(per_pair_count));
    }
    let all = catalog.cross_category_pairs();
    for _ in 0..10_000 {
        let held: BTreeSet<ObjectPair> = family_pairs
            .iter()
            .flat_map(|f| f.choose_multiple(rng, per_pair_count).copied().collect::<Vec<_>>())
            .collect();
        let covered = (0..catalog.len()).all(|id| all.iter().any(|p| p.contains(id) && !held.contains(p)));
        if covered {
            return Ok(HoldoutSet { pairs: held });
        }
    }
    Err(ScenegenError::HoldoutInfeasible)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SceneType {
    OneVisible,
    TwoVisible,
    TwoOccluded,
}

impl SceneType {
    pub const ALL: [SceneType; 3] = [SceneType::OneVisible, SceneType::TwoVisible, SceneType::TwoOccluded];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataLevel {
    #[serde(rename = "L1-1-vis")]
    L1OneVisible,
    #[serde(rename = "L2-2-vis")]
    L2TwoVisible,
    #[serde(rename = "L3-2-occ")]
    L3TwoOccluded,
    #[serde(rename = "L4-overall")]
    L4Overall,
}

impl DataLevel {
    pub const ALL: [DataLevel; 4] =
        [DataLevel::L1OneVisible, DataLevel::L2TwoVisible, DataLevel::L3TwoOccluded, DataLevel::L4Overall];

    pub fn name(self) -> &'static str {
        match self {
            Self::L1OneVisible => "L1-1-vis",
            Self::L2TwoVisible => "L2-2-vis",
            Self::L3TwoOccluded => "L3-2-occ",
            Self::L4Overall => "L4-overall",
        }
    }

    fn draw_type<R: Rng + ?Sized>(self, rng: &mut R) -> SceneType {
        match self {
            Self::L1OneVisible => SceneType::OneVisible,
            Self::L2TwoVisible => SceneType::TwoVisible,
            Self::L3TwoOccluded => SceneType::TwoOccluded,
            Self::L4Overall => SceneType::ALL[rng.gen_range(0..3)],
        }
    }
}

impl fmt::Display for DataLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataLevel {
    type Err = ScenegenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase();
        let level = match key.as_str() {
            "l1" | "l1-1-vis" | "l1_1vis" => Self::L1OneVisible,
            "l2" | "l2-2-vis" | "l2_2vis" => Self::L2TwoVisible,
            "l3" | "l3-2-occ" | "l3_2occ" => Self::L3TwoOccluded,
            "l4" | "l4-overall" | "l4_overall" => Self::L4Overall,
            _ => return Err(ScenegenError::UnknownLevel(s.to_string())),
        };
        Ok(level)
    }
}

/// Which two-object combinations a generator may use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutFilter {
    /// Every cross-category pair.
    All,
    /// Pairs outside the holdout set (the training distribution).
    #[default]
    TrainingOnly,
    /// Only held-out pairs.
    HoldoutOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub objects: Vec<PlacedObject>,
    pub scene_type: SceneType,
    /// Catalog id of the queried object.
    pub query: usize,
    /// Whether the queried object is on the table.
    pub label: bool,
}

impl Sample {
    pub fn pair(&self) -> Option<ObjectPair> {
        match self.objects.as_slice() {
            [a, b] => Some(ObjectPair::new(a.id, b.id)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SceneGenerator {
    catalog: Arc<Catalog>,
    geometry: SceneGeometry,
    holdout: HoldoutSet,
    filter: HoldoutFilter,
}

impl SceneGenerator {
    pub fn new(catalog: Arc<Catalog>, geometry: SceneGeometry) -> Self {
        Self { catalog, geometry, holdout: HoldoutSet::empty(), filter: HoldoutFilter::TrainingOnly }
    }

    pub fn with_holdout(mut self, holdout: HoldoutSet, filter: HoldoutFilter) -> Self {
        self.holdout = holdout;
        self.filter = filter;
        self
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn geometry(&self) -> &SceneGeometry {
        &self.geometry
    }

    pub fn holdout(&self) -> &HoldoutSet {
        &self.holdout
    }

    fn pair_allowed(&self, pair: ObjectPair) -> bool {
        match self.filter {
            HoldoutFilter::All => true,
            HoldoutFilter::TrainingOnly => !self.holdout.contains(pair),
            HoldoutFilter::HoldoutOnly => self.holdout.contains(pair),
        }
    }

    /// Draws one sample. Query and label are uniform; the scene is conditioned on them.
    pub fn generate<R: Rng + ?Sized>(&self, level: DataLevel, rng: &mut R) -> Result<Sample, ScenegenError> {
        let mut last_err = None;
        for _ in 0..QUERY_REDRAWS {
            let query = rng.gen_range(0..self.catalog.len());
            let label = rng.gen_bool(0.5);
            let scene_type = level.draw_type(rng);
            match self.generate_conditioned(query, label, scene_type, rng) {
                Ok(s) => return Ok(s),
                Err(e @ ScenegenError::Unsatisfiable { .. }) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    /// Builds a scene for a fixed query, label and scene type.
    pub fn generate_conditioned<R: Rng + ?Sized>(
        &self,
        query: usize,
        label: bool,
        scene_type: SceneType,
        rng: &mut R,
    ) -> Result<Sample, ScenegenError> {
        let unsat = ScenegenError::Unsatisfiable { scene_type };
        if scene_type == SceneType::OneVisible {
            let id = if label {
                query
            } else {
                (0..self.catalog.len()).filter(|&i| i != query).choose(rng).ok_or(unsat)?
            };
            let obj = self.place_single(id, rng);
            return Ok(Sample { objects: vec![obj], scene_type, query, label });
        }

        let candidates: Vec<ObjectPair> = self
            .catalog
            .cross_category_pairs()
            .into_iter()
            .filter(|p| p.contains(query) == label && self.pair_allowed(*p))
            .collect();
        if candidates.is_empty() {
            return Err(unsat);
        }
        for _ in 0..PAIR_REDRAWS {
            let pair = *candidates.choose(rng).expect("non-empty");
            if let Some(objects) = self.place_pair(pair, scene_type, rng) {
                return Ok(Sample { objects, scene_type, query, label });
            }
        }
        Err(unsat)
    }

    fn random_pose<R: Rng + ?Sized>(&self, id: usize, rng: &mut R) -> PlacedObject {
        let r = self.geometry.table_radius * rng.gen::<f64>().sqrt();
        let theta = rng.gen_range(0.0..2.0 * PI);
        PlacedObject {
            id,
            spec: self.catalog.get(id).clone(),
            center: Point3::new(r * theta.cos(), r * theta.sin(), self.geometry.table_height),
            yaw: rng.gen_range(0.0..2.0 * PI),
        }
    }

    fn place_single<R: Rng + ?Sized>(&self, id: usize, rng: &mut R) -> PlacedObject {
        loop {
            let obj = self.random_pose(id, rng);
            if self.geometry.footprint_on_table(&obj) {
                return obj;
            }
        }
    }

    /// Rejection-samples poses for the pair until the scene-type predicate holds
    /// from the initial viewpoint. For occluded scenes the larger object is the
    /// occluder.
    fn place_pair<R: Rng + ?Sized>(
        &self,
        pair: ObjectPair,
        scene_type: SceneType,
        rng: &mut R,
    ) -> Option<Vec<PlacedObject>> {
        let (a, b) = pair.ids();
        let (big, small) = if self.catalog.category(a) > self.catalog.category(b) { (a, b) } else { (b, a) };
        let cam = camera_pose(Viewpoint::new(0), &self.geometry);
        for _ in 0..PLACEMENT_RETRIES {
            let occluder = self.random_pose(big, rng);
            let occludee = self.random_pose(small, rng);
            if !self.geometry.footprint_on_table(&occluder)
                || !self.geometry.footprint_on_table(&occludee)
                || !footprints_clear(&occluder, &occludee, FOOTPRINT_MARGIN)
            {
                continue;
            }
            let objects = vec![occluder, occludee];
            let ok = match scene_type {
                SceneType::OneVisible => unreachable!("single-object scenes are placed separately"),
                SceneType::TwoVisible => visible_set(Viewpoint::new(0), &objects, &self.geometry).len() == 2,
                SceneType::TwoOccluded => {
                    occlusion_level(&cam, &objects[0], &objects[1]).ok() == Some(OcclusionLevel::FullyOccluded)
                        && self.revealed_clockwise(&objects)
                }
            };
            if ok {
                return Some(objects);
            }
        }
        None
    }

    /// The hidden object becomes visible within six clockwise moves.
    fn revealed_clockwise(&self, objects: &[PlacedObject]) -> bool {
        (1..=6).any(|k| visible_set(Viewpoint::new(-k), objects, &self.geometry).len() == 2)
    }
}

/// One line of the dataset export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seed: u64,
    pub scene_type: SceneType,
    pub query: String,
    pub label: bool,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl SampleRecord {
    pub fn new(sample: &Sample, catalog: &Catalog, seed: u64) -> Self {
        Self {
            seed,
            scene_type: sample.scene_type,
            query: catalog.get(sample.query).name.clone(),
            label: sample.label,
            objects: sample
                .objects
                .iter()
                .map(|o| ObjectRecord { name: o.spec.name.clone(), x: o.center.x, y: o.center.y, yaw: o.yaw })
                .collect(),
        }
    }
}
