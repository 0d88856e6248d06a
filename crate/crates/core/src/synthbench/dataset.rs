use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{build_episode, random_rule, Episode};
use super::rules::Family;
use super::scene::SceneSpec;
use super::SynthError;

pub const MANIFEST_FILE: &str = "manifest.json";
const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub families: Vec<Family>,
    pub k: usize,
    pub episodes: usize,
    pub seed: u64,
    pub scene: SceneSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { families: Family::ALL.to_vec(), k: 2, episodes: 64, seed: 42, scene: SceneSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub k: usize,
    pub episodes: usize,
    pub family_counts: BTreeMap<String, usize>,
    pub files: Vec<String>,
}

/// Episodes cycle through the families in order; each draws its rule
/// parameters and seed from one stream keyed by the dataset seed.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Vec<Episode>, SynthError> {
    if spec.families.is_empty() {
        return Err(SynthError::Spec("family list is empty".into()));
    }
    let n_tiles = spec.k * spec.k;
    if let Some(f) = spec.families.iter().find(|f| n_tiles < f.min_tiles()) {
        return Err(SynthError::Spec(format!("family {f} needs at least {} reference tiles", f.min_tiles())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jobs: Vec<_> = (0..spec.episodes)
        .map(|i| {
            let family = spec.families[i % spec.families.len()];
            (i, random_rule(family, &mut rng), rng.gen::<u64>())
        })
        .collect();
    jobs.into_par_iter()
        .map(|(i, rule, seed)| {
            let mut ep = build_episode(rule, spec.k, seed, &spec.scene)?;
            ep.id = i;
            Ok(ep)
        })
        .collect()
}

fn file_name(id: usize) -> String {
    format!("episode_{id:04}.json")
}

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io { path: path.display().to_string(), source }
}

pub fn write_dataset(dir: &Path, spec: &DatasetSpec, episodes: &[Episode]) -> Result<Manifest, SynthError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut family_counts = BTreeMap::new();
    let mut files = Vec::with_capacity(episodes.len());
    for ep in episodes {
        *family_counts.entry(ep.family().name().to_string()).or_insert(0) += 1;
        let name = file_name(ep.id);
        let path = dir.join(&name);
        let text = serde_json::to_string_pretty(ep).expect("episode serializes");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        files.push(name);
    }
    let manifest =
        Manifest { version: DATASET_VERSION, seed: spec.seed, k: spec.k, episodes: episodes.len(), family_counts, files };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<Episode>), SynthError> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| io_err(p, e));
    let format_err = |p: &Path, e: serde_json::Error| SynthError::Format { path: p.display().to_string(), message: e.to_string() };
    let mpath = dir.join(MANIFEST_FILE);
    let manifest: Manifest = serde_json::from_str(&read(&mpath)?).map_err(|e| format_err(&mpath, e))?;
    let episodes = manifest
        .files
        .iter()
        .map(|f| {
            let p = dir.join(f);
            serde_json::from_str::<Episode>(&read(&p)?).map_err(|e| format_err(&p, e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, episodes))
}
