//! Datasets of labeled feature vectors, synthetic task generation, and
//! episodic N-way K-shot sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RelationEmbeddings;
use crate::numerics::{Mat, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub usize);

impl RelationId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabeledInstance {
    pub relation: RelationId,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelationEntry {
    pub name: String,
    pub split: Split,
    pub instances: Vec<Vec<f64>>,
}

/// Instances grouped by relation, with a relation-level split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    relations: BTreeMap<RelationId, RelationEntry>,
}

impl Dataset {
    pub fn new(dim: usize, relations: BTreeMap<RelationId, RelationEntry>) -> Result<Self> {
        if relations.is_empty() {
            return Err(Error::NoInstances);
        }
        for (id, entry) in &relations {
            if entry.instances.is_empty() {
                return Err(Error::InsufficientInstances {
                    relation: *id,
                    needed: 1,
                    available: 0,
                });
            }
            if let Some(bad) = entry.instances.iter().find(|x| x.len() != dim) {
                return Err(Error::ShapeMismatch(format!(
                    "relation {id} has an instance of dimension {}, dataset dimension is {dim}",
                    bad.len()
                )));
            }
            if entry.instances.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "relation {id} has non-finite features"
                )));
            }
        }
        Ok(Dataset { dim, relations })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn relations(&self) -> &BTreeMap<RelationId, RelationEntry> {
        &self.relations
    }

    pub fn relation(&self, id: RelationId) -> Option<&RelationEntry> {
        self.relations.get(&id)
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Largest relation id plus one; a relation graph must have at least this many nodes.
    pub fn id_bound(&self) -> usize {
        self.relations.keys().next_back().map_or(0, |r| r.0 + 1)
    }

    /// Relations in `split`, ascending by id.
    pub fn split_relations(&self, split: Split) -> Vec<RelationId> {
        self.relations
            .iter()
            .filter(|(_, e)| e.split == split)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn instances(&self) -> impl Iterator<Item = LabeledInstance> + '_ {
        self.relations.iter().flat_map(|(id, entry)| {
            entry.instances.iter().map(move |f| LabeledInstance {
                relation: *id,
                features: f.clone(),
            })
        })
    }

    /// Checks that every relation of `split` can serve an `n`-way episode with
    /// `per_relation` instances each.
    pub fn check_episode_shape(&self, split: Split, n: usize, per_relation: usize) -> Result<()> {
        let rels = self.split_relations(split);
        if rels.len() < n {
            return Err(Error::InsufficientRelations {
                split,
                needed: n,
                available: rels.len(),
            });
        }
        for id in rels {
            let available = self.relations[&id].instances.len();
            if available < per_relation {
                return Err(Error::InsufficientInstances {
                    relation: id,
                    needed: per_relation,
                    available,
                });
            }
        }
        Ok(())
    }
}

/// One support or query instance of an episode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeItem {
    pub relation: RelationId,
    /// Position of the instance within its relation.
    pub index: usize,
    /// Position of `relation` within the episode targets.
    pub slot: usize,
    pub features: Vec<f64>,
}

/// One N-way K-shot task.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Episode {
    pub targets: Vec<RelationId>,
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.targets.len()
    }

    /// Support instances per target; `None` when the counts differ.
    pub fn k_shot(&self) -> Option<usize> {
        let n = self.targets.len();
        if n == 0 {
            return None;
        }
        let mut counts = vec![0usize; n];
        for item in &self.support {
            counts[item.slot] += 1;
        }
        counts.iter().all(|&c| c == counts[0]).then_some(counts[0])
    }

    /// Same task with targets listed in a different order; `order[i]` is the
    /// old slot that becomes slot `i`.
    pub fn permute_targets(&self, order: &[usize]) -> Episode {
        let mut new_slot = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_slot[old] = new;
        }
        let relabel = |items: &[EpisodeItem]| {
            items
                .iter()
                .map(|item| EpisodeItem {
                    slot: new_slot[item.slot],
                    ..item.clone()
                })
                .collect()
        };
        Episode {
            targets: order.iter().map(|&old| self.targets[old]).collect(),
            support: relabel(&self.support),
            query: relabel(&self.query),
        }
    }
}

/// Samples `n` target relations from `split`, then `k` support and `q_per`
/// query instances for each, all without replacement.
pub fn sample_episode(
    dataset: &Dataset,
    split: Split,
    n: usize,
    k: usize,
    q_per: usize,
    stream: &RngStream,
) -> Result<Episode> {
    if n == 0 {
        return Err(Error::InvalidArgument("episode needs at least one target".into()));
    }
    let pool = dataset.split_relations(split);
    if pool.len() < n {
        return Err(Error::InsufficientRelations {
            split,
            needed: n,
            available: pool.len(),
        });
    }
    let mut rng = stream.rng();
    let targets: Vec<RelationId> = index::sample(&mut rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect();

    let mut support = Vec::with_capacity(n * k);
    let mut query = Vec::with_capacity(n * q_per);
    for (slot, &relation) in targets.iter().enumerate() {
        let instances = &dataset.relations[&relation].instances;
        let needed = k + q_per;
        if instances.len() < needed {
            return Err(Error::InsufficientInstances {
                relation,
                needed,
                available: instances.len(),
            });
        }
        let picks = index::sample(&mut rng, instances.len(), needed).into_vec();
        for (j, &i) in picks.iter().enumerate() {
            let item = EpisodeItem {
                relation,
                index: i,
                slot,
                features: instances[i].clone(),
            };
            if j < k {
                support.push(item);
            } else {
                query.push(item);
            }
        }
    }
    Ok(Episode {
        targets,
        support,
        query,
    })
}

/// Parameters of the synthetic clustered-feature generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_relations: usize,
    pub dim: usize,
    pub cluster_scale: f64,
    pub noise_scale: f64,
    pub instances_per_relation: usize,
    /// Standard deviation of the perturbation separating a relation's
    /// embedding from its latent center.
    pub embedding_noise: f64,
    pub train_relations: usize,
    pub val_relations: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_relations: 25,
            dim: 16,
            cluster_scale: 10.0,
            noise_scale: 1.0,
            instances_per_relation: 20,
            embedding_noise: 0.1,
            train_relations: 10,
            val_relations: 5,
        }
    }
}

/// Clustered features: relation `r` gets a center `c_r ~ N(0, cluster_scale² I)`,
/// its instances are `c_r + N(0, noise_scale² I)`, and its embedding is
/// `c_r + N(0, embedding_noise² I)`. Relations are assigned to train, val and
/// test in id order.
pub fn generate_synthetic(
    config: &SynthConfig,
    stream: &RngStream,
) -> Result<(Dataset, RelationEmbeddings)> {
    let SynthConfig {
        num_relations,
        dim,
        cluster_scale,
        noise_scale,
        instances_per_relation,
        embedding_noise,
        train_relations,
        val_relations,
    } = *config;
    if num_relations < 2 || dim == 0 {
        return Err(Error::InvalidArgument(
            "synthetic data needs at least 2 relations and 1 dimension".into(),
        ));
    }
    if !(cluster_scale > 0.0) || !(noise_scale >= 0.0) || !(embedding_noise >= 0.0) {
        return Err(Error::InvalidArgument(
            "cluster scale must be positive and noise scales non-negative".into(),
        ));
    }
    if instances_per_relation == 0 {
        return Err(Error::NoInstances);
    }
    if train_relations + val_relations > num_relations {
        return Err(Error::InvalidArgument(format!(
            "{train_relations} train + {val_relations} val relations exceed {num_relations}"
        )));
    }

    let mut center_rng = stream.fork(0).rng();
    let mut instance_rng = stream.fork(1).rng();
    let mut embedding_rng = stream.fork(2).rng();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..dim)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>()
    };

    let mut relations = BTreeMap::new();
    let mut embedding_rows = Vec::with_capacity(num_relations);
    for r in 0..num_relations {
        let center = draw(&mut center_rng, cluster_scale);
        let instances = (0..instances_per_relation)
            .map(|_| {
                let noise = draw(&mut instance_rng, noise_scale);
                center.iter().zip(noise).map(|(c, z)| c + z).collect()
            })
            .collect();
        let perturbation = draw(&mut embedding_rng, embedding_noise);
        embedding_rows.push(center.iter().zip(perturbation).map(|(c, z)| c + z).collect());
        let split = if r < train_relations {
            Split::Train
        } else if r < train_relations + val_relations {
            Split::Val
        } else {
            Split::Test
        };
        relations.insert(
            RelationId(r),
            RelationEntry {
                name: format!("relation_{r:03}"),
                split,
                instances,
            },
        );
    }
    let dataset = Dataset::new(dim, relations)?;
    let embeddings = RelationEmbeddings::new(Mat::from_rows(embedding_rows)?)?;
    Ok((dataset, embeddings))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a tab-separated `id<TAB>v1<TAB>...` row. Returns `None` for blank lines.
pub(crate) fn parse_id_row(path: &Path, line_no: usize, line: &str) -> Result<Option<(usize, Vec<f64>)>> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() {
        return Ok(None);
    }
    let mut fields = line.split('\t');
    let id_field = fields.next().unwrap_or_default();
    let id = id_field
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::parse(path, line_no, format!("bad relation id {id_field:?}")))?;
    let values = fields
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(path, line_no, format!("bad value {v:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Some((id, values)))
}

/// Reads an instance file and a relation registry.
pub fn load_dataset(instances_path: &Path, registry_path: &Path) -> Result<Dataset> {
    let mut relations = BTreeMap::new();
    for (i, line) in read_to_string(registry_path)?.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                registry_path,
                line_no,
                "expected relation_id<TAB>name<TAB>split",
            ));
        }
        let id = fields[0].trim().parse::<usize>().map_err(|_| {
            Error::parse(registry_path, line_no, format!("bad relation id {:?}", fields[0]))
        })?;
        let split = fields[2]
            .trim()
            .parse::<Split>()
            .map_err(|e| Error::parse(registry_path, line_no, e.to_string()))?;
        let entry = RelationEntry {
            name: fields[1].to_string(),
            split,
            instances: Vec::new(),
        };
        if relations.insert(RelationId(id), entry).is_some() {
            return Err(Error::parse(
                registry_path,
                line_no,
                format!("duplicate relation id {id}"),
            ));
        }
    }

    let mut dim = None;
    for (i, line) in read_to_string(instances_path)?.lines().enumerate() {
        let line_no = i + 1;
        let Some((id, features)) = parse_id_row(instances_path, line_no, line)? else {
            continue;
        };
        let expected = *dim.get_or_insert(features.len());
        if features.is_empty() || features.len() != expected {
            return Err(Error::parse(
                instances_path,
                line_no,
                format!("dimension {} does not match {expected}", features.len()),
            ));
        }
        relations
            .get_mut(&RelationId(id))
            .ok_or(Error::UnknownRelation(id))?
            .instances
            .push(features);
    }
    let Some(dim) = dim else {
        return Err(Error::NoInstances);
    };
    Dataset::new(dim, relations)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn write_id_rows<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (usize, &'a [f64])>,
) -> Result<()> {
    let mut out = create(path)?;
    for (id, values) in rows {
        let mut line = id.to_string();
        for v in values {
            line.push('\t');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes the instance file and registry; values round-trip exactly.
pub fn save_dataset(dataset: &Dataset, instances_path: &Path, registry_path: &Path) -> Result<()> {
    let mut reg = create(registry_path)?;
    for (id, entry) in &dataset.relations {
        writeln!(reg, "{id}\t{}\t{}", entry.name, entry.split).map_err(|e| Error::io(registry_path, e))?;
    }
    reg.flush().map_err(|e| Error::io(registry_path, e))?;
    write_id_rows(
        instances_path,
        dataset
            .relations
            .iter()
            .flat_map(|(id, e)| e.instances.iter().map(move |f| (id.0, f.as_slice()))),
    )
}
