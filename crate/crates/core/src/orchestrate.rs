//! Federation state machine and experiment engine.
//!
//! Local, centralized and federated training share one seed discipline: the
//! initial model comes from `derive_seed(master, "init", 0)` and each unit of
//! client work (a federated round, or one epoch of standalone training) is
//! seeded with `derive_seed(master, client_id, index)`. A single-client
//! federation with `E = 1` therefore reproduces local training bit for bit.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, AggregatorState, ClientUpdate, ServerConfig, Strategy};
use crate::error::{Error, Result};
use crate::grid::Image;
use crate::metrics::{selection_metric, LesionParams, ProbabilityModel};
use crate::model::{
    extract_features, feature_count, init_weights, predict, train_local, FeatureMoments,
    FeatureStats, MlpLayout, ModelWeights, TrainConfig, TrainingExample,
};
use crate::paramcore::checksum;
use crate::seeding::derive_seed;
use crate::synthdata::{kfold, ClientSplit, SyntheticCase, Task};

/// One client's partitioned data.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub client_id: String,
    pub split: ClientSplit,
}

/// Model and optimizer settings shared by every training variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub task: Task,
    pub hidden: usize,
    /// `epochs` and `seed` are overridden per call.
    pub train: TrainConfig,
}

impl ModelSettings {
    pub fn layout(&self) -> MlpLayout {
        MlpLayout::new(feature_count(self.task.channels()), self.hidden)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationPlan {
    pub model: ModelSettings,
    pub local_epochs: usize,
    pub rounds: usize,
    pub server: ServerConfig,
    pub client_ids: Vec<String>,
    pub master_seed: u64,
    /// Validation metric cadence in rounds; 0 evaluates only after the last round.
    #[serde(default)]
    pub eval_every: usize,
}

impl FederationPlan {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 || self.rounds == 0 {
            return Err(Error::Precondition(format!(
                "federation needs E >= 1 and R >= 1, got E={} R={}",
                self.local_epochs, self.rounds
            )));
        }
        if self.client_ids.is_empty() {
            return Err(Error::EmptyInput("federation plan lists no clients"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!(
            "fl-e{}-r{}-{}",
            self.local_epochs, self.rounds, self.server.strategy
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round_index: usize,
    pub client_losses: BTreeMap<String, f64>,
    /// Hex digest of the aggregated global model.
    pub checksum: String,
    pub validation_metric: Option<f64>,
    /// Timing lives in run manifests only, so round files stay reproducible.
    #[serde(skip_serializing, default)]
    pub wall_ms: f64,
    pub local_epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMember {
    pub weights: ModelWeights,
    pub stats: FeatureStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub variant: String,
    pub plan: Option<FederationPlan>,
    pub epochs: Option<usize>,
    pub fold_ids: Vec<usize>,
    pub seeds: Vec<u64>,
}

/// A single model or a fold ensemble whose prediction is the mean member map.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub task: Task,
    pub members: Vec<ModelMember>,
    pub provenance: Provenance,
}

impl TrainedModel {
    pub fn checksums(&self) -> Vec<String> {
        self.members
            .iter()
            .map(|m| format!("{:016x}", checksum(&m.weights.flatten())))
            .collect()
    }

    /// Single-member view of one ensemble member.
    pub fn member(&self, i: usize) -> TrainedModel {
        TrainedModel {
            task: self.task,
            members: vec![self.members[i].clone()],
            provenance: self.provenance.clone(),
        }
    }
}

impl ProbabilityModel for TrainedModel {
    fn predict(&self, case: &SyntheticCase) -> Result<Image> {
        let (first, rest) = self
            .members
            .split_first()
            .ok_or(Error::EmptyInput("model has no members"))?;
        let mut acc = predict(&first.weights, &first.stats, case)?;
        for m in rest {
            let map = predict(&m.weights, &m.stats, case)?;
            for (a, b) in acc.as_mut_slice().iter_mut().zip(map.as_slice()) {
                *a += b;
            }
        }
        let k = self.members.len() as f64;
        if k > 1.0 {
            acc.as_mut_slice().iter_mut().for_each(|v| *v /= k);
        }
        Ok(acc)
    }
}

/// Combined validation cases with the detection post-processing used to score them.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub cases: Vec<SyntheticCase>,
    pub lesion: LesionParams,
}

impl ValidationSet {
    /// Union of all client validation splits, in sorted client order.
    pub fn combined(clients: &[ClientData], lesion: LesionParams) -> Self {
        let mut sorted: Vec<&ClientData> = clients.iter().collect();
        sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
        Self {
            cases: sorted
                .iter()
                .flat_map(|c| c.split.validation.iter().cloned())
                .collect(),
            lesion,
        }
    }

    pub fn score(&self, task: Task, model: &TrainedModel) -> Result<f64> {
        selection_metric(task, model, &self.cases, &self.lesion)
    }
}

/// Standardization statistics pooled over clients, merged in sorted id order.
pub fn pooled_stats(clients: &[&ClientData], n_features: usize) -> Result<FeatureStats> {
    let mut sorted = clients.to_vec();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    let per_client = sorted
        .par_iter()
        .map(|c| FeatureMoments::from_cases(&c.split.train, n_features))
        .collect::<Result<Vec<_>>>()?;
    let mut total = FeatureMoments::new(n_features);
    for m in &per_client {
        total.merge(m);
    }
    total.to_stats()
}

pub fn prepare_examples(
    cases: &[SyntheticCase],
    stats: &FeatureStats,
    task: Task,
) -> Result<Vec<TrainingExample>> {
    cases
        .par_iter()
        .map(|c| TrainingExample::new(extract_features(c, stats)?, &c.target(task)))
        .collect()
}

fn find_clients<'a>(clients: &'a [ClientData], ids: &[String]) -> Result<Vec<&'a ClientData>> {
    let mut out: Vec<&ClientData> = ids
        .iter()
        .map(|id| {
            clients
                .iter()
                .find(|c| &c.client_id == id)
                .ok_or_else(|| Error::Precondition(format!("unknown client {id}")))
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    out.dedup_by(|a, b| a.client_id == b.client_id);
    for c in &out {
        if c.split.train.is_empty() {
            return Err(Error::EmptyClient(c.client_id.clone()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FederatedRun {
    pub model: TrainedModel,
    pub logs: Vec<RoundLog>,
}

/// Broadcast, local training for `E` epochs on every client, aggregation; `R` times.
pub fn run_federated(
    plan: &FederationPlan,
    clients: &[ClientData],
    validation: Option<&ValidationSet>,
) -> Result<FederatedRun> {
    plan.validate()?;
    plan.model.train.validate()?;
    let participants = find_clients(clients, &plan.client_ids)?;
    let layout = plan.model.layout();
    let stats = pooled_stats(&participants, layout.n_features)?;
    let examples = participants
        .iter()
        .map(|c| prepare_examples(&c.split.train, &stats, plan.model.task))
        .collect::<Result<Vec<_>>>()?;

    let mut global = init_weights(layout, derive_seed(plan.master_seed, "init", 0));
    let mut state = AggregatorState::new(plan.server, &global.flatten());
    let mut logs = Vec::with_capacity(plan.rounds);
    for round in 0..plan.rounds {
        let started = Instant::now();
        let outcomes = participants
            .par_iter()
            .zip(&examples)
            .map(|(client, ex)| {
                let cfg = TrainConfig {
                    epochs: plan.local_epochs,
                    seed: derive_seed(plan.master_seed, &client.client_id, round as u64),
                    ..plan.model.train
                };
                train_local(&global, ex, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let updates: Vec<ClientUpdate> = participants
            .iter()
            .zip(&outcomes)
            .map(|(c, o)| ClientUpdate {
                client_id: c.client_id.clone(),
                params: o.weights.flatten(),
                sample_count: c.split.train.len(),
            })
            .collect();
        let (next_state, next_global) = aggregate(&state, &global.flatten(), &updates)?;
        state = next_state;
        global = ModelWeights::unflatten(layout, &next_global)?;

        let last = round + 1 == plan.rounds;
        let due = last || (plan.eval_every > 0 && (round + 1) % plan.eval_every == 0);
        let validation_metric = match validation {
            Some(v) if due => Some(v.score(
                plan.model.task,
                &single_model(plan.model.task, &global, &stats, "round"),
            )?),
            _ => None,
        };
        logs.push(RoundLog {
            round_index: round,
            client_losses: participants
                .iter()
                .zip(&outcomes)
                .map(|(c, o)| {
                    (
                        c.client_id.clone(),
                        *o.epoch_losses.last().unwrap_or(&f64::NAN),
                    )
                })
                .collect(),
            checksum: format!("{:016x}", checksum(&next_global)),
            validation_metric,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            local_epochs_run: outcomes.iter().map(|o| o.epoch_losses.len()).sum(),
        });
    }
    Ok(FederatedRun {
        model: TrainedModel {
            task: plan.model.task,
            members: vec![ModelMember {
                weights: global,
                stats,
            }],
            provenance: Provenance {
                variant: plan.label(),
                plan: Some(plan.clone()),
                epochs: None,
                fold_ids: vec![],
                seeds: vec![plan.master_seed],
            },
        },
        logs,
    })
}

fn single_model(
    task: Task,
    weights: &ModelWeights,
    stats: &FeatureStats,
    variant: &str,
) -> TrainedModel {
    TrainedModel {
        task,
        members: vec![ModelMember {
            weights: weights.clone(),
            stats: stats.clone(),
        }],
        provenance: Provenance {
            variant: variant.into(),
            plan: None,
            epochs: None,
            fold_ids: vec![],
            seeds: vec![],
        },
    }
}

/// Trains on one pool of examples, one seeded `train_local` call per epoch.
fn train_pool(
    pool_id: &str,
    participants: &[&ClientData],
    epochs: usize,
    settings: &ModelSettings,
    master_seed: u64,
) -> Result<TrainedModel> {
    if epochs == 0 {
        return Err(Error::InvalidTrainConfig("epochs must be >= 1".into()));
    }
    settings.train.validate()?;
    let layout = settings.layout();
    let stats = pooled_stats(participants, layout.n_features)?;
    let mut examples = Vec::new();
    for c in participants {
        examples.extend(prepare_examples(&c.split.train, &stats, settings.task)?);
    }
    let mut weights = init_weights(layout, derive_seed(master_seed, "init", 0));
    for epoch in 0..epochs {
        let cfg = TrainConfig {
            epochs: 1,
            seed: derive_seed(master_seed, pool_id, epoch as u64),
            ..settings.train
        };
        weights = train_local(&weights, &examples, &cfg)?.weights;
    }
    let mut model = single_model(settings.task, &weights, &stats, pool_id);
    model.provenance.epochs = Some(epochs);
    model.provenance.seeds = vec![master_seed];
    Ok(model)
}

/// Trains on a single client's own data.
pub fn run_local(
    client: &ClientData,
    epochs: usize,
    settings: &ModelSettings,
    master_seed: u64,
) -> Result<TrainedModel> {
    if client.split.train.is_empty() {
        return Err(Error::EmptyClient(client.client_id.clone()));
    }
    let mut model = train_pool(&client.client_id, &[client], epochs, settings, master_seed)?;
    model.provenance.variant = format!("local-{}", client.client_id);
    Ok(model)
}

/// Pools every client's training split (in sorted id order) and trains one model.
pub fn run_centralized(
    clients: &[ClientData],
    epochs: usize,
    settings: &ModelSettings,
    master_seed: u64,
) -> Result<TrainedModel> {
    if clients.is_empty() {
        return Err(Error::EmptyInput(
            "centralized training needs at least one client",
        ));
    }
    let ids: Vec<String> = clients.iter().map(|c| c.client_id.clone()).collect();
    let participants = find_clients(clients, &ids)?;
    let pool_id = if participants.len() == 1 {
        participants[0].client_id.clone()
    } else {
        "pooled".to_string()
    };
    let mut model = train_pool(&pool_id, &participants, epochs, settings, master_seed)?;
    model.provenance.variant = "central".into();
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub local_epochs: usize,
    pub rounds: usize,
    pub metric: f64,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub budget: usize,
    pub rows: Vec<GridRow>,
    pub best: FederationPlan,
}

/// Every arm trains with `R = budget / E`; ties go to the smaller `E`.
pub fn grid_search_er(
    budget: usize,
    epoch_candidates: &[usize],
    base: &FederationPlan,
    clients: &[ClientData],
    validation: &ValidationSet,
) -> Result<GridReport> {
    if epoch_candidates.is_empty() {
        return Err(Error::EmptyInput("no epoch candidates"));
    }
    for &e in epoch_candidates {
        if e == 0 || budget % e != 0 {
            return Err(Error::NonDivisibleBudget { budget, epochs: e });
        }
    }
    let mut candidates = epoch_candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    let plans: Vec<FederationPlan> = candidates
        .iter()
        .map(|&e| FederationPlan {
            local_epochs: e,
            rounds: budget / e,
            server: ServerConfig::defaults_for(Strategy::FedAvg),
            eval_every: 0,
            ..base.clone()
        })
        .collect();
    let rows = plans
        .par_iter()
        .map(|plan| {
            let run = run_federated(plan, clients, Some(validation))?;
            let last = run.logs.last().expect("R >= 1");
            Ok(GridRow {
                local_epochs: plan.local_epochs,
                rounds: plan.rounds,
                metric: last.validation_metric.expect("last round is always scored"),
                checksum: last.checksum.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best_idx = argmax_first(rows.iter().map(|r| r.metric));
    Ok(GridReport {
        budget,
        best: plans[best_idx].clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub metric: f64,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub best: FederationPlan,
}

/// Same plan, different server strategy (literature defaults); ties go to list order.
pub fn sweep_strategies(
    strategies: &[Strategy],
    plan: &FederationPlan,
    clients: &[ClientData],
    validation: &ValidationSet,
) -> Result<SweepReport> {
    if strategies.len() < 2 {
        return Err(Error::Precondition(
            "a strategy sweep needs at least two strategies".into(),
        ));
    }
    let plans: Vec<FederationPlan> = strategies
        .iter()
        .map(|&s| FederationPlan {
            server: ServerConfig {
                uniform_weights: plan.server.uniform_weights,
                ..ServerConfig::defaults_for(s)
            },
            eval_every: 0,
            ..plan.clone()
        })
        .collect();
    let rows = plans
        .par_iter()
        .map(|p| {
            let run = run_federated(p, clients, Some(validation))?;
            let last = run.logs.last().expect("R >= 1");
            Ok(SweepRow {
                strategy: p.server.strategy,
                metric: last.validation_metric.expect("last round is always scored"),
                checksum: last.checksum.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best_idx = argmax_first(rows.iter().map(|r| r.metric));
    Ok(SweepReport {
        best: plans[best_idx].clone(),
        rows,
    })
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// What to train: one client alone, the pooled data, or a federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Variant {
    Local { client_id: String, epochs: usize },
    Central { epochs: usize },
    Federated { plan: FederationPlan },
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Local { client_id, .. } => format!("local-{client_id}"),
            Variant::Central { .. } => "central".into(),
            Variant::Federated { plan } => plan.label(),
        }
    }
}

/// Trains a variant on the given client splits with one master seed.
pub fn train_variant(
    variant: &Variant,
    clients: &[ClientData],
    settings: &ModelSettings,
    master_seed: u64,
) -> Result<(TrainedModel, Vec<RoundLog>)> {
    match variant {
        Variant::Local { client_id, epochs } => {
            let client = clients
                .iter()
                .find(|c| &c.client_id == client_id)
                .ok_or_else(|| Error::Precondition(format!("unknown client {client_id}")))?;
            Ok((run_local(client, *epochs, settings, master_seed)?, vec![]))
        }
        Variant::Central { epochs } => Ok((
            run_centralized(clients, *epochs, settings, master_seed)?,
            vec![],
        )),
        Variant::Federated { plan } => {
            let plan = FederationPlan {
                master_seed,
                ..plan.clone()
            };
            let run = run_federated(&plan, clients, None)?;
            Ok((run.model, run.logs))
        }
    }
}

/// Re-partitions each client's train+validation pool into `k` folds.
pub fn fold_clients(
    clients: &[ClientData],
    k: usize,
    fold: usize,
    master_seed: u64,
) -> Result<Vec<ClientData>> {
    clients
        .iter()
        .map(|c| {
            let pool: Vec<&SyntheticCase> =
                c.split.train.iter().chain(&c.split.validation).collect();
            let folds = kfold(
                pool.len(),
                k,
                derive_seed(master_seed, &format!("kfold-{}", c.client_id), 0),
            )?;
            let f = folds.get(fold).ok_or(Error::BadK { k, n: pool.len() })?;
            Ok(ClientData {
                client_id: c.client_id.clone(),
                split: ClientSplit {
                    train: f.train.iter().map(|&i| pool[i].clone()).collect(),
                    validation: f.validation.iter().map(|&i| pool[i].clone()).collect(),
                    local_test: c.split.local_test.clone(),
                },
            })
        })
        .collect()
}

/// One member per fold, each trained with its own derived master seed.
pub fn train_kfold_ensemble(
    variant: &Variant,
    clients: &[ClientData],
    settings: &ModelSettings,
    k: usize,
    master_seed: u64,
) -> Result<(TrainedModel, Vec<Vec<RoundLog>>)> {
    if k < 2 {
        return Err(Error::BadK {
            k,
            n: clients.len(),
        });
    }
    let results = (0..k)
        .into_par_iter()
        .map(|fold| {
            let fold_data = fold_clients(clients, k, fold, master_seed)?;
            train_variant(
                variant,
                &fold_data,
                settings,
                derive_seed(master_seed, "fold", fold as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut members = Vec::with_capacity(k);
    let mut logs = Vec::with_capacity(k);
    let mut seeds = Vec::with_capacity(k);
    for (fold, (model, log)) in results.into_iter().enumerate() {
        seeds.push(derive_seed(master_seed, "fold", fold as u64));
        members.extend(model.members);
        logs.push(log);
    }
    Ok((
        TrainedModel {
            task: settings.task,
            members,
            provenance: Provenance {
                variant: variant.label(),
                plan: match variant {
                    Variant::Federated { plan } => Some(plan.clone()),
                    _ => None,
                },
                epochs: match variant {
                    Variant::Local { epochs, .. } | Variant::Central { epochs } => Some(*epochs),
                    Variant::Federated { .. } => None,
                },
                fold_ids: (0..k).collect(),
                seeds,
            },
        },
        logs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LossKind;
    use crate::synthdata::{
        default_segmentation_profiles, generate_client_dataset, split, SplitSpec,
    };

    fn tiny_clients(n_clients: usize, n_cases: usize) -> Vec<ClientData> {
        default_segmentation_profiles(0.25)
            .into_iter()
            .take(n_clients)
            .map(|mut p| {
                p.n_cases = n_cases;
                p.image_size = (16, 16);
                let data = generate_client_dataset(&p, 3).unwrap();
                ClientData {
                    client_id: p.client_id.clone(),
                    split: split(&data, SplitSpec::new(2), 3).unwrap(),
                }
            })
            .collect()
    }

    fn settings() -> ModelSettings {
        ModelSettings {
            task: Task::Segmentation,
            hidden: 4,
            train: TrainConfig {
                batch_size: 64,
                loss: LossKind::BceSoftDice,
                ..Default::default()
            },
        }
    }

    fn plan(clients: &[ClientData], e: usize, r: usize, strategy: Strategy) -> FederationPlan {
        FederationPlan {
            model: settings(),
            local_epochs: e,
            rounds: r,
            server: ServerConfig::defaults_for(strategy),
            client_ids: clients.iter().map(|c| c.client_id.clone()).collect(),
            master_seed: 11,
            eval_every: 1,
        }
    }

    #[test]
    fn single_client_federation_is_local_training() {
        let clients = tiny_clients(1, 10);
        for strategy in [Strategy::FedAvg, Strategy::FedMedian] {
            let run = run_federated(&plan(&clients, 1, 3, strategy), &clients, None).unwrap();
            let local = run_local(&clients[0], 3, &settings(), 11).unwrap();
            assert_eq!(run.model.members[0].weights, local.members[0].weights);
        }
        let central = run_centralized(&clients, 3, &settings(), 11).unwrap();
        let local = run_local(&clients[0], 3, &settings(), 11).unwrap();
        assert_eq!(central.members, local.members);
    }

    #[test]
    fn one_round_equals_train_local() {
        let clients = tiny_clients(1, 8);
        let p = plan(&clients, 1, 1, Strategy::FedAvg);
        let run = run_federated(&p, &clients, None).unwrap();
        let stats = &run.model.members[0].stats;
        let ex = prepare_examples(&clients[0].split.train, stats, Task::Segmentation).unwrap();
        let init = init_weights(p.model.layout(), derive_seed(11, "init", 0));
        let cfg = TrainConfig {
            epochs: 1,
            seed: derive_seed(11, &clients[0].client_id, 0),
            ..p.model.train
        };
        assert_eq!(
            train_local(&init, &ex, &cfg).unwrap().weights,
            run.model.members[0].weights
        );
    }

    #[test]
    fn schedule_accounting_and_determinism() {
        let clients = tiny_clients(3, 8);
        let p = plan(&clients, 2, 3, Strategy::FedAdam);
        let v = ValidationSet::combined(&clients, LesionParams::default());
        let a = run_federated(&p, &clients, Some(&v)).unwrap();
        assert_eq!(a.logs.len(), 3);
        assert!(a
            .logs
            .iter()
            .all(|l| l.local_epochs_run == 2 * 3 && l.client_losses.len() == 3));
        assert!(a.logs.iter().all(|l| l.validation_metric.is_some()));
        let b = run_federated(&p, &clients, Some(&v)).unwrap();
        let sums = |r: &FederatedRun| {
            r.logs
                .iter()
                .map(|l| l.checksum.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(sums(&a), sums(&b));

        // serial and pooled execution agree
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let c = pool
            .install(|| run_federated(&p, &clients, Some(&v)))
            .unwrap();
        assert_eq!(sums(&a), sums(&c));
    }

    #[test]
    fn federation_rejects_bad_inputs() {
        let mut clients = tiny_clients(2, 8);
        let p = plan(&clients, 0, 3, Strategy::FedAvg);
        assert!(matches!(
            run_federated(&p, &clients, None),
            Err(Error::Precondition(_))
        ));
        clients[1].split.train.clear();
        let p = plan(&clients, 1, 1, Strategy::FedAvg);
        assert!(matches!(
            run_federated(&p, &clients, None),
            Err(Error::EmptyClient(_))
        ));
    }

    #[test]
    fn centralized_pools_every_train_split() {
        let clients = tiny_clients(3, 8);
        let total: usize = clients.iter().map(|c| c.split.train.len()).sum();
        let refs: Vec<&ClientData> = clients.iter().collect();
        let stats = pooled_stats(&refs, 7).unwrap();
        let mut m = FeatureMoments::new(7);
        for c in &clients {
            m.merge(&FeatureMoments::from_cases(&c.split.train, 7).unwrap());
        }
        assert_eq!(m.count as usize, total * 16 * 16);
        assert_eq!(m.to_stats().unwrap(), stats);
        assert!(run_centralized(&[], 1, &settings(), 0).is_err());
    }

    #[test]
    fn grid_arms_share_the_budget() {
        let clients = tiny_clients(2, 8);
        let v = ValidationSet::combined(&clients, LesionParams::default());
        let base = plan(&clients, 1, 1, Strategy::FedAvg);
        let g = grid_search_er(6, &[1, 3, 2], &base, &clients, &v).unwrap();
        let shape: Vec<(usize, usize)> =
            g.rows.iter().map(|r| (r.local_epochs, r.rounds)).collect();
        assert_eq!(shape, vec![(1, 6), (2, 3), (3, 2)]);
        assert!(g
            .rows
            .iter()
            .all(|r| r.local_epochs * r.rounds == 6 && r.metric.is_finite()));
        let best = g
            .rows
            .iter()
            .map(|r| r.metric)
            .fold(f64::NEG_INFINITY, f64::max);
        let first_best = g.rows.iter().find(|r| r.metric == best).unwrap();
        assert_eq!(g.best.local_epochs, first_best.local_epochs);
        assert!(matches!(
            grid_search_er(6, &[4], &base, &clients, &v),
            Err(Error::NonDivisibleBudget {
                budget: 6,
                epochs: 4
            })
        ));
    }

    #[test]
    fn sweep_runs_each_strategy() {
        let clients = tiny_clients(1, 8);
        let v = ValidationSet::combined(&clients, LesionParams::default());
        let base = plan(&clients, 1, 2, Strategy::FedAvg);
        let s = sweep_strategies(&Strategy::ALL, &base, &clients, &v).unwrap();
        assert_eq!(s.rows.len(), 5);
        assert!(s.rows.iter().all(|r| r.metric.is_finite()));
        let avg = s
            .rows
            .iter()
            .find(|r| r.strategy == Strategy::FedAvg)
            .unwrap();
        let med = s
            .rows
            .iter()
            .find(|r| r.strategy == Strategy::FedMedian)
            .unwrap();
        assert_eq!(avg.checksum, med.checksum);
        assert!(sweep_strategies(&[Strategy::FedAvg], &base, &clients, &v).is_err());
    }

    #[test]
    fn kfold_ensemble_members() {
        let clients = tiny_clients(2, 12);
        let variant = Variant::Federated {
            plan: plan(&clients, 1, 2, Strategy::FedAvg),
        };
        let (model, logs) = train_kfold_ensemble(&variant, &clients, &settings(), 3, 5).unwrap();
        assert_eq!(model.members.len(), 3);
        assert_eq!(logs.len(), 3);
        let sums = model.checksums();
        assert!(sums[0] != sums[1] && sums[1] != sums[2]);
        assert!(matches!(
            train_kfold_ensemble(&variant, &clients, &settings(), 1, 5),
            Err(Error::BadK { .. })
        ));

        let one = model.member(0);
        let dup = TrainedModel {
            members: vec![one.members[0].clone(); 4],
            ..one.clone()
        };
        let case = &clients[0].split.local_test[0];
        let (a, b) = (one.predict(case).unwrap(), dup.predict(case).unwrap());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-15);
        }
    }
}
