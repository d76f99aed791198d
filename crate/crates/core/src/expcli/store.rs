use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint};
use crate::orchestrate::{
    fold_clients, ClientData, ModelMember, Provenance, RoundLog, TrainedModel,
};
use crate::synthdata::{
    case_files, generate_client_dataset, generate_independent_test, load_case, save_case, split,
    ClientSplit, SyntheticCase,
};

pub const MANIFEST: &str = "manifest.json";
pub const DATA_DIR: &str = "data";
pub const INDEPENDENT: &str = "independent";
const SPLITS: [&str; 3] = ["train", "validation", "local_test"];

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Written next to every group of outputs; the only place timestamps appear.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub tool_version: String,
    pub created_unix: u64,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    /// Paths relative to the manifest's directory, mapped to SHA-256 digests.
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub details: serde_json::Value,
}

pub fn write_manifest(
    dir: &Path,
    kind: &str,
    cfg: &ExperimentConfig,
    files: &[PathBuf],
    details: serde_json::Value,
) -> Result<Manifest> {
    let hashed = files
        .par_iter()
        .map(|f| {
            let rel = f.strip_prefix(dir).unwrap_or(f);
            Ok((rel.to_string_lossy().replace('\\', "/"), sha256_file(f)?))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let manifest = Manifest {
        kind: kind.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        master_seed: cfg.master_seed,
        config: cfg.clone(),
        files: hashed,
        details,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join(MANIFEST))
}

/// Checks every hash listed in the manifest; returns mismatch descriptions.
pub fn check_manifest(dir: &Path) -> Result<Vec<String>> {
    let manifest = read_manifest(dir)?;
    let mut problems = Vec::new();
    for (rel, want) in &manifest.files {
        let path = dir.join(rel);
        match sha256_file(&path) {
            Ok(got) if &got == want => {}
            Ok(_) => problems.push(format!("{}: hash mismatch", path.display())),
            Err(_) => problems.push(format!("{}: missing", path.display())),
        }
    }
    Ok(problems)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEntry {
    pub client_id: String,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub local_test: Vec<String>,
    /// Validation case ids of each fold over train + validation (empty when k = 1).
    pub folds: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub clients: Vec<ClientEntry>,
    pub independent: Vec<String>,
}

pub fn experiment_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(&cfg.experiment)
}

fn write_cases(dir: &Path, cases: &[SyntheticCase]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let files = cases
        .par_iter()
        .map(|c| {
            save_case(dir, c)?;
            Ok(case_files(&c.case_id)
                .iter()
                .map(|f| dir.join(f))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(files.into_iter().flatten().collect())
}

fn ids(cases: &[SyntheticCase]) -> Vec<String> {
    cases.iter().map(|c| c.case_id.clone()).collect()
}

/// Generates, splits and writes every client dataset plus the independent test set.
pub fn materialize(cfg: &ExperimentConfig, exp_dir: &Path) -> Result<DatasetIndex> {
    let data_dir = exp_dir.join(DATA_DIR);
    if data_dir.exists() {
        fs::remove_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
    }
    let mut files = Vec::new();
    let mut clients = Vec::new();
    let mut training_ids = Vec::new();
    let mut profiles = cfg.clients.clone();
    profiles.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    for profile in &profiles {
        let cases = generate_client_dataset(profile, cfg.master_seed)?;
        let parts = split(&cases, cfg.split, cfg.master_seed)?;
        for (name, part) in SPLITS
            .iter()
            .zip([&parts.train, &parts.validation, &parts.local_test])
        {
            files.extend(write_cases(
                &data_dir.join(&profile.client_id).join(name),
                part,
            )?);
        }
        let data = ClientData {
            client_id: profile.client_id.clone(),
            split: parts.clone(),
        };
        let folds = if cfg.k_folds >= 2 {
            (0..cfg.k_folds)
                .map(|f| {
                    Ok(ids(&fold_clients(
                        std::slice::from_ref(&data),
                        cfg.k_folds,
                        f,
                        cfg.master_seed,
                    )?[0]
                        .split
                        .validation))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![]
        };
        training_ids.extend(ids(&cases));
        clients.push(ClientEntry {
            client_id: profile.client_id.clone(),
            train: ids(&parts.train),
            validation: ids(&parts.validation),
            local_test: ids(&parts.local_test),
            folds,
        });
    }
    let independent = generate_independent_test(
        &cfg.independent,
        cfg.master_seed,
        &training_ids.iter().map(String::as_str).collect::<Vec<_>>(),
    )?;
    files.extend(write_cases(&data_dir.join(INDEPENDENT), &independent)?);
    let index = DatasetIndex {
        clients,
        independent: ids(&independent),
    };
    let index_path = data_dir.join("index.json");
    write_json(&index_path, &index)?;
    files.push(index_path);
    write_manifest(&data_dir, "dataset", cfg, &files, serde_json::Value::Null)?;
    Ok(index)
}

fn load_cases(dir: &Path, ids: &[String]) -> Result<Vec<SyntheticCase>> {
    ids.par_iter().map(|id| load_case(dir, id)).collect()
}

/// Stored client splits in sorted client order.
pub fn load_clients(exp_dir: &Path) -> Result<Vec<ClientData>> {
    let data_dir = exp_dir.join(DATA_DIR);
    let index_path = data_dir.join("index.json");
    if !index_path.exists() {
        return Err(Error::Precondition(format!(
            "no datasets under {}; run `gen` first",
            data_dir.display()
        )));
    }
    let index: DatasetIndex = read_json(&index_path)?;
    index
        .clients
        .iter()
        .map(|c| {
            let base = data_dir.join(&c.client_id);
            Ok(ClientData {
                client_id: c.client_id.clone(),
                split: ClientSplit {
                    train: load_cases(&base.join("train"), &c.train)?,
                    validation: load_cases(&base.join("validation"), &c.validation)?,
                    local_test: load_cases(&base.join("local_test"), &c.local_test)?,
                },
            })
        })
        .collect()
}

pub fn load_independent(exp_dir: &Path) -> Result<Vec<SyntheticCase>> {
    let data_dir = exp_dir.join(DATA_DIR);
    let index: DatasetIndex = read_json(&data_dir.join("index.json"))?;
    load_cases(&data_dir.join(INDEPENDENT), &index.independent)
}

pub fn fold_dir(variant_dir: &Path, fold: usize) -> PathBuf {
    variant_dir.join(format!("fold-{fold}"))
}

/// Writes one checkpoint and its round logs per member.
pub fn save_model(
    cfg: &ExperimentConfig,
    variant_dir: &Path,
    model: &TrainedModel,
    logs: &[Vec<RoundLog>],
) -> Result<()> {
    if variant_dir.exists() {
        fs::remove_dir_all(variant_dir).map_err(|e| Error::io(variant_dir, e))?;
    }
    let mut all_files = Vec::new();
    for (i, member) in model.members.iter().enumerate() {
        let dir = fold_dir(variant_dir, i);
        create_dir(&dir)?;
        let stem = dir.join("model");
        let provenance = serde_json::json!({
            "variant": model.provenance.variant,
            "fold": model.provenance.fold_ids.get(i),
            "seed": model.provenance.seeds.get(i),
        });
        save_checkpoint(
            &stem,
            &member.weights,
            &member.stats,
            cfg.model.train.loss,
            provenance,
        )?;
        let rounds = dir.join("rounds.json");
        let member_logs = logs.get(i).cloned().unwrap_or_default();
        write_json(&rounds, &member_logs)?;
        let files = vec![
            stem.with_extension("fspv"),
            stem.with_extension("json"),
            rounds,
        ];
        let checksum = format!(
            "{:016x}",
            crate::paramcore::checksum(&member.weights.flatten())
        );
        let wall_ms: Vec<f64> = member_logs.iter().map(|l| l.wall_ms).collect();
        write_manifest(
            &dir,
            "fold",
            cfg,
            &files,
            serde_json::json!({ "checksum": checksum, "round_wall_ms": wall_ms }),
        )?;
        all_files.extend(files);
    }
    write_manifest(
        variant_dir,
        "run",
        cfg,
        &all_files,
        serde_json::json!({
            "variant": model.provenance.variant,
            "provenance": model.provenance,
            "members": model.members.len(),
            "checksums": model.checksums(),
        }),
    )?;
    Ok(())
}

pub fn load_model(cfg: &ExperimentConfig, variant_dir: &Path) -> Result<TrainedModel> {
    let manifest = read_manifest(variant_dir).map_err(|_| {
        Error::Precondition(format!(
            "no trained run at {}; run it first",
            variant_dir.display()
        ))
    })?;
    let provenance: Provenance = serde_json::from_value(manifest.details["provenance"].clone())
        .map_err(|e| Error::json(&variant_dir.join(MANIFEST), e))?;
    let n = manifest.details["members"].as_u64().unwrap_or(0) as usize;
    let members = (0..n)
        .map(|i| {
            let (weights, meta) = load_checkpoint(&fold_dir(variant_dir, i).join("model"))?;
            Ok(ModelMember {
                weights,
                stats: meta.stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainedModel {
        task: cfg.task,
        members,
        provenance,
    })
}

/// Names of trained variants (directories with a run manifest), sorted.
pub fn list_variants(exp_dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(exp_dir) {
        Ok(e) => e,
        Err(_) => return Ok(out),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(exp_dir, e))?;
        let dir = entry.path();
        if dir.join(MANIFEST).exists() {
            if let Ok(m) = read_manifest(&dir) {
                if m.kind == "run" {
                    out.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

/// All manifest directories below `root`, sorted.
pub fn manifest_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(MANIFEST).exists() {
            out.push(dir.clone());
        }
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.file_type().map_err(|e| Error::io(&dir, e))?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    out.sort();
    Ok(out)
}
