// Lesion detection on three bpMRI-like clients: locals vs federation, then a
// sweep over all five server strategies.

use fedsim::aggregate::{ServerConfig, Strategy};
use fedsim::metrics::{evaluate_detection, LesionParams};
use fedsim::model::TrainConfig;
use fedsim::orchestrate::{
    run_federated, run_local, sweep_strategies, ClientData, FederationPlan, ModelSettings,
    ValidationSet,
};
use fedsim::synthdata::{
    default_detection_independent, default_detection_profiles, generate_client_dataset,
    generate_independent_test, split, SplitSpec, Task,
};

pub fn run(quick: bool) -> fedsim::Result<()> {
    let seed = 1;
    let rounds = if quick { 3 } else { 100 };
    let mut profiles = default_detection_profiles(0.2);
    let mut independent = default_detection_independent();
    if quick {
        for p in profiles.iter_mut().chain([&mut independent]) {
            p.n_cases = 30;
            p.image_size = (32, 32);
        }
    }
    let clients = profiles
        .iter()
        .map(|p| {
            let cases = generate_client_dataset(p, seed)?;
            Ok(ClientData {
                client_id: p.client_id.clone(),
                split: split(&cases, SplitSpec::new(10), seed)?,
            })
        })
        .collect::<fedsim::Result<Vec<_>>>()?;
    let test = generate_independent_test(&independent, seed, &[])?;
    let lesion = LesionParams::default();
    let settings = ModelSettings {
        task: Task::Detection,
        hidden: 16,
        train: TrainConfig::default(),
    };
    let plan = FederationPlan {
        model: settings,
        local_epochs: 1,
        rounds,
        server: ServerConfig::defaults_for(Strategy::FedAvg),
        client_ids: clients.iter().map(|c| c.client_id.clone()).collect(),
        master_seed: seed,
        eval_every: 0,
    };

    println!("independent test        auc     ap  picai");
    for c in &clients {
        let m = run_local(c, rounds, &settings, seed)?;
        let r = evaluate_detection(&m, &test, &lesion)?;
        println!(
            "  local {:<14} {:.3}  {:.3}  {:.3}",
            c.client_id, r.auc, r.ap, r.picai_score
        );
    }
    let fl = run_federated(&plan, &clients, None)?;
    let r = evaluate_detection(&fl.model, &test, &lesion)?;
    println!(
        "  federated            {:.3}  {:.3}  {:.3}",
        r.auc, r.ap, r.picai_score
    );

    let validation = ValidationSet::combined(&clients, lesion);
    let sweep = sweep_strategies(&Strategy::ALL, &plan, &clients, &validation)?;
    println!("\nstrategy sweep (validation picai)");
    for row in &sweep.rows {
        let mark = if row.strategy == sweep.best.server.strategy {
            "  <- selected"
        } else {
            ""
        };
        println!("  {:<11} {:.4}{mark}", row.strategy, row.metric);
    }
    Ok(())
}

pub fn run_example() -> fedsim::Result<()> {
    run(true)
}

#[allow(dead_code)]
fn main() -> fedsim::Result<()> {
    run(std::env::args().any(|a| a == "--quick"))
}
