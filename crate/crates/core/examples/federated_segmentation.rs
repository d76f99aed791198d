// Federation vs isolation vs pooling on the four-client segmentation setup.
//
// `cargo run --release --example federated_segmentation` trains the full
// 100-round comparison; `-- --quick` shrinks it to a smoke run.

use fedsim::aggregate::{ServerConfig, Strategy};
use fedsim::metrics::evaluate_segmentation;
use fedsim::model::TrainConfig;
use fedsim::orchestrate::{
    run_centralized, run_federated, run_local, ClientData, FederationPlan, ModelSettings,
};
use fedsim::synthdata::{
    default_segmentation_independent, default_segmentation_profiles, generate_client_dataset,
    generate_independent_test, split, SplitSpec, Task,
};

pub fn run(quick: bool) -> fedsim::Result<()> {
    let seed = 1;
    let rounds = if quick { 3 } else { 100 };
    let mut profiles = default_segmentation_profiles(0.25);
    let mut independent = default_segmentation_independent();
    if quick {
        for p in profiles.iter_mut().chain([&mut independent]) {
            p.n_cases = 20;
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

    let settings = ModelSettings {
        task: Task::Segmentation,
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
    let fl = run_federated(&plan, &clients, None)?;
    let fl_dice = evaluate_segmentation(&fl.model, &test, 0.5)?.mean_dice;
    let cl = run_centralized(&clients, rounds, &settings, seed)?;
    let cl_dice = evaluate_segmentation(&cl, &test, 0.5)?.mean_dice;

    println!("independent test, mean dice");
    let mut locals = Vec::new();
    for c in &clients {
        let m = run_local(c, rounds, &settings, seed)?;
        let d = evaluate_segmentation(&m, &test, 0.5)?.mean_dice;
        println!("  local {:<4} {d:.4}", c.client_id);
        locals.push(d);
    }
    let mean_local = locals.iter().sum::<f64>() / locals.len() as f64;
    println!("  locals mean {mean_local:.4}");
    println!("  federated   {fl_dice:.4}  (E=1, R={rounds}, fedavg)");
    println!("  centralized {cl_dice:.4}");
    let last = fl.logs.last().expect("at least one round");
    println!(
        "final round checksum {}  losses {:?}",
        last.checksum, last.client_losses
    );
    Ok(())
}

pub fn run_example() -> fedsim::Result<()> {
    run(true)
}

#[allow(dead_code)]
fn main() -> fedsim::Result<()> {
    run(std::env::args().any(|a| a == "--quick"))
}
