// Fixed-budget search over local epochs E and rounds R = budget / E.

use fedsim::aggregate::{ServerConfig, Strategy};
use fedsim::metrics::LesionParams;
use fedsim::model::TrainConfig;
use fedsim::orchestrate::{
    grid_search_er, ClientData, FederationPlan, ModelSettings, ValidationSet,
};
use fedsim::synthdata::{
    default_segmentation_profiles, generate_client_dataset, split, SplitSpec, Task,
};

pub fn run(quick: bool) -> fedsim::Result<()> {
    let seed = 2;
    let (budget, candidates) = if quick {
        (4, vec![1, 2, 4])
    } else {
        (120, vec![1, 4, 12])
    };
    let clients = default_segmentation_profiles(0.25)
        .into_iter()
        .map(|mut p| {
            if quick {
                p.n_cases = 20;
                p.image_size = (32, 32);
            }
            let cases = generate_client_dataset(&p, seed)?;
            Ok(ClientData {
                client_id: p.client_id.clone(),
                split: split(&cases, SplitSpec::new(10), seed)?,
            })
        })
        .collect::<fedsim::Result<Vec<_>>>()?;
    let base = FederationPlan {
        model: ModelSettings {
            task: Task::Segmentation,
            hidden: 16,
            train: TrainConfig::default(),
        },
        local_epochs: 1,
        rounds: 1,
        server: ServerConfig::defaults_for(Strategy::FedAvg),
        client_ids: clients.iter().map(|c| c.client_id.clone()).collect(),
        master_seed: seed,
        eval_every: 0,
    };
    let validation = ValidationSet::combined(&clients, LesionParams::default());
    let report = grid_search_er(budget, &candidates, &base, &clients, &validation)?;
    println!("budget E x R = {budget}");
    for r in &report.rows {
        let mark = if r.local_epochs == report.best.local_epochs {
            "  <- selected"
        } else {
            ""
        };
        println!(
            "  E={:<3} R={:<4} validation dice {:.4}{mark}",
            r.local_epochs, r.rounds, r.metric
        );
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
