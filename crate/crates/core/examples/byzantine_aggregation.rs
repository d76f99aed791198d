// Server strategies: FedAvg vs FedMedian under corrupted clients, and FedOpt steps.

use fedsim::aggregate::{aggregate, AggregatorState, ClientUpdate, ServerConfig, Strategy};
use fedsim::paramcore::{LayoutId, ParamVector};
use rand::Rng;

pub fn run_example() -> fedsim::Result<()> {
    let layout = LayoutId::from_dims("demo", &[4]);
    let mut rng = fedsim::seeding::stream(42, "byzantine-demo", 0);
    let honest: Vec<ParamVector> = (0..5)
        .map(|_| {
            ParamVector::new(
                layout,
                (0..4).map(|_| 1.0 + rng.gen_range(-0.1..0.1)).collect(),
            )
        })
        .collect::<fedsim::Result<_>>()?;
    let mut updates: Vec<ClientUpdate> = honest
        .iter()
        .enumerate()
        .map(|(i, p)| ClientUpdate {
            client_id: format!("c{i}"),
            params: p.clone(),
            sample_count: 10,
        })
        .collect();
    for u in updates.iter_mut().take(2) {
        u.params = ParamVector::filled(layout, 4, 1e6);
    }

    let prev = ParamVector::zeros(layout, 4);
    for strategy in Strategy::ALL {
        let state = AggregatorState::new(ServerConfig::defaults_for(strategy), &prev);
        let (_, global) = aggregate(&state, &prev, &updates)?;
        println!(
            "{:<11} {:?}",
            strategy,
            global
                .values()
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>()
        );
    }

    // FedAdagrad on a stream of clean rounds: v only grows
    let mut state = AggregatorState::new(ServerConfig::defaults_for(Strategy::FedAdagrad), &prev);
    let mut global = prev;
    for round in 0..5 {
        let clean: Vec<ClientUpdate> = updates[2..].to_vec();
        let (next_state, next) = aggregate(&state, &global, &clean)?;
        println!(
            "round {round}: w0 {:.5}  v0 {:.3e}",
            next.values()[0],
            next_state.v.values()[0]
        );
        state = next_state;
        global = next;
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedsim::Result<()> {
    run_example()
}
