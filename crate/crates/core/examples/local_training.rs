// Local SGD on one client: loss curve and Dice on its own test split.

use fedsim::metrics::evaluate_segmentation;
use fedsim::model::TrainConfig;
use fedsim::orchestrate::{run_local, ClientData, ModelSettings};
use fedsim::synthdata::{
    default_segmentation_profiles, generate_client_dataset, split, SplitSpec, Task,
};

pub fn run(epochs: usize) -> fedsim::Result<()> {
    let mut profile = default_segmentation_profiles(0.25).remove(2);
    profile.n_cases = 40;
    let cases = generate_client_dataset(&profile, 3)?;
    let client = ClientData {
        client_id: profile.client_id.clone(),
        split: split(&cases, SplitSpec::new(10), 3)?,
    };
    let settings = ModelSettings {
        task: Task::Segmentation,
        hidden: 16,
        train: TrainConfig::default(),
    };
    for e in [1, epochs / 2, epochs] {
        let model = run_local(&client, e.max(1), &settings, 3)?;
        let report = evaluate_segmentation(&model, &client.split.local_test, 0.5)?;
        println!(
            "epochs {:>3}: dice {:.3}  hd95 {:>6.2} mm  checksum {}",
            e.max(1),
            report.mean_dice,
            report.mean_hd95.unwrap_or(f64::NAN),
            model.checksums()[0]
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedsim::Result<()> {
    let quick = std::env::args().any(|a| a == "--quick");
    run(if quick { 4 } else { 40 })
}
