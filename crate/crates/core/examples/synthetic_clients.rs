// Heterogeneous synthetic clients: profiles, splits, folds and persistence.

use fedsim::synthdata::{
    default_detection_profiles, default_segmentation_profiles, generate_client_dataset, kfold,
    load_case, save_case, split, SplitSpec,
};

pub fn run_example() -> fedsim::Result<()> {
    let seed = 7;
    println!("client  cases  gland px  positive  mean intensity");
    for mut profile in default_segmentation_profiles(0.25)
        .into_iter()
        .chain(default_detection_profiles(0.2))
    {
        profile.n_cases = 24;
        let cases = generate_client_dataset(&profile, seed)?;
        let gland: f64 = cases
            .iter()
            .map(|c| c.gland_mask.count() as f64)
            .sum::<f64>()
            / cases.len() as f64;
        let positive = cases.iter().filter(|c| c.is_positive()).count();
        let mean: f64 = cases
            .iter()
            .map(|c| c.channels[0].as_slice().iter().sum::<f64>() / 4096.0)
            .sum::<f64>()
            / cases.len() as f64;
        println!(
            "{:<7} {:>5}  {gland:>8.1}  {positive:>8}  {mean:>14.3}",
            profile.client_id,
            cases.len(),
        );
    }

    let mut profile = default_segmentation_profiles(0.25).remove(0);
    profile.n_cases = 30;
    let cases = generate_client_dataset(&profile, seed)?;
    let parts = split(&cases, SplitSpec::new(10), seed)?;
    println!(
        "\nsplit {}: {} train / {} validation / {} local test",
        profile.client_id,
        parts.train.len(),
        parts.validation.len(),
        parts.local_test.len()
    );
    for (i, fold) in kfold(20, 5, seed)?.iter().enumerate() {
        println!("fold {i}: validation {:?}", fold.validation);
    }

    let dir = tempfile::tempdir().map_err(|e| fedsim::Error::Precondition(e.to_string()))?;
    save_case(dir.path(), &cases[0])?;
    assert_eq!(load_case(dir.path(), &cases[0].case_id)?, cases[0]);
    println!("round-tripped {}", cases[0].case_id);
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedsim::Result<()> {
    run_example()
}
