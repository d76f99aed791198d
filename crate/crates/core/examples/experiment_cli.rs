// The experiment driver end to end on the small segmentation config.

use std::path::Path;

pub fn run_example() -> fedsim::Result<()> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke-segmentation.json");
    let out = tempfile::tempdir().map_err(|e| fedsim::Error::Precondition(e.to_string()))?;
    let steps: [&[&str]; 6] = [
        &["gen"],
        &["run", "all"],
        &["grid"],
        &["eval"],
        &["compare"],
        &["verify"],
    ];
    for step in steps {
        println!("$ fedsim {}", step.join(" "));
        let mut args = vec!["fedsim".to_string()];
        args.extend(step.iter().map(|s| s.to_string()));
        args.extend(["--config".into(), config.display().to_string()]);
        args.extend(["--out".into(), out.path().display().to_string()]);
        let code = fedsim::expcli::run(args);
        if code != 0 {
            return Err(fedsim::Error::Precondition(format!(
                "{step:?} exited with {code}"
            )));
        }
    }
    let table = std::fs::read_to_string(out.path().join("smoke-segmentation/eval/table1.csv"))
        .map_err(|e| fedsim::Error::Precondition(e.to_string()))?;
    println!("\n{table}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedsim::Result<()> {
    run_example()
}
