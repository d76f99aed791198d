// Flat parameter vectors: combination, median, checksums and the FSPV format.

use fedsim::paramcore::{checksum, coordinate_median, linear_combine, LayoutId, ParamVector};

pub fn run_example() -> fedsim::Result<()> {
    let layout = LayoutId::from_dims("toy", &[3]);
    let a = ParamVector::new(layout, vec![1.0, 2.0, 3.0])?;
    let b = ParamVector::new(layout, vec![3.0, 6.0, 9.0])?;
    let c = ParamVector::new(layout, vec![100.0, -50.0, 3.0])?;

    // sample-count weighted mean of two clients (1 and 3 cases)
    let avg = linear_combine(&[(0.25, &a), (0.75, &b)])?;
    println!("weighted mean  {:?}", avg.values());

    let med = coordinate_median(&[&a, &b, &c])?;
    println!("median         {:?}", med.values());

    let dir = tempfile::tempdir().map_err(|e| fedsim::Error::Precondition(e.to_string()))?;
    let path = dir.path().join("avg.fspv");
    avg.write_fspv(&path)?;
    let back = ParamVector::read_fspv(&path)?;
    assert_eq!(checksum(&back), checksum(&avg));
    println!(
        "checksum       {:016x} ({} bytes on disk)",
        checksum(&avg),
        avg.to_bytes().len()
    );

    match ParamVector::new(layout, vec![f64::NAN]) {
        Err(e) => println!("rejected       {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedsim::Result<()> {
    run_example()
}
