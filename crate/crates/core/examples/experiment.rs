//! Run a small Example 4 configuration in memory and print its tables.

use fgs::experiment::{execute, ExperimentConfig, RunOptions};

const CONFIG: &str = r#"
experiment = "example4"
seed = 21

[physics]
epsilons = [0.0256, 0.0016]

[sampling]
samples = [100, 400]
repetitions = 10
reference_samples = 30000

[output]
fields = false
"#;

fn main() -> fgs::Result<()> {
    let cfg = ExperimentConfig::parse(CONFIG)?;
    let out = execute(&cfg, CONFIG, &RunOptions::default())?;
    for name in ["sampling_error_ES.csv", "slopes.csv"] {
        println!("== {name}");
        print!("{}", String::from_utf8_lossy(out.bundle.get(name).unwrap()));
    }
    // `out.bundle.write_atomic(path)` puts the same files on disk
    Ok(())
}
