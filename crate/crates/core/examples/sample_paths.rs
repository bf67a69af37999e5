//! Writes RF and DDIM-style sample paths as CSV and compares their straightness.

use std::fs::File;
use std::io::BufWriter;

use rectiflow::experiments::{export_paths, time_straightness, ProcessParams};
use rectiflow::simulate::ProcessKind;

fn main() -> rectiflow::Result<()> {
    let dir = std::env::temp_dir().join("rectiflow-paths");
    std::fs::create_dir_all(&dir)?;
    for (name, kind) in [("rf_ode", ProcessKind::FwdCtrlOde), ("ddim_ode", ProcessKind::OuFwdOde)] {
        let run = ProcessParams {
            kind,
            gamma: 0.0,
            particles: 8,
            ..ProcessParams::default()
        }
        .build()?;
        let path = dir.join(format!("{name}.csv"));
        let trajs = export_paths(&run.spec, &run.init, run.seed, &mut BufWriter::new(File::create(&path)?))?;
        let mean = trajs.iter().map(time_straightness).sum::<rectiflow::Result<f64>>()? / trajs.len() as f64;
        println!("{name:<9} mean time-straightness {mean:.4}  -> {}", path.display());
    }
    Ok(())
}
