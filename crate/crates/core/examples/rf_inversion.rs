//! One inversion round trip per method, plus Euler convergence of the RF ODE.

use rectiflow::experiments::{run_inversion_roundtrip, InversionConfig, InversionMethod};

fn main() -> rectiflow::Result<()> {
    let runs = [
        (InversionMethod::RfOde, 0.0, 0.0),
        (InversionMethod::Ddim, 0.0, 0.0),
        (InversionMethod::CtrlOde, 0.5, 0.5),
        (InversionMethod::CtrlSde, 0.5, 0.5),
    ];
    for (method, gamma, eta) in runs {
        let r = run_inversion_roundtrip(&InversionConfig::method(method, gamma, eta))?;
        println!("{:<9} gamma {gamma:.1} eta {eta:.1}: L2 {:.4}  L1 {:.4}", method.name(), r.l2, r.l1);
    }

    let mut prev = None;
    for steps in [25, 50, 100, 200, 400] {
        let cfg = InversionConfig {
            n_steps: steps,
            ..InversionConfig::default()
        };
        let l2 = run_inversion_roundtrip(&cfg)?.l2;
        match prev {
            Some(p) => println!("N = {steps:>3}: L2 {l2:.5}  ratio {:.3}", p / l2),
            None => println!("N = {steps:>3}: L2 {l2:.5}"),
        }
        prev = Some(l2);
    }
    Ok(())
}
