//! Named guidance windows and the reverse controlled ODE they drive.

use rectiflow::control::{preset_names, schedule_preset};
use rectiflow::experiments::{run_inversion_roundtrip, InversionConfig, InversionMethod};

fn main() -> rectiflow::Result<()> {
    for name in preset_names() {
        let s = schedule_preset(name)?;
        let cfg = InversionConfig {
            eta_schedule: Some(s),
            ..InversionConfig::method(InversionMethod::CtrlOde, 0.5, s.strength)
        };
        let r = run_inversion_roundtrip(&cfg)?;
        println!(
            "{name:<16} eta {:.2} on [{:.3}, {:.3}]  round-trip L2 {:.4}",
            s.strength, s.start, s.stop, r.l2
        );
    }
    Ok(())
}
