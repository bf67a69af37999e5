//! A controlled ODE driven by a field served over TCP, compared with the local field.

use rectiflow::cli::remote::{serve_tcp, Double, RemoteConfig, RemoteFieldEndpoint};
use rectiflow::experiments::ProcessParams;
use rectiflow::simulate::{run_process, ProcessKind};

fn main() -> rectiflow::Result<()> {
    let addr = serve_tcp(Double::Analytic { mu: 10.0, dim: 2 }, "127.0.0.1:0")?;
    let remote = RemoteFieldEndpoint::handle(&RemoteConfig {
        prompt: Some("a photo of a cat".into()),
        ..RemoteConfig::new(format!("tcp:{addr}"))
    })?;
    let params = ProcessParams {
        kind: ProcessKind::FwdCtrlOde,
        dim: 2,
        particles: 4,
        steps: 50,
        ..ProcessParams::default()
    };
    let local = params.build()?;
    let served = params.build_with_field(Some(remote))?;
    let a = run_process(&local.spec, &local.init, local.seed)?;
    let b = run_process(&served.spec, &served.init, served.seed)?;
    for (x, y) in a.iter().zip(&b) {
        println!(
            "particle {}: local {:?}  remote {:?}  identical {}",
            x.particle_id,
            x.terminal().as_slice(),
            y.terminal().as_slice(),
            x == y
        );
    }
    Ok(())
}
