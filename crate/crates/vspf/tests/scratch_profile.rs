// Temporary diagnostic harness; removed before finalization.

use std::time::Instant;
use vspf::bench::{self, PhantomSpec};
use vspf::registration::{register, RegistrationConfig, SamplerKind};

#[test]
#[ignore]
fn profile_single_runs() {
    let spec = PhantomSpec::default();
    let pair = bench::make_phantom_pair(&spec, 7).unwrap();
    for (kind, rate) in [
        (SamplerKind::Urs, 0.001),
        (SamplerKind::Urs, 0.01),
        (SamplerKind::Urs, 0.05),
        (SamplerKind::VspfHeuristic, 0.001),
        (SamplerKind::VspfHeuristic, 0.01),
        (SamplerKind::VspfHeuristic, 0.05),
    ] {
        let cfg = RegistrationConfig {
            sampler_kind: kind,
            sampling_rate: rate,
            seed: 5,
            ..RegistrationConfig::default()
        };
        let t = Instant::now();
        let r = register(&pair.reference, &pair.moving, &cfg).unwrap();
        println!(
            "{:?} rate {rate}: {:.2}s, iters {:?}",
            kind,
            t.elapsed().as_secs_f64(),
            r.per_scale.iter().map(|s| s.iterations_run).collect::<Vec<_>>()
        );
    }
}
