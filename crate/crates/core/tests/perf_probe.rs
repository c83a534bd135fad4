//! Throughput probes for the trajectory kernels. Ignored by default; run
//! with `cargo test -p mdis-core --test perf_probe -- --ignored --nocapture`
//! to size Monte Carlo budgets on a new machine.

use std::time::Instant;

use mdis_core::experiment::{prepare, ExperimentSpec, ExampleId, Method};
use mdis_core::sampler::{EstimateOptions, MethodTag};

fn probe(spec: ExperimentSpec, n: u64, steps_per_traj: f64, label: &str) {
    let prepared = prepare(&spec).unwrap();
    let opts = EstimateOptions {
        n_samples: n,
        base_seed: 1,
        workers: 1,
        method_tag: MethodTag::Md,
    };
    let start = Instant::now();
    let out = prepared.estimate(&opts).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let ns_per_step = elapsed / (n as f64 * steps_per_traj) * 1e9;
    println!(
        "{label}: {elapsed:.2}s for {n} trajectories x {steps_per_traj:.0} steps \
         = {ns_per_step:.1} ns/step (theta_hat = {:.3e})",
        out.theta_hat
    );
}

#[test]
#[ignore]
fn throughput_example3() {
    let mut spec = ExperimentSpec::defaults(ExampleId::Three, Method::Md, 0.0625, 0.015);
    spec.base_seed = 1;
    probe(spec, 1000, 277_778.0, "example 3 md  (eps=0.0625)");
    let mut spec = ExperimentSpec::defaults(ExampleId::Three, Method::Nmc, 0.0625, 0.015);
    spec.base_seed = 1;
    probe(spec, 1000, 277_778.0, "example 3 nmc (eps=0.0625)");
}

#[test]
#[ignore]
fn throughput_example1() {
    let mut spec = ExperimentSpec::defaults(ExampleId::One, Method::Md, 0.5, 0.5);
    spec.base_seed = 1;
    probe(spec, 50_000, 2000.0, "example 1 md  (eps=0.5)");
    let mut spec = ExperimentSpec::defaults(ExampleId::One, Method::Nmc, 0.5, 0.5);
    spec.base_seed = 1;
    probe(spec, 50_000, 2000.0, "example 1 nmc (eps=0.5)");
}
