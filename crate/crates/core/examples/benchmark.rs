//! Runs the synthetic long-tailed base-to-new benchmark and prints each
//! method's base / new / harmonic accuracy per seed.
//!
//! cargo run --release --example benchmark -- [seeds] [tau_v] [latent_rank]

use ltadapt::eval::{compare_with_baselines, prepare_benchmark, run_ablation, AblationSuite, BenchmarkSpec, EvalReport, LabelSpaceMode};
use ltadapt::training::TrainConfig;

fn line(name: &str, r: &EvalReport) {
    println!(
        "  {name:<20} base {:.4}  new {:.4}  H {:.4}",
        r.base_acc.unwrap_or(0.0),
        r.new_acc.unwrap_or(0.0),
        r.harmonic.unwrap_or(0.0)
    );
}

fn main() -> ltadapt::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let tau_v: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(TrainConfig::default().tau_v);
    let rank: Option<usize> = args.get(3).and_then(|s| s.parse().ok());
    let ablate = std::env::var("ABLATE").is_ok();
    let spec = BenchmarkSpec { latent_rank: rank, ..BenchmarkSpec::default() };
    for seed in 0..seeds {
        let data = prepare_benchmark(&spec, seed)?;
        let cfg = TrainConfig { tau_v, seed, ..TrainConfig::default() };
        let t = std::time::Instant::now();
        let cmp = compare_with_baselines(&data, &cfg, LabelSpaceMode::Separate)?;
        println!("seed {seed} ({:.2}s)", t.elapsed().as_secs_f64());
        line("trained", &cmp.trained);
        line("zero-shot", &cmp.zero_shot);
        line("visual prototypes", &cmp.visual_prototypes);
        if ablate {
            for suite in AblationSuite::ALL {
                let r = run_ablation(suite, &data.train, &data.text, &data.test, &data.split, &cfg, LabelSpaceMode::Separate)?;
                line(suite.name(), &r.ablated);
            }
        }
    }
    Ok(())
}
