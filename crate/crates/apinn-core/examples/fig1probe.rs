use apinn_core::advobj::{GanFamily, GanVariant};
use apinn_core::netmod::NetworkSpec;
use apinn_core::pdebench::ProblemName;
use apinn_core::rolltrain::{AdamParams, TrainConfig, TrainMode, Trainer};

fn main() {
    let seed: u64 = std::env::args().nth(1).unwrap().parse().unwrap();
    for (g, d) in [(100, 1), (10, 1), (1, 100), (1, 1000)] {
        let mut generator = NetworkSpec::new(2, vec![20, 20, 20]);
        generator.residual_links = true;
        let mut discriminator = NetworkSpec::new(1, vec![20, 20]);
        discriminator.residual_links = true;
        discriminator.spectral_norm = true;
        discriminator.sigmoid_output = true;
        let cfg = TrainConfig {
            problem: ProblemName::Laplace1,
            generator,
            discriminator,
            adversarial: GanVariant::new(GanFamily::Gan),
            grid_n: 12,
            jitter_seed: None,
            seed,
            outer_iterations: 1000,
            mode: TrainMode::FixedRatio { g, d },
            gen_adam: AdamParams::with_lr(0.012),
            disc_adam: AdamParams::with_lr(0.088),
            validation_resolution: 12,
            sn_train_iters: 1,
        };
        let t0 = std::time::Instant::now();
        let mut tr = Trainer::new(cfg).unwrap();
        tr.run();
        let last = tr.history.records.last().unwrap();
        println!(
            "seed {seed} {g}:{d}: val={:.3e} train={:.3e} E={:.3e} sat_last={} aborted={} [{:.0}s]",
            last.validation_mse.unwrap(),
            last.train_mse.unwrap(),
            last.energy,
            last.saturation_count,
            tr.history.aborted,
            t0.elapsed().as_secs_f64()
        );
    }
}
