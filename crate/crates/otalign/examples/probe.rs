// temporary probe (not part of the deliverable)
use otalign::model::{InvarianceBall, SchattenOrder};
use otalign::synthetic::{generate_instance, matching_accuracy, run_noise_sweep, BenchMethod, SweepConfig};

fn main() {
    // Criterion-4 shape: 10 seeds, invariant-inf best-of-20 + emd, sigma 0.
    let ball = InvarianceBall::identity_feasible(SchattenOrder::Infinity, 3).unwrap();
    let t0 = std::time::Instant::now();
    let mut perfect = 0;
    let mut emd_below = 0;
    for seed in 0..10u64 {
        let mut cfg = SweepConfig::new(3, 100, ball);
        cfg.sigmas = vec![0.0];
        cfg.methods = vec![BenchMethod::InvariantOt(SchattenOrder::Infinity), BenchMethod::Emd];
        cfg.repetitions = 1;
        cfg.restarts = 20;
        cfg.seed = seed;
        let report = run_noise_sweep(&cfg).unwrap();
        let inv = report.aggregates.iter().find(|a| a.method == "invariant-inf").unwrap().mean_accuracy;
        let emd = report.aggregates.iter().find(|a| a.method == "emd").unwrap().mean_accuracy;
        if inv == 1.0 { perfect += 1; }
        if emd < 1.0 { emd_below += 1; }
        println!("seed {seed}: invariant={inv:.3} emd={emd:.3} ({:.1}s cum)", t0.elapsed().as_secs_f64());
    }
    println!("perfect {perfect}/10, emd<1 on {emd_below}/10, total {:.1}s", t0.elapsed().as_secs_f64());
    let _ = (generate_instance(3, 10, &ball, 0.0, 0).unwrap(), matching_accuracy(&[0], &[0]));
}
