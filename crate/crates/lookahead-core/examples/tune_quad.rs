// scratch: tune kappa/alpha for the quadratic criterion
use lookahead_core::planner::*;
use ndarray::{array, Array1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let target = [0.3, -0.5, 0.8, 0.0, -0.2];
    for (kappa, alpha, sigma) in [(10.0, 0.7, 0.5), (30.0, 0.7, 0.5), (50.0, 0.7, 0.5), (50.0, 0.9, 0.5), (100.0, 0.9, 0.5), (30.0, 1.0, 0.5), (50.0, 1.0, 0.4)] {
        let mut cfg = PlannerConfig::default();
        cfg.horizon = 5; cfg.population = 100; cfg.iterations = 10;
        cfg.alpha = alpha; cfg.kappa = kappa; cfg.sigma_prior = sigma; cfg.beta = 0.0;
        let bounds = ActionBounds::new(array![-1.0], array![1.0]);
        let scorer = |seqs: &Population| {
            Array1::from_shape_fn(seqs.dim().0, |j| {
                -(0..5).map(|t| (seqs[[j, t, 0]] - target[t]).powi(2)).sum::<f64>()
            })
        };
        let mut worst = 0.0_f64;
        for seed in 0..10u64 {
            let prev = SequenceDistribution::fresh(5, 1, sigma, 1e-3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = optimize_with_scorer(&cfg, &bounds, &prev, scorer, &mut rng).unwrap();
            // reconstruct full mean: action[0] + shifted rows
            let mut errs = vec![(r.action[0] - target[0]).abs()];
            for t in 0..4 { errs.push((r.next_dist.mean[[t,0]] - target[t+1]).abs()); }
            worst = worst.max(errs.iter().cloned().fold(0.0, f64::max));
        }
        println!("kappa={kappa:6} alpha={alpha} sigma={sigma}: worst coord err over 10 seeds = {worst:.5}");
    }
}
