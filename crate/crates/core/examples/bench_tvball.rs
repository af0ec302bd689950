use noisy_ot_core::channels::Channel;
use noisy_ot_core::measures::{empirical_measure, ProbMeasure};
use noisy_ot_core::rng::SplitMix64;
use noisy_ot_core::rate::tv_ball_kl_min;
use std::time::Instant;

fn main() {
    let grid: Vec<f64> = (0..9).map(|i| i as f64).collect();
    let ch = Channel::gaussian_grid(&grid, &grid, 1.0).unwrap();
    let tri: Vec<f64> = (0..9).map(|i| (5.0 - (i as f64 - 4.0).abs()) / 25.0).collect();
    let p_true = ProbMeasure::new(tri).unwrap();
    let mut rng = SplitMix64::new(1);
    let rec = ch.sample_noisy(&p_true, 25, rng.next_u64()).unwrap();
    let emp = empirical_measure(&rec, 9).unwrap();
    let q = ch.convolve(&p_true).unwrap();
    let t0 = Instant::now();
    let mut acc = 0.0;
    for k in 0..10000 {
        let (_, v) = tv_ball_kl_min(q.weights(), emp.weights(), 0.05 + (k % 7) as f64 * 1e-12);
        acc += v;
    }
    println!("tv_ball x10000: {:.2} us each (acc {acc:.3})", t0.elapsed().as_secs_f64()*1e5/1000.0);
}
