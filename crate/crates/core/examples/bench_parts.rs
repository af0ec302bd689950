use noisy_ot_core::channels::Channel;
use noisy_ot_core::decisions::*;
use noisy_ot_core::matrix::Matrix;
use noisy_ot_core::measures::{empirical_measure, ProbMeasure};
use noisy_ot_core::rng::SplitMix64;
use noisy_ot_core::rate::smoothed_rate;
use std::time::Instant;

fn main() {
    let grid: Vec<f64> = (0..9).map(|i| i as f64).collect();
    let ch = Channel::gaussian_grid(&grid, &grid, 1.0).unwrap();
    let loss_rows: Vec<Vec<f64>> = (0..9)
        .map(|z| {
            (0..9)
                .map(|xi| 2.0 * (xi as f64 - z as f64).max(0.0) + (z as f64 - xi as f64).max(0.0))
                .collect()
        })
        .collect();
    let prob = DecisionProblem::new(Matrix::from_rows(&loss_rows).unwrap(), None, 1e-6).unwrap();
    let tri: Vec<f64> = (0..9).map(|i| (5.0 - (i as f64 - 4.0).abs()) / 25.0).collect();
    let p_true = ProbMeasure::new(tri).unwrap();
    let mut rng = SplitMix64::new(1);
    let mut emps = Vec::new();
    for k in 0..100 {
        let rec = ch.sample_noisy(&p_true, 25, rng.next_u64() ^ k).unwrap();
        emps.push(empirical_measure(&rec, 9).unwrap());
    }
    // (a) feasibility pre-check
    let t0 = Instant::now();
    let mut nf = 0;
    for emp in &emps {
        let (kl, _) = ambiguity_min_divergence(emp, &ch, 0.05).unwrap();
        if kl > 0.05 { nf += 1; }
    }
    println!("feasibility: {:.3} ms each ({nf} infeasible)", t0.elapsed().as_secs_f64()*1000.0/100.0);
    // (b) smoothed_rate (FW) for comparison
    let t0 = Instant::now();
    for emp in &emps {
        let _ = smoothed_rate(emp, &p_true, &ch, 0.05, 1e-7).unwrap();
    }
    println!("smoothed_rate: {:.3} ms each", t0.elapsed().as_secs_f64()*1000.0/100.0);
    // (c) single-z predictor
    let spec = AmbiguitySpec { radius: 0.05, delta: 0.05, prior_family: PriorFamily::FullSimplex, channel: ch.clone() };
    let t0 = Instant::now();
    let mut solved = 0;
    for emp in &emps {
        if let Ok(_) = ot_dro_predictor(4, emp, &spec, &prob) { solved += 1; }
    }
    println!("one-z predictor: {:.3} ms each ({solved} ok)", t0.elapsed().as_secs_f64()*1000.0/100.0);
}
