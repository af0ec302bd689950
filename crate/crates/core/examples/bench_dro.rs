use noisy_ot_core::channels::Channel;
use noisy_ot_core::decisions::*;
use noisy_ot_core::matrix::Matrix;
use noisy_ot_core::measures::{empirical_measure, ProbMeasure};
use noisy_ot_core::rng::SplitMix64;
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
    for (nn, delta) in [(25usize, 0.02f64), (25, 0.05), (200, 0.05)] {
        let spec = AmbiguitySpec {
            radius: 0.05,
            delta,
            prior_family: PriorFamily::FullSimplex,
            channel: ch.clone(),
        };
        let mut rng = SplitMix64::new(1);
        let mut emps = Vec::new();
        for k in 0..200 {
            let rec = ch.sample_noisy(&p_true, nn, rng.next_u64() ^ k).unwrap();
            emps.push(empirical_measure(&rec, 9).unwrap());
        }
        let t0 = Instant::now();
        let mut acc = 0.0;
        let mut infeasible = 0;
        for emp in &emps {
            match ot_dro_prescribe(emp, &spec, &prob) {
                Ok(presc) => acc += presc.budget,
                Err(_) => infeasible += 1,
            }
        }
        let dt = t0.elapsed();
        println!(
            "N={nn} delta={delta}: 200 prescriptions in {:?} => {:.3} ms each (acc {acc:.3}, infeasible {infeasible})",
            dt,
            dt.as_secs_f64() * 1000.0 / 200.0
        );
    }
}
