use noisy_ot_core::channels::Channel;
use noisy_ot_core::decisions::*;
use noisy_ot_core::matrix::Matrix;
use noisy_ot_core::measures::ProbMeasure;

fn main() {
    let ch = Channel::from_transition_rows(&[vec![0.7, 0.3], vec![0.25, 0.75]]).unwrap();
    let spec = AmbiguitySpec {
        radius: 0.08,
        delta: 0.04,
        prior_family: PriorFamily::FullSimplex,
        channel: ch.clone(),
    };
    let prob = DecisionProblem::new(Matrix::from_rows(&[vec![0.9, 0.2]]).unwrap(), None, 1e-9).unwrap();
    let phat = ProbMeasure::new(vec![0.4, 0.6]).unwrap();
    match ot_dro_predictor(0, &phat, &spec, &prob) {
        Ok(v) => println!("ok value {}", v.value),
        Err(e) => println!("err {e:?}"),
    }
    // Probe the true envelope on a grid for reference
    for lambda in [1.0f64, 8.0, 1024.0] {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for k in 0..=2000 {
            let s = k as f64 / 2000.0;
            let p = ProbMeasure::new(vec![s, 1.0 - s]).unwrap();
            let sm = noisy_ot_core::rate::smoothed_rate(&phat, &p, &ch, spec.delta, 1e-10).unwrap();
            let lin = 0.9 * s + 0.2 * (1.0 - s);
            let f = lin - lambda * sm.value;
            if f > best.0 { best = (f, s, sm.value); }
        }
        println!("lambda {lambda}: true max F {:.6} at s={:.4} kl={:.6}", best.0, best.1, best.2);
    }
}
