use noisy_ot_core::channels::Channel;
use noisy_ot_core::decisions::*;
use noisy_ot_core::matrix::Matrix;
use noisy_ot_core::measures::ProbMeasure;
use noisy_ot_core::inference::replication_seed;

fn main() {
    let ch = Channel::noiseless(2).unwrap();
    let spec = AmbiguitySpec {
        radius: 5.0,
        delta: 0.1,
        prior_family: PriorFamily::FullSimplex,
        channel: ch,
    };
    let prob = DecisionProblem::new(
        Matrix::from_rows(&[vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap(),
        None,
        1e-9,
    )
    .unwrap();
    let p_true = ProbMeasure::new(vec![0.6, 0.4]).unwrap();
    for (cell_idx, n) in [10u64, 20].iter().enumerate() {
        for rep in 0..50u64 {
            let rep_seed = replication_seed(9, cell_idx as u64, rep);
            let out = disappointment_replication(Formulation::OtDro, &p_true, &spec, &prob, *n, rep_seed).unwrap();
            if out.disappointed {
                let rec = spec.channel.sample_noisy(&p_true, *n as usize, rep_seed).unwrap();
                let emp = noisy_ot_core::measures::empirical_measure(&rec, 2).unwrap();
                let presc = run_formulation(Formulation::OtDro, &emp, &spec, &prob).unwrap();
                println!("n {} rep {} emp {:?} -> z {} budget {} values {:?} realized {}",
                    n, rep, emp.weights(), presc.decision_index, presc.budget,
                    presc.per_decision_values,
                    expected_cost(presc.decision_index, &p_true, &prob).unwrap());
            }
        }
    }
}
