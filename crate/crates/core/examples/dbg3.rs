use noisy_ot_core::rate::tv_ball_kl_min;
use noisy_ot_core::rng::SplitMix64;

// reference: brute bisection on A for given mu, then bisection on mu
fn tv_ball_ref(q: &[f64], phat: &[f64], delta: f64) -> f64 {
    let n = q.len();
    let tv = |x: &[f64]| 0.5 * x.iter().zip(phat).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let tv_q = 0.5 * q.iter().zip(phat).map(|(a, b)| (a - b).abs()).sum::<f64>();
    if tv_q <= delta { return 0.0; }
    let x_of = |mu: f64| -> Vec<f64> {
        let elo = (-mu).exp();
        let ehi = if mu > 700.0 { f64::INFINITY } else { mu.exp() };
        // bisect log a
        let xa = |la: f64| -> Vec<f64> {
            (0..n).map(|j| {
                if q[j] <= 0.0 { 0.0 } else {
                    let lo = la.exp() * q[j] * elo;
                    let hi = if ehi.is_finite() { la.exp() * q[j] * ehi } else { f64::INFINITY };
                    phat[j].max(lo).min(hi.max(lo))
                }
            }).collect()
        };
        let (mut l, mut h) = (-760.0, 760.0);
        for _ in 0..100 {
            let m = 0.5 * (l + h);
            if xa(m).iter().sum::<f64>() > 1.0 { h = m; } else { l = m; }
        }
        xa(0.5 * (l + h))
    };
    let (mut lo, mut hi) = (0.0, 760.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if tv(&x_of(mid)) > delta { lo = mid; } else { hi = mid; }
    }
    let mut x = x_of(hi);
    let s: f64 = x.iter().sum();
    for v in &mut x { *v /= s; }
    x.iter().zip(q).map(|(&xi, &qi)| if xi > 0.0 { xi * (xi / qi).ln() } else { 0.0 }).sum()
}

fn main() {
    let mut rng = SplitMix64::new(12);
    let mut worst = 0.0f64;
    for trial in 0..3000 {
        let n = 2 + (ring(&mut rng) % 8) as usize;
        let q: Vec<f64> = normalize((0..n).map(|_| rng.next_f64() + 1e-3).collect());
        let phat: Vec<f64> = normalize((0..n).map(|_| if rng.next_f64() < 0.2 { 0.0 } else { rng.next_f64() }).collect());
        let delta = 0.01 + 0.3 * rng.next_f64();
        let (_, v1) = tv_ball_kl_min(&q, &phat, delta);
        let v2 = tv_ball_ref(&q, &phat, delta);
        let d = (v1 - v2).abs();
        if d > worst { worst = d; }
        if d > 1e-7 {
            println!("trial {trial}: fast {v1} ref {v2} q {q:?} phat {phat:?} delta {delta}");
            if trial > 50 { break; }
        }
    }
    println!("worst diff {worst:.3e}");
}

fn ring(r: &mut SplitMix64) -> u64 { r.next_u64() }
fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s <= 0.0 { return normalize(v.into_iter().map(|_| 1.0).collect()); }
    v.into_iter().map(|x| x / s).collect()
}
