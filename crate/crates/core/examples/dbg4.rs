use noisy_ot_core::rate::tv_ball_kl_min;

fn main() {
    let q = [0.1956128162008305, 0.19223145836831534, 0.28530276958305084, 0.21394150222462066, 0.11291145362318254];
    let phat = [0.09450087680236885, 0.28126625145123896, 0.2833496102608073, 0.069983096679629, 0.27090016480595575];
    let delta = 0.18488078395265597;
    let (x, v) = tv_ball_kl_min(&q, &phat, delta);
    let tv = 0.5 * x.iter().zip(&phat).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let s: f64 = x.iter().sum();
    println!("x {x:?}\nsum {s} tv {tv} (delta {delta}) value {v}");
    // manual check: the reference min is ~0.0106; what does KL of x say
}
