//! The tape and Adam on their own: fit a two-layer tanh network to a noisy
//! sine curve.
//!
//!     cargo run --release --example autodiff

use glen::autodiff::{AdamConfig, AdamState, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> glen::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let xs: Vec<f64> = (0..64).map(|i| -3.0 + 6.0 * i as f64 / 63.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.sin() + rng.gen_range(-0.05..0.05)).collect();
    let x = Tensor::matrix(64, 1, xs)?;
    let y = Tensor::matrix(64, 1, ys)?;

    let mut params = [("w1".to_string(), Tensor::glorot(1, 16, &mut rng)),
        ("b1".to_string(), Tensor::zeros(&[16])),
        ("w2".to_string(), Tensor::glorot(16, 1, &mut rng))];
    let mut adam = AdamState::new(AdamConfig::with_lr(0.02), params.iter().map(|(_, t)| t));

    for step in 0..=1500 {
        let mut tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let h = tape.matmul(xv, vars[0])?;
        let h = tape.add_bias(h, vars[1])?;
        let h = tape.tanh(h);
        let pred = tape.matmul(h, vars[2])?;
        let err = tape.sub(pred, yv)?;
        let sq = tape.mul(err, err)?;
        let sum = tape.sum(sq);
        let loss = tape.scale(sum, 1.0 / 64.0);
        if step % 300 == 0 {
            println!("step {step:>4}  mse {:.5}", tape.value(loss).item());
        }
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
        adam.step(params.iter_mut().map(|(n, t)| (n.clone(), t)).collect(), &g)?;
    }
    Ok(())
}
