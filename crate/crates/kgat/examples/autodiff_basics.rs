//! The reverse-mode tape underneath the model, on its own: record a small
//! expression, backpropagate, check a gradient by hand, then minimize a
//! quadratic with Adam.
//!
//! Run with: cargo run --example autodiff_basics

use kgat::diffcore::{Adam, AdamConfig, ParameterStore, Tape, Tensor};

fn main() {
    let mut store = ParameterStore::new();
    let w = store.register("w", Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let x = store.register("x", Tensor::from_vec(2, 1, vec![0.5, -1.0]));

    // loss = sum(tanh(W x))
    let mut tape = Tape::new();
    let wn = tape.param(&store, w);
    let xn = tape.param(&store, x);
    let y = tape.matmul(wn, xn, false);
    let t = tape.tanh(y);
    let loss = tape.sum(t);
    let value = tape.value(loss).scalar_value();
    tape.backward(loss, &mut store);

    // d loss / d x_0 = sum_i (1 - tanh^2(y_i)) * W_i0
    let (x0, x1) = (0.5f64, -1.0f64);
    let y0 = 1.0 * x0 + 2.0 * x1;
    let y1 = 3.0 * x0 + 4.0 * x1;
    let expected = (1.0 - y0.tanh().powi(2)) * 1.0 + (1.0 - y1.tanh().powi(2)) * 3.0;
    let got = store.grad(x).get(0, 0);
    println!("loss = {value:.6}");
    println!("d loss / d x[0]: tape {got:.10}, by hand {expected:.10}");
    assert!((got - expected).abs() < 1e-12);

    // Gradients accumulate until cleared, which is what lets several loss
    // terms share one backward pass per batch.
    store.zero_grad();

    // Minimize ||p - (3, -2)||^2 with Adam. Each step rebuilds a fresh tape:
    // the graph is dynamic, there is no retained session.
    let p = store.register("p", Tensor::from_vec(1, 2, vec![0.0, 0.0]));
    let target = Tensor::from_vec(1, 2, vec![3.0, -2.0]);
    let adam = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
    let mut last = f64::INFINITY;
    for step in 0..400 {
        let mut tape = Tape::new();
        let pn = tape.param(&store, p);
        let tn = tape.constant(target.clone());
        let diff = tape.sub(pn, tn);
        let loss = tape.squared_l2(diff);
        last = tape.value(loss).scalar_value();
        if step % 100 == 0 {
            println!("step {step:>3}: loss {last:.8}");
        }
        tape.backward(loss, &mut store);
        adam.step(&mut store).expect("finite update");
        store.zero_grad();
    }
    let final_p = store.value(p);
    println!(
        "after 400 steps: p = ({:.4}, {:.4}), loss {last:.2e}",
        final_p.get(0, 0),
        final_p.get(0, 1)
    );
    assert!(last < 1e-6);
}
