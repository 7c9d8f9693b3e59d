//! Differentiates a small composite on the tape and compares the result with
//! central differences.

use fbff::autodiff::{grad_check, ParamStore, Tape};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = ParamStore::new();
    let x0 = [0.3, -1.2, 2.0];

    let mut t = Tape::new(&store);
    let x = t.leaf(x0.to_vec());
    let y = t.layer_norm(x, None);
    let y = t.swish(y);
    let s = t.sum(y);
    t.backward(s)?;
    println!("f(x)  = {:.6}", t.scalar(s));
    println!("df/dx = {:?}", t.grad(x).unwrap());

    let err = grad_check(&store, &x0, 1e-5, |t, x| {
        let y = t.layer_norm(x, None);
        let y = t.swish(y);
        Ok(t.sum(y))
    })?;
    println!("worst relative error vs central differences: {err:.2e}");
    Ok(())
}
