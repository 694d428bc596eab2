//! Builds a small expression graph, runs the backward pass and compares the
//! gradient against central differences.

use maed::tensor::gradcheck::{check_fn, numeric_gradient, relative_error};
use maed::Tensor;

fn main() -> maed::Result<()> {
    let x = Tensor::param(&[2, 3], vec![0.3, -1.2, 0.8, 1.5, -0.4, 0.1])?;
    let w = Tensor::param(&[3, 2], vec![0.5, -0.7, 1.1, 0.2, -0.3, 0.9])?;

    // loss = sum(layer_norm(softmax(x) @ w)^2)
    let loss = x.softmax(1)?.matmul(&w)?.layer_norm(1e-5)?.square().sum();
    loss.backward()?;
    println!("loss = {:.6}", loss.item());
    println!("dL/dx = {:?}", x.grad().unwrap());

    let numeric = numeric_gradient(
        |v| {
            let x = Tensor::new(&[2, 3], v.to_vec())?;
            Ok(x.softmax(1)?
                .matmul(&w.detach())?
                .layer_norm(1e-5)?
                .square()
                .sum()
                .item())
        },
        x.data(),
        1e-6,
    )?;
    println!("numeric = {numeric:?}");
    println!("relative error = {:.2e}", relative_error(&x.grad().unwrap(), &numeric));

    // the same comparison for every input at once
    let err = check_fn(
        |t| Ok(t[0].gelu().mul(&t[1].transpose(&[1, 0])?)?.mean()),
        &[x.detach(), w.detach()],
        1e-6,
    )?;
    println!("gelu * transpose: worst relative error {err:.2e}");
    Ok(())
}
