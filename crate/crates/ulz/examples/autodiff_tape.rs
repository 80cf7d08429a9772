//! The reverse-mode tape on its own: record a small graph, walk it
//! backward, and cross-check one gradient with central differences.

use ulz::autodiff::{Shape, Tape};
use ulz::linalg::DenseVector;

fn loss_at(z: &[f64], theta: f64) -> f64 {
    let mut t = Tape::new();
    let zn = t.leaf(Shape::Vector(z.len()), z.to_vec()).unwrap();
    let th = t.scalar(theta);
    let shrunk = t.soft_threshold(zn, th).unwrap();
    let l = t.sum_sq(shrunk);
    t.scalar_value(l)
}

fn main() -> ulz::Result<()> {
    let mut tape = Tape::new();
    let z = tape.vector(&DenseVector::new(vec![2.0, -0.3, 1.1, 0.05]));
    let theta = tape.scalar(0.5);
    let shrunk = tape.soft_threshold(z, theta)?;
    let loss = tape.sum_sq(shrunk);
    println!("loss = {:.6}", tape.scalar_value(loss));

    let adj = tape.backward(loss)?;
    println!("d loss / d z     = {:?}", adj[z.0]);
    println!("d loss / d theta = {:.6}", adj[theta.0][0]);

    // the inactive set gets exactly zero, not approximately
    assert_eq!(adj[z.0][1], 0.0);
    assert_eq!(adj[z.0][3], 0.0);

    let h = 1e-6;
    let fd = (loss_at(&[2.0, -0.3, 1.1, 0.05], 0.5 + h)
        - loss_at(&[2.0, -0.3, 1.1, 0.05], 0.5 - h))
        / (2.0 * h);
    println!("finite-difference d/d theta = {fd:.6}");
    assert!((fd - adj[theta.0][0]).abs() < 1e-6);
    Ok(())
}
