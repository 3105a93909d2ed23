//! Reverse-mode gradients of a small expression, checked against a central
//! difference on one coordinate.

use wavbrivl::numerics::Tensor;

fn main() -> wavbrivl::Result<()> {
    let x = Tensor::param(vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75], &[2, 3])?;
    let w = Tensor::param(vec![1.0, 0.0, -1.0, 2.0, 0.5, 0.5], &[3, 2])?;
    let loss = |x: &Tensor| -> wavbrivl::Result<Tensor> {
        let h = x.matmul(&w)?.sigmoid();
        Ok(h.softmax(1)?.cross_entropy(&[0, 1])?)
    };

    let l = loss(&x)?;
    l.backward()?;
    println!("loss = {:.6}", l.item());
    println!("dL/dx = {:?}", x.grad().unwrap());
    println!("dL/dw = {:?}", w.grad().unwrap());

    let h = 1e-3;
    let at = |v: f32| -> wavbrivl::Result<f32> {
        let probe = Tensor::new(x.to_vec(), &[2, 3])?;
        probe.update(|d| d[0] = v);
        Ok(loss(&probe)?.item())
    };
    let numeric = (at(0.5 + h)? - at(0.5 - h)?) / (2.0 * h);
    println!("dL/dx[0]: analytic {:.6}, central difference {:.6}", x.grad().unwrap()[0], numeric);
    Ok(())
}
