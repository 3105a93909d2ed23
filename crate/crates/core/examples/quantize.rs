//! Nearest-codebook quantization and the straight-through gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavbrivl::codec::{quantize, Codebook, LatentGrid};
use wavbrivl::numerics::Tensor;

fn main() -> wavbrivl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let book = Codebook::new(8, 2, &mut rng);
    for j in 0..book.size() {
        println!("entry {j}: {:?}", book.entry(j));
    }
    let grid = LatentGrid::new(1, 3, 2, vec![0.0, 0.0, 0.1, -0.1, -0.05, 0.2])?;
    let (q, idx) = quantize(&grid, &book)?;
    println!("cells {:?}\n -> entries {idx:?}\n -> {:?}", grid.values, q.values);
    let (again, _) = quantize(&q, &book)?;
    println!("quantizing again changes nothing: {}", again == q);

    let t = Tensor::param(grid.values.clone(), &[3, 2])?;
    let (out, _, _) = book.quantize_tensor(&t)?;
    out.scale(2.0).sum().backward()?;
    println!("gradient through the quantizer: {:?}", t.grad().unwrap());
    Ok(())
}
