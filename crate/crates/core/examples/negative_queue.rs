//! A key queue filling and wrapping, and InfoNCE against it.

use wavbrivl::contrastive::{info_nce, NegativeQueue};
use wavbrivl::numerics::Tensor;

fn unit(angle: f32) -> [f32; 2] {
    [angle.cos(), angle.sin()]
}

fn main() -> wavbrivl::Result<()> {
    let mut queue = NegativeQueue::new(4, 2)?;
    for step in 0..3 {
        let keys: Vec<f32> = (0..2).flat_map(|i| unit(1.0 + (2 * step + i) as f32)).collect();
        queue.push(&keys)?;
        println!("after push {step}: fill {} head {}", queue.fill(), queue.head());
    }
    for (i, k) in queue.entries().iter().enumerate() {
        println!("  entry {i} (oldest first): [{:.3}, {:.3}]", k[0], k[1]);
    }

    let q = Tensor::new(unit(0.0).to_vec(), &[1, 2])?;
    for angle in [0.0f32, 0.5, 1.5] {
        let k = Tensor::new(unit(angle).to_vec(), &[1, 2])?;
        println!("positive at {angle:.1} rad: InfoNCE {:.4}", info_nce(&q, &k, &queue, 0.07)?.item());
    }
    Ok(())
}
