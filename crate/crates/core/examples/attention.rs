//! One transformer encoder layer and the attention weights of its heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavbrivl::numerics::{EncoderLayer, Module, MultiHeadAttention, Tensor};

fn main() -> wavbrivl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tokens = 5;
    let width = 16;
    let x = Tensor::new((0..tokens * width).map(|i| ((i * 37) % 11) as f32 / 11.0 - 0.5).collect(), &[tokens, width])?;

    let mha = MultiHeadAttention::new(&mut rng, width, 4)?;
    let (_, weights) = mha.forward_with_weights(&x)?;
    for (h, w) in weights.iter().enumerate() {
        let rows: Vec<f32> = w.to_vec().chunks(tokens).map(|r| r.iter().sum()).collect();
        println!("head {h}: row sums {rows:?}");
    }

    let layer = EncoderLayer::new(&mut rng, width, 4)?;
    let y = layer.forward(&x)?;
    println!("encoder layer: {:?} -> {:?}, {} parameters", x.shape(), y.shape(), layer.tensors().iter().map(|t| t.numel()).sum::<usize>());
    Ok(())
}
