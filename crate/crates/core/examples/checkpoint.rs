//! Saves a model, reloads it, and shows what a flipped byte does.

use wavbrivl::checkpoint::Checkpoint;
use wavbrivl::config::Config;
use wavbrivl::model::Model;

fn main() -> wavbrivl::Result<()> {
    let dir = std::env::temp_dir().join("wavbrivl-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");

    let mut model = Model::new(Config::default())?;
    model.start_audio()?;
    model.to_checkpoint().save(&path)?;
    let bytes = std::fs::read(&path)?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    println!("{}: {} bytes, {} tensors", path.display(), bytes.len(), ckpt.tensors.len());

    let back = Model::from_checkpoint(&ckpt)?;
    println!("save -> load -> save identical: {}", back.to_checkpoint().to_bytes() == bytes);

    let mut corrupt = bytes.clone();
    corrupt[bytes.len() / 2] ^= 0x10;
    match Checkpoint::from_bytes(&corrupt) {
        Err(e) => println!("flipped byte: {e} (exit code {})", e.exit_code()),
        Ok(_) => println!("flipped byte went unnoticed"),
    }
    Ok(())
}
