//! Sample every class from a checkpoint and write the images as PGMs.
//! Without a checkpoint argument a freshly initialised desk model is used,
//! which shows the plumbing but not a trained look.
//!
//! cargo run --release --example conditional_generate -- [CKPT_DIR] [OUT_DIR] [PER_CLASS]

use std::path::{Path, PathBuf};

use petgan::eval::{generate_class, sample_seeds};
use petgan::io::write_pgm16;
use petgan::model::{init_params, ModelConfig};
use petgan::train::load_checkpoint;
use petgan::ClassLabel;

fn main() -> petgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let params = match args.first().filter(|a| a.as_str() != "-") {
        Some(dir) => load_checkpoint(Path::new(dir))?.params,
        None => init_params(&ModelConfig::desk(3), 0)?,
    };
    let out = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("petgan-generated"));
    let per_class: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let canvas = params.canvas();
    println!("canvas {}x{}", canvas.height, canvas.width);

    // one seed set for every class, so rows differ only by condition
    let seeds = sample_seeds(42, per_class, params.config().latent_dim);
    for label in ClassLabel::ALL {
        let (images, realism) = generate_class(&params, label, &seeds)?;
        for (i, img) in images.iter().enumerate() {
            write_pgm16(&out.join(format!("{label}_{i:02}.pgm")), img)?;
        }
        let mean = realism.iter().sum::<f64>() / realism.len() as f64;
        println!("{:<11} {per_class} images, mean discriminator score {mean:.3}", label.name());
    }
    println!("wrote {}", out.display());
    Ok(())
}
