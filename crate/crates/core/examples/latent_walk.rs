//! Walk the latent space three ways: the Z1..Z10 first-coordinate sequence,
//! a straight line between two random seeds, and a lung-to-lymphoma walk
//! that blends the class condition along the way. Each walk is saved as a
//! PGM strip plus a metrics CSV.
//!
//! cargo run --release --example latent_walk -- [CKPT_DIR|-] [OUT_DIR]

use std::path::{Path, PathBuf};

use petgan::io::{write_atomic, write_pgm16};
use petgan::model::{init_params, ModelConfig};
use petgan::train::load_checkpoint;
use petgan::walk::{walk, GanRenderer, WalkConfig, WalkMode};
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
        .unwrap_or_else(|| std::env::temp_dir().join("petgan-walks"));

    for mode in [WalkMode::FirstCoord, WalkMode::Lerp, WalkMode::LabelLerp] {
        let cfg = WalkConfig {
            mode,
            from_class: ClassLabel::Lung,
            to_class: ClassLabel::Lymphoma,
            seed: 3,
            ..WalkConfig::default()
        };
        let spec = cfg.to_spec(params.config().latent_dim)?;
        if mode == WalkMode::FirstCoord {
            let firsts: Vec<f64> = spec.seeds()?.iter().map(|s| s.as_slice()[0]).collect();
            println!("first coordinates {firsts:?}");
        }
        let report = walk(&GanRenderer { params: &params }, &spec, None)?;
        write_pgm16(&out.join(format!("{mode}.pgm")), &report.strip()?)?;
        write_atomic(&out.join(format!("{mode}.csv")), report.to_csv().as_bytes())?;
        let realism = report.realism.as_deref().unwrap_or_default();
        println!(
            "{mode:<12} realism {:.3}..{:.3}, max blend deviation {:.4}",
            realism.iter().cloned().fold(f64::INFINITY, f64::min),
            realism.iter().cloned().fold(0.0, f64::max),
            report.blend_deviation.iter().cloned().fold(0.0, f64::max)
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
