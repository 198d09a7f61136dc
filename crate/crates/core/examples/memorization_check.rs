//! Compare a generator that only blends two memorised training images with
//! the GAN on the same walk. The blender scores zero blend deviation at
//! every step; a generator that composes new images does not. Nearest
//! training-image distances are shown alongside.
//!
//! cargo run --release --example memorization_check -- [CKPT_DIR|-]

use std::path::Path;

use petgan::model::{init_params, ModelConfig};
use petgan::pipeline::preprocess_corpus;
use petgan::train::load_checkpoint;
use petgan::walk::{walk, BlendMemorizer, GanRenderer, WalkConfig, WalkMode};
use petgan::{Image2D, PhantomSpec, PipelineConfig};

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> petgan::Result<()> {
    let params = match std::env::args().nth(1).filter(|a| a != "-") {
        Some(dir) => load_checkpoint(Path::new(&dir))?.params,
        None => init_params(&ModelConfig::desk(3), 0)?,
    };
    let pipeline = PipelineConfig {
        canvas: params.canvas(),
        ..PipelineConfig::default()
    };
    let spec = PhantomSpec {
        rng_seed: 2024,
        ..PhantomSpec::default()
    }
    .with_per_class(4);
    let training: Vec<Image2D> = preprocess_corpus(&spec, &pipeline)?.into_iter().map(|m| m.image).collect();

    let walk_spec = WalkConfig {
        mode: WalkMode::Lerp,
        steps: 9,
        seed: 5,
        ..WalkConfig::default()
    }
    .to_spec(params.config().latent_dim)?;
    let memorizer = BlendMemorizer {
        start: (walk_spec.z_start.clone(), training[0].clone()),
        end: (walk_spec.z_end.clone(), training[training.len() - 1].clone()),
    };

    let blend = walk(&memorizer, &walk_spec, Some(&training))?;
    let gan = walk(&GanRenderer { params: &params }, &walk_spec, Some(&training))?;
    println!("step  t      memorizer dev  nn      gan dev  nn");
    for k in 0..walk_spec.steps {
        println!(
            "{k:>4}  {:.3}  {:.2e}       {:.4}  {:.4}   {:.4}",
            blend.fractions[k],
            blend.blend_deviation[k],
            blend.nn_distance.as_ref().unwrap()[k],
            gan.blend_deviation[k],
            gan.nn_distance.as_ref().unwrap()[k]
        );
    }
    let interior = 1..walk_spec.steps - 1;
    println!(
        "median interior blend deviation: memorizer {:.2e}, gan {:.4}",
        median(&blend.blend_deviation[interior.clone()]),
        median(&gan.blend_deviation[interior])
    );
    Ok(())
}
