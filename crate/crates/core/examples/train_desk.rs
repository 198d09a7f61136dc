//! Train the conditional GAN on preprocessed phantoms at desk scale,
//! checkpointing as it goes, then report conditioning accuracy.
//!
//! cargo run --release --example train_desk -- [OUT_DIR] [EPOCHS] [PER_CLASS] [STAGES]
//!
//! The defaults (40x24 canvas, 20 phantoms per class, 10 epochs) finish in
//! about a minute. `train_desk -- out 125 100 4` is the 80x48, 2000-step run.

use std::path::PathBuf;

use petgan::eval::evaluate;
use petgan::model::ModelConfig;
use petgan::phantom::RegionClassifier;
use petgan::pipeline::preprocess_corpus;
use petgan::train::{TrainConfig, Trainer, TrainingSet};
use petgan::{PhantomSpec, PipelineConfig};

fn main() -> petgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args
        .first()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("petgan-train"));
    let arg = |i: usize, default: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let (epochs, per_class, stages) = (arg(1, 10), arg(2, 20), arg(3, 3));

    let model = ModelConfig::desk(stages);
    let spec = PhantomSpec {
        rng_seed: 2024,
        ..PhantomSpec::default()
    }
    .with_per_class(per_class);
    let pipeline = PipelineConfig {
        canvas: model.canvas(),
        ..PipelineConfig::default()
    };
    let data = TrainingSet::from_mips(&preprocess_corpus(&spec, &pipeline)?)?;
    let train = TrainConfig {
        epochs,
        rng_seed: 1,
        checkpoint_every: 5,
        ..TrainConfig::default()
    };
    let (g, d) = model.parameter_counts();
    println!(
        "{} images on {}x{}, generator {g} / discriminator {d} parameters",
        data.len(),
        data.canvas.height,
        data.canvas.width
    );

    let mut trainer = Trainer::new(&model, &train)?;
    println!("epoch  d_real  d_fake  g_loss  d_acc");
    while trainer.ckpt.epoch < epochs {
        let r = trainer.run_epoch(&data)?;
        println!(
            "{:>5}  {:.3}   {:.3}   {:.3}   {:.2}",
            r.epoch, r.d_loss_real, r.d_loss_fake, r.g_loss, r.d_accuracy
        );
        if r.epoch % train.checkpoint_every == 0 || r.epoch == epochs {
            trainer.save(&out)?;
        }
    }

    let classifier = RegionClassifier::new(&spec, &pipeline);
    let report = evaluate(&trainer.ckpt.params, &classifier, 20, 0, None)?;
    print!("{}", report.to_csv());
    println!("checkpoint and history in {}", out.display());
    Ok(())
}
