//! Turn one phantom per class into a canvas MIP, save it as a 16-bit PGM
//! and check what the region classifier makes of it.
//!
//! cargo run --release --example preprocess_mip -- [OUT_DIR]

use std::path::PathBuf;

use petgan::io::write_pgm16;
use petgan::phantom::{make_phantom_volume, RegionClassifier};
use petgan::pipeline::{content_box, preprocess, resample_nearest};
use petgan::{ClassLabel, PhantomSpec, PipelineConfig};

fn main() -> petgan::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("petgan-mips"));
    let spec = PhantomSpec::default();
    let cfg = PipelineConfig::default();
    let classifier = RegionClassifier::new(&spec, &cfg);
    let body = content_box(spec.dims, spec.spacing_mm, &cfg);
    println!(
        "canvas {}x{}, body occupies rows {}..{} cols {}..{}",
        cfg.canvas.height,
        cfg.canvas.width,
        body.top,
        body.top + body.height,
        body.left,
        body.left + body.width
    );

    for (i, label) in ClassLabel::ALL.into_iter().enumerate() {
        let volume = make_phantom_volume(label, 100 + i as u64, &spec)?;
        let iso = resample_nearest(&volume, cfg.target_spacing_mm)?;
        let mip = preprocess(&volume, label, label.name(), &cfg)?;
        let path = out.join(format!("{label}.pgm"));
        write_pgm16(&path, &mip.image)?;
        let energies = classifier.energies(&mip.image);
        println!(
            "{:<11} {:?} -> {:?} voxels, classified {:<11} zone energies {:.4?}",
            label.name(),
            volume.dims(),
            iso.dims(),
            classifier.classify(&mip.image).name(),
            energies.0
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
