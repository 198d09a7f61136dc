//! Build a small phantom corpus, write it as PVOL1 files plus a manifest,
//! and read one volume back.
//!
//! cargo run --release --example phantom_corpus -- [OUT_DIR] [PER_CLASS]

use std::path::PathBuf;

use petgan::io::{read_pvol, write_manifest, write_pvol, MANIFEST_FILE};
use petgan::phantom::{anatomy, iter_corpus};
use petgan::{ClassLabel, PhantomSpec};

fn main() -> petgan::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("petgan-phantoms"));
    let per_class: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);

    let spec = PhantomSpec {
        rng_seed: 7,
        ..PhantomSpec::default()
    }
    .with_per_class(per_class);
    println!(
        "{} volumes of {:?} voxels at {:?} mm, lesion SUV {:?}",
        spec.total(),
        spec.dims,
        spec.spacing_mm,
        anatomy::LESION_SUV
    );

    let mut rows = Vec::new();
    for item in iter_corpus(&spec)? {
        let path = out.join(item.file_name());
        write_pvol(&path, &item.volume)?;
        println!("{:<16} seed {:>20}  max SUV {:5.2}", item.id, item.seed, item.volume.max_value());
        rows.push(item.manifest_row());
    }
    write_manifest(&out.join(MANIFEST_FILE), &rows)?;

    let back = read_pvol(&out.join(format!("{}_0000.pvol", ClassLabel::Lymphoma)))?;
    println!("re-read lymphoma_0000: dims {:?}, spacing {:?}", back.dims(), back.spacing_mm());
    println!("wrote {}", out.display());
    Ok(())
}
