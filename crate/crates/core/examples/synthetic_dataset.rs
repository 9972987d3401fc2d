// Renders a small synthetic nuclei dataset and writes it to disk as PNGs plus COCO JSON.
//
// cargo run --example synthetic_dataset -- [OUT_DIR]

use std::path::Path;

use zeroshot_nuclei::data::{generate_synthetic_dataset, load_annotations, save_annotations, save_images};
use zeroshot_nuclei::data::{AnnotationSet, SyntheticSceneConfig};

pub fn run_example(out: &Path) -> zeroshot_nuclei::Result<AnnotationSet> {
    let cfg = SyntheticSceneConfig { seed: 7, ..Default::default() };
    let (images, truth) = generate_synthetic_dataset(&cfg, 4)?;
    save_images(&images, out)?;
    let path = out.join("annotations.json");
    save_annotations(&truth, &path)?;

    let back = load_annotations(&path)?;
    for rec in &back.images {
        println!("{:>3}  {}  {}x{}  {} nuclei", rec.id, rec.file_name, rec.width, rec.height, back.get(rec.id).len());
    }
    Ok(back)
}

fn main() -> zeroshot_nuclei::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic_out".into());
    run_example(Path::new(&out))?;
    println!("wrote {out}/annotations.json");
    Ok(())
}
