// Cuts a large image into overlapping patches, detects on each patch, and stitches the
// detections back into full-image coordinates.
//
// cargo run --example tile_and_stitch

use zeroshot_nuclei::backends::{Grounder, GroundingQuery, OracleGrounder, OracleNoiseConfig};
use zeroshot_nuclei::data::{
    extract_patches, generate_synthetic_dataset, plan_patches, project_to_patches, SyntheticSceneConfig, TileSpec,
    DEFAULT_MIN_OVERLAP,
};
use zeroshot_nuclei::evalkit::{evaluate_with_mode, render_table, EvalMode, EvalResult, DEFAULT_MAX_DETS};

pub fn run_example() -> zeroshot_nuclei::Result<(usize, EvalResult, EvalResult)> {
    let scene = SyntheticSceneConfig {
        image_size: 1000,
        object_count_range: (300, 400),
        seed: 5,
        ..Default::default()
    };
    let (images, truth) = generate_synthetic_dataset(&scene, 1)?;

    let spec = TileSpec { tile_size: 256, grid_n: 4, crop_size: 256 };
    let patches = plan_patches(&truth.images, &spec, 5)?;
    let patch_images = extract_patches(&images, &patches)?;
    let patch_truth = project_to_patches(&truth, &patches, DEFAULT_MIN_OVERLAP);
    for p in patches.iter().take(4) {
        println!("patch {:>2} at ({}, {}): {} nuclei", p.record.id, p.region.x(), p.region.y(), patch_truth.get(p.record.id).len());
    }

    let detector = OracleGrounder::new(patch_truth.clone(), OracleNoiseConfig::noiseless(0.9))?;
    let mut pred = patch_truth.empty_like();
    for im in &patch_images {
        pred.set_detections(im.id(), &detector.ground(&GroundingQuery::new(im, "nuclei", 0.25, 1000)?)?)?;
    }

    let per_patch = evaluate_with_mode(&pred, &patch_truth, DEFAULT_MAX_DETS, EvalMode::Patch, None, 0.5)?;
    let layout = Some((patches.as_slice(), truth.images.as_slice()));
    let stitched = evaluate_with_mode(&pred, &truth, DEFAULT_MAX_DETS, EvalMode::Stitched, layout, 0.5)?;
    print!("{}", render_table([("patch", &per_patch), ("stitched", &stitched)]));
    Ok((patches.len(), per_patch, stitched))
}

fn main() -> zeroshot_nuclei::Result<()> {
    run_example().map(|_| ())
}
