// Scores a noisy detector against ground truth with COCO-style metrics.
//
// cargo run --example evaluate_detections

use zeroshot_nuclei::backends::{Grounder, GroundingQuery, OracleGrounder, OracleNoiseConfig};
use zeroshot_nuclei::data::{generate_synthetic_dataset, SyntheticSceneConfig};
use zeroshot_nuclei::evalkit::{evaluate, render_csv, render_table, EvalResult, DEFAULT_MAX_DETS};

pub fn run_example() -> zeroshot_nuclei::Result<Vec<(String, EvalResult)>> {
    let (images, truth) = generate_synthetic_dataset(&SyntheticSceneConfig::default(), 6)?;

    let mut rows = Vec::new();
    for (name, noise) in [
        ("noiseless", OracleNoiseConfig::noiseless(0.9)),
        ("weak", OracleNoiseConfig::weak_teacher(1)),
    ] {
        let detector = OracleGrounder::new(truth.clone(), noise)?;
        let mut pred = truth.empty_like();
        for im in &images {
            let dets = detector.ground(&GroundingQuery::new(im, "nuclei", 0.25, 1000)?)?;
            pred.set_detections(im.id(), &dets)?;
        }
        rows.push((name.to_string(), evaluate(&pred, &truth, DEFAULT_MAX_DETS)?));
    }

    let view: Vec<(&str, &EvalResult)> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
    print!("{}", render_table(view.iter().copied()));
    println!();
    print!("{}", render_csv(view.iter().copied()));
    Ok(rows)
}

fn main() -> zeroshot_nuclei::Result<()> {
    run_example().map(|_| ())
}
