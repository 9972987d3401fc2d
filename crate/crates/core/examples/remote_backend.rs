// Talks to a model server over the JSON wire protocol: grounding, captioning and synonyms.
//
// cargo run --example remote_backend -- http://127.0.0.1:8080

use std::time::Duration;

use zeroshot_nuclei::backends::remote::{RemoteBackend, RemoteConfig};
use zeroshot_nuclei::backends::{Captioner, Grounder, GroundingQuery, SynonymProvider};
use zeroshot_nuclei::data::{generate_synthetic_dataset, SyntheticSceneConfig};

pub fn run_example(url: &str) -> zeroshot_nuclei::Result<usize> {
    let mut cfg = RemoteConfig::new(url);
    cfg.timeout = Duration::from_secs(30);
    cfg.attempts = 2;
    let backend = RemoteBackend::new(cfg)?;

    let (images, _) = generate_synthetic_dataset(&SyntheticSceneConfig::default(), 1)?;
    let image = &images[0];
    let dets = backend.ground(&GroundingQuery::new(image, "round purple nuclei. nuclei", 0.25, 100)?)?;
    println!("{} detections", dets.len());
    for d in dets.iter().take(5) {
        println!("  {:?} {:.3} {}", d.bbox.to_array(), d.score, d.phrase);
    }
    println!("caption: {}", backend.caption(&image.pixels)?);
    println!("synonyms of round: {:?}", backend.synonyms("round", 3)?);
    Ok(dets.len())
}

fn main() {
    let Some(url) = std::env::args().nth(1) else {
        eprintln!("usage: remote_backend <server url>");
        std::process::exit(2);
    };
    if let Err(e) = run_example(&url) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_retriable() { 75 } else { 1 });
    }
}
