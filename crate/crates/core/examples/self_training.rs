// Self-training from a weak teacher: high precision, low recall pseudo-labels train a student
// whose own detections become the next round's labels.
//
// cargo run --release --example self_training

use zeroshot_nuclei::backends::{BlobStudent, OracleGrounder, OracleNoiseConfig};
use zeroshot_nuclei::data::{generate_synthetic_dataset, split_dataset, SceneImage, SyntheticSceneConfig};
use zeroshot_nuclei::prompt_forge::PromptBundle;
use zeroshot_nuclei::selftrain::{run_self_training, HeldOut, RoundReport, SelfTrainConfig, TeacherSource};

pub fn run_example() -> zeroshot_nuclei::Result<Vec<RoundReport>> {
    let seed = 2;
    let (images, truth) = generate_synthetic_dataset(&SyntheticSceneConfig { seed, ..Default::default() }, 30)?;
    let split = split_dataset(&truth, 16, 14, 4, seed)?;
    let pick = |ids: Vec<u64>| -> Vec<SceneImage> { images.iter().filter(|im| ids.contains(&im.id())).cloned().collect() };
    let (train, test) = (pick(split.train.image_ids()), pick(split.test.image_ids()));

    let teacher = OracleGrounder::new(truth.clone(), OracleNoiseConfig::weak_teacher(seed))?;
    let prompt = PromptBundle::manual("nuclei")?;
    let cfg = SelfTrainConfig { max_rounds: 4, ..Default::default() };
    let out = run_self_training(
        TeacherSource::Grounder { grounder: &teacher, prompts: &prompt },
        &BlobStudent::default(),
        &train,
        &cfg,
        Some(HeldOut { images: &test, truth: &split.test }),
        None,
    )?;

    for r in &out.reports {
        let m = r.metrics_vs_gt.as_ref().expect("held-out truth given");
        let name = if r.round_index == 0 { "T0".to_string() } else { format!("S{}", r.round_index) };
        println!(
            "{name}  labels {:>4}  precision {:.3}  recall {:.3}  AP50 {:.3}  stability {}",
            r.label_count,
            m.precision50,
            m.recall50,
            m.ap50,
            r.stability_vs_previous.map_or("-".into(), |s| format!("{s:.3}")),
        );
    }
    println!("best round {}, converged {}", out.best_round, out.converged);
    if let Some(params) = &out.final_model {
        println!("student {params:?}");
    }
    Ok(out.reports)
}

fn main() -> zeroshot_nuclei::Result<()> {
    run_example().map(|_| ())
}
