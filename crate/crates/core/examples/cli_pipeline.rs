// The full pipeline through the command functions the binary uses: synth, forge, detect,
// selftrain and eval, all driven by one run configuration.
//
// cargo run --release --example cli_pipeline -- [WORK_DIR]

use std::path::Path;

use zeroshot_nuclei::cli::{cmd_detect, cmd_eval, cmd_forge, cmd_selftrain, cmd_synth, RunConfig};
use zeroshot_nuclei::evalkit::EvalResult;

pub fn run_example(work: &Path) -> zeroshot_nuclei::Result<EvalResult> {
    let base = RunConfig {
        seed: Some(11),
        out: Some(work.join("data")),
        ..Default::default()
    };
    let synth = cmd_synth(&base.clone().resolve()?)?;
    println!("synth: {} images, {} boxes", synth.images, synth.boxes);

    let with = |out: &str| RunConfig {
        dataset: Some(synth.annotations.clone()),
        out: Some(work.join(out)),
        ..base.clone()
    };
    let forged = cmd_forge(&with("forge").resolve()?)?;
    println!("forge: {} triplets from {} captions", forged.bundle.triplets.len(), forged.captions.len());

    let prompts = Some(work.join("forge/prompts.json"));
    let detect = RunConfig { prompts: prompts.clone(), ..with("detect") };
    let dets = cmd_detect(&detect.resolve()?)?;
    println!("detect: {} teacher boxes", dets.len());

    let mut st = RunConfig { prompts, force: true, ..with("run") };
    st.selftrain.max_rounds = 3;
    let run = cmd_selftrain(&st.resolve()?)?;
    println!("selftrain: {} rounds, best {}", run.reports.len(), run.best_round);
    print!("{}", std::fs::read_to_string(run.run_dir.join("report.txt")).unwrap_or_default());

    let mut ev = with("eval");
    ev.eval.pred = Some(work.join("detect/detections.json"));
    ev.eval.gt = Some(synth.annotations.clone());
    ev.eval.label = "teacher".into();
    let (result, table) = cmd_eval(&ev.resolve()?)?;
    print!("{table}");
    Ok(result)
}

fn main() -> zeroshot_nuclei::Result<()> {
    let work = std::env::args().nth(1).unwrap_or_else(|| "pipeline_out".into());
    run_example(Path::new(&work)).map(|_| ())
}
