//! Every example runs and produces what it claims.

macro_rules! example {
    ($name:ident) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", stringify!($name), ".rs"));
        }
    };
}

example!(synthetic_dataset);
example!(evaluate_detections);
example!(tile_and_stitch);
example!(forge_prompts);
example!(self_training);
example!(remote_backend);
example!(cli_pipeline);

use zeroshot_nuclei::prompt_forge::PromptMode;
use zeroshot_nuclei::Error;

#[test]
fn synthetic_dataset_example() {
    let tmp = tempfile::tempdir().unwrap();
    let set = synthetic_dataset::run_example(tmp.path()).unwrap();
    assert_eq!(set.images.len(), 4);
    for rec in &set.images {
        assert!(tmp.path().join(&rec.file_name).is_file());
        assert!(!set.get(rec.id).is_empty());
    }
}

#[test]
fn evaluate_detections_example() {
    let rows = evaluate_detections::run_example().unwrap();
    let (exact, weak) = (&rows[0].1, &rows[1].1);
    assert_eq!((exact.map, exact.ap50, exact.ar), (1.0, 1.0, 1.0));
    assert!(weak.recall50 < 0.6 && weak.precision50 > 0.7, "{weak:?}");
}

#[test]
fn tile_and_stitch_example() {
    let (n, patch, stitched) = tile_and_stitch::run_example().unwrap();
    assert_eq!(n, 16);
    assert_eq!(patch.ap50, 1.0);
    assert!(stitched.ap50 > 0.9, "{stitched:?}");
}

#[test]
fn forge_prompts_example() {
    let bundles = forge_prompts::run_example().unwrap();
    assert_eq!(bundles[0].mode, PromptMode::Noun);
    assert_eq!(bundles[0].triplets, ["nuclei"]);
    assert!(bundles[1].triplets.len() <= 9 && !bundles[1].triplets.is_empty());
    assert!(bundles[2].triplets.len() > bundles[1].triplets.len());
    for t in &bundles[1].triplets {
        assert!(bundles[2].triplets.contains(t));
    }
}

#[test]
fn self_training_example() {
    let reports = self_training::run_example().unwrap();
    let recall = |k: usize| reports[k].metrics_vs_gt.as_ref().unwrap().recall50;
    assert!(recall(0) < 0.6);
    assert!(recall(reports.len() - 1) >= 0.8);
}

#[test]
fn remote_backend_example_reports_unreachable_server() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = remote_backend::run_example(&format!("http://127.0.0.1:{port}")).unwrap_err();
    assert!(matches!(err, Error::Backend { retriable: true, .. }), "{err}");
}

#[test]
fn cli_pipeline_example() {
    let tmp = tempfile::tempdir().unwrap();
    let teacher = cli_pipeline::run_example(tmp.path()).unwrap();
    assert!(teacher.precision50 > 0.7 && teacher.recall50 < 0.6, "{teacher:?}");
    for f in ["data/annotations.json", "forge/prompts.json", "detect/detections.json", "run/summary.json", "run/report.csv", "eval/eval.csv"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
}
