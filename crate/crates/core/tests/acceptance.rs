//! Acceptance suite. Runs every primary criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{brute_force_evaluate, exhaustive_nms, image_records, random_detections, random_instance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zeroshot_nuclei::backends::{
    BlobStudent, OracleGrounder, OracleNoiseConfig, ScriptedCaptioner, StaticSynonyms,
};
use zeroshot_nuclei::cli::{cmd_selftrain, cmd_synth, RunConfig};
use zeroshot_nuclei::data::{
    generate_synthetic_dataset, load_annotations, save_annotations, split_dataset, tile_origins, Annotation,
    AnnotationSet, ImageRecord, SceneImage, SyntheticSceneConfig, TileSpec, NUCLEI_CATEGORY,
};
use zeroshot_nuclei::evalkit::{evaluate, DEFAULT_MAX_DETS};
use zeroshot_nuclei::geometry::{iou, nms, BBox};
use zeroshot_nuclei::prompt_forge::{
    compose_prompts, forge, AttributeLexicon, ForgeConfig, PromptBundle, PromptMode, TaggedWord, WordSource,
};
use zeroshot_nuclei::selftrain::{run_self_training, HeldOut, SelfTrainConfig, TeacherSource};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: String, fail: impl FnOnce() -> String) -> Outcome {
    if cond { Ok(ok) } else { Err(fail()) }
}

fn evalkit_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (pred, gt) = random_instance(seed);
        let fast = evaluate(&pred, &gt, DEFAULT_MAX_DETS).map_err(|e| format!("seed {seed}: {e}"))?;
        let slow = brute_force_evaluate(&pred, &gt, DEFAULT_MAX_DETS);
        for (name, a, b) in [
            ("mAP", fast.map, slow.map),
            ("AP50", fast.ap50, slow.ap50),
            ("AP75", fast.ap75, slow.ap75),
            ("AR", fast.ar, slow.ar),
        ] {
            let d = (a - b).abs();
            worst = worst.max(d);
            if d > 1e-9 {
                return Err(format!("seed {seed} {name}: {a} vs brute force {b}"));
            }
        }
    }
    let took = start.elapsed();
    check(
        took < Duration::from_secs(10),
        format!("100 instances, max |diff| {worst:.1e}, {took:.2?}"),
        || format!("took {took:.2?}"),
    )
}

fn nms_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4e4d53);
    for case in 0..1000 {
        let n = rng.random_range(0..=50);
        let dets = random_detections(&mut rng, n);
        let thr = [0.3, 0.5, 0.7][case % 3];
        if nms(&dets, thr) != exhaustive_nms(&dets, thr) {
            return Err(format!("case {case} (n {n}, threshold {thr}) differs"));
        }
    }
    Ok("1000 inputs, n <= 50, exact".into())
}

fn pixel_iou(a: [u32; 4], b: [u32; 4]) -> f64 {
    let mut inter = 0u64;
    let mut union = 0u64;
    for y in 0..64 {
        for x in 0..64 {
            let ina = x >= a[0] && x < a[0] + a[2] && y >= a[1] && y < a[1] + a[3];
            let inb = x >= b[0] && x < b[0] + b[2] && y >= b[1] && y < b[1] + b[3];
            inter += u64::from(ina && inb);
            union += u64::from(ina || inb);
        }
    }
    inter as f64 / union as f64
}

fn iou_pixel_grid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x696f75);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let mut r = || {
            let (w, h) = (rng.random_range(1..=24), rng.random_range(1..=24));
            [rng.random_range(0..=32 - w.min(32)), rng.random_range(0..=32 - h.min(32)), w, h]
        };
        let (a, b) = (r(), r());
        let bb = |v: [u32; 4]| BBox::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64).unwrap();
        let d = (iou(&bb(a), &bb(b)) - pixel_iou(a, b)).abs();
        worst = worst.max(d);
        if d > 1e-9 {
            return Err(format!("case {case}: {a:?} {b:?} off by {d}"));
        }
    }
    Ok(format!("1000 cases, max |diff| {worst:.1e}"))
}

fn tiling() -> Outcome {
    let spec = TileSpec { tile_size: 256, grid_n: 4, crop_size: 256 };
    let tiles = tile_origins(1000, 1000, &spec).map_err(|e| e.to_string())?;
    let xs: BTreeSet<u32> = tiles.iter().map(|t| t.x() as u32).collect();
    let ys: BTreeSet<u32> = tiles.iter().map(|t| t.y() as u32).collect();
    let mut covered = vec![false; 1000 * 1000];
    for t in &tiles {
        for y in t.y() as usize..t.bottom() as usize {
            for x in t.x() as usize..t.right() as usize {
                covered[y * 1000 + x] = true;
            }
        }
    }
    let want: BTreeSet<u32> = [0, 248, 496, 744].into();
    let full = covered.iter().all(|&c| c);
    check(
        tiles.len() == 16 && xs == want && ys == want && full,
        "16 tiles, origins {0,248,496,744} on both axes, full coverage".into(),
        || format!("{} tiles, x {xs:?}, y {ys:?}, full coverage {full}", tiles.len()),
    )
}

fn forge_once(images: &[SceneImage], gt: &AnnotationSet) -> Result<PromptBundle, String> {
    let grounder = OracleGrounder::new(gt.clone(), OracleNoiseConfig::noiseless(0.9)).map_err(|e| e.to_string())?;
    // Round outranks circle outranks oblong; blue outranks black outranks purple.
    let captioner = ScriptedCaptioner::new([
        "a round blue nucleus",
        "a round black nucleus",
        "a round purple nucleus",
        "a circle blue nucleus",
        "a circle black nucleus",
        "an oblong blue nucleus",
    ])
    .map_err(|e| e.to_string())?;
    let cfg = ForgeConfig { m: 3, attr_aug: false, noun_aug: false, crop_cap: 60, ..Default::default() };
    let out = forge(images, &grounder, &captioner, &StaticSynonyms::builtin(), &AttributeLexicon::builtin(), &cfg)
        .map_err(|e| e.to_string())?;
    Ok(out.bundle)
}

fn prompt_forge() -> Outcome {
    let (images, gt) =
        generate_synthetic_dataset(&SyntheticSceneConfig { seed: 3, ..Default::default() }, 2).map_err(|e| e.to_string())?;
    let a = forge_once(&images, &gt)?;
    let b = forge_once(&images, &gt)?;
    let mut want = BTreeSet::new();
    for s in ["round", "circle", "oblong"] {
        for c in ["blue", "black", "purple"] {
            want.insert(format!("{s} {c} nuclei"));
        }
    }
    let got: BTreeSet<String> = a.triplets.iter().cloned().collect();
    check(
        a.triplets.len() == 9 && got == want && a.to_json() == b.to_json(),
        format!("9 triplets, identical across runs: {}", a.triplets.join(" | ")),
        || format!("got {:?}; runs identical: {}", a.triplets, a.to_json() == b.to_json()),
    )
}

struct SeedRun {
    teacher: (f64, f64),
    recalls: Vec<f64>,
    reached: bool,
}

fn noun_bundle() -> PromptBundle {
    let nouns = TaggedWord::tag_all(&["nuclei"], WordSource::ConfigNoun);
    compose_prompts(&[], &[], &nouns, PromptMode::Noun, 3).unwrap()
}

fn self_train_seed(seed: u64) -> Result<SeedRun, String> {
    let scene = SyntheticSceneConfig { seed, ..Default::default() };
    let (images, gt) = generate_synthetic_dataset(&scene, 30).map_err(|e| e.to_string())?;
    let split = split_dataset(&gt, 16, 14, 4, seed).map_err(|e| e.to_string())?;
    let pick = |set: &AnnotationSet| -> Vec<SceneImage> {
        let ids = set.image_ids();
        images.iter().filter(|im| ids.contains(&im.id())).cloned().collect()
    };
    let (train, test) = (pick(&split.train), pick(&split.test));
    let grounder = OracleGrounder::new(gt.clone(), OracleNoiseConfig::weak_teacher(seed)).map_err(|e| e.to_string())?;
    let bundle = noun_bundle();
    let cfg = SelfTrainConfig { max_rounds: 3, seed, ..Default::default() };
    let out = run_self_training(
        TeacherSource::Grounder { grounder: &grounder, prompts: &bundle },
        &BlobStudent::default(),
        &train,
        &cfg,
        Some(HeldOut { images: &test, truth: &split.test }),
        None,
    )
    .map_err(|e| format!("seed {seed}: {e}"))?;
    let metrics: Vec<(f64, f64)> = out
        .reports
        .iter()
        .map(|r| r.metrics_vs_gt.as_ref().map(|m| (m.precision50, m.recall50)).unwrap_or((0.0, 0.0)))
        .collect();
    Ok(SeedRun {
        teacher: metrics[0],
        recalls: metrics.iter().map(|m| m.1).collect(),
        reached: metrics[1..].iter().any(|&(p, r)| p >= 0.8 && r >= 0.8),
    })
}

fn self_training_dynamic() -> Outcome {
    let start = Instant::now();
    let runs: Vec<SeedRun> = (0..20).map(self_train_seed).collect::<Result<_, _>>()?;
    let took = start.elapsed();
    let reached = runs.iter().filter(|r| r.reached).count();
    let monotone = runs.iter().filter(|r| r.recalls.windows(2).all(|w| w[1] >= w[0])).count();
    let mean = |f: fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let (tp, tr) = (mean(|r| r.teacher.0), mean(|r| r.teacher.1));
    let final_r = mean(|r| *r.recalls.last().unwrap());
    check(
        reached == 20 && monotone * 10 >= 9 * 20 && took < Duration::from_secs(120),
        format!(
            "teacher P {tp:.3} R {tr:.3}; P,R >= 0.8 within 3 rounds on {reached}/20 seeds; \
             recall non-decreasing on {monotone}/20; final R {final_r:.3}; {took:.1?}"
        ),
        || format!("reached {reached}/20, non-decreasing {monotone}/20, {took:.1?}"),
    )
}

fn zero_noise_fixed_point() -> Outcome {
    let scene = SyntheticSceneConfig { seed: 11, ..Default::default() };
    let (images, gt) = generate_synthetic_dataset(&scene, 8).map_err(|e| e.to_string())?;
    let grounder = OracleGrounder::new(gt.clone(), OracleNoiseConfig::noiseless(0.9)).map_err(|e| e.to_string())?;
    let bundle = noun_bundle();
    let cfg = SelfTrainConfig { max_rounds: 4, patience: 10, ..Default::default() };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = zeroshot_nuclei::selftrain::RunDir::create(tmp.path(), false).map_err(|e| e.to_string())?;
    let out = run_self_training(
        TeacherSource::Grounder { grounder: &grounder, prompts: &bundle },
        &BlobStudent::default(),
        &images,
        &cfg,
        None,
        Some(&dir),
    )
    .map_err(|e| e.to_string())?;
    let boxes = |k: usize| -> Result<Vec<(u64, Vec<BBox>)>, String> {
        let set = load_annotations(&tmp.path().join(format!("rounds/{k}/pseudo_labels.json"))).map_err(|e| e.to_string())?;
        Ok(set
            .image_ids()
            .into_iter()
            .map(|id| {
                let mut b = set.boxes(id);
                b.sort_by(|x, y| x.total_cmp(y));
                (id, b)
            })
            .collect())
    };
    let first = boxes(0)?;
    let mut identical = true;
    for k in 1..out.reports.len() {
        identical &= boxes(k)? == first;
    }
    let stab: Vec<f64> = out.reports.iter().filter_map(|r| r.stability_vs_previous).collect();
    check(
        identical && stab.len() == 4 && stab.iter().all(|&s| s == 1.0),
        format!("{} rounds with identical boxes, stability {stab:?}", out.reports.len()),
        || format!("boxes identical: {identical}; stability {stab:?}"),
    )
}

fn random_set(rng: &mut ChaCha8Rng) -> AnnotationSet {
    let n = rng.random_range(0..=4u64);
    let images: Vec<ImageRecord> = image_records(n, 0)
        .into_iter()
        .map(|r| ImageRecord {
            width: rng.random_range(1..=2048),
            height: rng.random_range(1..=2048),
            file_name: format!("dir {}/ñ_{}.png", rng.random_range(0..9), r.id),
            ..r
        })
        .collect();
    let mut set = AnnotationSet::new(images);
    for id in 1..=n {
        for _ in 0..rng.random_range(0..=12) {
            let bbox = BBox::new(
                rng.random_range(0.0..1000.0),
                rng.random_range(0.0..1000.0),
                rng.random_range(1e-3..200.0),
                rng.random_range(1e-3..200.0),
            )
            .unwrap();
            let score = rng.random_bool(0.6).then(|| rng.random_range(0.0..=1.0));
            set.push(id, Annotation { bbox, category_id: NUCLEI_CATEGORY, score }).unwrap();
        }
    }
    set
}

fn coco_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0c0);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a.json"), tmp.path().join("b.json"));
    for case in 0..50 {
        let set = random_set(&mut rng);
        save_annotations(&set, &a).map_err(|e| e.to_string())?;
        let back = load_annotations(&a).map_err(|e| e.to_string())?;
        save_annotations(&back, &b).map_err(|e| e.to_string())?;
        let same_bytes = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
        if back != set || !same_bytes {
            return Err(format!("case {case}: identity {}, byte-stable {same_bytes}", back == set));
        }
    }
    Ok("50 sets, identity and byte-stable".into())
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.join("rounds")];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.push(("summary.json".into(), std::fs::read(root.join("summary.json")).unwrap()));
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = RunConfig {
        seed: Some(21),
        out: Some(tmp.path().join("data")),
        ..Default::default()
    };
    cmd_synth(&base.clone().resolve().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let mut cfg = base.clone();
        cfg.dataset = Some(tmp.path().join("data/annotations.json"));
        cfg.out = Some(tmp.path().join(name));
        cfg.selftrain.max_rounds = 3;
        cfg.prompt = Some("nuclei".into());
        let cfg = cfg.resolve().map_err(|e| e.to_string())?;
        let s = cmd_selftrain(&cfg).map_err(|e| e.to_string())?;
        Ok(snapshot(&s.run_dir))
    };
    let (a, b) = (run("a")?, run("b")?);
    let bytes: usize = a.iter().map(|f| f.1.len()).sum();
    check(
        a == b,
        format!("{} snapshot files ({bytes} bytes) bit-identical", a.len()),
        || {
            let diff: Vec<&String> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| &x.0).collect();
            format!("files differ: {diff:?}")
        },
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("evalkit oracle equivalence", evalkit_oracle),
        ("NMS equivalence", nms_equivalence),
        ("IoU pixel-grid oracle", iou_pixel_grid),
        ("tiling 1000px / 256 / grid 4", tiling),
        ("prompt-forge reproduction", prompt_forge),
        ("self-training dynamic", self_training_dynamic),
        ("zero-noise fixed point", zero_noise_fixed_point),
        ("COCO I/O roundtrip", coco_roundtrip),
        ("selftrain determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
