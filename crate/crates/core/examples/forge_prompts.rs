// Designs attribute prompts: coarse detections are cropped and captioned, attribute words are
// counted, and the top shape and colour words are combined into "[shape] [color] [noun]"
// triplets.
//
// cargo run --example forge_prompts

use zeroshot_nuclei::backends::{OracleGrounder, OracleNoiseConfig, StaticSynonyms, TemplateCaptioner};
use zeroshot_nuclei::data::{generate_synthetic_dataset, SyntheticSceneConfig};
use zeroshot_nuclei::prompt_forge::{
    forge, render_query, AttributeLexicon, ForgeConfig, PromptBundle, PromptMode, QueryStrategy,
    DEFAULT_MAX_TRIPLETS_PER_QUERY,
};

pub fn run_example() -> zeroshot_nuclei::Result<Vec<PromptBundle>> {
    let (images, truth) = generate_synthetic_dataset(&SyntheticSceneConfig::default(), 8)?;
    let grounder = OracleGrounder::new(truth, OracleNoiseConfig::weak_teacher(3))?;
    let captioner = TemplateCaptioner::default();
    let synonyms = StaticSynonyms::builtin();
    let lexicon = AttributeLexicon::builtin();

    let mut bundles = Vec::new();
    for (mode, attr_aug) in [(PromptMode::Noun, false), (PromptMode::Full, false), (PromptMode::Full, true)] {
        let cfg = ForgeConfig { mode, attr_aug, ..Default::default() };
        let out = forge(&images, &grounder, &captioner, &synonyms, &lexicon, &cfg)?;
        println!("== mode {mode}, attribute synonyms {attr_aug}");
        if let Some(first) = out.captions.first() {
            println!("{} captions, e.g. {first:?}", out.captions.len());
            println!("shape counts {:?}", out.stats.shape_counts);
            println!("color counts {:?}", out.stats.color_counts);
        }
        for q in render_query(&out.bundle, QueryStrategy::Concatenated, DEFAULT_MAX_TRIPLETS_PER_QUERY) {
            println!("  {q}");
        }
        bundles.push(out.bundle);
    }
    Ok(bundles)
}

fn main() -> zeroshot_nuclei::Result<()> {
    run_example().map(|_| ())
}
