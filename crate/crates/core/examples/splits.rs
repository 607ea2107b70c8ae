//! Stratified and generalization splits over a planned dataset.

use std::collections::BTreeMap;

use violin::dataset::{
    generalization_split, is_single_color, plan_dataset, stratified_split, GenConfig, GeneralizationStrategy,
    TemplatePool, DEFAULT_PROMPT_HOLDOUT,
};

fn main() {
    let cfg = GenConfig::default().scaled(0.1);
    let mut entries = plan_dataset(&cfg, TemplatePool::bundled()).expect("plan");
    let s = stratified_split(&mut entries, 0.8, 7).expect("split");
    println!(
        "stratified 8:2 -> train {} test {} ({} in tiny strata)",
        s.train, s.test, s.warned
    );

    let mut single: Vec<_> = entries.into_iter().filter(is_single_color).collect();
    for strategy in [
        GeneralizationStrategy::Prompt {
            holdout: DEFAULT_PROMPT_HOLDOUT,
        },
        GeneralizationStrategy::Hue1,
        GeneralizationStrategy::Hue2,
    ] {
        let s = generalization_split(&mut single, strategy, 7).expect("split");
        println!("{:<7} train {:>5} test {:>5}", strategy.name(), s.train, s.test);
    }

    let mut by_variation: BTreeMap<u8, usize> = BTreeMap::new();
    for e in &single {
        *by_variation.entry(e.variation).or_default() += 1;
    }
    println!("single-color samples per variation: {by_variation:?}");
}
