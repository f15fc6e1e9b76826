//! Fits depth-2 trees to the concentric-circles data over several seeds and
//! prints test AUC, leaf count and surviving facets per node.
//!
//! cargo run --release -p cpt-core --example circles -- [seeds] [epochs]

use std::time::Instant;

use cpt_core::data::{split, synth_circles, DEFAULT_INNER_RADIUS, DEFAULT_OUTER_RADIUS};
use cpt_core::{evaluate, train_model, PipelineConfig, TrainConfig};

fn main() -> cpt_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let mut total = 0.0;
    for seed in 0..seeds {
        let data = synth_circles(2000, DEFAULT_INNER_RADIUS, DEFAULT_OUTER_RADIUS, seed)?;
        let parts = split(&data, &[0.7, 0.15, 0.15], seed)?;
        let train = TrainConfig {
            truncation_k: 50,
            epochs,
            seed,
            ..TrainConfig::default()
        };
        let config = PipelineConfig {
            max_depth: 2,
            train,
            ..PipelineConfig::default()
        };
        let start = Instant::now();
        let model = train_model(&parts[0], Some(&parts[1]), &config)?;
        let report = evaluate(&model.tree, &model.prepare(&parts[2])?)?;
        total += report.value;
        println!(
            "seed {seed}: {} {:.4}, leaves {}, facets {:?}, {:.1?}",
            report.metric_kind,
            report.value,
            report.tree_stats.leaf_count,
            report.tree_stats.effective_experts_per_node,
            start.elapsed()
        );
    }
    println!("mean {:.4}", total / seeds as f64);
    Ok(())
}
