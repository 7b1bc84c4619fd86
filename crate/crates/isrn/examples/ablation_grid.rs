//! Walk the ablation grid: iteration count, feature normalization on/off,
//! padding unit on/off, shared vs per-round correction solvers. For each
//! axis the parameter delta must match the closed-form expectation exactly
//! (e.g. dropping FN removes exactly M·(k²+1) parameters per FN layer),
//! and every toy-width variant trains one short epoch to prove the
//! configuration is runnable end to end.
//!
//!     cargo run --example ablation_grid

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use isrn::data::generate_toy_corpus;
use isrn::degrade::DegradationSpec;
use isrn::pipeline::{IsrnModel, ModelConfig};
use isrn::train::{train_loop, TrainConfig};

fn build(config: ModelConfig) -> isrn::Result<IsrnModel<f32>> {
    IsrnModel::new(config, &mut ChaCha8Rng::seed_from_u64(0))
}

fn main() -> isrn::Result<()> {
    // Closed-form deltas, checked exactly at full width.
    let full = ModelConfig::default();
    let base = build(full)?.count_params();
    let m = full.filters;
    let fn_layers = full.groups * (full.blocks_per_group + 1);
    let fn_delta = fn_layers * m * (3 * 3 + 1);
    let no_fn = build(ModelConfig { enable_fn: false, ..full })?.count_params();
    println!(
        "feature normalization off: {base} -> {no_fn} (drop {}, expected {fn_delta} = {fn_layers} layers x M(k^2+1)) {}",
        base - no_fn,
        ok(base - no_fn == fn_delta)
    );

    let pad_delta = full.groups * (2 * (9 * m * m + m) + m * 10);
    let no_pad = build(ModelConfig { enable_padding_unit: false, ..full })?.count_params();
    println!(
        "padding unit off:          {base} -> {no_pad} (drop {}, expected {pad_delta} = G x (two convs + FN)) {}",
        base - no_pad,
        ok(base - no_pad == pad_delta)
    );

    let pair = 20_259 + 42_179; // one down-sampler + one correction solver
    let shared = build(ModelConfig { share_lr_solvers: true, ..full })?.count_params();
    let share_delta = (full.iterations - 2) * pair;
    println!(
        "shared correction pair:    {base} -> {shared} (drop {}, expected {share_delta} = (K-2) x pair) {}",
        base - shared,
        ok(base - shared == share_delta)
    );

    println!("\nrounds sweep (distinct pairs, full width):");
    let mut prev: Option<usize> = None;
    for k in [1usize, 3, 4, 5] {
        let model = build(ModelConfig { iterations: k, ..full })?;
        let p = model.count_params();
        let macs = model.count_macs(720, 1280)?;
        let delta = prev.map(|q| format!(" (+{} over previous row)", p - q)).unwrap_or_default();
        println!("  K={k}: {p:>9} params, {macs:>15} MACs{delta}");
        prev = Some(p);
    }

    // Every toy-width variant must actually train.
    println!("\none smoke epoch per toy-width variant:");
    let dir = std::path::PathBuf::from("target/example-out/ablation_grid");
    let _ = std::fs::remove_dir_all(&dir);
    generate_toy_corpus(&dir.join("train"), 4, 48, 77)?;
    let toy = ModelConfig::toy(2, 2);
    let variants: Vec<(String, ModelConfig)> = vec![
        ("K=1".into(), ModelConfig { iterations: 1, ..toy }),
        ("K=2 baseline".into(), toy),
        ("no FN".into(), ModelConfig { enable_fn: false, ..toy }),
        ("no padding".into(), ModelConfig { enable_padding_unit: false, ..toy }),
        ("shared pair, K=3".into(), ModelConfig { iterations: 3, share_lr_solvers: true, ..toy }),
        ("no fusion, K=1".into(), ModelConfig { iterations: 1, enable_mle: false, ..toy }),
    ];
    let cfg = TrainConfig {
        lr0: 1e-3,
        epochs: 1,
        steps_per_epoch: 5,
        batch_size: 4,
        lr_patch: 10,
        degradation: DegradationSpec::bicubic(2),
        checkpoint_every: 0,
        ..TrainConfig::toy(2)
    };
    for (name, config) in variants {
        let model = build(config)?;
        let out = dir.join(name.replace([' ', ','], "_").replace('=', ""));
        let rows = train_loop(&model, &dir.join("train"), None, &out, &cfg, None)?;
        println!(
            "  {name:<18} {:>7} params, loss {:.4} -> {:.4}",
            model.count_params(),
            rows.first().expect("ran").loss,
            rows.last().expect("ran").loss
        );
    }
    Ok(())
}

fn ok(good: bool) -> &'static str {
    if good { "[exact]" } else { "[MISMATCH]" }
}
