//! Reproduce the model's parameter and multiply-accumulate budget, per
//! component and in total, at the full published width — and check the
//! totals against the figures the architecture was sized to.
//!
//!     cargo run --example audit_complexity

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use isrn::pipeline::{complexity_table, IsrnModel, ModelConfig};

fn main() -> isrn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (out_h, out_w) = (720, 1280);

    for (label, config, params_target, macs_target) in [
        (
            "full model, 5 rounds",
            ModelConfig::default(),
            3_459_539u64,
            986_063_155_200u64,
        ),
        (
            "single round",
            ModelConfig { iterations: 1, ..ModelConfig::default() },
            3_202_875,
            187_378_790_400,
        ),
    ] {
        let model = IsrnModel::<f32>::new(config, &mut rng)?;
        let params = model.count_params() as u64;
        let macs = model.count_macs(out_h, out_w)?;
        println!("== {label} (x{} at {out_w}x{out_h} output) ==", config.scale);
        println!("{}", complexity_table(&model.complexity(out_h, out_w)));
        for (what, got, want) in [("params", params, params_target), ("MACs", macs, macs_target)] {
            let status = if got == want { "exact" } else { "MISMATCH" };
            println!("{what}: {got} (target {want}, {status})");
        }
        println!();
    }
    Ok(())
}
