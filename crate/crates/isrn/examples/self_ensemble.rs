//! Self-ensemble: average the model over the eight flip/rotation views of
//! the input (inverting each transform on the way back). On a briefly
//! trained model the ensemble reliably edges out the single pass.
//!
//!     cargo run --example self_ensemble

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use isrn::data::{crop_to_multiple, generate_toy_corpus, load_dir};
use isrn::degrade::{degrade, DegradationSpec};
use isrn::metrics::psnr;
use isrn::pipeline::{self_ensemble_forward, IsrnModel, ModelConfig};
use isrn::train::{train_loop, TrainConfig};

fn main() -> isrn::Result<()> {
    let out = std::path::PathBuf::from("target/example-out/self_ensemble");
    let _ = std::fs::remove_dir_all(&out);
    let train_dir = out.join("train");
    let val_dir = out.join("val");
    generate_toy_corpus(&train_dir, 8, 64, 31)?;
    generate_toy_corpus(&val_dir, 4, 64, 32)?;

    let scale = 2;
    let model = IsrnModel::new(ModelConfig::toy(scale, 2), &mut ChaCha8Rng::seed_from_u64(13))?;
    let cfg = TrainConfig { epochs: 24, ..TrainConfig::toy(scale) };
    println!("training for {} steps...", cfg.epochs * cfg.steps_per_epoch);
    train_loop(&model, &train_dir, None, &out.join("run"), &cfg, None)?;

    let spec = DegradationSpec::bicubic(scale);
    let (mut single_sum, mut ens_sum, mut wins) = (0.0, 0.0, 0usize);
    let images = load_dir(&val_dir)?;
    println!("{:<12} {:>10} {:>10}", "image", "single", "ensemble");
    for (i, named) in images.iter().enumerate() {
        let hr = crop_to_multiple(&named.image, scale)?;
        let lr = degrade(&hr, &spec.for_image(i as u64))?;
        let single = psnr(&model.forward_infer(&lr)?.0.clamp(0.0, 1.0), &hr, scale)?;
        let ens = psnr(&self_ensemble_forward(&model, &lr)?.clamp(0.0, 1.0), &hr, scale)?;
        println!("{:<12} {single:>9.2}  {ens:>9.2}", named.name);
        single_sum += single;
        ens_sum += ens;
        wins += (ens > single) as usize;
    }
    let n = images.len() as f64;
    println!(
        "mean: single {:.2} dB, ensemble {:.2} dB (+{:.2}); ensemble wins {wins}/{}",
        single_sum / n,
        ens_sum / n,
        (ens_sum - single_sum) / n,
        images.len()
    );
    Ok(())
}
