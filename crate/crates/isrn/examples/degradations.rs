//! Apply the three degradation pipelines — bicubic downscale (bi),
//! blur-then-downscale (bd) and downscale-then-noise (dn) — to one
//! synthetic image and write the inputs and outputs as PNGs.
//!
//!     cargo run --example degradations

use isrn::data::{generate_toy_corpus, load_image, save_image};
use isrn::degrade::{degrade, DegradationSpec};

fn main() -> isrn::Result<()> {
    let out = std::path::PathBuf::from("target/example-out/degradations");
    let _ = std::fs::remove_dir_all(&out);
    let paths = generate_toy_corpus(&out, 1, 96, 5)?;
    let hr = load_image(&paths[0])?;
    println!("ground truth: {} ({})", paths[0].display(), hr.shape());

    for spec in [
        DegradationSpec::bicubic(4),
        DegradationSpec::blur_down(),
        DegradationSpec::down_noise().with_seed(7),
    ] {
        let lr = degrade(&hr, &spec)?;
        let path = out.join(format!("{}_x{}.png", spec.kind, spec.scale));
        save_image(&path, &lr)?;
        let (lo, hi) = lr.min_max();
        println!(
            "{}: x{} -> {} range [{lo:.3}, {hi:.3}] -> {}",
            spec.kind,
            spec.scale,
            lr.shape(),
            path.display()
        );
    }
    Ok(())
}
