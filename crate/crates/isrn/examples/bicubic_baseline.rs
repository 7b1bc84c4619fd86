//! Score plain bicubic upscaling against ground truth with the standard
//! evaluation convention (luma channel, scale-wide border shave).
//!
//! If `ISRN_DATA_DIR` points at a directory containing `Set5/` (or `./data`
//! does), the x4 run on it should land at 28.42 dB / 0.8104 — the published
//! reference values for that benchmark. Otherwise a synthetic corpus is
//! scored, exercising the identical code path.
//!
//!     cargo run --example bicubic_baseline

use std::path::PathBuf;

use isrn::data::{crop_to_multiple, generate_toy_corpus, load_dir};
use isrn::degrade::{bicubic_up, degrade, DegradationSpec};
use isrn::metrics::{Convention, MetricsReport};

fn main() -> isrn::Result<()> {
    let scale = 4;
    let (dir, is_benchmark) = match benchmark_dir() {
        Some(d) => (d, true),
        None => {
            let d = PathBuf::from("target/example-out/bicubic_baseline");
            let _ = std::fs::remove_dir_all(&d);
            generate_toy_corpus(&d, 5, 96, 3)?;
            (d, false)
        }
    };
    println!("scoring bicubic x{scale} on {}", dir.display());

    let spec = DegradationSpec::bicubic(scale);
    let mut report = MetricsReport::new(Convention { y_channel: true, shave: scale });
    for (i, named) in load_dir(&dir)?.iter().enumerate() {
        let hr = crop_to_multiple(&named.image, scale)?;
        let lr = degrade(&hr, &spec.for_image(i as u64))?;
        let up = bicubic_up(&lr, scale)?.clamp(0.0, 1.0);
        report.push(&named.name, &up, &hr)?;
    }
    println!("{}", report.table());
    if is_benchmark {
        println!("published reference for Set5 x4: 28.42 dB / 0.8104");
    } else {
        println!("(synthetic corpus; set ISRN_DATA_DIR to score a real benchmark)");
    }
    Ok(())
}

fn benchmark_dir() -> Option<PathBuf> {
    let roots = [
        std::env::var("ISRN_DATA_DIR").ok().map(PathBuf::from),
        Some(PathBuf::from("data")),
    ];
    roots
        .into_iter()
        .flatten()
        .map(|r| r.join("Set5"))
        .find(|d| d.is_dir())
}
