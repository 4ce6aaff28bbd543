//! Generate a random tissue phantom and export its parameter maps.
//!
//! ```sh
//! cargo run --release --example phantom_maps
//! ```

use puq::harness::export::{export_csv, export_pgm16};
use puq::harness::tensor_file::{load_tensor, save_tensor, TensorFile};
use puq::physics::{make_phantom, PhantomRanges, PhantomSpec};

fn main() -> anyhow::Result<()> {
    let seed = 42;
    let spec = PhantomSpec::random(64, 64, &PhantomRanges::default(), seed, 0);
    let phantom = make_phantom(&spec)?;

    let fg = phantom.foreground.iter().filter(|&&b| b).count();
    println!("phantom: 64x64, {} elliptical regions, {fg} foreground pixels", spec.regions.len());
    for (k, region) in spec.regions.iter().enumerate() {
        println!(
            "  region {k}: center ({:5.1}, {:5.1})  axes ({:4.1}, {:4.1})  T1 {:6.1} ms  T2 {:5.1} ms  PD {:.2}",
            region.center.0,
            region.center.1,
            region.semi_axes.0,
            region.semi_axes.1,
            region.tissue.t1_ms,
            region.tissue.t2_ms,
            region.tissue.pd
        );
    }

    let dir = std::env::temp_dir().join("puq_phantom_maps");
    std::fs::create_dir_all(&dir)?;
    for (name, map) in [
        ("t1_ms", &phantom.t1_ms),
        ("t2_ms", &phantom.t2_ms),
        ("pd", &phantom.pd),
    ] {
        save_tensor(&dir.join(format!("{name}.tnsr")), &TensorFile::from_map_f64(map))?;
        export_pgm16(map, &dir.join(format!("{name}.pgm")))?;
        export_csv(map, &dir.join(format!("{name}.csv")))?;
    }

    // tensor files round-trip bit-exactly
    let back = load_tensor(&dir.join("t2_ms.tnsr"))?;
    assert_eq!(back.to_map_f64()?, phantom.t2_ms);
    println!("maps exported to {}", dir.display());
    Ok(())
}
