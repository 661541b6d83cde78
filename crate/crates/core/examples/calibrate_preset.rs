//! Re-derives the `paper_like` simulator preset from its calibration targets.
//!
//! cargo run -p spin-readout --example calibrate_preset

use spin_readout::gate::sweep_expected;
use spin_readout::trace::{
    make_profiles, PhotodynamicsParams, PAPER_LIKE_MAX_CONTRAST, PAPER_LIKE_PHOTONS_PER_MEASUREMENT,
};

fn main() -> spin_readout::Result<()> {
    let tuned = PhotodynamicsParams::uncalibrated()
        .calibrate(PAPER_LIKE_PHOTONS_PER_MEASUREMENT, PAPER_LIKE_MAX_CONTRAST)?;
    println!("steady_rate = {:e}", tuned.steady_rate);
    println!("dark_dip    = {}", tuned.dark_dip);

    let (p0, p1) = make_profiles(&tuned)?;
    let sweep = sweep_expected(&p0, &p1, 1.0, 0)?;
    let c = sweep.max_contrast().expect("valid sweep");
    let v = sweep.min_variance().expect("valid sweep");
    println!(
        "photons/measurement: bright {} dark {}",
        p0.total(),
        p1.total()
    );
    println!(
        "max-C gate {} ns (C = {:.4}), min-V gate {} ns (C = {:.4}, V ratio {:.3})",
        c.window.width_bins as f64 * tuned.bin_width_ns,
        c.contrast,
        v.window.width_bins as f64 * tuned.bin_width_ns,
        v.contrast,
        c.total_variance / v.total_variance
    );
    if tuned != PhotodynamicsParams::paper_like() {
        println!("note: frozen preset differs from this calibration");
    }
    Ok(())
}
