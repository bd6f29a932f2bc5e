//! Positional encoding and the visibility mask schedule.

use fieldforge::encoding::{encode, frequency_mask, hard_mask_cutoff, FrequencyMask};

fn main() {
    let x = [0.25, -0.5, 0.75];
    let enc = encode(&x, 4);
    println!("encoding of {x:?} with 4 bands ({} values):", enc.len());
    println!("  {:.3?}", enc);

    let (bands, end) = (10, 1000);
    println!("\nmask over {bands} bands, curriculum ends at iteration {end}");
    for t in [0, 100, 250, 500, 750, 999, 1000] {
        let m = frequency_mask(t, end, bands);
        let row: String = m.alpha.iter().map(|a| format!("{a:4.2} ")).collect();
        println!("  t={t:4}  cutoff {:2}  {row}", hard_mask_cutoff(t, end, bands));
    }

    let fixed = FrequencyMask::static_ratio(bands, 0.1);
    println!("\nstatic 10% mask: {:?}", fixed.alpha);
}
