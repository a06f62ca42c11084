//! Class histograms and client sizes under the three partition schemes.
//!
//! cargo run --example partitions

use fednoisy::data::{make_synthetic, partition_class_skew, partition_iid, partition_quantity_skew, ClientAssignment};

fn show(name: &str, clients: &[ClientAssignment], k: usize) {
    println!("{name}");
    for c in clients.iter().take(5) {
        let mut hist = vec![0; k];
        for &y in &c.true_labels {
            hist[y] += 1;
        }
        println!("  client {}: {:4} samples, classes {hist:?}", c.client_id, c.len());
    }
}

fn main() -> fednoisy::Result<()> {
    let data = make_synthetic(5, 400, 4, 0.5, 3)?;
    show("iid", &partition_iid(&data, 10, 3)?, 5);
    show("class skew p_class=0.7 alpha=0.5", &partition_class_skew(&data, 10, 0.7, 0.5, 3)?, 5);
    show("quantity skew sigma_log=0.8", &partition_quantity_skew(&data, 10, 0.8, 3)?, 5);
    Ok(())
}
