//! Draws per-client noise rates under each noise model and flips labels accordingly.
//!
//! cargo run --example noise_preview

use fednoisy::data::{apply_symmetric_noise, make_synthetic, partition_iid, sample_client_noise_rates, NoiseSpec};

fn main() -> fednoisy::Result<()> {
    let data = make_synthetic(10, 400, 8, 0.5, 1)?;
    let clients = partition_iid(&data, 20, 1)?;
    let specs = [
        ("bernoulli p=0.7", NoiseSpec::Bernoulli { p: 0.7, within_rate: 1.0 }),
        ("truncated gaussian mu=0.3 sigma=0.4", NoiseSpec::TruncGauss { mu: 0.3, sigma: 0.4, a: 0.0, b: 1.0 }),
        ("5 noisy clients at 50%", NoiseSpec::Count { noisy_clients: 5, within_rate: 0.5 }),
    ];
    for (name, spec) in specs {
        let rates = sample_client_noise_rates(&spec, clients.len(), 42)?;
        println!("{name}");
        for (c, &rate) in clients.iter().zip(&rates) {
            let noisy = apply_symmetric_noise(c, rate, data.num_classes, 42)?;
            if rate > 0.0 {
                println!("  client {:2}: rate {rate:.3}, flipped {:.3}", c.client_id, noisy.flip_fraction());
            }
        }
        let clean = rates.iter().filter(|&&r| r == 0.0).count();
        println!("  {clean} of {} clients clean", rates.len());
    }
    Ok(())
}
