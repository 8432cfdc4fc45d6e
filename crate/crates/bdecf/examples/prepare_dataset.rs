//! The data path end to end: generate a ratings log, export it as csv,
//! parse it back, apply the margin filters, and take the leave-one-out
//! split that every evaluation in this crate uses.
//!
//! ```sh
//! cargo run --example prepare_dataset
//! ```

use bdecf::data::{self, load_ratings, synthetic, Format, LoadOptions};
use bdecf::error::Result;

fn main() -> Result<()> {
    let raw = synthetic::toy(60, 45, 1500, 3);
    let path = std::env::temp_dir().join("bdecf_example_ratings.csv");
    raw.export_csv(&path)?;
    println!("wrote {} ratings to {}", raw.len(), path.display());

    let loaded = load_ratings(&path, Format::Csv, &LoadOptions::default())?;
    println!(
        "parsed back: {} users x {} items, fingerprint {}",
        loaded.num_users,
        loaded.num_items,
        loaded.fingerprint()
    );

    // Drop items with fewer than 3 raters and users with fewer than 8
    // ratings, repeating until both floors hold, then re-index densely.
    let filtered = data::preprocess(&loaded, 3, 8)?;
    println!(
        "after filtering: {} users x {} items, {} ratings ({:.1}% dense)",
        filtered.num_users,
        filtered.num_items,
        filtered.len(),
        filtered.density() * 100.0
    );

    let split = data::leave_one_out_split(&filtered);
    println!(
        "leave-one-out: {} train interactions, {} test pairs",
        split.train.len(),
        split.test.len()
    );
    let t = &split.test[0];
    println!(
        "user {} holds out item {} (rating {}, latest timestamp {})",
        t.user, t.item, t.rating, t.timestamp
    );

    // Candidate lists pair the held-out item with negatives the user never
    // touched; the per-user seed makes the pools reproducible.
    let negatives =
        data::sample_negatives_excluding(&split.train, t.user as usize, &[t.item], 10, 77)?;
    println!("10 sampled negatives for user {}: {:?}", t.user, negatives);
    Ok(())
}
