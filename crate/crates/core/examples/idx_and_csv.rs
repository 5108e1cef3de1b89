//! Writes a tiny IDX image/label pair and a CSV file, then loads both back
//! as datasets and splits them.

use nuens::data::{load_csv, load_idx, save_csv, split, write_idx_images, write_idx_labels, CsvSchema, SplitSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("nuens_idx_and_csv");
    std::fs::create_dir_all(&dir)?;

    // twelve 4×4 "images": class k lights up row k
    let (rows, cols) = (4u32, 4u32);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..12u8 {
        let class = i % 4;
        for r in 0..rows as u8 {
            for _ in 0..cols {
                pixels.push(if r == class { 255 } else { 16 * i });
            }
        }
        labels.push(class);
    }
    let (images_path, labels_path) = (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"));
    write_idx_images(&images_path, rows, cols, &pixels)?;
    write_idx_labels(&labels_path, &labels)?;
    let images = load_idx(&images_path, &labels_path)?;
    println!(
        "idx: {} rows, {} features, {} classes",
        images.len(),
        images.dim(),
        images.num_classes
    );

    let csv_path = dir.join("images.csv");
    save_csv(&csv_path, &images, "digit")?;
    let reloaded = load_csv(&csv_path, &CsvSchema::new("digit"))?;
    println!(
        "csv round trip identical: {}",
        reloaded.features == images.features && reloaded.labels == images.labels
    );

    let spec = SplitSpec {
        train_size: 6,
        val_size: 2,
        unlabeled_size: 2,
        test_size: 2,
        seed: 1,
    };
    let s = split(&reloaded, &spec)?.standardized()?;
    println!(
        "split: train {:?}  val {:?}  unlabeled {:?}  test {:?}",
        s.indices.train, s.indices.val, s.indices.unlabeled, s.indices.test
    );
    Ok(())
}
