//! Writes the planted two-group demo dataset to disk.
//!
//! Images are small grayscale PNGs: a flat background with a darker square
//! where the stub encoder plants the defect, so the files look like what
//! their embeddings say.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use nand_core::synthetic::{fixture_class, fixture_params, region_for, synthetic_index, FIXTURE_DIM};

use crate::cache::PLANTS;

pub const IMAGE_SIZE: u32 = 32;

/// Writes `<dir>/data/...`, `<dir>/data/plants.json` and `<dir>/nand.toml`.
/// Returns the config path.
pub fn write_fixture(dir: &Path, seed: u64) -> anyhow::Result<PathBuf> {
    let data = dir.join("data");
    let index = synthetic_index(&data, &[fixture_class()]);
    let params = fixture_params();
    for class in &index.classes {
        for image in class.train.iter().chain(&class.test) {
            let path = image.path(&data);
            fs::create_dir_all(path.parent().expect("image paths have parents"))?;
            let mut img = GrayImage::from_pixel(IMAGE_SIZE, IMAGE_SIZE, Luma([200]));
            if image.anomaly_type != "good" {
                let r = region_for(&image.id(), params.region_side);
                let s = IMAGE_SIZE as f64;
                for y in (r.top * s) as u32..((r.bottom * s) as u32).min(IMAGE_SIZE) {
                    for x in (r.left * s) as u32..((r.right * s) as u32).min(IMAGE_SIZE) {
                        img.put_pixel(x, y, Luma([60]));
                    }
                }
            }
            img.save(&path)?;
        }
    }
    fs::write(data.join(PLANTS), serde_json::to_string_pretty(&params)? + "\n")?;
    let config = dir.join("nand.toml");
    fs::write(
        &config,
        format!(
            "[dataset]\nroot = \"data\"\n\n[cache]\ndir = \"cache\"\n\n[encoder]\nkind = \"stub\"\nseed = {seed}\n\
             layers = [[8, 8, {FIXTURE_DIM}], [8, 8, {FIXTURE_DIM}]]\ntext_dim = {FIXTURE_DIM}\n\n\
             [detector]\nkind = \"zs\"\nmap_size = [32, 32]\ncoreset_fraction = 0.25\n\n\
             [suppression]\nsize = [32, 32]\n"
        ),
    )?;
    Ok(config)
}
