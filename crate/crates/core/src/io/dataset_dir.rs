//! On-disk dataset layout: `img_%04d.pgm`, `msk_%04d.pgm`, and `manifest.txt`.
//!
//! The manifest's first line is `num_classes K`; each further line names one
//! image/mask pair separated by whitespace. `#` starts a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::SegSample;
use crate::error::{Error, Result};
use crate::io::{pgm, write_atomic};
use crate::tensor::Element;

pub const MANIFEST: &str = "manifest.txt";

pub fn image_name(i: usize) -> String {
    format!("img_{i:04}.pgm")
}

pub fn mask_name(i: usize) -> String {
    format!("msk_{i:04}.pgm")
}

/// Writes samples as 16-bit images (clamped to `[0, 1]`) and 8-bit masks.
pub fn write_dataset<T: Element>(dir: &Path, samples: &[SegSample<T>], num_classes: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!("num_classes {num_classes}\n");
    for (i, s) in samples.iter().enumerate() {
        pgm::write_image(&s.image, &dir.join(image_name(i)))?;
        pgm::write_mask(&s.mask, &dir.join(mask_name(i)))?;
        let _ = writeln!(manifest, "{} {}", image_name(i), mask_name(i));
    }
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

/// Reads a dataset directory; returns the class count and the samples.
pub fn read_dataset<T: Element>(dir: &Path) -> Result<(usize, Vec<SegSample<T>>)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut num_classes = None;
    let mut samples = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: &str| Error::Config(format!("{}:{}: {m}", path.display(), ln + 1));
        match (num_classes, fields.as_slice()) {
            (None, ["num_classes", k]) => {
                num_classes = Some(k.parse::<usize>().map_err(|_| bad("num_classes must be an integer"))?);
            }
            (None, _) => return Err(bad("first entry must be `num_classes K`")),
            (Some(k), [img, msk]) => {
                let s = SegSample::new(pgm::read_image(&dir.join(img))?, pgm::read_mask(&dir.join(msk))?)?;
                s.check_labels(k)?;
                samples.push(s);
            }
            (Some(_), _) => return Err(bad("expected `<image> <mask>`")),
        }
    }
    let k = num_classes.ok_or_else(|| Error::Config(format!("{} has no num_classes line", path.display())))?;
    if samples.is_empty() {
        return Err(Error::Invalid(format!("{} lists no samples", path.display())));
    }
    Ok((k, samples))
}
