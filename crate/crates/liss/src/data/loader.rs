//! Directory loading for user-supplied unpaired datasets.
//!
//! Layout: either a flat directory per domain (split internally) or
//! `train/` plus `val/` subdirectories. Depth pseudo-labels live in a
//! sibling directory per domain and are matched by filename stem; they
//! may be single-channel images or raw little-endian f32 maps with an
//! 8-byte `(u32 height, u32 width)` header (`.f32` extension).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt};
use image::imageops::FilterType;
use ndarray::{Array2, Array3};

use super::{split_indices, DomainData, UnpairedDataset};
use crate::error::{Error, Result};
use crate::tasks::normalize_depth;

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "pgm", "ppm"];

fn is_image_path(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot read '{}': {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    files.sort();
    Ok(files)
}

fn stem_of(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Decodes and resizes an RGB image to `[3, size, size]` in [-1, 1].
fn load_image(path: &Path, size: usize) -> Result<Array3<f32>> {
    let img = image::open(path)?;
    let img = img
        .resize_exact(size as u32, size as u32, FilterType::Triangle)
        .to_rgb8();
    let mut out = Array3::<f32>::zeros((3, size, size));
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            out[[ch, y as usize, x as usize]] = px.0[ch] as f32 / 127.5 - 1.0;
        }
    }
    Ok(out)
}

/// Loads a depth pseudo-label (image or raw f32 map), resizes it to
/// `size` and min-max normalizes it to [0, 1].
pub fn load_depth_map(path: &Path, size: usize) -> Result<Array2<f32>> {
    let raw: Array2<f32> = if path.extension().and_then(|e| e.to_str()) == Some("f32") {
        let bytes = std::fs::read(path)?;
        let mut cur = std::io::Cursor::new(&bytes);
        let h = cur.read_u32::<LittleEndian>()? as usize;
        let w = cur.read_u32::<LittleEndian>()? as usize;
        if bytes.len() != 8 + h * w * 4 {
            return Err(Error::Dataset(format!(
                "raw depth map '{}': size does not match {h}x{w} header",
                path.display()
            )));
        }
        let mut data = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            data.push(cur.read_f32::<LittleEndian>()?);
        }
        Array2::from_shape_vec((h, w), data)
            .map_err(|e| Error::Dataset(format!("bad raw depth shape: {e}")))?
    } else {
        let img = image::open(path)?.to_luma32f();
        let (w, h) = img.dimensions();
        Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
            img.get_pixel(c as u32, r as u32).0[0]
        })
    };

    let (h, w) = raw.dim();
    let resized = if h == size && w == size {
        raw
    } else {
        let mut buf: image::ImageBuffer<image::Luma<f32>, Vec<f32>> =
            image::ImageBuffer::new(w as u32, h as u32);
        for (x, y, px) in buf.enumerate_pixels_mut() {
            px.0 = [raw[[y as usize, x as usize]]];
        }
        let small = image::imageops::resize(
            &buf,
            size as u32,
            size as u32,
            FilterType::Triangle,
        );
        Array2::from_shape_fn((size, size), |(r, c)| {
            small.get_pixel(c as u32, r as u32).0[0]
        })
    };
    Ok(normalize_depth(&resized))
}

fn depth_index(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot read '{}': {e}", dir.display())))?
    {
        let p = entry?.path();
        if p.is_file() {
            map.insert(stem_of(&p), p);
        }
    }
    Ok(map)
}

struct LoadedDomain {
    images: Vec<Array3<f32>>,
    stems: Vec<String>,
    depth: Option<Vec<Option<Array2<f32>>>>,
}

fn load_domain_dir(
    dir: &Path,
    depth_dir: Option<&Path>,
    size: usize,
) -> Result<LoadedDomain> {
    let files = sorted_images(dir)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "no decodable images in '{}'",
            dir.display()
        )));
    }
    let depth_map = depth_dir.map(depth_index).transpose()?;
    let mut images = Vec::with_capacity(files.len());
    let mut stems = Vec::with_capacity(files.len());
    let mut depths = depth_map.as_ref().map(|_| Vec::with_capacity(files.len()));
    for f in &files {
        images.push(load_image(f, size)?);
        let stem = stem_of(f);
        if let (Some(depths), Some(index)) = (depths.as_mut(), depth_map.as_ref()) {
            match index.get(&stem) {
                Some(p) => depths.push(Some(load_depth_map(p, size)?)),
                None => {
                    eprintln!(
                        "warning: no depth label for '{stem}' in '{}'",
                        depth_dir.unwrap().display()
                    );
                    depths.push(None);
                }
            }
        }
        stems.push(stem);
    }
    Ok(LoadedDomain {
        images,
        stems,
        depth: depths,
    })
}

fn build_domain(
    dir: &Path,
    depth_dir: Option<&Path>,
    size: usize,
    split_fraction: f64,
    seed: u64,
) -> Result<DomainData> {
    let train_sub = dir.join("train");
    let val_sub = dir.join("val");
    if train_sub.is_dir() && val_sub.is_dir() {
        let tr = load_domain_dir(&train_sub, depth_dir, size)?;
        let va = load_domain_dir(&val_sub, depth_dir, size)?;
        let mut out = DomainData {
            train: tr.images,
            val: va.images,
            train_depth: match tr.depth {
                Some(d) => d,
                None => Vec::new(),
            },
            val_depth: match va.depth {
                Some(d) => d,
                None => Vec::new(),
            },
            train_stems: tr.stems,
            val_stems: va.stems,
        };
        if out.train_depth.is_empty() {
            out.train_depth = vec![None; out.train.len()];
        }
        if out.val_depth.is_empty() {
            out.val_depth = vec![None; out.val.len()];
        }
        Ok(out)
    } else {
        let loaded = load_domain_dir(dir, depth_dir, size)?;
        let val = split_indices(loaded.images.len(), split_fraction, seed)?;
        let n = loaded.images.len();
        let depth_opt: Vec<Option<Array2<f32>>> = match loaded.depth {
            Some(d) => d,
            None => vec![None; n],
        };
        let mut data = DomainData {
            train: Vec::new(),
            val: Vec::new(),
            train_depth: Vec::new(),
            val_depth: Vec::new(),
            train_stems: Vec::new(),
            val_stems: Vec::new(),
        };
        let is_val = {
            let mut v = vec![false; n];
            for &i in &val {
                v[i] = true;
            }
            v
        };
        for (i, (img, (stem, depth))) in loaded
            .images
            .into_iter()
            .zip(loaded.stems.into_iter().zip(depth_opt.into_iter()))
            .enumerate()
        {
            if is_val[i] {
                data.val.push(img);
                data.val_stems.push(stem);
                data.val_depth.push(depth);
            } else {
                data.train.push(img);
                data.train_stems.push(stem);
                data.train_depth.push(depth);
            }
        }
        Ok(data)
    }
}

/// Loads two domain directories into a resized, normalized dataset.
pub fn load_unpaired_dataset(
    path_a: &Path,
    path_b: &Path,
    depth_a: Option<&Path>,
    depth_b: Option<&Path>,
    split_fraction: f64,
    seed: u64,
    size: usize,
) -> Result<UnpairedDataset> {
    let a = build_domain(path_a, depth_a, size, split_fraction, seed.wrapping_add(1))?;
    let b = build_domain(path_b, depth_b, size, split_fraction, seed.wrapping_add(2))?;
    Ok(UnpairedDataset {
        a,
        b,
        image_size: size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn write_images(dir: &Path, n: usize, side: u32) {
        std::fs::create_dir_all(dir).unwrap();
        for i in 0..n {
            let img = RgbImage::from_fn(side, side, |x, y| {
                Rgb([
                    (x * 3 + i as u32) as u8,
                    (y * 5) as u8,
                    ((x + y) * 2) as u8,
                ])
            });
            img.save(dir.join(format!("img_{i:03}.png"))).unwrap();
        }
    }

    #[test]
    fn flat_directories_split_and_normalize() {
        let tmp = tempfile::tempdir().unwrap();
        let pa = tmp.path().join("a");
        let pb = tmp.path().join("b");
        write_images(&pa, 10, 24);
        write_images(&pb, 8, 24);
        let ds = load_unpaired_dataset(&pa, &pb, None, None, 0.1, 3, 16).unwrap();
        assert_eq!(ds.a.train.len() + ds.a.val.len(), 10);
        assert_eq!(ds.a.val.len(), 1);
        assert_eq!(ds.b.val.len(), 1);
        for img in &ds.a.train {
            assert_eq!(img.dim(), (3, 16, 16));
            for &v in img.iter() {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn decode_normalize_round_trip_within_one_over_255() {
        let tmp = tempfile::tempdir().unwrap();
        let pa = tmp.path().join("a");
        std::fs::create_dir_all(&pa).unwrap();
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([x as u8 * 16, y as u8 * 16, 100]));
        img.save(pa.join("one.png")).unwrap();
        let loaded = load_image(&pa.join("one.png"), 16).unwrap();
        for (x, y, px) in img.enumerate_pixels() {
            for ch in 0..3 {
                let back = (loaded[[ch, y as usize, x as usize]] + 1.0) * 127.5;
                assert!((back - px.0[ch] as f32).abs() <= 1.0 / 255.0 + 1e-4);
            }
        }
    }

    #[test]
    fn empty_directory_is_a_dataset_error() {
        let tmp = tempfile::tempdir().unwrap();
        let pa = tmp.path().join("a");
        let pb = tmp.path().join("b");
        std::fs::create_dir_all(&pa).unwrap();
        write_images(&pb, 4, 16);
        assert!(load_unpaired_dataset(&pa, &pb, None, None, 0.1, 3, 16).is_err());
    }

    #[test]
    fn missing_depth_label_is_marked_and_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let pa = tmp.path().join("a");
        let pb = tmp.path().join("b");
        let da = tmp.path().join("depth_a");
        write_images(&pa, 4, 16);
        write_images(&pb, 4, 16);
        std::fs::create_dir_all(&da).unwrap();
        // Only one label present.
        let gray = image::GrayImage::from_fn(16, 16, |x, _| image::Luma([x as u8 * 10]));
        gray.save(da.join("img_000.png")).unwrap();
        let ds =
            load_unpaired_dataset(&pa, &pb, Some(&da), None, 0.0, 3, 16).unwrap();
        assert!(ds.a.missing_depth_stem().is_some());
        assert!(ds.require_depth_labels().is_err());
    }

    #[test]
    fn raw_f32_depth_maps_load_and_normalize() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("d.f32");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        for i in 0..16 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        std::fs::write(&p, bytes).unwrap();
        let d = load_depth_map(&p, 4).unwrap();
        assert_eq!(d.dim(), (4, 4));
        assert_eq!(d[[0, 0]], 0.0);
        assert_eq!(d[[3, 3]], 1.0);
    }
}
