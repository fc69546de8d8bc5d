//! Sample construction for the self-supervised tasks.
//!
//! All transforms are pure functions of `(input, parameters)`; labels are
//! whatever transform parameter was applied, so a stored label can always
//! be re-derived.

use std::path::Path;

use image::{ImageBuffer, Rgb};
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const ROTATION_CLASSES: usize = 4;
pub const JIGSAW_CLASSES: usize = 64;
const JIGSAW_TILES: usize = 9;
const FACTORIAL_9: usize = 362_880;

/// Rotates a square `[C, H, W]` image counter-clockwise by
/// `quarter_turns` * 90 degrees. A pure pixel permutation.
pub fn rotate90(img: &Array3<f32>, quarter_turns: usize) -> Result<Array3<f32>> {
    let (c, h, w) = img.dim();
    if h != w {
        return Err(Error::Input(format!(
            "rotate90: image must be square, got {h}x{w}"
        )));
    }
    if quarter_turns >= ROTATION_CLASSES {
        return Err(Error::Input(format!(
            "rotate90: class id {quarter_turns} out of range 0..4"
        )));
    }
    let n = h;
    let mut out = Array3::<f32>::zeros((c, h, w));
    for ch in 0..c {
        for r in 0..n {
            for col in 0..n {
                let v = match quarter_turns {
                    0 => img[[ch, r, col]],
                    1 => img[[ch, col, n - 1 - r]],
                    2 => img[[ch, n - 1 - r, n - 1 - col]],
                    _ => img[[ch, n - 1 - col, r]],
                };
                out[[ch, r, col]] = v;
            }
        }
    }
    Ok(out)
}

/// Rotation pretext sample: the rotated image and its class label.
pub fn make_rotation_sample(
    img: &Array3<f32>,
    class_id: usize,
) -> Result<(Array3<f32>, usize)> {
    Ok((rotate90(img, class_id)?, class_id))
}

fn hamming(a: &[u8; JIGSAW_TILES], b: &[u8; JIGSAW_TILES]) -> u32 {
    a.iter().zip(b.iter()).filter(|(x, y)| x != y).count() as u32
}

/// The fixed set of tile orderings the jigsaw head classifies over.
///
/// Entry 0 is always the identity so "unshuffled" is a representable
/// class; the remaining entries are drawn greedily from a seeded random
/// stream, maximizing the average Hamming distance to the entries already
/// chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationTable {
    perms: Vec<[u8; JIGSAW_TILES]>,
    seed: u64,
    min_hamming: u32,
}

impl PermutationTable {
    pub fn build(seed: u64, count: usize) -> Result<PermutationTable> {
        if count == 0 || count > FACTORIAL_9 {
            return Err(Error::Input(format!(
                "permutation count must be in 1..={FACTORIAL_9}, got {count}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let identity: [u8; JIGSAW_TILES] = [0, 1, 2, 3, 4, 5, 6, 7, 8];
        let mut selected = vec![identity];

        const CANDIDATES_PER_PICK: usize = 64;
        while selected.len() < count {
            let mut best: Option<([u8; JIGSAW_TILES], u64)> = None;
            for _ in 0..CANDIDATES_PER_PICK {
                let mut cand = identity;
                cand.shuffle(&mut rng);
                if selected.contains(&cand) {
                    continue;
                }
                let dist: u64 = selected.iter().map(|s| hamming(s, &cand) as u64).sum();
                if best.as_ref().is_none_or(|(_, d)| dist > *d) {
                    best = Some((cand, dist));
                }
            }
            if let Some((cand, _)) = best {
                selected.push(cand);
            }
            // All candidates were duplicates: draw again from the stream.
        }

        let min_hamming = Self::min_pairwise_hamming(&selected);
        Ok(PermutationTable {
            perms: selected,
            seed,
            min_hamming,
        })
    }

    fn min_pairwise_hamming(perms: &[[u8; JIGSAW_TILES]]) -> u32 {
        let mut min = JIGSAW_TILES as u32;
        for i in 0..perms.len() {
            for j in i + 1..perms.len() {
                min = min.min(hamming(&perms[i], &perms[j]));
            }
        }
        min
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Smallest Hamming distance between any two table entries.
    pub fn min_hamming(&self) -> u32 {
        self.min_hamming
    }

    pub fn perm(&self, id: usize) -> Result<&[u8; JIGSAW_TILES]> {
        self.perms
            .get(id)
            .ok_or_else(|| Error::Input(format!("permutation id {id} out of range")))
    }

    pub fn inverse(&self, id: usize) -> Result<[u8; JIGSAW_TILES]> {
        let p = self.perm(id)?;
        let mut inv = [0u8; JIGSAW_TILES];
        for (dst, &src) in p.iter().enumerate() {
            inv[src as usize] = dst as u8;
        }
        Ok(inv)
    }

    /// Writes one permutation per line as nine space-separated digits;
    /// the line number is the class label.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for p in &self.perms {
            let row: Vec<String> = p.iter().map(|d| d.to_string()).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PermutationTable> {
        let text = std::fs::read_to_string(path)?;
        let mut perms = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let digits: Vec<u8> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<u8>().map_err(|_| {
                        Error::Input(format!("line {}: bad digit '{t}'", lineno + 1))
                    })
                })
                .collect::<Result<_>>()?;
            let arr: [u8; JIGSAW_TILES] = digits.try_into().map_err(|_| {
                Error::Input(format!("line {}: expected 9 entries", lineno + 1))
            })?;
            let mut check = arr;
            check.sort_unstable();
            if check != [0, 1, 2, 3, 4, 5, 6, 7, 8] {
                return Err(Error::Input(format!(
                    "line {}: not a permutation of 0..9",
                    lineno + 1
                )));
            }
            perms.push(arr);
        }
        if perms.is_empty() {
            return Err(Error::Input("permutation file is empty".to_string()));
        }
        let min_hamming = Self::min_pairwise_hamming(&perms);
        Ok(PermutationTable {
            perms,
            seed: 0,
            min_hamming,
        })
    }
}

/// Exact 3x3 tile permutation; requires the side to be divisible by 3.
/// `perm[i]` names the source tile placed at grid position `i`.
pub fn tile_permute(img: &Array3<f32>, perm: &[u8; JIGSAW_TILES]) -> Result<Array3<f32>> {
    let (c, h, w) = img.dim();
    if h != w {
        return Err(Error::Input(format!(
            "tile_permute: image must be square, got {h}x{w}"
        )));
    }
    if h % 3 != 0 {
        return Err(Error::Input(format!(
            "tile_permute: side {h} not divisible by 3"
        )));
    }
    let t = h / 3;
    let mut out = Array3::<f32>::zeros((c, h, w));
    for (dst, &src) in perm.iter().enumerate() {
        let (dr, dc) = (dst / 3, dst % 3);
        let (sr, sc) = (src as usize / 3, src as usize % 3);
        for ch in 0..c {
            for r in 0..t {
                for col in 0..t {
                    out[[ch, dr * t + r, dc * t + col]] =
                        img[[ch, sr * t + r, sc * t + col]];
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear resize of a `[C, H, W]` image in `[-1, 1]`.
fn resize_chw(img: &Array3<f32>, side: usize) -> Array3<f32> {
    let (c, h, w) = img.dim();
    assert_eq!(c, 3, "resize_chw expects 3 channels");
    let mut buf: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        // Shift into [0, 1] so the resampler's clamp can never bite.
        px.0 = [
            (img[[0, y as usize, x as usize]] + 1.0) * 0.5,
            (img[[1, y as usize, x as usize]] + 1.0) * 0.5,
            (img[[2, y as usize, x as usize]] + 1.0) * 0.5,
        ];
    }
    let resized = image::imageops::resize(
        &buf,
        side as u32,
        side as u32,
        image::imageops::FilterType::Triangle,
    );
    let mut out = Array3::<f32>::zeros((3, side, side));
    for (x, y, px) in resized.enumerate_pixels() {
        for ch in 0..3 {
            out[[ch, y as usize, x as usize]] = px.0[ch] * 2.0 - 1.0;
        }
    }
    out
}

/// Jigsaw pretext sample. Sides not divisible by 3 are center-cropped to
/// the largest multiple of 3 before tiling and resized back afterwards,
/// keeping the head's input shape constant.
pub fn make_jigsaw_sample(
    img: &Array3<f32>,
    perm_id: usize,
    table: &PermutationTable,
) -> Result<(Array3<f32>, usize)> {
    let perm = *table.perm(perm_id)?;
    let (c, h, w) = img.dim();
    if h != w {
        return Err(Error::Input(format!(
            "make_jigsaw_sample: image must be square, got {h}x{w}"
        )));
    }
    if h % 3 == 0 {
        return Ok((tile_permute(img, &perm)?, perm_id));
    }
    let cropped_side = (h / 3) * 3;
    let off = (h - cropped_side) / 2;
    let mut cropped = Array3::<f32>::zeros((c, cropped_side, cropped_side));
    for ch in 0..c {
        for r in 0..cropped_side {
            for col in 0..cropped_side {
                cropped[[ch, r, col]] = img[[ch, r + off, col + off]];
            }
        }
    }
    let shuffled = tile_permute(&cropped, &perm)?;
    Ok((resize_chw(&shuffled, h), perm_id))
}

/// BT.601 luma replicated across the three channels, computed in [0, 1]
/// space and mapped back to [-1, 1]. Idempotent.
pub fn grayify(img: &Array3<f32>) -> Array3<f32> {
    let (c, h, w) = img.dim();
    assert_eq!(c, 3, "grayify expects 3 channels");
    let mut out = Array3::<f32>::zeros((3, h, w));
    for r in 0..h {
        for col in 0..w {
            let red = (img[[0, r, col]] + 1.0) * 0.5;
            let green = (img[[1, r, col]] + 1.0) * 0.5;
            let blue = (img[[2, r, col]] + 1.0) * 0.5;
            let luma = 0.299 * red + 0.587 * green + 0.114 * blue;
            let v = luma * 2.0 - 1.0;
            out[[0, r, col]] = v;
            out[[1, r, col]] = v;
            out[[2, r, col]] = v;
        }
    }
    out
}

/// Per-image min-max normalization of a depth pseudo-label to [0, 1].
/// A constant map normalizes to all zeros.
pub fn normalize_depth(map: &Array2<f32>) -> Array2<f32> {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in map.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        return Array2::zeros(map.dim());
    }
    let span = hi - lo;
    map.mapv(|v| (v - lo) / span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn random_image(seed: u64, side: usize) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, side, side), |_| rng.random::<f32>() * 2.0 - 1.0)
    }

    #[test]
    fn rotation_class_zero_is_identity() {
        let img = random_image(1, 12);
        let (rot, label) = make_rotation_sample(&img, 0).unwrap();
        assert_eq!(label, 0);
        assert_eq!(rot, img);
    }

    #[test]
    fn four_quarter_turns_restore_image() {
        let img = random_image(2, 12);
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = rotate90(&cur, 1).unwrap();
        }
        assert_eq!(cur, img);
    }

    #[test]
    fn quarter_turn_plus_three_quarters_restores_image() {
        let img = random_image(3, 16);
        let once = rotate90(&img, 1).unwrap();
        let back = rotate90(&once, 3).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn rotation_preserves_pixel_multiset() {
        let img = random_image(4, 12);
        let rot = rotate90(&img, 1).unwrap();
        let mut a: Vec<f32> = img.iter().cloned().collect();
        let mut b: Vec<f32> = rot.iter().cloned().collect();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn rotation_rejects_bad_class() {
        let img = random_image(5, 8);
        assert!(make_rotation_sample(&img, 4).is_err());
    }

    #[test]
    fn permutation_table_is_deterministic_and_valid() {
        let t1 = PermutationTable::build(7, JIGSAW_CLASSES).unwrap();
        let t2 = PermutationTable::build(7, JIGSAW_CLASSES).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.len(), JIGSAW_CLASSES);
        assert_eq!(t1.perm(0).unwrap(), &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        // Distinct bijections on 9 elements.
        for i in 0..t1.len() {
            let mut sorted = *t1.perm(i).unwrap();
            sorted.sort_unstable();
            assert_eq!(sorted, [0, 1, 2, 3, 4, 5, 6, 7, 8]);
            for j in i + 1..t1.len() {
                assert_ne!(t1.perm(i).unwrap(), t1.perm(j).unwrap());
            }
        }
        assert!(t1.min_hamming() >= 2);
    }

    #[test]
    fn permutation_table_rejects_excessive_count() {
        assert!(PermutationTable::build(0, FACTORIAL_9 + 1).is_err());
    }

    #[test]
    fn tile_permutation_inverse_restores_exactly() {
        let table = PermutationTable::build(9, JIGSAW_CLASSES).unwrap();
        let img = random_image(6, 12); // divisible by 3: exact path
        for id in [1usize, 17, 63] {
            let perm = *table.perm(id).unwrap();
            let inv = table.inverse(id).unwrap();
            let shuffled = tile_permute(&img, &perm).unwrap();
            let restored = tile_permute(&shuffled, &inv).unwrap();
            assert_eq!(restored, img);
        }
    }

    #[test]
    fn jigsaw_identity_on_divisible_side_is_identity() {
        let table = PermutationTable::build(9, JIGSAW_CLASSES).unwrap();
        let img = random_image(7, 12);
        let (shuffled, label) = make_jigsaw_sample(&img, 0, &table).unwrap();
        assert_eq!(label, 0);
        assert_eq!(shuffled, img);
    }

    #[test]
    fn jigsaw_nondivisible_side_keeps_shape() {
        let table = PermutationTable::build(9, JIGSAW_CLASSES).unwrap();
        let img = random_image(8, 64);
        let (shuffled, _) = make_jigsaw_sample(&img, 5, &table).unwrap();
        assert_eq!(shuffled.dim(), (3, 64, 64));
    }

    #[test]
    fn tile_permute_rejects_nondivisible_side() {
        let img = random_image(9, 64);
        let perm = [0, 1, 2, 3, 4, 5, 6, 7, 8];
        assert!(tile_permute(&img, &perm).is_err());
    }

    #[test]
    fn grayify_channels_match_and_idempotent() {
        let img = random_image(10, 10);
        let gray = grayify(&img);
        for r in 0..10 {
            for c in 0..10 {
                assert_eq!(gray[[0, r, c]], gray[[1, r, c]]);
                assert_eq!(gray[[1, r, c]], gray[[2, r, c]]);
            }
        }
        let twice = grayify(&gray);
        for (a, b) in gray.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn grayify_pure_red_matches_bt601_weight() {
        let mut img = Array3::<f32>::zeros((3, 2, 2));
        img.index_axis_mut(ndarray::Axis(0), 0).fill(1.0);
        img.index_axis_mut(ndarray::Axis(0), 1).fill(-1.0);
        img.index_axis_mut(ndarray::Axis(0), 2).fill(-1.0);
        let gray = grayify(&img);
        let expect = 2.0 * 0.299 - 1.0;
        assert!((gray[[0, 0, 0]] - expect).abs() < 1e-6);
    }

    #[test]
    fn gray_input_is_fixed_point() {
        let img = random_image(11, 6);
        let gray = grayify(&img);
        let again = grayify(&gray);
        for (a, b) in gray.iter().zip(again.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn depth_normalization_bounds_and_constant_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let map = Array2::from_shape_fn((8, 8), |_| rng.random::<f32>() * 10.0 - 3.0);
        let norm = normalize_depth(&map);
        let lo = norm.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = norm.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);

        let flat = Array2::from_elem((4, 4), 3.25f32);
        assert!(normalize_depth(&flat).iter().all(|&v| v == 0.0));
    }
}
