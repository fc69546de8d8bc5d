//! Unpaired two-domain datasets: directory loading, the synthetic
//! generator and seeded batch iteration.

mod batch;
mod loader;
mod synth;

pub use batch::{BatchIndices, BatchIterator};
pub use loader::{load_depth_map, load_unpaired_dataset};
pub use synth::{render_scene, synth_generate, synth_scenes, Scene, Shape, ShapeKind, SynthConfig};

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::nets::Domain;

/// One domain's images (and optional depth pseudo-labels), already split.
pub struct DomainData {
    pub train: Vec<Array3<f32>>,
    pub val: Vec<Array3<f32>>,
    /// Aligned with `train`/`val`; `None` marks a missing label.
    pub train_depth: Vec<Option<Array2<f32>>>,
    pub val_depth: Vec<Option<Array2<f32>>>,
    pub train_stems: Vec<String>,
    pub val_stems: Vec<String>,
}

impl DomainData {
    pub fn from_images(
        images: Vec<Array3<f32>>,
        depth: Option<Vec<Array2<f32>>>,
        stems: Vec<String>,
        val_indices: &[usize],
    ) -> DomainData {
        let is_val: Vec<bool> = {
            let mut v = vec![false; images.len()];
            for &i in val_indices {
                v[i] = true;
            }
            v
        };
        let mut out = DomainData {
            train: Vec::new(),
            val: Vec::new(),
            train_depth: Vec::new(),
            val_depth: Vec::new(),
            train_stems: Vec::new(),
            val_stems: Vec::new(),
        };
        for (i, img) in images.into_iter().enumerate() {
            let d = depth.as_ref().map(|ds| ds[i].clone());
            let stem = stems[i].clone();
            if is_val[i] {
                out.val.push(img);
                out.val_depth.push(d);
                out.val_stems.push(stem);
            } else {
                out.train.push(img);
                out.train_depth.push(d);
                out.train_stems.push(stem);
            }
        }
        out
    }

    /// First missing train/val depth label, if any.
    pub fn missing_depth_stem(&self) -> Option<&str> {
        for (d, s) in self
            .train_depth
            .iter()
            .zip(&self.train_stems)
            .chain(self.val_depth.iter().zip(&self.val_stems))
        {
            if d.is_none() {
                return Some(s);
            }
        }
        None
    }
}

/// Two independently sampled image collections; no pairing is assumed.
pub struct UnpairedDataset {
    pub a: DomainData,
    pub b: DomainData,
    pub image_size: usize,
}

impl UnpairedDataset {
    pub fn domain(&self, d: Domain) -> &DomainData {
        match d {
            Domain::A => &self.a,
            Domain::B => &self.b,
        }
    }

    /// Fails (naming the first offending stem) when the depth task is
    /// configured but some image has no pseudo-label.
    pub fn require_depth_labels(&self) -> Result<()> {
        for (dom, data) in [("A", &self.a), ("B", &self.b)] {
            if let Some(stem) = data.missing_depth_stem() {
                return Err(Error::Dataset(format!(
                    "depth task enabled but domain {dom} image '{stem}' has no depth label"
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic train/val split: `round(n * fraction)` validation items
/// chosen by a seeded shuffle.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!(
            "split fraction must be in [0, 1), got {fraction}"
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let k = ((n as f64) * fraction).round() as usize;
    let mut val: Vec<usize> = order.into_iter().take(k).collect();
    val.sort_unstable();
    Ok(val)
}
