//! Procedurally generated labeled shape dataset: four geometric shapes
//! in two color palettes give eight visually distinct concepts, one of
//! which is flagged as the target concept for attack experiments.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};

pub const NUM_CONCEPTS: usize = 8;
pub const IMAGE_SIZE: usize = 32;

/// Label index in `0..NUM_CONCEPTS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptId(pub u8);

impl ConceptId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        const NAMES: [&str; NUM_CONCEPTS] = [
            "disc_warm",
            "square_warm",
            "triangle_warm",
            "cross_warm",
            "disc_cool",
            "square_cool",
            "triangle_cool",
            "cross_cool",
        ];
        NAMES[self.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// Summary serialized alongside generated datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub per_concept: usize,
    pub eval_per_concept: usize,
    pub target_concept: ConceptId,
}

#[derive(Debug, Clone)]
pub struct ShapeDataset {
    pub images: Vec<Image>,
    pub labels: Vec<ConceptId>,
    pub splits: Vec<Split>,
    pub manifest: DatasetManifest,
}

impl ShapeDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn iter_split(&self, split: Split) -> impl Iterator<Item = (&Image, ConceptId)> {
        self.images
            .iter()
            .zip(&self.labels)
            .zip(&self.splits)
            .filter(move |&(_, s)| *s == split)
            .map(|((img, &label), _)| (img, label))
    }

    /// All images of one concept in a split.
    pub fn concept_images(&self, concept: ConceptId, split: Split) -> Vec<&Image> {
        self.iter_split(split)
            .filter(|&(_, l)| l == concept)
            .map(|(img, _)| img)
            .collect()
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Disc,
    Square,
    Triangle,
    Cross,
}

#[derive(Clone, Copy)]
enum Palette {
    Warm,
    Cool,
}

fn concept_parts(id: ConceptId) -> (Shape, Palette) {
    let shape = match id.index() % 4 {
        0 => Shape::Disc,
        1 => Shape::Square,
        2 => Shape::Triangle,
        _ => Shape::Cross,
    };
    let palette = if id.index() < 4 {
        Palette::Warm
    } else {
        Palette::Cool
    };
    (shape, palette)
}

/// Foreground/background colors drawn from disjoint per-palette ranges,
/// directly as 8-bit levels so every pixel is born on the 1/255 grid.
fn sample_colors(rng: &mut ChaCha8Rng, palette: Palette) -> ([u8; 3], [u8; 3]) {
    match palette {
        Palette::Warm => {
            let fg = [
                rng.gen_range(200..=255),
                rng.gen_range(60..=140),
                rng.gen_range(20..=80),
            ];
            let bg = [
                rng.gen_range(10..=40),
                rng.gen_range(10..=50),
                rng.gen_range(60..=110),
            ];
            (fg, bg)
        }
        Palette::Cool => {
            let fg = [
                rng.gen_range(20..=80),
                rng.gen_range(140..=210),
                rng.gen_range(200..=255),
            ];
            let bg = [
                rng.gen_range(200..=235),
                rng.gen_range(200..=235),
                rng.gen_range(170..=210),
            ];
            (fg, bg)
        }
    }
}

fn inside(shape: Shape, x: i32, y: i32, cx: i32, cy: i32, r: i32) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    match shape {
        Shape::Disc => dx * dx + dy * dy <= r * r,
        Shape::Square => dx.abs() <= r && dy.abs() <= r,
        Shape::Triangle => {
            let h = y - (cy - r);
            h >= 0 && h <= 2 * r && 2 * dx.abs() <= h
        }
        Shape::Cross => {
            let t = (r / 3).max(1);
            (dx.abs() <= t && dy.abs() <= r) || (dy.abs() <= t && dx.abs() <= r)
        }
    }
}

fn render(rng: &mut ChaCha8Rng, concept: ConceptId) -> Image {
    let (shape, palette) = concept_parts(concept);
    let (fg, bg) = sample_colors(rng, palette);
    let cx = rng.gen_range(13..=19);
    let cy = rng.gen_range(13..=19);
    let r = rng.gen_range(7..=10);

    let mut data = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 3);
    for y in 0..IMAGE_SIZE as i32 {
        for x in 0..IMAGE_SIZE as i32 {
            let color = if inside(shape, x, y, cx, cy, r) { fg } else { bg };
            for ch in color {
                data.push(ch as f64 / 255.0);
            }
        }
    }
    Image::new(IMAGE_SIZE, IMAGE_SIZE, 3, data).expect("rendered pixels are on-grid")
}

/// Deterministically generates `per_concept` images for each of the
/// eight concepts, tagging the last `eval_per_concept` of each as the
/// evaluation split.
pub fn generate_dataset(
    seed: u64,
    per_concept: usize,
    eval_per_concept: usize,
    target_concept: ConceptId,
) -> Result<ShapeDataset> {
    if per_concept < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 images per concept".to_string(),
        ));
    }
    if eval_per_concept >= per_concept {
        return Err(Error::InvalidArgument(
            "eval_per_concept must leave at least one training image".to_string(),
        ));
    }
    if target_concept.index() >= NUM_CONCEPTS {
        return Err(Error::InvalidArgument(format!(
            "target concept {} out of range",
            target_concept.0
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for c in 0..NUM_CONCEPTS {
        let concept = ConceptId(c as u8);
        for i in 0..per_concept {
            images.push(render(&mut rng, concept));
            labels.push(concept);
            splits.push(if i < per_concept - eval_per_concept {
                Split::Train
            } else {
                Split::Eval
            });
        }
    }
    Ok(ShapeDataset {
        images,
        labels,
        splits,
        manifest: DatasetManifest {
            seed,
            per_concept,
            eval_per_concept,
            target_concept,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_dataset(5, 4, 1, ConceptId(7)).unwrap();
        let b = generate_dataset(5, 4, 1, ConceptId(7)).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.data(), y.data());
        }
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_dataset(5, 4, 1, ConceptId(7)).unwrap();
        let b = generate_dataset(6, 4, 1, ConceptId(7)).unwrap();
        assert!(a.images.iter().zip(&b.images).any(|(x, y)| x.data() != y.data()));
    }

    #[test]
    fn all_pixels_on_grid() {
        let ds = generate_dataset(0, 3, 1, ConceptId(0)).unwrap();
        for img in &ds.images {
            assert!(img.is_on_grid());
        }
    }

    #[test]
    fn split_counts() {
        let ds = generate_dataset(1, 5, 2, ConceptId(3)).unwrap();
        assert_eq!(ds.len(), 5 * NUM_CONCEPTS);
        let train = ds.iter_split(Split::Train).count();
        let eval = ds.iter_split(Split::Eval).count();
        assert_eq!(train, 3 * NUM_CONCEPTS);
        assert_eq!(eval, 2 * NUM_CONCEPTS);
    }

    #[test]
    fn degenerate_counts_rejected() {
        assert!(generate_dataset(0, 1, 0, ConceptId(0)).is_err());
        assert!(generate_dataset(0, 4, 4, ConceptId(0)).is_err());
    }
}
