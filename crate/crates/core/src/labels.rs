//! Instance label maps, binary masks and connected-component labelling.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("shape mismatch: {expected:?} vs {actual:?}")]
pub struct ShapeMismatch {
    pub expected: (usize, usize),
    pub actual: (usize, usize),
}

/// 2D instance map; `0` is background, positive values are instance ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self, ShapeMismatch> {
        if labels.len() != height * width {
            return Err(ShapeMismatch {
                expected: (height, width),
                actual: (labels.len(), 1),
            });
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, label: u32) {
        self.labels[y * self.width + x] = label;
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Pixel count per label, indexed by label (index 0 is background).
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.max_label() as usize + 1];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }

    /// Number of distinct positive labels.
    pub fn instance_count(&self) -> usize {
        self.areas().iter().skip(1).filter(|&&a| a > 0).count()
    }

    pub fn foreground(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|&l| l > 0).collect(),
        }
    }

    /// Renumbers the present labels to `1..=K`, keeping their relative order.
    pub fn compacted(&self) -> Self {
        let mut remap = vec![0u32; self.max_label() as usize + 1];
        let mut next = 0;
        for (l, &a) in self.areas().iter().enumerate().skip(1) {
            if a > 0 {
                next += 1;
                remap[l] = next;
            }
        }
        Self {
            height: self.height,
            width: self.width,
            labels: self.labels.iter().map(|&l| remap[l as usize]).collect(),
        }
    }

    pub fn check_same_shape(&self, other: &LabelMap) -> Result<(), ShapeMismatch> {
        if self.dims() != other.dims() {
            return Err(ShapeMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }
}

/// Binary mask over a `height x width` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, ShapeMismatch> {
        if bits.len() != height * width {
            return Err(ShapeMismatch {
                expected: (height, width),
                actual: (bits.len(), 1),
            });
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// Pixels of a single-plane map strictly above `threshold`.
    pub fn threshold(map: &Tensor, threshold: f32) -> Result<Self, crate::tensor::TensorError> {
        let (height, width) = map.plane_dims()?;
        Ok(Self {
            height,
            width,
            bits: map.data().iter().map(|&v| v > threshold).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, self.height, self.width],
            self.bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("mask dims are positive")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// In-bounds neighbours of `(y, x)` under the given connectivity.
pub fn neighbors(
    y: usize,
    x: usize,
    height: usize,
    width: usize,
    conn: Connectivity,
) -> impl Iterator<Item = (usize, usize)> {
    conn.offsets().iter().filter_map(move |&(dy, dx)| {
        let ny = y as isize + dy;
        let nx = x as isize + dx;
        (ny >= 0 && nx >= 0 && (ny as usize) < height && (nx as usize) < width)
            .then_some((ny as usize, nx as usize))
    })
}

/// Labels connected components of the `true` pixels as `1..=K` in raster
/// order of their first pixel.
pub fn label_components(mask: &Mask, conn: Connectivity) -> LabelMap {
    let (h, w) = mask.dims();
    let mut out = LabelMap::empty(h, w);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.bits[start] || out.labels[start] != 0 {
            continue;
        }
        next += 1;
        out.labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for (ny, nx) in neighbors(p / w, p % w, h, w, conn) {
                let q = ny * w + nx;
                if mask.bits[q] && out.labels[q] == 0 {
                    out.labels[q] = next;
                    stack.push(q);
                }
            }
        }
    }
    out
}
