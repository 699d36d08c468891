//! Synthetic sequences with exact ground truth, for exercising the
//! tracking loop without a dataset.

use crate::tracker::{BBox, Frame};

/// A textured square moving at constant velocity over a flat background.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatingSquare {
    pub width: usize,
    pub height: usize,
    pub side: usize,
    /// Top-left corner in the first frame.
    pub start: (i64, i64),
    /// Pixels per frame.
    pub velocity: (i64, i64),
    pub frames: usize,
    pub background: u8,
    /// Edge of the square texture cells.
    pub cell: usize,
    pub seed: u64,
}

impl Default for TranslatingSquare {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            side: 40,
            start: (60, 100),
            velocity: (2, 0),
            frames: 50,
            background: 128,
            cell: 10,
            seed: 1,
        }
    }
}

fn cell_value(seed: u64, u: usize, v: usize) -> u8 {
    // splitmix64 over the cell coordinates
    let mut z = seed
        .wrapping_add((u as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((v as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    20 + (z % 216) as u8
}

impl TranslatingSquare {
    pub fn top_left(&self, t: usize) -> (i64, i64) {
        (self.start.0 + self.velocity.0 * t as i64, self.start.1 + self.velocity.1 * t as i64)
    }

    pub fn groundtruth(&self) -> Vec<BBox> {
        (0..self.frames)
            .map(|t| {
                let (x, y) = self.top_left(t);
                BBox::from_top_left(x as f64, y as f64, self.side as f64, self.side as f64)
                    .expect("positive side")
            })
            .collect()
    }

    pub fn frame(&self, t: usize) -> Frame {
        let bg = self.background;
        let mut f = Frame::filled(self.width, self.height, [bg, bg, bg]).expect("non-empty frame");
        let (x0, y0) = self.top_left(t);
        for v in 0..self.side {
            for u in 0..self.side {
                let (x, y) = (x0 + u as i64, y0 + v as i64);
                if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                    continue;
                }
                let g = cell_value(self.seed, u / self.cell, v / self.cell);
                f.set_pixel(x as usize, y as usize, [g, g, g]);
            }
        }
        f
    }

    pub fn frames(&self) -> Vec<Frame> {
        (0..self.frames).map(|t| self.frame(t)).collect()
    }
}

/// Mean distance between box centres over paired frames.
pub fn mean_center_error(a: &[BBox], b: &[BBox]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(p, q)| p.center_distance(q)).sum::<f64>() / n as f64
}
