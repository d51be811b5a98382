use std::collections::VecDeque;

pub const BOX_CSV_HEADER: &str = "index,pred,true,x0,y0,x1,y1";

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }

    /// Whether a continuous point (pixel centres at integer coordinates)
    /// falls on one of the box's pixels.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 - 0.5
            && x <= self.x1 as f64 + 0.5
            && y >= self.y0 as f64 - 0.5
            && y <= self.y1 as f64 + 0.5
    }

    /// `index,pred,true,x0,y0,x1,y1`; box fields stay empty without a box.
    pub fn csv_line(b: Option<&BoundingBox>, index: usize, pred: usize, truth: usize) -> String {
        match b {
            Some(b) => format!("{index},{pred},{truth},{},{},{},{}", b.x0, b.y0, b.x1, b.y1),
            None => format!("{index},{pred},{truth},,,,"),
        }
    }
}

/// Box around the largest 4-connected region of `values >= threshold`.
///
/// Regions are found in row-major order of their first pixel, and only a
/// strictly larger region replaces the current best, so ties go to the region
/// holding the smallest pixel index. An empty mask gives `None`.
pub fn localize(values: &[f32], height: usize, width: usize, threshold: f32) -> Option<BoundingBox> {
    assert_eq!(values.len(), height * width, "heatmap size");
    let mut seen = vec![false; values.len()];
    let mut best: Option<(usize, BoundingBox)> = None;
    let mut queue = VecDeque::new();
    for start in 0..values.len() {
        if seen[start] || values[start] < threshold {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut count = 0;
        let mut bb = BoundingBox {
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
        };
        while let Some(p) = queue.pop_front() {
            count += 1;
            let (y, x) = (p / width, p % width);
            bb.x0 = bb.x0.min(x);
            bb.x1 = bb.x1.max(x);
            bb.y0 = bb.y0.min(y);
            bb.y1 = bb.y1.max(y);
            let mut visit = |q: usize| {
                if !seen[q] && values[q] >= threshold {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, bb));
        }
    }
    best.map(|(_, b)| b)
}

/// Centroid `(x, y)` of an image in [-1, 1], weighting each pixel by its
/// intensity mapped to [0, 1]. `None` for an all-black image.
pub fn intensity_centroid(image: &[f32], height: usize, width: usize) -> Option<(f64, f64)> {
    let (mut sw, mut sx, mut sy) = (0.0f64, 0.0, 0.0);
    for y in 0..height {
        for x in 0..width {
            let w = ((image[y * width + x] as f64 + 1.0) / 2.0).max(0.0);
            sw += w;
            sx += w * x as f64;
            sy += w * y as f64;
        }
    }
    (sw > 0.0).then(|| (sx / sw, sy / sw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Vec<f32> {
        let mut m = vec![-1.0; h * w];
        for &(y, x) in on {
            m[y * w + x] = 1.0;
        }
        m
    }

    #[test]
    fn single_block() {
        let on: Vec<_> = (2..=4).flat_map(|y| (5..=8).map(move |x| (y, x))).collect();
        let b = localize(&mask(10, 12, &on), 10, 12, 0.5).unwrap();
        assert_eq!(b, BoundingBox { x0: 5, y0: 2, x1: 8, y1: 4 });
        assert_eq!(b.area(), 12);
    }

    #[test]
    fn larger_component_wins() {
        let mut on: Vec<_> = (0..5).map(|x| (0, x)).collect();
        on.extend((0..3).flat_map(|y| (0..3).map(move |x| (y + 4, x + 4))));
        let b = localize(&mask(8, 8, &on), 8, 8, 0.5).unwrap();
        assert_eq!(b, BoundingBox { x0: 4, y0: 4, x1: 6, y1: 6 });
    }

    #[test]
    fn ties_go_to_first_pixel() {
        let b = localize(&mask(3, 5, &[(2, 0), (0, 4)]), 3, 5, 0.5).unwrap();
        assert_eq!(b, BoundingBox { x0: 4, y0: 0, x1: 4, y1: 0 });
    }

    #[test]
    fn diagonal_is_not_connected() {
        let b = localize(&mask(3, 3, &[(0, 0), (1, 1), (2, 2), (2, 1)]), 3, 3, 0.5).unwrap();
        assert_eq!(b, BoundingBox { x0: 1, y0: 1, x1: 2, y1: 2 });
    }

    #[test]
    fn empty_and_threshold_edge() {
        assert!(localize(&[0.49; 4], 2, 2, 0.5).is_none());
        assert!(localize(&[0.5, -1.0, -1.0, -1.0], 2, 2, 0.5).is_some());
    }

    #[test]
    fn csv_lines() {
        let b = BoundingBox { x0: 1, y0: 2, x1: 3, y1: 4 };
        assert_eq!(BoundingBox::csv_line(Some(&b), 7, 3, 5), "7,3,5,1,2,3,4");
        assert_eq!(BoundingBox::csv_line(None, 0, 1, 1), "0,1,1,,,,");
    }

    #[test]
    fn centroid_of_single_bright_pixel() {
        let mut img = vec![-1.0; 12];
        img[4 + 3] = 1.0;
        assert_eq!(intensity_centroid(&img, 3, 4), Some((3.0, 1.0)));
        assert_eq!(intensity_centroid(&[-1.0; 4], 2, 2), None);
    }
}
