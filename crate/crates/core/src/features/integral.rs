use image::GrayImage;

/// Summed-area table with a zero guard row and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    /// (height + 1) × (width + 1), row-major.
    sums: Vec<u64>,
}

impl IntegralImage {
    pub fn new(gray: &GrayImage) -> Self {
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        Self::from_pixels(w, h, gray.as_raw())
    }

    /// Builds the table from row-major 8-bit pixels.
    pub fn from_pixels(width: usize, height: usize, pixels: &[u8]) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer size mismatch");
        let stride = width + 1;
        let mut sums = vec![0u64; (height + 1) * stride];
        for y in 0..height {
            let mut row_sum = 0u64;
            for x in 0..width {
                row_sum += pixels[y * width + x] as u64;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row_sum;
            }
        }
        IntegralImage {
            width,
            height,
            sums,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sum of all pixels strictly above and left of `(row, col)`.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> u64 {
        self.sums[row * (self.width + 1) + col]
    }

    /// Sum over the half-open pixel rectangle `[r0, r1) × [c0, c1)`.
    #[inline]
    pub fn rect_sum(&self, r0: usize, c0: usize, r1: usize, c1: usize) -> u64 {
        debug_assert!(r0 <= r1 && c0 <= c1 && r1 <= self.height && c1 <= self.width);
        self.at(r1, c1) + self.at(r0, c0) - self.at(r0, c1) - self.at(r1, c0)
    }

    /// Box sum of `rows × cols` pixels starting at `(row, col)`, clipped to
    /// the image. Returned as a float in pixel-intensity units.
    #[inline]
    pub fn box_sum(&self, row: isize, col: isize, rows: isize, cols: isize) -> f64 {
        let h = self.height as isize;
        let w = self.width as isize;
        let r0 = row.clamp(0, h);
        let c0 = col.clamp(0, w);
        let r1 = (row + rows).clamp(0, h);
        let c1 = (col + cols).clamp(0, w);
        if r1 <= r0 || c1 <= c0 {
            return 0.0;
        }
        self.rect_sum(r0 as usize, c0 as usize, r1 as usize, c1 as usize) as f64
    }
}
