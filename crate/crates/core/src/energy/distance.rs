use nalgebra::Vector2;

/// Binary image, row-major, `true` = hand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }
}

/// Bilinear cell used for one lookup; holding it fixed makes the lookup a
/// smooth function of the query position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub x0: usize,
    pub y0: usize,
}

/// Distance lookup result: value in pixels and its gradient w.r.t. `(u, v)`.
#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub value: f64,
    pub grad: Vector2<f64>,
    pub cell: Cell,
}

/// Exact squared Euclidean distance to the nearest mask pixel, with the index
/// of that pixel. Pixel `(x, y)` has its center at coordinates `(x, y)`.
#[derive(Debug, Clone)]
pub struct MaskDistanceField {
    width: usize,
    height: usize,
    sq: Vec<f64>,
    dist: Vec<f64>,
    nearest: Vec<usize>,
}

/// Lower envelope of parabolas `(q - site)^2 + f(site)` over the finite sites.
/// Writes the minimum value and the minimizing site for each `q`.
fn envelope_1d(f: &[f64], out: &mut [f64], arg: &mut [usize], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let pf = p as f64;
            let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= *z.last().expect("paired with v") {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for q in 0..f.len() {
        let qf = q as f64;
        while k + 1 < v.len() && z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        out[q] = d * d + f[v[k]];
        arg[q] = v[k];
    }
}

impl MaskDistanceField {
    /// `None` when the mask has no set pixel.
    pub fn new(mask: &BinaryMask) -> Option<Self> {
        if mask.is_empty() {
            return None;
        }
        let (w, h) = (mask.width, mask.height);
        let mut v = Vec::new();
        let mut z = Vec::new();

        // Columns: distance to the nearest set pixel in the same column.
        let mut col_sq = vec![f64::INFINITY; w * h];
        let mut col_arg = vec![0usize; w * h];
        let mut f = vec![0.0; h];
        let mut out = vec![0.0; h];
        let mut arg = vec![0usize; h];
        for x in 0..w {
            for y in 0..h {
                f[y] = if mask.get(x, y) { 0.0 } else { f64::INFINITY };
            }
            envelope_1d(&f, &mut out, &mut arg, &mut v, &mut z);
            for y in 0..h {
                col_sq[y * w + x] = out[y];
                col_arg[y * w + x] = arg[y];
            }
        }

        // Rows: combine column distances.
        let mut sq = vec![0.0; w * h];
        let mut nearest = vec![0usize; w * h];
        let mut out = vec![0.0; w];
        let mut arg = vec![0usize; w];
        for y in 0..h {
            let row = &col_sq[y * w..(y + 1) * w];
            envelope_1d(row, &mut out, &mut arg, &mut v, &mut z);
            for x in 0..w {
                let sx = arg[x];
                sq[y * w + x] = out[x];
                nearest[y * w + x] = col_arg[y * w + sx] * w + sx;
            }
        }
        let dist = sq.iter().map(|s| s.sqrt()).collect();
        Some(Self { width: w, height: h, sq, dist, nearest })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Squared distance (pixels²) at pixel `(x, y)`.
    pub fn squared(&self, x: usize, y: usize) -> f64 {
        self.sq[y * self.width + x]
    }

    /// Distance (pixels) at pixel `(x, y)`.
    pub fn distance(&self, x: usize, y: usize) -> f64 {
        self.dist[y * self.width + x]
    }

    /// Nearest set pixel to `(x, y)`, as `(x, y)`.
    pub fn nearest(&self, x: usize, y: usize) -> (usize, usize) {
        let i = self.nearest[y * self.width + x];
        (i % self.width, i / self.width)
    }

    fn cell_for(&self, cu: f64, cv: f64) -> Cell {
        let x0 = (cu.floor().max(0.0) as usize).min(self.width.saturating_sub(2));
        let y0 = (cv.floor().max(0.0) as usize).min(self.height.saturating_sub(2));
        Cell { x0, y0 }
    }

    /// Bilinear distance at a continuous image position.
    ///
    /// Positions outside the image are clamped to the border and the distance
    /// from the position to the clamped point is added. With `cell` given, that
    /// cell is used instead of the one containing the position (the bilinear
    /// form then extrapolates linearly).
    pub fn sample(&self, p: &Vector2<f64>, cell: Option<Cell>) -> Sample {
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        let cu = p.x.clamp(0.0, max_u);
        let cv = p.y.clamp(0.0, max_v);
        let cell = cell.unwrap_or_else(|| self.cell_for(cu, cv));
        let x1 = (cell.x0 + 1).min(self.width - 1);
        let y1 = (cell.y0 + 1).min(self.height - 1);
        let fx = if x1 > cell.x0 { cu - cell.x0 as f64 } else { 0.0 };
        let fy = if y1 > cell.y0 { cv - cell.y0 as f64 } else { 0.0 };
        let d00 = self.distance(cell.x0, cell.y0);
        let d10 = self.distance(x1, cell.y0);
        let d01 = self.distance(cell.x0, y1);
        let d11 = self.distance(x1, y1);
        let top = d00 + fx * (d10 - d00);
        let bottom = d01 + fx * (d11 - d01);
        let mut value = top + fy * (bottom - top);
        let mut grad = Vector2::new(
            if x1 > cell.x0 { (1.0 - fy) * (d10 - d00) + fy * (d11 - d01) } else { 0.0 },
            if y1 > cell.y0 { bottom - top } else { 0.0 },
        );
        let outside = Vector2::new(p.x - cu, p.y - cv);
        let extra = outside.norm();
        if p.x != cu {
            grad.x = 0.0;
        }
        if p.y != cv {
            grad.y = 0.0;
        }
        if extra > 0.0 {
            value += extra;
            grad += outside / extra;
        }
        Sample { value, grad, cell }
    }
}
