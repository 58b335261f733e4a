use rand::Rng;

use super::{gemm, Param, Scalar, Tensor};

/// Square-kernel, stride-1 convolution with zero "same" padding.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cin: usize,
    cout: usize,
    k: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1, "odd kernels only");
        Self {
            weight: Param::kaiming(format!("{name}.weight"), vec![cout, cin, k, k], cin * k * k, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![cout]),
            cin,
            cout,
            k,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.cin
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    fn pad(&self) -> usize {
        self.k / 2
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Samples per GEMM so the column buffer stays near [`COL_BUDGET`].
    fn chunk(&self, hw: usize) -> usize {
        (COL_BUDGET / (self.col_rows() * hw)).max(1)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        assert_eq!(c, self.cin, "conv input channels");
        let hw = h * w;
        let rows = self.col_rows();
        let mut y = Tensor::zeros([n, self.cout, h, w]);
        let chunk = self.chunk(hw).min(n);
        T::with_scratch((rows + self.cout) * chunk * hw, |buf| {
            let (col, out) = buf.split_at_mut(rows * chunk * hw);
            for s0 in (0..n).step_by(chunk) {
                let m = chunk.min(n - s0);
                let ld = m * hw;
                for j in 0..m {
                    im2col(x.sample(s0 + j), c, h, w, self.k, self.pad(), &mut col[j * hw..], ld);
                }
                gemm(false, false, self.cout, rows, ld, &self.weight.value, &col[..rows * ld], T::zero(), &mut out[..self.cout * ld]);
                for j in 0..m {
                    let dst = y.sample_mut(s0 + j);
                    for o in 0..self.cout {
                        let b = self.bias.value[o];
                        let src = &out[o * ld + j * hw..][..hw];
                        for (d, &v) in dst[o * hw..(o + 1) * hw].iter_mut().zip(src) {
                            *d = v + b;
                        }
                    }
                }
            }
        });
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let [n, c, h, w] = x.shape;
        let hw = h * w;
        let rows = self.col_rows();
        let chunk = self.chunk(hw).min(n);
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape));
        let dcol_len = if need_dx { rows * chunk * hw } else { 0 };
        T::with_scratch((rows + self.cout) * chunk * hw + dcol_len, |buf| {
            let (col, rest) = buf.split_at_mut(rows * chunk * hw);
            let (g, dcol) = rest.split_at_mut(self.cout * chunk * hw);
            for s0 in (0..n).step_by(chunk) {
                let m = chunk.min(n - s0);
                let ld = m * hw;
                for j in 0..m {
                    let src = dy.sample(s0 + j);
                    for o in 0..self.cout {
                        let part = &src[o * hw..(o + 1) * hw];
                        self.bias.grad[o] += sum(part);
                        g[o * ld + j * hw..][..hw].copy_from_slice(part);
                    }
                    im2col(x.sample(s0 + j), c, h, w, self.k, self.pad(), &mut col[j * hw..], ld);
                }
                let g = &g[..self.cout * ld];
                gemm(false, true, self.cout, ld, rows, g, &col[..rows * ld], T::one(), &mut self.weight.grad);
                if let Some(dx) = dx.as_mut() {
                    gemm(true, false, rows, self.cout, ld, &self.weight.value, g, T::zero(), &mut dcol[..rows * ld]);
                    for j in 0..m {
                        col2im(&dcol[j * hw..], c, h, w, self.k, self.pad(), dx.sample_mut(s0 + j), ld);
                    }
                }
            }
        });
        dx
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Sum with eight independent accumulators, so the loop vectorizes.
fn sum<T: Scalar>(v: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut chunks = v.chunks_exact(8);
    for ch in &mut chunks {
        for (a, &x) in acc.iter_mut().zip(ch) {
            *a += x;
        }
    }
    let mut total = chunks.remainder().iter().fold(T::zero(), |a, &x| a + x);
    for a in acc {
        total += a;
    }
    total
}

/// Column-buffer size, in elements, that sets how many samples share a GEMM.
const COL_BUDGET: usize = 1 << 21;

/// Unfolds one `c×h×w` sample into `(c·k·k)` rows of `h·w` columns; row `r`
/// starts at `col[r * ld]`.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, col: &mut [T], ld: usize) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - pad as isize;
            let y_lo = (-dy).clamp(0, h as isize) as usize;
            let y_hi = (h as isize - dy).clamp(y_lo as isize, h as isize) as usize;
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * ld..][..hw];
                let dx = kx as isize - pad as isize;
                let x_lo = (-dx).clamp(0, w as isize) as usize;
                let x_hi = (w as isize - dx).clamp(x_lo as isize, w as isize) as usize;
                if x_lo == x_hi || y_lo == y_hi {
                    row.fill(T::zero());
                    continue;
                }
                row[..y_lo * w].fill(T::zero());
                row[y_hi * w..].fill(T::zero());
                // Shifting the flat plane is exact inside the valid columns;
                // whatever lands in the others is cleared below.
                let shift = dy * w as isize + dx;
                let lo = (y_lo * w).max((-shift).max(0) as usize);
                let hi = (y_hi * w).min((hw as isize - shift) as usize);
                let (s0, s1) = ((lo as isize + shift) as usize, (hi as isize + shift) as usize);
                row[lo..hi].copy_from_slice(&plane[s0..s1]);
                for y in y_lo..y_hi {
                    let r = &mut row[y * w..(y + 1) * w];
                    for v in &mut r[..x_lo] {
                        *v = T::zero();
                    }
                    for v in &mut r[x_hi..] {
                        *v = T::zero();
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into `dx` (overwrites).
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, dx: &mut [T], ld: usize) {
    let hw = h * w;
    dx.fill(T::zero());
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * ld..][..hw];
                let dxo = kx as isize - pad as isize;
                let x_lo = (-dxo).max(0) as usize;
                let x_hi = ((w as isize - dxo).min(w as isize)).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let s0 = (x_lo as isize + dxo) as usize;
                    for (d, &v) in dst[s0..s0 + (x_hi - x_lo)].iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Fully connected layer over `[n, features, 1, 1]` (any trailing dims are
/// flattened into features).
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    fin: usize,
    fout: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, fin: usize, fout: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::kaiming(format!("{name}.weight"), vec![fout, fin], fin, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![fout]),
            fin,
            fout,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        assert_eq!(x.sample_len(), self.fin, "linear input features");
        let mut y = Tensor::zeros([n, self.fout, 1, 1]);
        for row in y.data.chunks_exact_mut(self.fout) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(false, true, n, self.fin, self.fout, &x.data, &self.weight.value, T::one(), &mut y.data);
        y
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let n = x.batch();
        for row in dy.data.chunks_exact(self.fout) {
            for (g, &v) in self.bias.grad.iter_mut().zip(row) {
                *g += v;
            }
        }
        gemm(true, false, self.fout, n, self.fin, &dy.data, &x.data, T::one(), &mut self.weight.grad);
        need_dx.then(|| {
            let mut dx = Tensor::zeros(x.shape);
            gemm(false, false, n, self.fout, self.fin, &dy.data, &self.weight.value, T::zero(), &mut dx.data);
            dx
        })
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

pub fn relu<T: Scalar>(mut x: Tensor<T>) -> Tensor<T> {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    x
}

/// Gradient through a ReLU given its output `y`.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, mut dy: Tensor<T>) -> Tensor<T> {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    dy
}

/// Argmax positions of a 2×2 max-pool, plus the input shape.
#[derive(Debug, Clone)]
pub struct PoolIndex {
    input_shape: [usize; 4],
    argmax: Vec<u32>,
}

/// 2×2, stride-2 max pooling; odd trailing rows/columns are dropped.
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, PoolIndex) {
    let [n, c, h, w] = x.shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut best = 2 * i * w + 2 * j;
                for cand in [2 * i * w + 2 * j + 1, (2 * i + 1) * w + 2 * j, (2 * i + 1) * w + 2 * j + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                let o = p * oh * ow + i * ow + j;
                y.data[o] = src[best];
                argmax[o] = best as u32;
            }
        }
    }
    (y, PoolIndex { input_shape: x.shape, argmax })
}

pub fn maxpool2_backward<T: Scalar>(idx: &PoolIndex, dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = idx.input_shape;
    let plane_out = dy.shape[2] * dy.shape[3];
    let mut dx = Tensor::zeros(idx.input_shape);
    for p in 0..n * c {
        let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
        for o in 0..plane_out {
            let k = p * plane_out + o;
            dst[idx.argmax[k] as usize] += dy.data[k];
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape;
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut y.data[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            let srow = &src[(i / 2) * w..(i / 2 + 1) * w];
            for (j, d) in dst[i * ow..(i + 1) * ow].iter_mut().enumerate() {
                *d = srow[j / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, oh, ow] = dy.shape;
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for p in 0..n * c {
        let src = &dy.data[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                dst[(i / 2) * w + j / 2] += src[i * ow + j];
            }
        }
    }
    dx
}

pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [n, ca, h, w] = a.shape;
    assert_eq!([b.shape[0], b.shape[2], b.shape[3]], [n, h, w], "concat spatial mismatch");
    let cb = b.shape[1];
    let mut out = Vec::with_capacity(n * (ca + cb) * h * w);
    for s in 0..n {
        out.extend_from_slice(a.sample(s));
        out.extend_from_slice(b.sample(s));
    }
    Tensor::from_vec([n, ca + cb, h, w], out)
}

/// Inverse of [`concat_channels`]: the first `ca` channels, then the rest.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape;
    let hw = h * w;
    let mut a = Vec::with_capacity(n * ca * hw);
    let mut b = Vec::with_capacity(n * (c - ca) * hw);
    for s in 0..n {
        let smp = x.sample(s);
        a.extend_from_slice(&smp[..ca * hw]);
        b.extend_from_slice(&smp[ca * hw..]);
    }
    (Tensor::from_vec([n, ca, h, w], a), Tensor::from_vec([n, c - ca, h, w], b))
}
