use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Ix2};
use rand::Rng;

use super::{init_normal, GradStore, ParamId, ParamStore};
use crate::{Error, Real, Result};

/// Same-padded 1-D cross-correlation over time-major input (length × channels).
///
/// Weight layout is `(kernel, in, out)` so each tap is a plain matrix product.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let weight = store.add(
            format!("{name}.weight"),
            init_normal(rng, &[kernel, in_ch, out_ch], kernel * in_ch, gain),
            true,
        );
        let bias = store.add(format!("{name}.bias"), ndarray::ArrayD::zeros(vec![out_ch]), true);
        Conv1d {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            dilation,
        }
    }

    fn pad(&self) -> isize {
        (self.dilation * (self.kernel - 1) / 2) as isize
    }

    /// Row ranges `(out_rows, in_rows)` touched by tap `k` for length `len`.
    fn tap_rows(&self, k: usize, len: usize) -> Option<((usize, usize), (usize, usize))> {
        let off = (k * self.dilation) as isize - self.pad();
        let len = len as isize;
        let t0 = 0.max(-off);
        let t1 = len.min(len - off);
        if t0 >= t1 {
            return None;
        }
        Some((
            (t0 as usize, t1 as usize),
            ((t0 + off) as usize, (t1 + off) as usize),
        ))
    }

    fn check_input<T>(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.in_ch {
            return Err(Error::shape("conv1d input channels", self.in_ch, x.ncols()));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let w = p.view3(self.weight);
        let len = x.nrows();
        let mut out = Array2::zeros((len, self.out_ch));
        out += &p.view1(self.bias);
        for k in 0..self.kernel {
            if let Some(((o0, o1), (i0, i1))) = self.tap_rows(k, len) {
                let mut dst = out.slice_mut(s![o0..o1, ..]);
                general_mat_mul(T::one(), &x.slice(s![i0..i1, ..]), &w.index_axis(Axis(0), k), T::one(), &mut dst);
            }
        }
        Ok(out)
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        d_out: ArrayView2<T>,
        g: &mut GradStore<T>,
    ) -> Array2<T> {
        let w = p.view3(self.weight);
        let len = x.nrows();
        let mut dx = Array2::zeros((len, self.in_ch));
        {
            let gw = g.get_mut(self.weight);
            let mut gw = gw.view_mut().into_dimensionality::<ndarray::Ix3>().expect("rank-3");
            for k in 0..self.kernel {
                if let Some(((o0, o1), (i0, i1))) = self.tap_rows(k, len) {
                    let d = d_out.slice(s![o0..o1, ..]);
                    let xs = x.slice(s![i0..i1, ..]);
                    let mut gk = gw.index_axis_mut(Axis(0), k);
                    general_mat_mul(T::one(), &xs.t(), &d, T::one(), &mut gk);
                    let mut dxs = dx.slice_mut(s![i0..i1, ..]);
                    general_mat_mul(T::one(), &d, &w.index_axis(Axis(0), k).t(), T::one(), &mut dxs);
                }
            }
        }
        let gb = g.get_mut(self.bias);
        *gb += &d_out.sum_axis(Axis(0)).into_dyn();
        dx
    }
}

/// Non-overlapping strided convolution (kernel = stride = factor).
///
/// Output length is `ceil(len / factor)`; the tail is zero-padded.
#[derive(Debug, Clone)]
pub struct StridedConv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub factor: usize,
}

impl StridedConv1d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        factor: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_normal(rng, &[factor, in_ch, out_ch], factor * in_ch, gain),
            true,
        );
        let bias = store.add(format!("{name}.bias"), ndarray::ArrayD::zeros(vec![out_ch]), true);
        StridedConv1d {
            weight,
            bias,
            in_ch,
            out_ch,
            factor,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        len.div_ceil(self.factor)
    }

    fn folded<T: Real>(&self, x: ArrayView2<T>) -> Array2<T> {
        let out_len = self.out_len(x.nrows());
        let mut padded = Array2::zeros((out_len * self.factor, self.in_ch));
        padded.slice_mut(s![..x.nrows(), ..]).assign(&x);
        padded
            .into_shape_with_order((out_len, self.factor * self.in_ch))
            .expect("contiguous")
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: ArrayView2<T>) -> Result<Array2<T>> {
        if x.ncols() != self.in_ch {
            return Err(Error::shape("strided conv input channels", self.in_ch, x.ncols()));
        }
        if !x.nrows().is_multiple_of(self.factor) {
            log::trace!("strided conv pads {} rows to a multiple of {}", x.nrows(), self.factor);
        }
        let folded = self.folded(x);
        let w = p
            .get(self.weight)
            .view()
            .into_shape_with_order((self.factor * self.in_ch, self.out_ch))
            .expect("contiguous")
            .into_dimensionality::<Ix2>()
            .expect("rank-2");
        let mut out = folded.dot(&w);
        out += &p.view1(self.bias);
        Ok(out)
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        d_out: ArrayView2<T>,
        g: &mut GradStore<T>,
    ) -> Array2<T> {
        let folded = self.folded(x);
        let rows = self.factor * self.in_ch;
        let w = p
            .get(self.weight)
            .view()
            .into_shape_with_order((rows, self.out_ch))
            .expect("contiguous")
            .into_dimensionality::<Ix2>()
            .expect("rank-2");
        {
            let gw = g.get_mut(self.weight);
            let mut gw = gw
                .view_mut()
                .into_shape_with_order((rows, self.out_ch))
                .expect("contiguous")
                .into_dimensionality::<Ix2>()
                .expect("rank-2");
            general_mat_mul(T::one(), &folded.t(), &d_out, T::one(), &mut gw);
        }
        *g.get_mut(self.bias) += &d_out.sum_axis(Axis(0)).into_dyn();
        let d_folded = d_out.dot(&w.t());
        let d_padded = d_folded
            .into_shape_with_order((d_out.nrows() * self.factor, self.in_ch))
            .expect("contiguous");
        d_padded.slice(s![..x.nrows(), ..]).to_owned()
    }
}

/// Nearest-neighbour upsampling along time.
pub fn upsample_nearest<T: Real>(x: ArrayView2<T>, factor: usize) -> Array2<T> {
    if factor == 1 {
        return x.to_owned();
    }
    let (len, ch) = x.dim();
    let mut out = Array2::zeros((len * factor, ch));
    for (t, row) in x.rows().into_iter().enumerate() {
        for r in 0..factor {
            out.row_mut(t * factor + r).assign(&row);
        }
    }
    out
}

/// Adjoint of [`upsample_nearest`]: sums each group of `factor` rows.
pub fn downsample_sum<T: Real>(d: ArrayView2<T>, factor: usize) -> Array2<T> {
    if factor == 1 {
        return d.to_owned();
    }
    let (len, ch) = d.dim();
    let mut out = Array2::zeros((len / factor, ch));
    for (t, row) in d.rows().into_iter().enumerate() {
        let mut dst = out.row_mut(t / factor);
        dst += &row;
    }
    out
}
