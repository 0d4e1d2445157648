//! Residual upsampling (UBlock) and downsampling (DBlock) blocks.
//!
//! UBlock, with `up` nearest-neighbour upsampling and FiLM `m(·)`:
//! ```text
//! h   = conv_b(lrelu(m(conv_a(up(lrelu(x)))))) + up(res(x))
//! out = h + conv_d(lrelu(m(conv_c(lrelu(m(h))))))
//! ```
//! DBlock, with strided convolutions `down_*`:
//! ```text
//! out = conv_b(lrelu(conv_a(lrelu(down_main(x))))) + down_res(x)
//! ```

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::act::{leaky_relu, leaky_relu_backward};
use super::conv::{downsample_sum, upsample_nearest};
use super::film::{film_modulate, film_modulate_backward};
use super::{Conv1d, GradStore, ParamStore, StridedConv1d};
use crate::{Error, Real, Result};

#[derive(Debug, Clone)]
pub struct UBlock {
    pub factor: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub residual: Conv1d,
    pub conv_a: Conv1d,
    pub conv_b: Conv1d,
    pub conv_c: Conv1d,
    pub conv_d: Conv1d,
}

#[derive(Debug, Clone)]
pub struct UBlockCache<T> {
    x: Array2<T>,
    a1: Array2<T>,
    a2: Array2<T>,
    a3: Array2<T>,
    a4: Array2<T>,
    h: Array2<T>,
    b0: Array2<T>,
    b1: Array2<T>,
    b2: Array2<T>,
    b3: Array2<T>,
    b4: Array2<T>,
    film: Option<(Array2<T>, Array2<T>)>,
}

pub struct UBlockGrads<T> {
    pub input: Array2<T>,
    /// `(d_scale, d_shift)` when the block was modulated.
    pub film: Option<(Array2<T>, Array2<T>)>,
}

impl UBlock {
    /// `dilations` holds the four dilation rates of `conv_a..conv_d`.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        factor: usize,
        dilations: [usize; 4],
        rng: &mut impl Rng,
    ) -> Self {
        assert!(factor >= 1);
        let residual = Conv1d::new(store, &format!("{name}.residual"), in_ch, out_ch, 1, 1, 1.0, rng);
        let conv_a = Conv1d::new(store, &format!("{name}.conv_a"), in_ch, out_ch, 3, dilations[0], 1.0, rng);
        let conv_b = Conv1d::new(store, &format!("{name}.conv_b"), out_ch, out_ch, 3, dilations[1], 0.5, rng);
        let conv_c = Conv1d::new(store, &format!("{name}.conv_c"), out_ch, out_ch, 3, dilations[2], 1.0, rng);
        let conv_d = Conv1d::new(store, &format!("{name}.conv_d"), out_ch, out_ch, 3, dilations[3], 0.5, rng);
        UBlock {
            factor,
            in_ch,
            out_ch,
            residual,
            conv_a,
            conv_b,
            conv_c,
            conv_d,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        len * self.factor
    }

    fn modulate<T: Real>(x: Array2<T>, film: Option<(&Array2<T>, &Array2<T>)>, stage: &str) -> Result<Array2<T>> {
        match film {
            Some((scale, shift)) => film_modulate(x.view(), scale.view(), shift.view()).map_err(|e| match e {
                Error::Resolution { detail, .. } => Error::Resolution {
                    stage: stage.into(),
                    detail,
                },
                other => other,
            }),
            None => Ok(x),
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        film: Option<(Array2<T>, Array2<T>)>,
    ) -> Result<(Array2<T>, UBlockCache<T>)> {
        if x.ncols() != self.in_ch {
            return Err(Error::shape("ublock input channels", self.in_ch, x.ncols()));
        }
        let out_len = self.out_len(x.nrows());
        if let Some((scale, _)) = &film {
            if scale.dim() != (out_len, self.out_ch) {
                return Err(Error::Resolution {
                    stage: "ublock film".into(),
                    detail: format!("expected {:?}, got {:?}", (out_len, self.out_ch), scale.dim()),
                });
            }
        }
        let f = film.as_ref().map(|(a, b)| (a, b));
        let res = upsample_nearest(self.residual.forward(p, x)?.view(), self.factor);
        let a1 = upsample_nearest(leaky_relu(x).view(), self.factor);
        let a2 = self.conv_a.forward(p, a1.view())?;
        let a3 = Self::modulate(a2.clone(), f, "ublock film a")?;
        let a4 = leaky_relu(a3.view());
        let h = self.conv_b.forward(p, a4.view())? + res;
        let b0 = Self::modulate(h.clone(), f, "ublock film b")?;
        let b1 = leaky_relu(b0.view());
        let b2 = self.conv_c.forward(p, b1.view())?;
        let b3 = Self::modulate(b2.clone(), f, "ublock film c")?;
        let b4 = leaky_relu(b3.view());
        let out = &h + &self.conv_d.forward(p, b4.view())?;
        Ok((
            out,
            UBlockCache {
                x: x.to_owned(),
                a1,
                a2,
                a3,
                a4,
                h,
                b0,
                b1,
                b2,
                b3,
                b4,
                film,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &UBlockCache<T>,
        d_out: ArrayView2<T>,
        g: &mut GradStore<T>,
    ) -> UBlockGrads<T> {
        let c = cache;
        let mut d_film = c
            .film
            .as_ref()
            .map(|(s, _)| (Array2::<T>::zeros(s.raw_dim()), Array2::<T>::zeros(s.raw_dim())));
        // Backward through an optional FiLM application whose input was `pre`.
        let mut through_film = |pre: &Array2<T>, d: Array2<T>| -> Array2<T> {
            match (&c.film, d_film.as_mut()) {
                (Some((scale, _)), Some((ds, dsh))) => {
                    let (dx, d_scale) = film_modulate_backward(pre.view(), scale.view(), d.view());
                    *ds += &d_scale;
                    *dsh += &d;
                    dx
                }
                _ => d,
            }
        };

        let mut dh = d_out.to_owned();
        let db4 = self.conv_d.backward(p, c.b4.view(), d_out, g);
        let db3 = leaky_relu_backward(c.b3.view(), db4.view());
        let db2 = through_film(&c.b2, db3);
        let db1 = self.conv_c.backward(p, c.b1.view(), db2.view(), g);
        let db0 = leaky_relu_backward(c.b0.view(), db1.view());
        dh += &through_film(&c.h, db0);

        let da4 = self.conv_b.backward(p, c.a4.view(), dh.view(), g);
        let da3 = leaky_relu_backward(c.a3.view(), da4.view());
        let da2 = through_film(&c.a2, da3);
        let da1 = self.conv_a.backward(p, c.a1.view(), da2.view(), g);
        let da0 = downsample_sum(da1.view(), self.factor);
        let mut dx = leaky_relu_backward(c.x.view(), da0.view());
        let d_res = downsample_sum(dh.view(), self.factor);
        dx += &self.residual.backward(p, c.x.view(), d_res.view(), g);
        UBlockGrads { input: dx, film: d_film }
    }
}

#[derive(Debug, Clone)]
pub struct DBlock {
    pub factor: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub down_residual: StridedConv1d,
    pub down_main: StridedConv1d,
    pub conv_a: Conv1d,
    pub conv_b: Conv1d,
}

#[derive(Debug, Clone)]
pub struct DBlockCache<T> {
    x: Array2<T>,
    m0: Array2<T>,
    m1: Array2<T>,
    m2: Array2<T>,
    m3: Array2<T>,
}

impl DBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        factor: usize,
        dilations: [usize; 2],
        rng: &mut impl Rng,
    ) -> Self {
        DBlock {
            factor,
            in_ch,
            out_ch,
            down_residual: StridedConv1d::new(store, &format!("{name}.down_residual"), in_ch, out_ch, factor, 1.0, rng),
            down_main: StridedConv1d::new(store, &format!("{name}.down_main"), in_ch, out_ch, factor, 1.0, rng),
            conv_a: Conv1d::new(store, &format!("{name}.conv_a"), out_ch, out_ch, 3, dilations[0], 1.0, rng),
            conv_b: Conv1d::new(store, &format!("{name}.conv_b"), out_ch, out_ch, 3, dilations[1], 0.5, rng),
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        len.div_ceil(self.factor)
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: ArrayView2<T>) -> Result<(Array2<T>, DBlockCache<T>)> {
        if x.ncols() != self.in_ch {
            return Err(Error::shape("dblock input channels", self.in_ch, x.ncols()));
        }
        let res = self.down_residual.forward(p, x)?;
        let m0 = self.down_main.forward(p, x)?;
        let m1 = leaky_relu(m0.view());
        let m2 = self.conv_a.forward(p, m1.view())?;
        let m3 = leaky_relu(m2.view());
        let out = self.conv_b.forward(p, m3.view())? + res;
        Ok((
            out,
            DBlockCache {
                x: x.to_owned(),
                m0,
                m1,
                m2,
                m3,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &DBlockCache<T>,
        d_out: ArrayView2<T>,
        g: &mut GradStore<T>,
    ) -> Array2<T> {
        let c = cache;
        let dm3 = self.conv_b.backward(p, c.m3.view(), d_out, g);
        let dm2 = leaky_relu_backward(c.m2.view(), dm3.view());
        let dm1 = self.conv_a.backward(p, c.m1.view(), dm2.view(), g);
        let dm0 = leaky_relu_backward(c.m0.view(), dm1.view());
        let mut dx = self.down_main.backward(p, c.x.view(), dm0.view(), g);
        dx += &self.down_residual.backward(p, c.x.view(), d_out, g);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn length_contracts() {
        let mut store = ParamStore::<f64>::new();
        let mut r = rng::seeded(0);
        let ub = UBlock::new(&mut store, "u", 4, 4, 5, [1, 2, 4, 8], &mut r);
        let (out, _) = ub.forward(&store, Array2::zeros((16, 4)).view(), None).unwrap();
        assert_eq!(out.dim(), (80, 4));
        let db = DBlock::new(&mut store, "d", 1, 4, 5, [1, 2], &mut r);
        let (out, _) = db.forward(&store, Array2::zeros((80, 1)).view()).unwrap();
        assert_eq!(out.dim(), (16, 4));
    }

    #[test]
    fn film_resolution_mismatch_is_reported() {
        let mut store = ParamStore::<f64>::new();
        let ub = UBlock::new(&mut store, "u", 2, 3, 2, [1, 2, 4, 8], &mut rng::seeded(0));
        let film = (Array2::ones((7, 3)), Array2::zeros((7, 3)));
        let err = ub.forward(&store, Array2::zeros((4, 2)).view(), Some(film)).unwrap_err();
        assert!(matches!(err, Error::Resolution { .. }));
    }
}
