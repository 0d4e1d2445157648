//! LSTM with ZoneOut, unrolled for backpropagation through time.
//!
//! ZoneOut mixes the previous and candidate states per unit:
//! `c_t = m_c·c_{t−1} + (1 − m_c)·c̃_t`, likewise for `h`. In training the
//! masks are Bernoulli(rate) draws; in evaluation every entry is the rate
//! itself (the expectation).

use ndarray::{concatenate, s, Array1, Array2, ArrayD, ArrayView2, Axis};
use rand::Rng;

use super::{init_normal, GradStore, ParamId, ParamStore};
use crate::{Error, Real, Result};

/// Per-step keep masks for the cell and hidden state, `(steps, units)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneoutMasks<T> {
    pub cell: Array2<T>,
    pub hidden: Array2<T>,
}

impl<T: Real> ZoneoutMasks<T> {
    pub fn none(steps: usize, units: usize) -> Self {
        Self::constant(steps, units, 0.0)
    }

    /// Every entry equal to `rate`; the evaluation-mode expectation.
    pub fn constant(steps: usize, units: usize, rate: f64) -> Self {
        ZoneoutMasks {
            cell: Array2::from_elem((steps, units), T::of(rate)),
            hidden: Array2::from_elem((steps, units), T::of(rate)),
        }
    }

    pub fn bernoulli(steps: usize, units: usize, rate: f64, rng: &mut impl Rng) -> Self {
        let mut draw = || {
            Array2::from_shape_simple_fn((steps, units), || {
                if rng.random::<f64>() < rate {
                    T::one()
                } else {
                    T::zero()
                }
            })
        };
        let cell = draw();
        let hidden = draw();
        ZoneoutMasks { cell, hidden }
    }

    pub fn for_mode(steps: usize, units: usize, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config("zoneout_rate", format!("{rate} outside [0, 1)")));
        }
        Ok(if training {
            Self::bernoulli(steps, units, rate, rng)
        } else {
            Self::constant(steps, units, rate)
        })
    }
}

/// One direction of an LSTM; gate order is input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub units: usize,
    pub reverse: bool,
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    gates: Array2<T>,
    cell_candidate_tanh: Array2<T>,
    prev_cell: Array2<T>,
    prev_hidden: Array2<T>,
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl Lstm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        units: usize,
        reverse: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w_input = store.add(format!("{name}.w_input"), init_normal(rng, &[in_dim, 4 * units], in_dim, 1.0), true);
        let w_hidden = store.add(format!("{name}.w_hidden"), init_normal(rng, &[units, 4 * units], units, 1.0), true);
        let mut b = ArrayD::zeros(vec![4 * units]);
        // Forget-gate bias starts at 1.
        b.slice_mut(s![units..2 * units]).fill(T::one());
        let bias = store.add(format!("{name}.bias"), b, true);
        Lstm {
            w_input,
            w_hidden,
            bias,
            in_dim,
            units,
            reverse,
        }
    }

    fn order(&self, steps: usize) -> Box<dyn Iterator<Item = usize>> {
        if self.reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        }
    }

    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        masks: &ZoneoutMasks<T>,
    ) -> Result<(Array2<T>, LstmCache<T>)> {
        let steps = x.nrows();
        if steps == 0 {
            return Err(Error::Degenerate("recurrence over an empty sequence".into()));
        }
        if x.ncols() != self.in_dim {
            return Err(Error::shape("lstm input", self.in_dim, x.ncols()));
        }
        let h = self.units;
        let w_h = p.view2(self.w_hidden);
        let mut pre = x.dot(&p.view2(self.w_input));
        pre += &p.view1(self.bias);
        let mut out = Array2::zeros((steps, h));
        let mut gates = Array2::zeros((steps, 4 * h));
        let mut cell_candidate_tanh = Array2::zeros((steps, h));
        let mut prev_cell = Array2::zeros((steps, h));
        let mut prev_hidden = Array2::zeros((steps, h));
        let mut hidden = Array1::<T>::zeros(h);
        let mut cell = Array1::<T>::zeros(h);
        for t in self.order(steps) {
            let z = &pre.row(t) + &hidden.dot(&w_h);
            prev_cell.row_mut(t).assign(&cell);
            prev_hidden.row_mut(t).assign(&hidden);
            let mut grow = gates.row_mut(t);
            for u in 0..h {
                let i = sigmoid(z[u]);
                let f = sigmoid(z[h + u]);
                let g = z[2 * h + u].tanh();
                let o = sigmoid(z[3 * h + u]);
                grow[u] = i;
                grow[h + u] = f;
                grow[2 * h + u] = g;
                grow[3 * h + u] = o;
                let c_new = f * cell[u] + i * g;
                let tc = c_new.tanh();
                cell_candidate_tanh[[t, u]] = tc;
                let h_new = o * tc;
                let mc = masks.cell[[t, u]];
                let mh = masks.hidden[[t, u]];
                cell[u] = mc * cell[u] + (T::one() - mc) * c_new;
                hidden[u] = mh * hidden[u] + (T::one() - mh) * h_new;
            }
            out.row_mut(t).assign(&hidden);
        }
        Ok((
            out,
            LstmCache {
                gates,
                cell_candidate_tanh,
                prev_cell,
                prev_hidden,
            },
        ))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        masks: &ZoneoutMasks<T>,
        cache: &LstmCache<T>,
        d_out: ArrayView2<T>,
        g: &mut GradStore<T>,
    ) -> Array2<T> {
        let steps = x.nrows();
        let h = self.units;
        let w_h = p.view2(self.w_hidden);
        let mut d_pre = Array2::<T>::zeros((steps, 4 * h));
        let mut dh_carry = Array1::<T>::zeros(h);
        let mut dc_carry = Array1::<T>::zeros(h);
        let order: Vec<usize> = self.order(steps).collect();
        for &t in order.iter().rev() {
            let gates = cache.gates.row(t);
            let mut dh_prev = Array1::<T>::zeros(h);
            let mut dc_prev = Array1::<T>::zeros(h);
            {
                let mut dz = d_pre.row_mut(t);
                for u in 0..h {
                    let (i, f, gg, o) = (gates[u], gates[h + u], gates[2 * h + u], gates[3 * h + u]);
                    let tc = cache.cell_candidate_tanh[[t, u]];
                    let mc = masks.cell[[t, u]];
                    let mh = masks.hidden[[t, u]];
                    let dh = d_out[[t, u]] + dh_carry[u];
                    let dc = dc_carry[u];
                    let dh_new = (T::one() - mh) * dh;
                    dh_prev[u] = mh * dh;
                    let dc_new = (T::one() - mc) * dc + dh_new * o * (T::one() - tc * tc);
                    dc_prev[u] = mc * dc + dc_new * f;
                    let d_o = dh_new * tc;
                    let d_i = dc_new * gg;
                    let d_g = dc_new * i;
                    let d_f = dc_new * cache.prev_cell[[t, u]];
                    dz[u] = d_i * i * (T::one() - i);
                    dz[h + u] = d_f * f * (T::one() - f);
                    dz[2 * h + u] = d_g * (T::one() - gg * gg);
                    dz[3 * h + u] = d_o * o * (T::one() - o);
                }
            }
            dh_prev += &w_h.dot(&d_pre.row(t));
            dh_carry = dh_prev;
            dc_carry = dc_prev;
        }
        *g.get_mut(self.w_hidden) += &cache.prev_hidden.t().dot(&d_pre).into_dyn();
        *g.get_mut(self.w_input) += &x.t().dot(&d_pre).into_dyn();
        *g.get_mut(self.bias) += &d_pre.sum_axis(Axis(0)).into_dyn();
        d_pre.dot(&p.view2(self.w_input).t())
    }
}

/// Forward and reverse LSTMs over the same input, outputs concatenated.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<T> {
    fwd: LstmCache<T>,
    bwd: LstmCache<T>,
    masks: [ZoneoutMasks<T>; 2],
}

impl BiLstm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, in_dim: usize, units: usize, rng: &mut impl Rng) -> Self {
        BiLstm {
            forward: Lstm::new(store, &format!("{name}.fwd"), in_dim, units, false, rng),
            backward: Lstm::new(store, &format!("{name}.bwd"), in_dim, units, true, rng),
        }
    }

    pub fn units(&self) -> usize {
        self.forward.units
    }

    pub fn run<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        masks: [ZoneoutMasks<T>; 2],
    ) -> Result<(Array2<T>, BiLstmCache<T>)> {
        let (a, fwd) = self.forward.forward(p, x, &masks[0])?;
        let (b, bwd) = self.backward.forward(p, x, &masks[1])?;
        let out = concatenate(Axis(1), &[a.view(), b.view()]).expect("equal lengths");
        Ok((out, BiLstmCache { fwd, bwd, masks }))
    }

    /// Zoneout masks for both directions in the given mode.
    pub fn masks<T: Real>(
        &self,
        steps: usize,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<[ZoneoutMasks<T>; 2]> {
        let u = self.units();
        Ok([
            ZoneoutMasks::for_mode(steps, u, rate, training, rng)?,
            ZoneoutMasks::for_mode(steps, u, rate, training, rng)?,
        ])
    }

    pub fn backward_pass<T: Real>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<T>,
        cache: &BiLstmCache<T>,
        d_out: ArrayView2<T>,
        g: &mut GradStore<T>,
    ) -> Array2<T> {
        let u = self.units();
        let da = d_out.slice(s![.., ..u]);
        let db = d_out.slice(s![.., u..]);
        let dx = self.forward.backward(p, x, &cache.masks[0], &cache.fwd, da, g);
        dx + self.backward.backward(p, x, &cache.masks[1], &cache.bwd, db, g)
    }
}
