//! Weight sets for every cell family.
//!
//! Each set is generic over its storage: `Tensor` for the owned parameters,
//! `Var` once the parameters are bound to a tape for a forward pass.

use rand::Rng;

use crate::tensor::Tensor;

macro_rules! param_struct {
    ($(#[$meta:meta])* $name:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<T = Tensor> {
            $(pub $field: T,)+
        }

        impl<T> $name<T> {
            pub const FIELDS: &'static [&'static str] = &[$(stringify!($field)),+];

            pub fn map<U, F: FnMut(&T) -> U>(&self, f: &mut F) -> $name<U> {
                $name { $($field: f(&self.$field),)+ }
            }

            pub fn for_each<'a, F: FnMut(&'a T)>(&'a self, f: &mut F) {
                $(f(&self.$field);)+
            }

            pub fn for_each_mut<'a, F: FnMut(&'a mut T)>(&'a mut self, f: &mut F) {
                $(f(&mut self.$field);)+
            }
        }
    };
}

param_struct!(
    /// `s_t = tanh(W x_t + U s_{t-1} + b)`
    RnnParams { w, u, b }
);

param_struct!(
    /// Reset, update and candidate weights of a GRU.
    GruParams { w_r, w_z, w_h, u_r, u_z, u_h, b_r, b_z, b_h }
);

param_struct!(
    /// Input, forget, output and candidate weights of an LSTM.
    LstmParams { w_i, w_f, w_o, w_g, u_i, u_f, u_o, u_g, b_i, b_f, b_o, b_g }
);

param_struct!(
    /// MoNet unit weights. `w_r` and `w_z` are shared by the forward and
    /// backward gates; `u_h` acts on the concatenated `[s_right∘r_b, s_left∘r_f]`
    /// and therefore has `2·D_s` columns.
    MoNetParams { w_r, w_z, w_h, u_rf, u_rb, u_zf, u_zb, u_h, b_r, b_z, b_h }
);

param_struct!(
    /// Dense projection `y = W x + b`.
    LinearParams { w, b }
);

/// One temporal convolution layer: `taps[k]` is the `D_out×D_in` weight for
/// offset `k - kernel/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T = Tensor> {
    pub taps: Vec<T>,
    pub b: T,
}

impl<T> ConvLayer<T> {
    pub fn map<U, F: FnMut(&T) -> U>(&self, f: &mut F) -> ConvLayer<U> {
        ConvLayer {
            taps: self.taps.iter().map(&mut *f).collect(),
            b: f(&self.b),
        }
    }

    pub fn for_each<'a, F: FnMut(&'a T)>(&'a self, f: &mut F) {
        self.taps.iter().for_each(&mut *f);
        f(&self.b);
    }

    pub fn for_each_mut<'a, F: FnMut(&'a mut T)>(&'a mut self, f: &mut F) {
        self.taps.iter_mut().for_each(&mut *f);
        f(&mut self.b);
    }
}

/// Stacked temporal convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1dParams<T = Tensor> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T> Conv1dParams<T> {
    pub fn map<U, F: FnMut(&T) -> U>(&self, f: &mut F) -> Conv1dParams<U> {
        Conv1dParams {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
        }
    }
}

/// Draws a `rows×cols` matrix uniformly from `[-bound, bound]`.
pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new([rows, cols], data).expect("uniform shape")
}

pub(crate) fn bias(n: usize) -> Tensor {
    Tensor::zeros([n])
}

impl RnnParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_x: usize, d_s: usize) -> Self {
        let k = 1.0 / (d_s as f64).sqrt();
        Self {
            w: uniform(rng, d_s, d_x, k),
            u: uniform(rng, d_s, d_s, k),
            b: bias(d_s),
        }
    }
}

impl GruParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_x: usize, d_s: usize) -> Self {
        let k = 1.0 / (d_s as f64).sqrt();
        Self {
            w_r: uniform(rng, d_s, d_x, k),
            w_z: uniform(rng, d_s, d_x, k),
            w_h: uniform(rng, d_s, d_x, k),
            u_r: uniform(rng, d_s, d_s, k),
            u_z: uniform(rng, d_s, d_s, k),
            u_h: uniform(rng, d_s, d_s, k),
            b_r: bias(d_s),
            b_z: bias(d_s),
            b_h: bias(d_s),
        }
    }
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_x: usize, d_s: usize) -> Self {
        let k = 1.0 / (d_s as f64).sqrt();
        Self {
            w_i: uniform(rng, d_s, d_x, k),
            w_f: uniform(rng, d_s, d_x, k),
            w_o: uniform(rng, d_s, d_x, k),
            w_g: uniform(rng, d_s, d_x, k),
            u_i: uniform(rng, d_s, d_s, k),
            u_f: uniform(rng, d_s, d_s, k),
            u_o: uniform(rng, d_s, d_s, k),
            u_g: uniform(rng, d_s, d_s, k),
            b_i: bias(d_s),
            b_f: bias(d_s),
            b_o: bias(d_s),
            b_g: bias(d_s),
        }
    }
}

impl MoNetParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_x: usize, d_s: usize) -> Self {
        let k = 1.0 / (d_s as f64).sqrt();
        Self {
            w_r: uniform(rng, d_s, d_x, k),
            w_z: uniform(rng, d_s, d_x, k),
            w_h: uniform(rng, d_s, d_x, k),
            u_rf: uniform(rng, d_s, d_s, k),
            u_rb: uniform(rng, d_s, d_s, k),
            u_zf: uniform(rng, d_s, d_s, k),
            u_zb: uniform(rng, d_s, d_s, k),
            u_h: uniform(rng, d_s, 2 * d_s, k),
            b_r: bias(d_s),
            b_z: bias(d_s),
            b_h: bias(d_s),
        }
    }
}

impl LinearParams {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_in: usize, d_out: usize) -> Self {
        let k = 1.0 / (d_in as f64).sqrt();
        Self {
            w: uniform(rng, d_out, d_in, k),
            b: bias(d_out),
        }
    }
}

impl ConvLayer {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_in: usize, d_out: usize, kernel: usize) -> Self {
        let k = 1.0 / (d_out as f64).sqrt();
        Self {
            taps: (0..kernel).map(|_| uniform(rng, d_out, d_in, k)).collect(),
            b: bias(d_out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn monet_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MoNetParams::init(&mut rng, 5, 4);
        assert_eq!(p.w_r.shape(), &[4, 5]);
        assert_eq!(p.u_rb.shape(), &[4, 4]);
        assert_eq!(p.u_h.shape(), &[4, 8]);
        assert_eq!(p.b_h.shape(), &[4]);
        assert_eq!(MoNetParams::<Tensor>::FIELDS.len(), 11);
    }

    #[test]
    fn init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = GruParams::init(&mut rng, 3, 16);
        let mut seen = 0;
        p.for_each(&mut |t: &Tensor| {
            seen += 1;
            assert!(t.data().iter().all(|v| v.abs() <= 0.25));
        });
        assert_eq!(seen, 9);
        assert!(p.b_z.data().iter().all(|&v| v == 0.0));
    }
}
