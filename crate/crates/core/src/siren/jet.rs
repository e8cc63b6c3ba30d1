//! Stacked forward-mode jets and their reverse-mode adjoints.
//!
//! A jet over `n` points stores up to nine row blocks of shape `[n, width]`:
//! the value, the first directional derivative along each of the four
//! normalized input axes, and the matching diagonal second derivatives.
//! Stacking lets every affine layer run as a single matrix product.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};

/// Highest input derivative carried through the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DerivOrder {
    Value,
    First,
    Second,
}

impl DerivOrder {
    pub fn streams(self) -> usize {
        match self {
            DerivOrder::Value => 1,
            DerivOrder::First => 5,
            DerivOrder::Second => 9,
        }
    }
}

/// Number of input axes (x, y, z, t).
pub const AXES: usize = 4;

pub(crate) fn first_stream(axis: usize) -> usize {
    1 + axis
}

pub(crate) fn second_stream(axis: usize) -> usize {
    1 + AXES + axis
}

#[derive(Debug, Clone)]
pub(crate) struct Jet {
    pub order: DerivOrder,
    pub n: usize,
    pub data: Array2<f64>,
}

impl Jet {
    pub fn zeros(order: DerivOrder, n: usize, width: usize) -> Self {
        Self {
            order,
            n,
            data: Array2::zeros((order.streams() * n, width)),
        }
    }

    /// Seeds a jet from normalized input coordinates: unit tangents, zero curvature.
    pub fn seed(order: DerivOrder, coords: &[[f64; AXES]]) -> Self {
        let n = coords.len();
        let mut jet = Self::zeros(order, n, AXES);
        for (i, c) in coords.iter().enumerate() {
            for a in 0..AXES {
                jet.data[[i, a]] = c[a];
            }
        }
        if order >= DerivOrder::First {
            for a in 0..AXES {
                jet.block_mut(first_stream(a)).column_mut(a).fill(1.0);
            }
        }
        jet
    }

    pub fn block(&self, stream: usize) -> ArrayView2<'_, f64> {
        self.data
            .slice(s![stream * self.n..(stream + 1) * self.n, ..])
    }

    pub fn block_mut(&mut self, stream: usize) -> ArrayViewMut2<'_, f64> {
        self.data
            .slice_mut(s![stream * self.n..(stream + 1) * self.n, ..])
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }
}

/// Forward intermediates of an affine layer followed by `sin(omega0 * .)`.
#[derive(Debug, Clone)]
pub(crate) struct SineCache {
    /// Pre-activation jet `W h + b` (bias on the value block only).
    pub z: Jet,
    pub sin: Array2<f64>,
    pub cos: Array2<f64>,
}

/// `Z = H W^T + b`, propagated through every stream of the jet.
pub(crate) fn affine(input: &Jet, weight: &Array2<f64>, bias: &Array1<f64>) -> Jet {
    let mut data = input.data.dot(&weight.t());
    data.slice_mut(s![..input.n, ..])
        .outer_iter_mut()
        .for_each(|mut row| row += bias);
    Jet {
        order: input.order,
        n: input.n,
        data,
    }
}

pub(crate) fn sine_forward(
    input: &Jet,
    weight: &Array2<f64>,
    bias: &Array1<f64>,
    omega0: f64,
) -> (Jet, SineCache) {
    let z = affine(input, weight, bias);
    let n = z.n;
    let width = z.width();
    let mut sin = Array2::zeros((n, width));
    let mut cos = Array2::zeros((n, width));
    super::trig::sin_cos_scaled(
        omega0,
        z.block(0).as_slice().expect("jet blocks are contiguous"),
        sin.as_slice_mut().expect("fresh array"),
        cos.as_slice_mut().expect("fresh array"),
    );
    let mut out = Jet::zeros(z.order, n, width);
    out.block_mut(0).assign(&sin);
    if z.order >= DerivOrder::First {
        for a in 0..AXES {
            Zip::from(out.block_mut(first_stream(a)))
                .and(&z.block(first_stream(a)))
                .and(&cos)
                .for_each(|o, &dz, &c| *o = omega0 * c * dz);
        }
    }
    if z.order >= DerivOrder::Second {
        let w2 = omega0 * omega0;
        for a in 0..AXES {
            Zip::from(out.block_mut(second_stream(a)))
                .and(&z.block(first_stream(a)))
                .and(&z.block(second_stream(a)))
                .and(&sin)
                .and(&cos)
                .for_each(|o, &dz, &ddz, &s, &c| *o = omega0 * c * ddz - w2 * s * dz * dz);
        }
    }
    (out, SineCache { z, sin, cos })
}

/// Adjoint of [`sine_forward`]. Returns `(dW, db, dInput)`; the input adjoint
/// is skipped when the input is a fixed coordinate seed.
pub(crate) fn sine_backward(
    cache: &SineCache,
    input: &Jet,
    weight: &Array2<f64>,
    omega0: f64,
    grad_out: &Jet,
    want_input: bool,
) -> (Array2<f64>, Array1<f64>, Option<Jet>) {
    let z = &cache.z;
    let (sin, cos) = (&cache.sin, &cache.cos);
    let mut gz = Jet::zeros(z.order, z.n, z.width());
    let w2 = omega0 * omega0;
    let w3 = w2 * omega0;
    {
        let mut g0 = gz.block_mut(0);
        Zip::from(&mut g0)
            .and(&grad_out.block(0))
            .and(cos)
            .for_each(|g, &ga, &c| *g = omega0 * c * ga);
    }
    if z.order >= DerivOrder::First {
        for a in 0..AXES {
            let fs = first_stream(a);
            // value adjoint picks up d(omega0 cos(omega0 z))/dz * dz
            let (mut g0, mut gf) = split_two(&mut gz, 0, fs);
            Zip::from(&mut g0)
                .and(&mut gf)
                .and(&grad_out.block(fs))
                .and(&z.block(fs))
                .and(sin)
                .and(cos)
                .for_each(|g0, gf, &ga, &dz, &s, &c| {
                    *g0 -= w2 * s * dz * ga;
                    *gf = omega0 * c * ga;
                });
        }
    }
    if z.order >= DerivOrder::Second {
        for a in 0..AXES {
            let (fs, ss) = (first_stream(a), second_stream(a));
            let ga2 = grad_out.block(ss);
            let (dz, ddz) = (z.block(fs), z.block(ss));
            {
                let (mut g0, mut gf) = split_two(&mut gz, 0, fs);
                Zip::from(&mut g0)
                    .and(&mut gf)
                    .and(&ga2)
                    .and(&dz)
                    .and(&ddz)
                    .and(sin)
                    .for_each(|g0, gf, &g2, &d, &dd, &s| {
                        *gf -= 2.0 * w2 * s * d * g2;
                        *g0 -= w2 * s * dd * g2;
                    });
            }
            {
                let (mut g0, mut gs) = split_two(&mut gz, 0, ss);
                Zip::from(&mut g0)
                    .and(&mut gs)
                    .and(&ga2)
                    .and(&dz)
                    .and(cos)
                    .for_each(|g0, gs, &g2, &d, &c| {
                        *g0 -= w3 * c * d * d * g2;
                        *gs = omega0 * c * g2;
                    });
            }
        }
    }
    let grad_w = gz.data.t().dot(&input.data);
    let grad_b = gz.block(0).sum_axis(Axis(0));
    let grad_in = want_input.then(|| Jet {
        order: input.order,
        n: input.n,
        data: gz.data.dot(weight),
    });
    (grad_w, grad_b, grad_in)
}

/// Two disjoint mutable stream blocks of the same jet.
fn split_two(
    jet: &mut Jet,
    lo: usize,
    hi: usize,
) -> (ArrayViewMut2<'_, f64>, ArrayViewMut2<'_, f64>) {
    debug_assert!(lo < hi);
    let n = jet.n;
    let (a, b) = jet.data.view_mut().split_at(Axis(0), hi * n);
    (
        a.slice_move(s![lo * n..(lo + 1) * n, ..]),
        b.slice_move(s![..n, ..]),
    )
}

/// Modulated blend `h = f + ht * (g - f)` carried through every stream.
pub(crate) fn blend_forward(f: &Jet, g: &Jet, ht: &Jet) -> Jet {
    let mut h = Jet::zeros(ht.order, ht.n, ht.width());
    let d0 = &g.block(0) - &f.block(0);
    Zip::from(h.block_mut(0))
        .and(&f.block(0))
        .and(&ht.block(0))
        .and(&d0)
        .for_each(|h, &f, &t, &d| *h = f + t * d);
    if ht.order >= DerivOrder::First {
        for a in 0..AXES {
            let fs = first_stream(a);
            let d1 = &g.block(fs) - &f.block(fs);
            Zip::from(h.block_mut(fs))
                .and(&f.block(fs))
                .and(&ht.block(fs))
                .and(&ht.block(0))
                .and(&d0)
                .and(&d1)
                .for_each(|h, &df, &dt, &t, &d, &dd| *h = df + dt * d + t * dd);
            if ht.order >= DerivOrder::Second {
                let ss = second_stream(a);
                let d2 = &g.block(ss) - &f.block(ss);
                let mut hb = h.block_mut(ss);
                Zip::from(&mut hb)
                    .and(&f.block(ss))
                    .and(&ht.block(ss))
                    .and(&d0)
                    .for_each(|h, &ddf, &ddt, &d| *h = ddf + ddt * d);
                Zip::from(&mut hb)
                    .and(&ht.block(fs))
                    .and(&ht.block(0))
                    .and(&d1)
                    .and(&d2)
                    .for_each(|h, &dt, &t, &dd, &ddd| *h += 2.0 * dt * dd + t * ddd);
            }
        }
    }
    h
}

/// Adjoint of [`blend_forward`]: accumulates into `grad_f` / `grad_g` and
/// returns the adjoint of `ht`.
pub(crate) fn blend_backward(
    f: &Jet,
    g: &Jet,
    ht: &Jet,
    grad_h: &Jet,
    grad_f: &mut Jet,
    grad_g: &mut Jet,
) -> Jet {
    // Adjoint of the difference jet d = g - f, then split onto f and g.
    let mut grad_d = Jet::zeros(ht.order, ht.n, ht.width());
    let mut grad_ht = Jet::zeros(ht.order, ht.n, ht.width());
    let d0 = &g.block(0) - &f.block(0);

    Zip::from(grad_ht.block_mut(0))
        .and(&grad_h.block(0))
        .and(&d0)
        .for_each(|gt, &gh, &d| *gt = gh * d);
    Zip::from(grad_d.block_mut(0))
        .and(&grad_h.block(0))
        .and(&ht.block(0))
        .for_each(|gd, &gh, &t| *gd = gh * t);

    if ht.order >= DerivOrder::First {
        for a in 0..AXES {
            let fs = first_stream(a);
            let d1 = &g.block(fs) - &f.block(fs);
            let gh1 = grad_h.block(fs);
            // h1 = f1 + t1 d0 + t0 d1
            {
                let (mut gt0, mut gt1) = split_two(&mut grad_ht, 0, fs);
                Zip::from(&mut gt0)
                    .and(&mut gt1)
                    .and(&gh1)
                    .and(&d0)
                    .and(&d1)
                    .for_each(|gt0, gt1, &gh, &d, &dd| {
                        *gt0 += gh * dd;
                        *gt1 = gh * d;
                    });
            }
            {
                let (mut gd0, mut gd1) = split_two(&mut grad_d, 0, fs);
                Zip::from(&mut gd0)
                    .and(&mut gd1)
                    .and(&gh1)
                    .and(&ht.block(0))
                    .and(&ht.block(fs))
                    .for_each(|gd0, gd1, &gh, &t, &dt| {
                        *gd0 += gh * dt;
                        *gd1 = gh * t;
                    });
            }
            if ht.order >= DerivOrder::Second {
                // h2 = f2 + t2 d0 + 2 t1 d1 + t0 d2
                let ss = second_stream(a);
                let gh2 = grad_h.block(ss);
                let d2 = &g.block(ss) - &f.block(ss);
                {
                    let (mut gt0, mut gt2) = split_two(&mut grad_ht, 0, ss);
                    Zip::from(&mut gt0)
                        .and(&mut gt2)
                        .and(&gh2)
                        .and(&d0)
                        .and(&d2)
                        .for_each(|gt0, gt2, &gh, &d, &ddd| {
                            *gt0 += gh * ddd;
                            *gt2 = gh * d;
                        });
                }
                {
                    let mut gt1 = grad_ht.block_mut(fs);
                    Zip::from(&mut gt1)
                        .and(&gh2)
                        .and(&d1)
                        .for_each(|gt1, &gh, &dd| *gt1 += 2.0 * gh * dd);
                }
                {
                    let (mut gd0, mut gd2) = split_two(&mut grad_d, 0, ss);
                    Zip::from(&mut gd0)
                        .and(&mut gd2)
                        .and(&gh2)
                        .and(&ht.block(0))
                        .and(&ht.block(ss))
                        .for_each(|gd0, gd2, &gh, &t, &ddt| {
                            *gd0 += gh * ddt;
                            *gd2 = gh * t;
                        });
                }
                {
                    let mut gd1 = grad_d.block_mut(fs);
                    Zip::from(&mut gd1)
                        .and(&gh2)
                        .and(&ht.block(fs))
                        .for_each(|gd1, &gh, &dt| *gd1 += 2.0 * gh * dt);
                }
            }
        }
    }
    // h = f + ... contributes the identity to f; d = g - f.
    grad_f.data += &grad_h.data;
    grad_f.data -= &grad_d.data;
    grad_g.data += &grad_d.data;
    grad_ht
}
