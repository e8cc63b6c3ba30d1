//! Direction-aware neural field: a modulated MLP with sine-activated layers
//! mapping normalized `(x, y, z, t)` to `(w, v)`, with exact input
//! derivatives and parameter gradients through them.

mod checkpoint;
mod jet;
mod trig;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::{Position, TargetRegion};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use jet::{
    blend_backward, blend_forward, first_stream, second_stream, sine_backward, sine_forward, Jet,
    SineCache,
};
pub use jet::{DerivOrder, AXES};

/// Number of network outputs: `w` followed by `v = (x, y, z)`.
pub const OUTPUTS: usize = 4;

/// A space-time query point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coord {
    pub position: Position,
    /// Seconds.
    pub time: f64,
}

impl Coord {
    pub fn new(position: Position, time: f64) -> Self {
        Self { position, time }
    }

    pub fn to_array(self) -> [f64; AXES] {
        [self.position.x, self.position.y, self.position.z, self.time]
    }

    pub fn from_array(a: [f64; AXES]) -> Self {
        Self::new(Position::new(a[0], a[1], a[2]), a[3])
    }
}

/// Per-axis affine map from physical `(x, y, z, t)` onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNormalization {
    pub bounds: [(f64, f64); AXES],
}

impl InputNormalization {
    pub fn new(bounds: [(f64, f64); AXES]) -> Result<Self> {
        ensure!(
            bounds
                .iter()
                .all(|(lo, hi)| lo.is_finite() && hi.is_finite() && lo < hi),
            "normalization bounds must be finite with lo < hi"
        );
        Ok(Self { bounds })
    }

    pub fn from_region(region: &TargetRegion) -> Self {
        Self {
            bounds: region.space_time_bounds(),
        }
    }

    pub fn normalize(&self, c: [f64; AXES]) -> [f64; AXES] {
        let mut out = [0.0; AXES];
        for a in 0..AXES {
            let (lo, hi) = self.bounds[a];
            out[a] = 2.0 * (c[a] - lo) / (hi - lo) - 1.0;
        }
        out
    }

    pub fn denormalize(&self, u: [f64; AXES]) -> [f64; AXES] {
        let mut out = [0.0; AXES];
        for a in 0..AXES {
            let (lo, hi) = self.bounds[a];
            out[a] = lo + 0.5 * (u[a] + 1.0) * (hi - lo);
        }
        out
    }

    /// `d(normalized) / d(physical)` per axis.
    pub fn chain_factors(&self) -> [f64; AXES] {
        self.bounds.map(|(lo, hi)| 2.0 / (hi - lo))
    }

    /// True when the space-time box `bounds` lies inside the normalization range.
    pub fn covers(&self, bounds: &[(f64, f64); AXES], tol: f64) -> bool {
        self.bounds
            .iter()
            .zip(bounds)
            .all(|((lo, hi), (a, b))| *a >= lo - tol && *b <= hi + tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub omega0: f64,
    pub normalization: InputNormalization,
}

impl NetworkConfig {
    pub fn new(
        hidden_layers: usize,
        width: usize,
        omega0: f64,
        normalization: InputNormalization,
    ) -> Self {
        Self {
            hidden_layers,
            width,
            omega0,
            normalization,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.hidden_layers >= 1,
            "network needs at least one hidden layer"
        );
        ensure!(self.width >= 1, "network width must be positive");
        ensure!(
            self.omega0.is_finite() && self.omega0 > 0.0,
            "omega0 must be positive"
        );
        InputNormalization::new(self.normalization.bounds).map(|_| ())
    }
}

/// Affine layer `y = W x + b` with `W` shaped `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        Self {
            weight: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
        }
    }

    fn uniform(n_out: usize, n_in: usize, weight_bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let bias_bound = 1.0 / (n_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((n_out, n_in), || {
            rng.random_range(-weight_bound..=weight_bound)
        });
        let bias =
            Array1::from_shape_simple_fn(n_out, || rng.random_range(-bias_bound..=bias_bound));
        Self { weight, bias }
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// All trainable quantities, including the two adaptive loss weights.
///
/// The same layout doubles as the gradient and optimizer-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub encoder_f: Linear,
    pub encoder_g: Linear,
    pub hidden: Vec<Linear>,
    pub projection: Linear,
    pub log_eps_data: f64,
    pub log_eps_prior: f64,
}

pub const INITIAL_EPS_DATA: f64 = 1.0;
pub const INITIAL_EPS_PRIOR: f64 = 0.1;

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let w = config.width;
        Self {
            encoder_f: Linear::zeros(w, AXES),
            encoder_g: Linear::zeros(w, AXES),
            hidden: (0..config.hidden_layers)
                .map(|k| Linear::zeros(w, if k == 0 { AXES } else { w }))
                .collect(),
            projection: Linear::zeros(OUTPUTS, w),
            log_eps_data: 0.0,
            log_eps_prior: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.n_out(), l.n_in());
        Self {
            encoder_f: z(&self.encoder_f),
            encoder_g: z(&self.encoder_g),
            hidden: self.hidden.iter().map(z).collect(),
            projection: z(&self.projection),
            log_eps_data: 0.0,
            log_eps_prior: 0.0,
        }
    }

    pub fn eps_data(&self) -> f64 {
        self.log_eps_data.exp()
    }

    pub fn eps_prior(&self) -> f64 {
        self.log_eps_prior.exp()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Linear> {
        [&self.encoder_f, &self.encoder_g]
            .into_iter()
            .chain(self.hidden.iter())
            .chain(std::iter::once(&self.projection))
    }

    /// Every tensor as a flat slice, in a fixed order; the two log-eps
    /// scalars come last.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(std::slice::from_ref(&self.log_eps_data));
        out.push(std::slice::from_ref(&self.log_eps_prior));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let layers = [&mut self.encoder_f, &mut self.encoder_g]
            .into_iter()
            .chain(self.hidden.iter_mut())
            .chain(std::iter::once(&mut self.projection));
        for l in layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(std::slice::from_mut(&mut self.log_eps_data));
        out.push(std::slice::from_mut(&mut self.log_eps_prior));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, alpha: f64, other: &NetworkParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_shapes(&self, config: &NetworkConfig) -> Result<()> {
        let w = config.width;
        let ok =
            |l: &Linear, o: usize, i: usize| l.n_out() == o && l.n_in() == i && l.bias.len() == o;
        ensure!(
            ok(&self.encoder_f, w, AXES)
                && ok(&self.encoder_g, w, AXES)
                && self.hidden.len() == config.hidden_layers
                && self.hidden.iter().enumerate().all(|(k, l)| ok(
                    l,
                    w,
                    if k == 0 { AXES } else { w }
                ))
                && ok(&self.projection, OUTPUTS, w),
            "parameter shapes do not match the network configuration"
        );
        Ok(())
    }
}

/// Network outputs and their partials at one coordinate, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldEval {
    pub w: f64,
    pub v: [f64; 3],
    /// `jac[o][a] = d output_o / d axis_a`, outputs (w, vx, vy, vz), axes (x, y, z, t).
    pub jac: [[f64; AXES]; OUTPUTS],
    /// Diagonal second derivatives of `w` along (x, y, z, t).
    pub second: Option<[f64; AXES]>,
}

impl FieldEval {
    pub fn outputs(&self) -> [f64; OUTPUTS] {
        [self.w, self.v[0], self.v[1], self.v[2]]
    }
}

/// Upstream adjoint of a scalar loss with respect to one [`FieldEval`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldEvalGrad {
    /// d loss / d (w, vx, vy, vz)
    pub value: [f64; OUTPUTS],
    pub jac: [[f64; AXES]; OUTPUTS],
    pub second: [f64; AXES],
}

impl FieldEvalGrad {
    fn needs(&self) -> DerivOrder {
        if self.second.iter().any(|&g| g != 0.0) {
            DerivOrder::Second
        } else if self.jac.iter().flatten().any(|&g| g != 0.0) {
            DerivOrder::First
        } else {
            DerivOrder::Value
        }
    }
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: NetworkParams,
}

/// Intermediates retained by [`Network::eval_batch`] for the reverse pass.
#[derive(Debug)]
pub struct Tape {
    order: DerivOrder,
    n: usize,
    omega0: f64,
    chain: [f64; AXES],
    input: Jet,
    f: (Jet, SineCache),
    g: (Jet, SineCache),
    /// Per hidden layer: sine intermediates, modulator output `ht`, blend output `h`.
    hidden: Vec<(SineCache, Jet, Jet)>,
}

impl Tape {
    pub fn order(&self) -> DerivOrder {
        self.order
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Accumulates parameter gradients for the loss whose adjoints with
    /// respect to each evaluated point are `grads`. The eps entries of the
    /// result are left at zero.
    pub fn backward(
        &self,
        params: &NetworkParams,
        grads: &[FieldEvalGrad],
    ) -> Result<NetworkParams> {
        if grads.len() != self.n {
            return Err(Error::State(format!(
                "tape holds {} points but {} upstream gradients were supplied",
                self.n,
                grads.len()
            )));
        }
        if let Some(needed) = grads.iter().map(FieldEvalGrad::needs).max() {
            if needed > self.order {
                return Err(Error::State(format!(
                    "upstream gradients need {needed:?} derivatives but the tape only retained {:?}",
                    self.order
                )));
            }
        }
        let n = self.n;
        let mut gy = Jet::zeros(self.order, n, OUTPUTS);
        for (i, g) in grads.iter().enumerate() {
            for o in 0..OUTPUTS {
                gy.data[[i, o]] = g.value[o];
            }
            if self.order >= DerivOrder::First {
                for a in 0..AXES {
                    let row = first_stream(a) * n + i;
                    for o in 0..OUTPUTS {
                        gy.data[[row, o]] = g.jac[o][a] * self.chain[a];
                    }
                }
            }
            if self.order >= DerivOrder::Second {
                for a in 0..AXES {
                    gy.data[[second_stream(a) * n + i, 0]] =
                        g.second[a] * self.chain[a] * self.chain[a];
                }
            }
        }

        let mut out = params.zeros_like();
        let k_layers = self.hidden.len();
        let h_last = &self.hidden[k_layers - 1].2;
        out.projection.weight = gy.data.t().dot(&h_last.data);
        out.projection.bias = gy.block(0).sum_axis(ndarray::Axis(0));
        let mut grad_h = Jet {
            order: self.order,
            n,
            data: gy.data.dot(&params.projection.weight),
        };

        let width = params.projection.n_in();
        let mut grad_f = Jet::zeros(self.order, n, width);
        let mut grad_g = Jet::zeros(self.order, n, width);
        for k in (0..k_layers).rev() {
            let (cache, ht, _) = &self.hidden[k];
            let grad_ht =
                blend_backward(&self.f.0, &self.g.0, ht, &grad_h, &mut grad_f, &mut grad_g);
            let layer_input = if k == 0 {
                &self.input
            } else {
                &self.hidden[k - 1].2
            };
            let (gw, gb, gin) = sine_backward(
                cache,
                layer_input,
                &params.hidden[k].weight,
                self.omega0,
                &grad_ht,
                k > 0,
            );
            out.hidden[k].weight = gw;
            out.hidden[k].bias = gb;
            if let Some(gin) = gin {
                grad_h = gin;
            }
        }
        let (gw, gb, _) = sine_backward(
            &self.f.1,
            &self.input,
            &params.encoder_f.weight,
            self.omega0,
            &grad_f,
            false,
        );
        out.encoder_f.weight = gw;
        out.encoder_f.bias = gb;
        let (gw, gb, _) = sine_backward(
            &self.g.1,
            &self.input,
            &params.encoder_g.weight,
            self.omega0,
            &grad_g,
            false,
        );
        out.encoder_g.weight = gw;
        out.encoder_g.bias = gb;
        Ok(out)
    }
}

impl Network {
    /// SIREN-style initialization; eps weights start at (1.0, 0.1).
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        let first = 1.0 / AXES as f64;
        let deep = (6.0 / w as f64).sqrt() / config.omega0;
        let encoder_f = Linear::uniform(w, AXES, first, &mut rng);
        let encoder_g = Linear::uniform(w, AXES, first, &mut rng);
        let hidden = (0..config.hidden_layers)
            .map(|k| {
                if k == 0 {
                    Linear::uniform(w, AXES, first, &mut rng)
                } else {
                    Linear::uniform(w, w, deep, &mut rng)
                }
            })
            .collect();
        let projection = Linear::uniform(OUTPUTS, w, deep, &mut rng);
        Ok(Self {
            config,
            params: NetworkParams {
                encoder_f,
                encoder_g,
                hidden,
                projection,
                log_eps_data: INITIAL_EPS_DATA.ln(),
                log_eps_prior: INITIAL_EPS_PRIOR.ln(),
            },
        })
    }

    pub fn new(config: NetworkConfig, params: NetworkParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    fn normalized_inputs(&self, coords: &[Coord]) -> Result<Vec<[f64; AXES]>> {
        coords
            .iter()
            .map(|c| {
                let a = c.to_array();
                ensure!(
                    a.iter().all(|v| v.is_finite()),
                    "non-finite query coordinate"
                );
                Ok(self.config.normalization.normalize(a))
            })
            .collect()
    }

    /// Runs the network and keeps every intermediate needed by [`Tape::backward`].
    pub fn eval_batch(
        &self,
        coords: &[Coord],
        order: DerivOrder,
    ) -> Result<(Vec<FieldEval>, Tape)> {
        ensure!(!coords.is_empty(), "empty coordinate batch");
        let inputs = self.normalized_inputs(coords)?;
        let p = &self.params;
        let omega0 = self.config.omega0;
        let input = Jet::seed(order, &inputs);
        let f = sine_forward(&input, &p.encoder_f.weight, &p.encoder_f.bias, omega0);
        let g = sine_forward(&input, &p.encoder_g.weight, &p.encoder_g.bias, omega0);
        let mut hidden: Vec<(SineCache, Jet, Jet)> = Vec::with_capacity(p.hidden.len());
        for (k, layer) in p.hidden.iter().enumerate() {
            let prev = if k == 0 { &input } else { &hidden[k - 1].2 };
            let (ht, cache) = sine_forward(prev, &layer.weight, &layer.bias, omega0);
            let h = blend_forward(&f.0, &g.0, &ht);
            hidden.push((cache, ht, h));
        }
        let y = jet::affine(
            &hidden[hidden.len() - 1].2,
            &p.projection.weight,
            &p.projection.bias,
        );
        let evals = self.read_out(&y);
        let tape = Tape {
            order,
            n: coords.len(),
            omega0,
            chain: self.config.normalization.chain_factors(),
            input,
            f,
            g,
            hidden,
        };
        Ok((evals, tape))
    }

    fn read_out(&self, y: &Jet) -> Vec<FieldEval> {
        let chain = self.config.normalization.chain_factors();
        let n = y.n;
        (0..n)
            .map(|i| {
                let mut e = FieldEval {
                    w: y.data[[i, 0]],
                    v: [y.data[[i, 1]], y.data[[i, 2]], y.data[[i, 3]]],
                    ..FieldEval::default()
                };
                if y.order >= DerivOrder::First {
                    for a in 0..AXES {
                        let row = first_stream(a) * n + i;
                        for o in 0..OUTPUTS {
                            e.jac[o][a] = y.data[[row, o]] * chain[a];
                        }
                    }
                }
                if y.order >= DerivOrder::Second {
                    let mut s = [0.0; AXES];
                    for a in 0..AXES {
                        s[a] = y.data[[second_stream(a) * n + i, 0]] * chain[a] * chain[a];
                    }
                    e.second = Some(s);
                }
                e
            })
            .collect()
    }

    /// Outputs only, shape `[N, 4]`, without retaining intermediates.
    pub fn forward_batch(&self, coords: &[Coord]) -> Result<Array2<f64>> {
        ensure!(!coords.is_empty(), "empty coordinate batch");
        let inputs = self.normalized_inputs(coords)?;
        let p = &self.params;
        let omega0 = self.config.omega0;
        let input = Jet::seed(DerivOrder::Value, &inputs);
        let sine = |x: &Jet, l: &Linear| sine_forward(x, &l.weight, &l.bias, omega0).0;
        let f = sine(&input, &p.encoder_f);
        let g = sine(&input, &p.encoder_g);
        let mut h = input.clone();
        for layer in &p.hidden {
            let ht = sine(&h, layer);
            h = blend_forward(&f, &g, &ht);
        }
        Ok(jet::affine(&h, &p.projection.weight, &p.projection.bias).data)
    }

    pub fn forward(&self, coord: Coord) -> Result<(f64, [f64; 3])> {
        let y = self.forward_batch(&[coord])?;
        Ok((y[[0, 0]], [y[[0, 1]], y[[0, 2]], y[[0, 3]]]))
    }

    pub fn forward_with_derivatives(&self, coord: Coord, need_second: bool) -> Result<FieldEval> {
        let order = if need_second {
            DerivOrder::Second
        } else {
            DerivOrder::First
        };
        let (evals, _) = self.eval_batch(&[coord], order)?;
        Ok(evals[0])
    }
}

#[cfg(test)]
mod tests;
