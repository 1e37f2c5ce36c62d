//! Sound output boxes for ReLU networks over an ℓ∞ input ball: interval
//! propagation, backward linear relaxation, their convex mix, and the
//! squared-width regularizer with exact (piecewise) parameter gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{Dense, MlpParams};
use crate::scalar::Scalar;

/// Elementwise interval.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBound<S> {
    pub lower: Array1<S>,
    pub upper: Array1<S>,
}

impl<S: Scalar> BoxBound<S> {
    pub fn point(x: Array1<S>) -> Self {
        Self {
            lower: x.clone(),
            upper: x,
        }
    }

    pub fn width(&self) -> Array1<S> {
        &self.upper - &self.lower
    }

    pub fn contains(&self, y: ArrayView1<S>, tol: S) -> bool {
        Zip::from(&self.lower)
            .and(&self.upper)
            .and(y)
            .all(|&l, &u, &v| v >= l - tol && v <= u + tol)
    }

    /// `(1 − beta)·self + beta·other`, elementwise on both ends.
    pub fn mix(&self, other: &Self, beta: S) -> Self {
        let keep = S::one() - beta;
        Self {
            lower: self.lower.mapv(|v| v * keep) + &other.lower.mapv(|v| v * beta),
            upper: self.upper.mapv(|v| v * keep) + &other.upper.mapv(|v| v * beta),
        }
    }
}

/// `Λ_l·x + λ_l ≤ f(x) ≤ Λ_u·x + λ_u` over the input box.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBound<S> {
    pub lower_slope: Array2<S>,
    pub lower_bias: Array1<S>,
    pub upper_slope: Array2<S>,
    pub upper_bias: Array1<S>,
}

impl<S: Scalar> LinearBound<S> {
    /// Tightest box implied by the two planes over `center ± radius`.
    pub fn concretize(&self, center: ArrayView1<S>, radius: ArrayView1<S>) -> BoxBound<S> {
        let upper = self.upper_slope.dot(&center) + self.upper_slope.mapv(S::abs).dot(&radius) + &self.upper_bias;
        let lower = self.lower_slope.dot(&center) - self.lower_slope.mapv(S::abs).dot(&radius) + &self.lower_bias;
        BoxBound { lower, upper }
    }
}

/// Lower-line slope for ReLUs whose input interval straddles zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPolicy {
    /// 1 when `|l| < u`, else 0.
    #[default]
    Adaptive,
    Zero,
    One,
}

/// Mix weight, radius and regularizer weight at one point of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSchedule {
    pub beta: f64,
    pub epsilon: f64,
    pub kappa: f64,
}

impl MixSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(CoreError::OutOfRange {
                name: "beta",
                value: self.beta,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if !(self.epsilon >= 0.0 && self.kappa >= 0.0) {
            return Err(CoreError::InvalidParams("epsilon and kappa must be non-negative".into()));
        }
        Ok(())
    }
}

fn check_eps<S: Scalar>(eps: S) -> Result<()> {
    if !(eps >= S::zero() && eps.is_finite()) {
        return Err(CoreError::OutOfRange {
            name: "eps",
            value: eps.as_f64(),
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    Ok(())
}

fn check_input<S: Scalar>(net: &MlpParams<S>, center: ArrayView1<S>) -> Result<()> {
    if center.len() != net.input_dim() {
        return Err(CoreError::DimensionMismatch {
            expected: net.input_dim(),
            got: center.len(),
        });
    }
    Ok(())
}

/// Layer-by-layer interval propagation in center/radius form.
#[derive(Debug, Clone)]
struct IbpTrace<S> {
    /// Center and radius of the input to each layer.
    centers: Vec<Array1<S>>,
    radii: Vec<Array1<S>>,
    /// Pre-activation box of every layer; the last one is the output.
    pre: Vec<BoxBound<S>>,
}

fn ibp_trace<S: Scalar>(net: &MlpParams<S>, center: ArrayView1<S>, radius: ArrayView1<S>) -> IbpTrace<S> {
    let n = net.layers.len();
    let mut centers = Vec::with_capacity(n);
    let mut radii = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut c = center.to_owned();
    let mut r = radius.to_owned();
    for (k, layer) in net.layers.iter().enumerate() {
        let zc = layer.w.dot(&c) + &layer.b;
        let zr = layer.w.mapv(S::abs).dot(&r);
        let bound = BoxBound {
            lower: &zc - &zr,
            upper: &zc + &zr,
        };
        centers.push(std::mem::take(&mut c));
        radii.push(std::mem::take(&mut r));
        if k + 1 < n {
            let lo = bound.lower.mapv(S::pos);
            let hi = bound.upper.mapv(S::pos);
            c = (&hi + &lo).mapv(|v| v * S::half());
            r = (&hi - &lo).mapv(|v| v * S::half());
        }
        pre.push(bound);
    }
    IbpTrace { centers, radii, pre }
}

/// Reverse pass of [`ibp_trace`]. `d_pre[k]` holds the loss gradient with
/// respect to the lower and upper pre-activation bounds of layer `k`.
fn ibp_backward<S: Scalar>(net: &MlpParams<S>, trace: &IbpTrace<S>, d_pre: &mut [BoxBound<S>], grads: &mut MlpParams<S>) {
    let n = net.layers.len();
    for k in (0..n).rev() {
        let layer = &net.layers[k];
        let d = &d_pre[k];
        let d_zc = &d.lower + &d.upper;
        let d_zr = &d.upper - &d.lower;
        let (c, r) = (&trace.centers[k], &trace.radii[k]);
        let g = &mut grads.layers[k];
        let outer_c = outer(d_zc.view(), c.view());
        let outer_r = outer(d_zr.view(), r.view());
        Zip::from(&mut g.w)
            .and(&outer_c)
            .and(&outer_r)
            .and(&layer.w)
            .for_each(|gw, &oc, &or, &w| *gw += oc + or * sign(w));
        g.b += &d_zc;
        if k == 0 {
            break;
        }
        let d_c = layer.w.t().dot(&d_zc);
        let d_r = layer.w.mapv(S::abs).t().dot(&d_zr);
        // Post-activation [relu(l), relu(u)] back to pre-activation bounds.
        let prev = &trace.pre[k - 1];
        let below = &mut d_pre[k - 1];
        for j in 0..d_c.len() {
            let d_hi = S::half() * (d_c[j] + d_r[j]);
            let d_lo = S::half() * (d_c[j] - d_r[j]);
            if prev.upper[j] > S::zero() {
                below.upper[j] += d_hi;
            }
            if prev.lower[j] > S::zero() {
                below.lower[j] += d_lo;
            }
        }
    }
}

fn sign<S: Scalar>(w: S) -> S {
    if w > S::zero() {
        S::one()
    } else if w < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

fn outer<S: Scalar>(a: ArrayView1<S>, b: ArrayView1<S>) -> Array2<S> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Interval bound propagation of `center ± eps` through `net`.
pub fn ibp<S: Scalar>(net: &MlpParams<S>, center: ArrayView1<S>, eps: S) -> Result<BoxBound<S>> {
    check_eps(eps)?;
    check_input(net, center)?;
    let radius = Array1::from_elem(center.len(), eps);
    Ok(ibp_trace(net, center, radius.view()).pre.pop().expect("non-empty"))
}

/// Pre-activation boxes of every layer under interval propagation.
pub fn ibp_layers<S: Scalar>(net: &MlpParams<S>, center: ArrayView1<S>, eps: S) -> Result<Vec<BoxBound<S>>> {
    check_eps(eps)?;
    check_input(net, center)?;
    let radius = Array1::from_elem(center.len(), eps);
    Ok(ibp_trace(net, center, radius.view()).pre)
}

/// Linear relaxation `a_l·z ≤ relu(z) ≤ a_u·z + c_u` of one layer.
#[derive(Debug, Clone)]
struct Relaxation<S> {
    a_u: Array1<S>,
    c_u: Array1<S>,
    a_l: Array1<S>,
    unstable: Vec<bool>,
}

fn relax<S: Scalar>(pre: &BoxBound<S>, alpha: AlphaPolicy) -> Relaxation<S> {
    let n = pre.lower.len();
    let mut r = Relaxation {
        a_u: Array1::zeros(n),
        c_u: Array1::zeros(n),
        a_l: Array1::zeros(n),
        unstable: vec![false; n],
    };
    for j in 0..n {
        let (l, u) = (pre.lower[j], pre.upper[j]);
        if l >= S::zero() {
            r.a_u[j] = S::one();
            r.a_l[j] = S::one();
        } else if u > S::zero() {
            let slope = u / (u - l);
            r.a_u[j] = slope;
            r.c_u[j] = -l * slope;
            r.a_l[j] = match alpha {
                AlphaPolicy::Adaptive if -l < u => S::one(),
                AlphaPolicy::One => S::one(),
                _ => S::zero(),
            };
            r.unstable[j] = true;
        }
    }
    r
}

/// Saved state of one backward relaxation pass (one bound side).
struct CrownPass<S> {
    /// `±1`: upper bound of `sign·f`.
    sign: S,
    /// Λ entering each hidden layer step, listed from the top hidden layer down.
    lambdas: Vec<Array2<S>>,
    masks: Vec<Array2<S>>,
    slope: Array2<S>,
    bias: Array1<S>,
}

/// Upper bound of `sign·f` as a linear function of the input.
fn crown_pass<S: Scalar>(net: &MlpParams<S>, relaxations: &[Relaxation<S>], sign: S) -> CrownPass<S> {
    let n = net.layers.len();
    let top = &net.layers[n - 1];
    let mut lambda = top.w.mapv(|w| w * sign);
    let mut bias = top.b.mapv(|b| b * sign);
    let mut lambdas = Vec::with_capacity(n - 1);
    let mut masks = Vec::with_capacity(n - 1);
    for k in (0..n - 1).rev() {
        let rx = &relaxations[k];
        let layer = &net.layers[k];
        let mut m = lambda.clone();
        for mut row in m.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= if *v >= S::zero() { rx.a_u[j] } else { rx.a_l[j] };
            }
        }
        // Intercepts enter through the upper lines of positively weighted neurons.
        bias = bias + lambda.mapv(S::pos).dot(&rx.c_u) + m.dot(&layer.b);
        let next = m.dot(&layer.w);
        lambdas.push(std::mem::replace(&mut lambda, next));
        masks.push(m);
    }
    CrownPass {
        sign,
        lambdas,
        masks,
        slope: lambda,
        bias,
    }
}

fn concretize_upper<S: Scalar>(pass: &CrownPass<S>, center: ArrayView1<S>, radius: ArrayView1<S>) -> Array1<S> {
    pass.slope.dot(&center) + pass.slope.mapv(S::abs).dot(&radius) + &pass.bias
}

/// Reverse pass of [`crown_pass`] followed by concretization with output
/// gradient `g`. Accumulates parameter gradients and gradients with respect
/// to the intermediate (pre-activation) bounds.
#[allow(clippy::too_many_arguments)]
fn crown_pass_backward<S: Scalar>(
    net: &MlpParams<S>,
    pre: &[BoxBound<S>],
    relaxations: &[Relaxation<S>],
    pass: &CrownPass<S>,
    center: ArrayView1<S>,
    radius: ArrayView1<S>,
    g: ArrayView1<S>,
    d_pre: &mut [BoxBound<S>],
    grads: &mut MlpParams<S>,
) {
    let n = net.layers.len();
    let mut d_lambda = outer(g, center);
    let r_term = outer(g, radius);
    Zip::from(&mut d_lambda)
        .and(&r_term)
        .and(&pass.slope)
        .for_each(|d, &rt, &s| *d += rt * sign(s));
    // Steps were recorded top-down (k = n-2 .. 0); undo them bottom-up.
    for (step, k) in (0..n - 1).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
        let layer = &net.layers[k];
        let lambda = &pass.lambdas[step];
        let m = &pass.masks[step];
        let rx = &relaxations[k];
        let d_m = d_lambda.dot(&layer.w.t()) + outer(g, layer.b.view());
        grads.layers[k].w += &m.t().dot(&d_lambda);
        grads.layers[k].b += &m.t().dot(&g);
        let mut d_prev = Array2::zeros(lambda.dim());
        let mut d_au = Array1::<S>::zeros(rx.a_u.len());
        let mut d_cu = Array1::<S>::zeros(rx.a_u.len());
        for i in 0..lambda.nrows() {
            for j in 0..lambda.ncols() {
                let v = lambda[[i, j]];
                let dm = d_m[[i, j]];
                if v >= S::zero() {
                    d_prev[[i, j]] = dm * rx.a_u[j];
                    d_au[j] += dm * v;
                    if v > S::zero() {
                        d_prev[[i, j]] += g[i] * rx.c_u[j];
                        d_cu[j] += g[i] * v;
                    }
                } else {
                    d_prev[[i, j]] = dm * rx.a_l[j];
                }
            }
        }
        for j in 0..rx.a_u.len() {
            if !rx.unstable[j] {
                continue;
            }
            let (l, u) = (pre[k].lower[j], pre[k].upper[j]);
            let gap = u - l;
            let gap2 = gap * gap;
            // a_u = u/(u−l), c_u = −l·u/(u−l)
            let dau_dl = u / gap2;
            let dau_du = -l / gap2;
            let dcu_dl = -(u * u) / gap2;
            let dcu_du = (l * l) / gap2;
            d_pre[k].lower[j] += d_au[j] * dau_dl + d_cu[j] * dcu_dl;
            d_pre[k].upper[j] += d_au[j] * dau_du + d_cu[j] * dcu_du;
        }
        d_lambda = d_prev;
    }
    let top = &mut grads.layers[n - 1];
    top.w.scaled_add(pass.sign, &d_lambda);
    top.b.scaled_add(pass.sign, &g);
}

/// Backward linear relaxation with interval-propagated intermediate
/// bounds. Returns the linear bounds and their concretized box, clipped to
/// the interval box so it is never the looser of the two.
pub fn crown<S: Scalar>(
    net: &MlpParams<S>,
    center: ArrayView1<S>,
    eps: S,
    alpha: AlphaPolicy,
) -> Result<(LinearBound<S>, BoxBound<S>)> {
    check_eps(eps)?;
    check_input(net, center)?;
    let radius = Array1::from_elem(center.len(), eps);
    let trace = ibp_trace(net, center, radius.view());
    let relaxations: Vec<_> = trace.pre[..trace.pre.len() - 1].iter().map(|b| relax(b, alpha)).collect();
    let up = crown_pass(net, &relaxations, S::one());
    let down = crown_pass(net, &relaxations, -S::one());
    let linear = LinearBound {
        lower_slope: down.slope.mapv(|v| -v),
        lower_bias: down.bias.mapv(|v| -v),
        upper_slope: up.slope,
        upper_bias: up.bias,
    };
    let interval = trace.pre.last().expect("non-empty");
    let boxed = clip_to(linear.concretize(center, radius.view()), interval);
    Ok((linear, boxed))
}

/// Intersection with the interval box; both are sound, so is the result.
fn clip_to<S: Scalar>(mut linear: BoxBound<S>, interval: &BoxBound<S>) -> BoxBound<S> {
    linear.upper.zip_mut_with(&interval.upper, |c, &i| *c = c.min(i));
    linear.lower.zip_mut_with(&interval.lower, |c, &i| *c = c.max(i));
    linear
}

/// `(1 − beta)·IBP + beta·CROWN`.
pub fn crown_ibp<S: Scalar>(net: &MlpParams<S>, center: ArrayView1<S>, eps: S, beta: S, alpha: AlphaPolicy) -> Result<BoxBound<S>> {
    if !(beta >= S::zero() && beta <= S::one()) {
        return Err(CoreError::OutOfRange {
            name: "beta",
            value: beta.as_f64(),
            lo: 0.0,
            hi: 1.0,
        });
    }
    let interval = ibp(net, center, eps)?;
    if beta == S::zero() {
        return Ok(interval);
    }
    let (_, linear) = crown(net, center, eps, alpha)?;
    if beta == S::one() {
        return Ok(linear);
    }
    Ok(interval.mix(&linear, beta))
}

/// Batch mean of `‖u − l‖²` for the mixed box of every row of `obs`, with
/// gradients with respect to every parameter of `net`.
pub fn sa_regularizer<S: Scalar>(
    net: &MlpParams<S>,
    obs: ArrayView2<S>,
    eps: S,
    beta: S,
    alpha: AlphaPolicy,
) -> Result<(S, MlpParams<S>)> {
    check_eps(eps)?;
    if !(beta >= S::zero() && beta <= S::one()) {
        return Err(CoreError::OutOfRange {
            name: "beta",
            value: beta.as_f64(),
            lo: 0.0,
            hi: 1.0,
        });
    }
    let mut grads = net.zeros_like();
    let batch = obs.nrows();
    if batch == 0 || eps == S::zero() {
        return Ok((S::zero(), grads));
    }
    let radius = Array1::from_elem(obs.ncols(), eps);
    let scale = S::two() / S::lit(batch as f64);
    let mut total = S::zero();
    for x in obs.rows() {
        check_input(net, x)?;
        let trace = ibp_trace(net, x, radius.view());
        let out = trace.pre.last().expect("non-empty");
        let use_crown = beta > S::zero();
        let relaxations: Vec<_> = if use_crown {
            trace.pre[..trace.pre.len() - 1].iter().map(|b| relax(b, alpha)).collect()
        } else {
            Vec::new()
        };
        let passes = use_crown.then(|| {
            (
                crown_pass(net, &relaxations, S::one()),
                crown_pass(net, &relaxations, -S::one()),
            )
        });
        let keep = S::one() - beta;
        // Per output: does the linear bound beat the interval bound?
        let crown_ends = passes.as_ref().map(|(up, down)| {
            let u = concretize_upper(up, x, radius.view());
            let l = -concretize_upper(down, x, radius.view());
            let use_u: Vec<bool> = u.iter().zip(out.upper.iter()).map(|(c, i)| c <= i).collect();
            let use_l: Vec<bool> = l.iter().zip(out.lower.iter()).map(|(c, i)| c >= i).collect();
            (u, l, use_u, use_l)
        });
        let mut upper = out.upper.mapv(|v| v * keep);
        let mut lower = out.lower.mapv(|v| v * keep);
        if let Some((u, l, use_u, use_l)) = &crown_ends {
            for j in 0..upper.len() {
                upper[j] += beta * if use_u[j] { u[j] } else { out.upper[j] };
                lower[j] += beta * if use_l[j] { l[j] } else { out.lower[j] };
            }
        }
        let width = &upper - &lower;
        total += width.iter().map(|w| *w * *w).sum::<S>();

        let d_upper = width.mapv(|w| w * scale);
        let mut d_pre: Vec<BoxBound<S>> = trace
            .pre
            .iter()
            .map(|b| BoxBound {
                lower: Array1::zeros(b.lower.len()),
                upper: Array1::zeros(b.upper.len()),
            })
            .collect();
        let last = d_pre.len() - 1;
        d_pre[last].upper.scaled_add(keep, &d_upper);
        d_pre[last].lower.scaled_add(-keep, &d_upper);
        if let (Some((up, down)), Some((_, _, use_u, use_l))) = (&passes, &crown_ends) {
            let mut g_up = Array1::zeros(d_upper.len());
            let mut g_down = Array1::zeros(d_upper.len());
            for j in 0..d_upper.len() {
                let g = beta * d_upper[j];
                if use_u[j] {
                    g_up[j] = g;
                } else {
                    d_pre[last].upper[j] += g;
                }
                // lower = −(upper bound of −f), and d loss / d lower = −d_upper.
                if use_l[j] {
                    g_down[j] = g;
                } else {
                    d_pre[last].lower[j] -= g;
                }
            }
            crown_pass_backward(net, &trace.pre, &relaxations, up, x, radius.view(), g_up.view(), &mut d_pre, &mut grads);
            crown_pass_backward(net, &trace.pre, &relaxations, down, x, radius.view(), g_down.view(), &mut d_pre, &mut grads);
        }
        ibp_backward(net, &trace, &mut d_pre, &mut grads);
    }
    let loss = total / S::lit(batch as f64);
    if !loss.is_finite() {
        return Err(CoreError::NonFiniteLoss("sa_regularizer"));
    }
    Ok((loss, grads))
}

/// Discrete choices made by the bound computation at `center`: sign of
/// every intermediate bound, the lower-line slopes, the sign of every
/// backward coefficient, and which box supplies each output end. Gradients are exact wherever this is locally
/// constant.
pub fn relaxation_pattern<S: Scalar>(net: &MlpParams<S>, center: ArrayView1<S>, eps: S, alpha: AlphaPolicy) -> Result<Vec<u8>> {
    check_eps(eps)?;
    check_input(net, center)?;
    let radius = Array1::from_elem(center.len(), eps);
    let trace = ibp_trace(net, center, radius.view());
    let hidden = &trace.pre[..trace.pre.len() - 1];
    let relaxations: Vec<_> = hidden.iter().map(|b| relax(b, alpha)).collect();
    let code = |v: S| if v > S::zero() { 2 } else if v < S::zero() { 0 } else { 1 };
    let mut pattern: Vec<u8> = hidden
        .iter()
        .flat_map(|b| b.lower.iter().chain(b.upper.iter()).map(|&v| code(v)).collect::<Vec<_>>())
        .collect();
    pattern.extend(relaxations.iter().flat_map(|r| r.a_l.iter().map(|&v| code(v)).collect::<Vec<_>>()));
    let out = trace.pre.last().expect("non-empty");
    for (s, interval) in [(S::one(), &out.upper), (-S::one(), &out.lower)] {
        let pass = crown_pass(net, &relaxations, s);
        for m in pass.lambdas.iter().chain(std::iter::once(&pass.slope)) {
            pattern.extend(m.iter().map(|&v| code(v)));
        }
        let linear = concretize_upper(&pass, center, radius.view());
        pattern.extend(linear.iter().zip(interval.iter()).map(|(&c, &i)| code(c - s * i)));
    }
    Ok(pattern)
}

/// Sign-split interval image of one affine layer.
pub fn affine_bounds<S: Scalar>(layer: &Dense<S>, lower: ArrayView1<S>, upper: ArrayView1<S>) -> BoxBound<S> {
    let pos = layer.w.mapv(S::pos);
    let neg = layer.w.mapv(|w| w.min(S::zero()));
    BoxBound {
        lower: pos.dot(&lower) + neg.dot(&upper) + &layer.b,
        upper: pos.dot(&upper) + neg.dot(&lower) + &layer.b,
    }
}

#[cfg(test)]
mod tests;
