//! Vector fields, score fields and the conversions between them.
//!
//! The forward (noising) field `u_t` and the generative field `v_t` are related by
//! `v_t(x) = -u_{1-t}(x)`. For the linear interpolation `Y_t = t Y_1 + (1-t) Y_0`
//! with `Y_1 ~ N(0, I)` the marginal field and the marginal score determine each
//! other:
//!
//! ```text
//! u_t(y)        = -y/(1-t) - t/(1-t) * grad log p_t(y)
//! grad log p_t  = -y/t     - (1-t)/t * u_t(y)
//! ```

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::state::{clip_both, clip_upper, GaussianDist, StateVec, DEFAULT_DELTA};

/// A pure map `(x, t) -> drift` of matching dimension.
pub trait VectorField: Send + Sync {
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec>;
    fn label(&self) -> &str;
}

pub type VectorFieldHandle = Arc<dyn VectorField>;

/// A map `(x, t) -> grad log p_t(x)`.
pub trait ScoreField: Send + Sync {
    fn score(&self, x: &StateVec, t: f64) -> Result<StateVec>;
    fn label(&self) -> &str {
        "score"
    }
}

pub type ScoreHandle = Arc<dyn ScoreField>;

/// Closure-backed field, handy for tests and examples.
pub struct FnField<F> {
    label: String,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&StateVec, f64) -> Result<StateVec> + Send + Sync + 'static,
{
    pub fn handle(label: impl Into<String>, f: F) -> VectorFieldHandle {
        Arc::new(FnField {
            label: label.into(),
            f,
        })
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&StateVec, f64) -> Result<StateVec> + Send + Sync,
{
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        (self.f)(x, t)
    }
    fn label(&self) -> &str {
        &self.label
    }
}

/// Marginals of `Y_t = t Y_1 + (1-t) Y_0` with independent Gaussian endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationMarginal {
    pub p0: GaussianDist,
    pub p1: GaussianDist,
}

impl InterpolationMarginal {
    pub fn new(p0: GaussianDist, p1: GaussianDist) -> Result<Self> {
        if p0.dim() != p1.dim() {
            return Err(Error::DimensionMismatch {
                expected: p0.dim(),
                found: p1.dim(),
            });
        }
        Ok(InterpolationMarginal { p0, p1 })
    }

    /// `p1 = N(0, I)`.
    pub fn to_standard_noise(p0: GaussianDist) -> Self {
        let p1 = GaussianDist::standard(p0.dim());
        InterpolationMarginal { p0, p1 }
    }

    pub fn dim(&self) -> usize {
        self.p0.dim()
    }

    pub fn has_standard_noise(&self) -> bool {
        self.p1.mean.iter().all(|m| m == 0.0) && self.p1.var_diag.iter().all(|&v| v == 1.0)
    }

    pub fn marginal_at(&self, t: f64) -> Result<GaussianDist> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
        }
        let s = 1.0 - t;
        let mean = StateVec::from_iter_unchecked(
            self.p0.mean.iter().zip(self.p1.mean.iter()).map(|(a, b)| s * a + t * b),
        );
        let var = self
            .p0
            .var_diag
            .iter()
            .zip(&self.p1.var_diag)
            .map(|(a, b)| s * s * a + t * t * b)
            .collect();
        Ok(GaussianDist { mean, var_diag: var })
    }

    fn require_standard_noise(&self) -> Result<()> {
        if self.has_standard_noise() {
            Ok(())
        } else {
            Err(Error::invalid(
                "p1",
                "the marginal field and Tweedie identities assume p1 = N(0, I)",
            ))
        }
    }
}

impl ScoreField for InterpolationMarginal {
    fn score(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        self.marginal_at(t.clamp(0.0, 1.0))?.score(x)
    }
    fn label(&self) -> &str {
        "interpolation-score"
    }
}

/// The exact marginal field of the Gaussian interpolation, standing in for a
/// trained rectified-flow network.
pub struct AnalyticMarginalField {
    marginal: InterpolationMarginal,
    delta: f64,
}

impl AnalyticMarginalField {
    pub fn new(marginal: InterpolationMarginal, delta: f64) -> Result<Self> {
        marginal.require_standard_noise()?;
        Ok(AnalyticMarginalField { marginal, delta })
    }

    pub fn marginal(&self) -> &InterpolationMarginal {
        &self.marginal
    }
}

impl VectorField for AnalyticMarginalField {
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        x.check_dim(self.marginal.dim())?;
        let t = clip_upper(t, self.delta);
        let score = self.marginal.marginal_at(t)?.score(x)?;
        Ok(field_from_score_value(x, &score, t))
    }
    fn label(&self) -> &str {
        "analytic-marginal"
    }
}

/// Shorthand for `AnalyticMarginalField` with the default clip, as a handle.
pub fn analytic_marginal_field(marginal: &InterpolationMarginal) -> Result<VectorFieldHandle> {
    Ok(Arc::new(AnalyticMarginalField::new(marginal.clone(), DEFAULT_DELTA)?))
}

/// The `lambda -> inf` LQR controller `(target - x) / (1 - t)`.
pub struct ConditionalLqrField {
    target: StateVec,
    delta: f64,
}

impl ConditionalLqrField {
    pub fn new(target: StateVec, delta: f64) -> Self {
        ConditionalLqrField { target, delta }
    }

    pub fn target(&self) -> &StateVec {
        &self.target
    }
}

impl VectorField for ConditionalLqrField {
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let t = clip_upper(t, self.delta);
        let k = 1.0 - t;
        self.target.zip_map(x, |a, b| (a - b) / k)
    }
    fn label(&self) -> &str {
        "lqr"
    }
}

pub fn conditional_lqr_field(target: StateVec) -> VectorFieldHandle {
    Arc::new(ConditionalLqrField::new(target, DEFAULT_DELTA))
}

/// `v_t(x) = -inner(x, horizon - t)`; with `horizon = 1` this turns a noising
/// field into its generative counterpart.
pub struct FlippedField {
    inner: VectorFieldHandle,
    horizon: f64,
    label: String,
}

impl FlippedField {
    pub fn new(inner: VectorFieldHandle, horizon: f64) -> Self {
        let label = format!("flip({})", inner.label());
        FlippedField {
            inner,
            horizon,
            label,
        }
    }
}

impl VectorField for FlippedField {
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        Ok(self.inner.eval(x, self.horizon - t)?.scale(-1.0))
    }
    fn label(&self) -> &str {
        &self.label
    }
}

/// `s(x, t) = inner(x, horizon - t)`: a forward-clock score seen from a reverse clock.
pub struct FlippedScore {
    inner: ScoreHandle,
    horizon: f64,
}

impl FlippedScore {
    pub fn handle(inner: ScoreHandle, horizon: f64) -> ScoreHandle {
        Arc::new(FlippedScore { inner, horizon })
    }
}

impl ScoreField for FlippedScore {
    fn score(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        self.inner.score(x, self.horizon - t)
    }
    fn label(&self) -> &str {
        "flipped-score"
    }
}

#[inline]
fn field_from_score_value(y: &StateVec, score: &StateVec, t: f64) -> StateVec {
    let a = 1.0 / (1.0 - t);
    let b = t / (1.0 - t);
    StateVec::from_fn(y.dim(), |i| -a * y[i] - b * score[i])
}

/// Score implied by a marginal field: `-y/t - ((1-t)/t) u(y, t)`.
///
/// Fails for `t < delta` (the expression is singular at `t = 0`) or `t > 1`.
pub fn score_from_field(field: &dyn VectorField, x: &StateVec, t: f64, delta: f64) -> Result<StateVec> {
    if !(t >= delta && t <= 1.0) {
        return Err(Error::TimeOutOfRange { t, lo: delta, hi: 1.0 });
    }
    let u = field.eval(x, t)?;
    u.check_dim(x.dim())?;
    let a = 1.0 / t;
    let b = (1.0 - t) / t;
    Ok(StateVec::from_iter_unchecked(
        x.iter().zip(u.iter()).map(|(y, u)| -a * y - b * u),
    ))
}

/// [`score_from_field`] as a score handle; times below `delta` are clipped.
pub struct ScoreFromField {
    field: VectorFieldHandle,
    delta: f64,
}

impl ScoreFromField {
    pub fn handle(field: VectorFieldHandle, delta: f64) -> ScoreHandle {
        Arc::new(ScoreFromField { field, delta })
    }
}

impl ScoreField for ScoreFromField {
    fn score(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        score_from_field(self.field.as_ref(), x, t.clamp(self.delta, 1.0), self.delta)
    }
    fn label(&self) -> &str {
        "score-from-field"
    }
}

/// Marginal field implied by a score: `-y/(1-t) - t/(1-t) s(y, t)`, `t` clipped to `1 - delta`.
pub struct FieldFromScore {
    score: ScoreHandle,
    delta: f64,
}

impl VectorField for FieldFromScore {
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let t = clip_upper(t, self.delta);
        let s = self.score.score(x, t)?;
        s.check_dim(x.dim())?;
        Ok(field_from_score_value(x, &s, t))
    }
    fn label(&self) -> &str {
        "field-from-score"
    }
}

pub fn field_from_score(score: ScoreHandle, delta: f64) -> VectorFieldHandle {
    Arc::new(FieldFromScore { score, delta })
}

/// Generative field on its own clock from the score of its own marginal:
/// `v_t(x) = x/t + ((1-t)/t) s(x, t)`, `t` clipped to `[delta, 1 - delta]`.
///
/// Equivalent to flipping [`FieldFromScore`] in time, without the double flip.
pub struct GenerativeFieldFromScore {
    score: ScoreHandle,
    delta: f64,
}

impl GenerativeFieldFromScore {
    pub fn handle(score: ScoreHandle, delta: f64) -> VectorFieldHandle {
        Arc::new(GenerativeFieldFromScore { score, delta })
    }
}

impl VectorField for GenerativeFieldFromScore {
    fn eval(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        let t = clip_both(t, self.delta);
        let s = self.score.score(x, t)?;
        s.check_dim(x.dim())?;
        let a = 1.0 / t;
        let b = (1.0 - t) / t;
        Ok(StateVec::from_iter_unchecked(
            x.iter().zip(s.iter()).map(|(x, s)| a * x + b * s),
        ))
    }
    fn label(&self) -> &str {
        "generative-from-score"
    }
}

/// `E[Y_0 | Y_t = y] = y/(1-t) + (t^2/(1-t)) grad log p_t(y)`, `t` clipped to `1 - delta`.
pub fn tweedie_posterior_mean_y0(
    marginal: &InterpolationMarginal,
    y: &StateVec,
    t: f64,
    delta: f64,
) -> Result<StateVec> {
    marginal.require_standard_noise()?;
    let t = clip_upper(t, delta);
    let score = marginal.marginal_at(t)?.score(y)?;
    let a = 1.0 / (1.0 - t);
    let b = t * t / (1.0 - t);
    Ok(StateVec::from_iter_unchecked(
        y.iter().zip(score.iter()).map(|(y, s)| a * y + b * s),
    ))
}

/// Marginals of the OU process `dY = -Y dt + sqrt(2) dW` started from `p0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuMarginal {
    pub p0: GaussianDist,
}

impl OuMarginal {
    pub fn marginal_at(&self, t: f64) -> Result<GaussianDist> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: f64::INFINITY });
        }
        let decay = (-t).exp();
        let decay2 = decay * decay;
        Ok(GaussianDist {
            mean: self.p0.mean.scale(decay),
            var_diag: self
                .p0
                .var_diag
                .iter()
                .map(|v| decay2 * v + (1.0 - decay2))
                .collect(),
        })
    }
}

impl ScoreField for OuMarginal {
    fn score(&self, x: &StateVec, t: f64) -> Result<StateVec> {
        self.marginal_at(t.max(0.0))?.score(x)
    }
    fn label(&self) -> &str {
        "ou-score"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(v: f64) -> StateVec {
        StateVec::splat(1, v)
    }

    fn marginal(mu: f64) -> InterpolationMarginal {
        InterpolationMarginal::to_standard_noise(GaussianDist::isotropic(sv(mu), 1.0).unwrap())
    }

    #[test]
    fn marginal_endpoints_and_midpoint() {
        let m = marginal(10.0);
        assert_eq!(m.marginal_at(0.0).unwrap(), m.p0);
        assert_eq!(m.marginal_at(1.0).unwrap(), m.p1);
        let mid = m.marginal_at(0.5).unwrap();
        assert_eq!(mid.mean[0], 5.0);
        assert_eq!(mid.var_diag[0], 0.5);
        assert!(m.marginal_at(1.5).is_err());
    }

    #[test]
    fn analytic_field_examples() {
        let u = analytic_marginal_field(&marginal(0.0)).unwrap();
        // -(1-2t) y / ((1-t)^2 + t^2)
        for &(y, t) in &[(2.0, 0.0), (1.3, 0.2), (-0.7, 0.8), (3.0, 0.5)] {
            let expect = -(1.0 - 2.0 * t) * y / ((1.0 - t) * (1.0 - t) + t * t);
            let got = u.eval(&sv(y), t).unwrap()[0];
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
        assert_eq!(u.eval(&sv(2.0), 0.0).unwrap()[0], -2.0);
        assert_eq!(u.eval(&sv(0.0), 0.37).unwrap()[0], 0.0);
    }

    #[test]
    fn analytic_field_needs_standard_noise() {
        let p0 = GaussianDist::standard(1);
        let p1 = GaussianDist::isotropic(sv(1.0), 1.0).unwrap();
        let m = InterpolationMarginal::new(p0, p1).unwrap();
        assert!(AnalyticMarginalField::new(m, DEFAULT_DELTA).is_err());
    }

    #[test]
    fn analytic_field_is_finite_at_t_one() {
        let u = analytic_marginal_field(&marginal(10.0)).unwrap();
        assert!(u.eval(&sv(0.3), 1.0).unwrap().is_finite());
    }

    #[test]
    fn lqr_examples() {
        let c = conditional_lqr_field(sv(5.0));
        assert!((c.eval(&sv(2.0), 0.4).unwrap()[0] - 5.0).abs() < 1e-12);
        assert_eq!(c.eval(&sv(5.0), 0.9).unwrap()[0], 0.0);
        let c0 = conditional_lqr_field(sv(0.0));
        assert_eq!(c0.eval(&sv(1.0), 0.0).unwrap()[0], -1.0);
        assert!(c.eval(&sv(1.0), 1.0).unwrap().is_finite());
        assert!(c.eval(&StateVec::zeros(2), 0.1).is_err());
    }

    #[test]
    fn score_from_field_examples() {
        let u = analytic_marginal_field(&marginal(0.0)).unwrap();
        let s = score_from_field(u.as_ref(), &sv(1.0), 0.5, DEFAULT_DELTA).unwrap();
        assert!((s[0] + 2.0).abs() < 1e-12);
        let direct = marginal(0.0).marginal_at(0.5).unwrap().score(&sv(1.0)).unwrap();
        assert!((s[0] - direct[0]).abs() < 1e-12);

        // coefficient of u vanishes at t = 1
        let wild = FnField::handle("const", |_x: &StateVec, _t| Ok(StateVec::splat(1, 123.0)));
        assert_eq!(score_from_field(wild.as_ref(), &sv(0.7), 1.0, DEFAULT_DELTA).unwrap()[0], -0.7);

        assert!(matches!(
            score_from_field(u.as_ref(), &sv(1.0), 1e-4, DEFAULT_DELTA),
            Err(Error::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn field_from_zero_score() {
        let zero: ScoreHandle = Arc::new(ZeroScore);
        let f = field_from_score(zero, DEFAULT_DELTA);
        assert_eq!(f.eval(&sv(1.0), 0.5).unwrap()[0], -2.0);
    }

    struct ZeroScore;
    impl ScoreField for ZeroScore {
        fn score(&self, x: &StateVec, _t: f64) -> Result<StateVec> {
            Ok(StateVec::zeros(x.dim()))
        }
    }

    #[test]
    fn tweedie_examples() {
        let m0 = marginal(0.0);
        let y = sv(1.3);
        assert_eq!(tweedie_posterior_mean_y0(&m0, &y, 0.0, DEFAULT_DELTA).unwrap()[0], 1.3);
        // Bivariate conditioning: Cov(Y0, Yt) / Var(Yt) * y = 0.5 / 0.5 * 1.
        let post = tweedie_posterior_mean_y0(&m0, &sv(1.0), 0.5, DEFAULT_DELTA).unwrap();
        assert!((post[0] - 1.0).abs() < 1e-12);
        // Observation is nearly pure noise: posterior mean collapses to the prior mean.
        let m10 = marginal(10.0);
        for y in [-3.0, 0.0, 4.0] {
            let p = tweedie_posterior_mean_y0(&m10, &sv(y), 1.0, DEFAULT_DELTA).unwrap();
            assert!((p[0] - 10.0).abs() < 0.05, "{p:?}");
        }
    }

    #[test]
    fn flipped_field_negates_and_flips() {
        let u = FnField::handle("t", |x: &StateVec, t| Ok(StateVec::splat(x.dim(), t)));
        let v = FlippedField::new(u, 1.0);
        assert_eq!(v.eval(&sv(0.0), 0.25).unwrap()[0], -0.75);
    }

    #[test]
    fn ou_marginal_is_stationary_for_unit_variance() {
        let ou = OuMarginal {
            p0: GaussianDist::isotropic(sv(10.0), 1.0).unwrap(),
        };
        let m = ou.marginal_at(1.0).unwrap();
        assert!((m.mean[0] - 10.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((m.var_diag[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn generative_field_matches_flipped_forward_field() {
        // With the interpolation score, x/t + (1-t)/t s_{1-t}(x) = -u_{1-t}(x).
        let m = marginal(10.0);
        let u = analytic_marginal_field(&m).unwrap();
        let flipped = FlippedField::new(u, 1.0);
        let own = FlippedScore::handle(Arc::new(m), 1.0);
        let gen = GenerativeFieldFromScore::handle(own, DEFAULT_DELTA);
        for &(x, t) in &[(0.3, 0.1), (4.0, 0.5), (9.0, 0.9)] {
            let a = flipped.eval(&sv(x), t).unwrap()[0];
            let b = gen.eval(&sv(x), t).unwrap()[0];
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}
